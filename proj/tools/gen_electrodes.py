#!/usr/bin/env python3
"""Regenerates assets/standard_1010.txt.

Idealized 10-10 placement on the unit sphere: every anterior-posterior row is
the circle through its left edge electrode, midline electrode and right edge
electrode; lateral electrodes sit at equal arc fractions between midline and
edge. theta is the polar angle from the vertex (Cz), phi the azimuth measured
from the right ear (+x) toward the nose (+y).
"""
import math

import numpy as np


def sph(theta_deg, az_from_front_deg, left):
    # az measured from the nose toward the left or right ear.
    phi = 90.0 + az_from_front_deg if left else 90.0 - az_from_front_deg
    t, p = math.radians(theta_deg), math.radians(phi)
    return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)])


def to_angles(v):
    v = v / np.linalg.norm(v)
    theta = math.degrees(math.acos(max(-1.0, min(1.0, v[2]))))
    phi = math.degrees(math.atan2(v[1], v[0]))
    return theta, phi


def arc_points(mid, edge, fractions):
    """Points on the circle through mid, edge and mirror(edge) at arc fractions from mid."""
    mirror = edge * np.array([-1.0, 1.0, 1.0])
    # Plane through the three points; circle center is the projection of the origin.
    n = np.cross(edge - mid, mirror - mid)
    n /= np.linalg.norm(n)
    c = n * np.dot(n, mid)
    a, b = mid - c, edge - c
    r = np.linalg.norm(a)
    u = a / r
    w = np.cross(n, u)
    if np.dot(w, b) < 0:
        w = -w
    total = math.atan2(np.dot(b, w), np.dot(b, u))
    out = []
    for f in fractions:
        ang = f * total
        p = c + r * (math.cos(ang) * u + math.sin(ang) * w)
        out.append(p / np.linalg.norm(p))
    return out


rows = [
    # prefix, midline polar angle (front positive, back negative), edge label stem, edge azimuth, lateral indices
    ("AF", 67.5, "AF", 36.0, [3, 4]),
    ("F", 45.0, "F", 54.0, [1, 2, 3, 4, 5, 6]),
    ("FC", 22.5, "FT", 72.0, [1, 2, 3, 4, 5, 6]),
    ("C", 0.0, "T", 90.0, [1, 2, 3, 4, 5, 6]),
    ("CP", -22.5, "TP", 108.0, [1, 2, 3, 4, 5, 6]),
    ("P", -45.0, "P", 126.0, [1, 2, 3, 4, 5, 6]),
    ("PO", -67.5, "PO", 144.0, [3, 4, 5, 6]),
]

table = {}


def put(label, v):
    table[label] = to_angles(v)


put("Cz", np.array([0.0, 0.0, 1.0]))
put("Fpz", sph(90.0, 0.0, True))
put("Oz", sph(90.0, 180.0, True))
put("Iz", sph(112.5, 180.0, True))
put("Fp1", sph(90.0, 18.0, True))
put("Fp2", sph(90.0, 18.0, False))
put("O1", sph(90.0, 162.0, True))
put("O2", sph(90.0, 162.0, False))
put("CB1", sph(112.5, 150.0, True))
put("CB2", sph(112.5, 150.0, False))

for prefix, mid_polar, edge_stem, edge_az, lateral in rows:
    if mid_polar >= 0:
        mid = sph(mid_polar, 0.0, True)
    else:
        mid = sph(-mid_polar, 180.0, True)
    if prefix != "C":
        put(prefix + "z", mid)
    edge_left = sph(90.0, edge_az, True)
    put(edge_stem + "7", edge_left)
    put(edge_stem + "8", edge_left * np.array([-1.0, 1.0, 1.0]))
    for idx in lateral:
        left = idx % 2 == 1
        frac = (idx + 1) / 8.0 if left else idx / 8.0
        (p,) = arc_points(mid, edge_left, [frac])
        if not left:
            p = p * np.array([-1.0, 1.0, 1.0])
        put(f"{prefix}{idx}", p)

# Old 10-20 temporal names.
for old, new in (("T3", "T7"), ("T4", "T8"), ("T5", "P7"), ("T6", "P8")):
    table[old] = table[new]

with open("assets/standard_1010.txt", "w") as f:
    f.write("# Idealized 10-10 electrode positions on the unit sphere.\n")
    f.write("# LABEL theta_deg phi_deg\n")
    f.write("# theta: polar angle from the vertex (Cz); phi: azimuth from the right ear toward the nose.\n")
    for label, (theta, phi) in table.items():
        f.write(f"{label} {theta:.9f} {phi:.9f}\n")
