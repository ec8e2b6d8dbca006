#include "topodiff/metrics.hpp"

#include "topodiff/errors.hpp"

#include "json.hpp"

#include <cmath>

namespace topodiff::metrics {

double pairwise_sum(std::span<const double> x) {
  if (x.size() <= 8) {
    double s = 0.0;
    for (double v : x) s += v;
    return s;
  }
  const std::size_t half = x.size() / 2;
  return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

double nmse_to_snr_db(double nmse) {
  if (nmse <= 0.0) return std::numeric_limits<double>::infinity();
  return 0.0 - 10.0 * std::log10(nmse);  // 0 - x keeps nmse = 1 at +0 dB
}

double pearson(std::span<const float> a, std::span<const float> b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

FidelityAccumulator::FidelityAccumulator(std::vector<std::string> unseen_labels)
    : labels_(std::move(unseen_labels)),
      err_(labels_.size()),
      energy_(labels_.size()),
      pcc_(labels_.size()) {}

void FidelityAccumulator::add(const MatrixF& pred, const MatrixF& truth,
                              const std::vector<std::size_t>& mask) {
  if (!pred.same_shape(truth)) throw DataError("prediction and truth shapes differ");
  if (mask.size() != labels_.size()) throw DataError("mask does not match the channel labels");
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const auto p = pred.row(mask[k]);
    const auto t = truth.row(mask[k]);
    std::vector<double> e(p.size()), en(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(p[i]) - t[i];
      e[i] = d * d;
      en[i] = static_cast<double>(t[i]) * t[i];
    }
    err_[k].push_back(pairwise_sum(e));
    energy_[k].push_back(pairwise_sum(en));
    const double r = pearson(p, t);
    if (std::isnan(r)) {
      ++excluded_;
    } else {
      pcc_[k].push_back(r);
    }
  }
  ++segments_;
}

FidelityReport FidelityAccumulator::report(const std::string& dataset, int factor) const {
  FidelityReport rep;
  rep.dataset = dataset;
  rep.factor = factor;
  rep.n_segments = segments_;
  rep.pcc_excluded = excluded_;
  std::vector<double> ch_err, ch_energy, all_pcc;
  for (std::size_t k = 0; k < labels_.size(); ++k) {
    ChannelScore cs;
    cs.label = labels_[k];
    const double e = pairwise_sum(err_[k]), en = pairwise_sum(energy_[k]);
    cs.nmse = en > 0.0 ? e / en : std::numeric_limits<double>::quiet_NaN();
    cs.snr_db = nmse_to_snr_db(cs.nmse);
    cs.pcc_count = pcc_[k].size();
    cs.pcc = pcc_[k].empty() ? std::numeric_limits<double>::quiet_NaN()
                             : pairwise_sum(pcc_[k]) / static_cast<double>(pcc_[k].size());
    ch_err.push_back(e);
    ch_energy.push_back(en);
    all_pcc.insert(all_pcc.end(), pcc_[k].begin(), pcc_[k].end());
    rep.per_channel.push_back(cs);
  }
  const double energy = pairwise_sum(ch_energy);
  if (!(energy > 0.0)) throw DataError("truth has zero energy on the scored channels; NMSE undefined");
  rep.nmse = pairwise_sum(ch_err) / energy;
  rep.snr_db = nmse_to_snr_db(rep.nmse);
  rep.pcc = all_pcc.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : pairwise_sum(all_pcc) / static_cast<double>(all_pcc.size());
  return rep;
}

double nmse(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask) {
  FidelityAccumulator acc(std::vector<std::string>(mask.size()));
  acc.add(pred, truth, mask);
  return acc.report("", 0).nmse;
}

double snr_db(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask) {
  return nmse_to_snr_db(nmse(pred, truth, mask));
}

double pcc(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask,
           std::size_t* excluded) {
  std::vector<double> rs;
  std::size_t skipped = 0;
  for (std::size_t r : mask) {
    const double v = pearson(pred.row(r), truth.row(r));
    if (std::isnan(v)) {
      ++skipped;
    } else {
      rs.push_back(v);
    }
  }
  if (excluded) *excluded = skipped;
  if (rs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return pairwise_sum(rs) / static_cast<double>(rs.size());
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

double capped_snr(double v) { return std::isinf(v) && v > 0 ? kSnrCapDb : std::min(v, kSnrCapDb); }

}  // namespace

std::string to_json(const FidelityReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["factor"] = r.factor;
  j["nmse"] = finite_or_null(r.nmse);
  j["snr_db"] = finite_or_null(capped_snr(r.snr_db));
  j["pcc"] = finite_or_null(r.pcc);
  j["n_segments"] = r.n_segments;
  j["pcc_excluded"] = r.pcc_excluded;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : r.per_channel) {
    per.push_back({{"label", c.label},
                   {"nmse", finite_or_null(c.nmse)},
                   {"snr_db", finite_or_null(capped_snr(c.snr_db))},
                   {"pcc", finite_or_null(c.pcc)}});
  }
  j["per_channel"] = per;
  return j.dump(2);
}

}  // namespace topodiff::metrics
