#include "cicr/causal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cicr::causal {

using num::Tape;
using num::Tensor;

Tensor tci_adjust(Tape& tape, const Tensor& q, const Tensor& confounders, std::span<const double> prior,
                  const TciProjection& proj, bool use_prior, Tensor* attention) {
  if (prior.empty()) throw std::invalid_argument("tci_adjust: confounder dictionary is empty");
  if (confounders.rank() != 2 || confounders.rows() != prior.size())
    throw num::DimensionError("tci_adjust: confounders " + num::shape_str(confounders.shape()) + " do not match " +
                              std::to_string(prior.size()) + " prior entries");
  if (q.rank() != 2) throw num::DimensionError("tci_adjust: query must be L_q x D, got " + num::shape_str(q.shape()));

  Tensor keys = num::matmul(tape, q, proj.wk);
  Tensor zq = num::matmul(tape, confounders, proj.wq);
  Tensor zv = num::matmul(tape, confounders, proj.wv);
  if (keys.cols() != zq.cols())
    throw num::DimensionError("tci_adjust: projected widths differ (" + std::to_string(keys.cols()) + " vs " +
                              std::to_string(zq.cols()) + ")");

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(keys.cols()));
  Tensor scores = num::scale(tape, num::matmul(tape, keys, num::transpose(tape, zq)), inv_sqrt);
  if (use_prior) {
    std::vector<double> log_prior(prior.size());
    for (std::size_t k = 0; k < prior.size(); ++k) {
      if (!(prior[k] >= 0.0)) throw std::invalid_argument("tci_adjust: negative or NaN prior");
      log_prior[k] = std::log(std::max(prior[k], 1e-300));
    }
    scores = num::add(tape, scores, Tensor::vector(std::move(log_prior)));
  }
  Tensor weights = num::softmax(tape, scores, 1);
  if (attention) *attention = weights;
  return num::matmul(tape, weights, zv);
}

Tensor fuse(Tape& tape, const Tensor& y_v, const Tensor& y_m) {
  if (y_v.shape() != y_m.shape())
    throw num::DimensionError("fuse: shapes " + num::shape_str(y_v.shape()) + " and " + num::shape_str(y_m.shape()) +
                              " differ");
  return num::mul(tape, y_m, num::sigmoid(tape, y_v));
}

namespace {

void check_c(const Tensor& c) {
  if (c.size() != 1) throw num::DimensionError("reference c must hold one value, got " + num::shape_str(c.shape()));
  if (!std::isfinite(c.values()[0])) throw std::invalid_argument("reference c is not finite");
}

}  // namespace

CausalScores counterfactual_scores(Tape& tape, const Tensor& y_v, const Tensor& y_m, const Tensor& c) {
  check_c(c);
  if (y_v.shape() != y_m.shape())
    throw num::DimensionError("counterfactual_scores: shapes " + num::shape_str(y_v.shape()) + " and " +
                              num::shape_str(y_m.shape()) + " differ");
  CausalScores s;
  Tensor gate = num::sigmoid(tape, y_v);
  s.y_vm = num::mul(tape, y_m, gate);
  s.y_vm_star = num::mul(tape, gate, c);
  s.tie = num::sub(tape, s.y_vm, s.y_vm_star);
  return s;
}

Tensor calibration_counterfactual(Tape& tape, const Tensor& y_v, const Tensor& c) {
  check_c(c);
  std::vector<double> gate(y_v.size());
  for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = num::sigmoid(y_v.values()[i]);
  return num::mul(tape, Tensor(y_v.shape(), std::move(gate)), c);
}

EffectTerms effect_terms(const Tensor& y_v, const Tensor& y_m, double c, double reference_video_logit) {
  if (y_v.shape() != y_m.shape()) throw num::DimensionError("effect_terms: shape mismatch");
  const double reference = num::sigmoid(reference_video_logit) * c;  // Y at (v*, m*)
  const std::size_t n = y_v.size();
  EffectTerms out;
  out.te.resize(n);
  out.nde.resize(n);
  out.tie.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gate = num::sigmoid(y_v.values()[i]);
    out.te[i] = y_m.values()[i] * gate - reference;
    out.nde[i] = c * gate - reference;
    out.tie[i] = out.te[i] - out.nde[i];
  }
  return out;
}

EffectSummary summarize_effects(const Tensor& y_v, const Tensor& y_m, double c, double reference_video_logit) {
  const EffectTerms t = effect_terms(y_v, y_m, c, reference_video_logit);
  EffectSummary out;
  const std::size_t n = t.te.size();
  if (n == 0) return out;
  out.te_max = *std::max_element(t.te.begin(), t.te.end());
  out.nde_max = *std::max_element(t.nde.begin(), t.nde.end());
  out.tie_max = *std::max_element(t.tie.begin(), t.tie.end());
  for (std::size_t i = 0; i < n; ++i) {
    out.te_mean += t.te[i];
    out.nde_mean += t.nde[i];
    out.tie_mean += t.tie[i];
  }
  out.te_mean /= static_cast<double>(n);
  out.nde_mean /= static_cast<double>(n);
  out.tie_mean /= static_cast<double>(n);
  return out;
}

std::vector<RankedSpan> rank_by_score(const Tensor& scores, const Tensor& spans) {
  const std::size_t K = scores.size();
  if (spans.rank() != 2 || spans.rows() != K || spans.cols() != 2)
    throw num::DimensionError("rank_by_score: spans " + num::shape_str(spans.shape()) + " do not match " +
                              std::to_string(K) + " scores");
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  const auto& v = scores.values();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  std::vector<RankedSpan> out;
  out.reserve(K);
  for (std::size_t k : order) out.push_back({k, Span{spans.at(k, 0), spans.at(k, 1)}, v[k]});
  return out;
}

}  // namespace cicr::causal
