#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <vector>

#include "cicr/metrics.hpp"
#include "cicr/numerics/tensor.hpp"
#include "cicr/rng.hpp"
#include "cicr/span.hpp"
#include "support/gradcheck.hpp"

namespace cicr::testing {

// IoU from the sorted endpoint list: the middle two points bound the overlap.
inline double iou_oracle(const Span& a, const Span& b) {
  std::vector<double> pts = {a.start, a.end, b.start, b.end};
  std::sort(pts.begin(), pts.end());
  const bool disjoint = a.end <= b.start || b.end <= a.start;
  if (disjoint) return 0.0;
  const double overlap = pts[2] - pts[1];
  const double covered = (pts[3] - pts[0]);
  return overlap / covered;
}

inline double best_iou_oracle(const Span& p, const std::vector<Span>& gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, iou_oracle(p, g));
  return best;
}

inline double r1_oracle(const std::vector<metrics::SampleRecord>& samples, double m) {
  std::size_t hits = 0;
  for (const auto& s : samples) {
    bool hit = false;
    for (const auto& g : s.gts) hit = hit || iou_oracle(s.ranked[0].span, g) > m;
    hits += hit ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline double miou_oracle(const std::vector<metrics::SampleRecord>& samples) {
  double total = 0.0;
  for (const auto& s : samples) total += best_iou_oracle(s.ranked[0].span, s.gts);
  return 100.0 * total / static_cast<double>(samples.size());
}

// Every matching allowed by the greedy-in-rank rule: at each rank, if some
// unused gt clears the threshold the prediction must consume one of them (any).
// Returns the AP of each branch; `preferred` receives the branch that always
// consumes the highest-IoU candidate (lowest index on ties).
inline std::vector<double> ap_exhaustive(const std::vector<metrics::Prediction>& ranked, const std::vector<Span>& gts,
                                         double n, double* preferred = nullptr) {
  std::vector<double> results;
  std::vector<bool> used(gts.size(), false);
  std::function<void(std::size_t, std::size_t, double, bool)> rec = [&](std::size_t r, std::size_t tp, double sum,
                                                                       bool on_preferred) {
    if (r == ranked.size()) {
      const double ap = sum / static_cast<double>(gts.size());
      results.push_back(ap);
      if (on_preferred && preferred) *preferred = ap;
      return;
    }
    std::vector<std::size_t> candidates;
    std::size_t best = gts.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = iou_oracle(ranked[r].span, gts[g]);
      if (iou > n) {
        candidates.push_back(g);
        if (iou > best_iou) {
          best_iou = iou;
          best = g;
        }
      }
    }
    if (candidates.empty()) {
      rec(r + 1, tp, sum, on_preferred);
      return;
    }
    for (std::size_t g : candidates) {
      used[g] = true;
      rec(r + 1, tp + 1, sum + static_cast<double>(tp + 1) / static_cast<double>(r + 1), on_preferred && g == best);
      used[g] = false;
    }
  };
  rec(0, 0, 0.0, true);
  return results;
}

inline double map_oracle(const std::vector<metrics::SampleRecord>& samples, double n) {
  double total = 0.0;
  for (const auto& s : samples) {
    double ap = 0.0;
    ap_exhaustive(s.ranked, s.gts, n, &ap);
    total += ap;
  }
  return 100.0 * total / static_cast<double>(samples.size());
}

// Endpoints on a 1/16 grid: every IoU is computed exactly, so threshold ties
// (IoU == 0.5, 0.75, ...) really occur and are decided identically everywhere.
inline Span random_grid_span(Rng& rng) {
  const std::uint64_t a = rng.below(16);
  const std::uint64_t b = a + 1 + rng.below(16 - a);
  return {static_cast<double>(a) / 16.0, static_cast<double>(b) / 16.0};
}

inline metrics::SampleRecord random_record(Rng& rng, std::size_t max_preds = 10, std::size_t max_gts = 3) {
  metrics::SampleRecord s;
  const std::size_t np = 1 + rng.below(max_preds);
  const std::size_t ng = 1 + rng.below(max_gts);
  for (std::size_t g = 0; g < ng; ++g) s.gts.push_back(random_grid_span(rng));
  double score = 1.0;
  for (std::size_t p = 0; p < np; ++p) {
    score -= rng.uniform(0.01, 0.1);
    s.ranked.push_back({random_grid_span(rng), score});
  }
  return s;
}

// Explicit per-token loop for the backdoor adjustment:
// out_i = sum_z w_i(z) (z W_v) with w_i = softmax_z((q_i W_k).(z W_q) / sqrt(D) [+ log P(z)]).
inline num::Tensor tci_oracle(const num::Tensor& q, const num::Tensor& z, const std::vector<double>& prior,
                              const num::Tensor& wk, const num::Tensor& wq, const num::Tensor& wv, bool use_prior,
                              std::vector<std::vector<double>>* weights_out = nullptr) {
  const std::size_t Lq = q.rows(), D = q.cols(), K = z.rows(), P = wk.cols(), Dv = wv.cols();
  auto proj = [](const num::Tensor& x, std::size_t row, const num::Tensor& w) {
    std::vector<double> out(w.cols(), 0.0);
    for (std::size_t j = 0; j < w.cols(); ++j)
      for (std::size_t i = 0; i < x.cols(); ++i) out[j] += x.at(row, i) * w.at(i, j);
    return out;
  };
  (void)D;
  std::vector<double> out(Lq * Dv, 0.0);
  for (std::size_t t = 0; t < Lq; ++t) {
    const auto key = proj(q, t, wk);
    std::vector<double> logits(K);
    for (std::size_t k = 0; k < K; ++k) {
      const auto zk = proj(z, k, wq);
      double dot = 0.0;
      for (std::size_t j = 0; j < P; ++j) dot += key[j] * zk[j];
      logits[k] = dot / std::sqrt(static_cast<double>(P));
      if (use_prior) logits[k] += std::log(std::max(prior[k], 1e-300));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> w(K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += (w[k] = std::exp(logits[k] - mx));
    for (double& x : w) x /= total;
    for (std::size_t k = 0; k < K; ++k) {
      const auto zv = proj(z, k, wv);
      for (std::size_t j = 0; j < Dv; ++j) out[t * Dv + j] += w[k] * zv[j];
    }
    if (weights_out) weights_out->push_back(w);
  }
  return num::Tensor::matrix(Lq, Dv, std::move(out));
}

struct TciCase {
  num::Tensor q, z, wk, wq, wv;
  std::vector<double> prior;
};

inline TciCase random_tci(Rng& rng, std::size_t Lq, std::size_t K, std::size_t D) {
  TciCase c{random_tensor(rng, {Lq, D}), random_tensor(rng, {K, D}), random_tensor(rng, {D, D}),
            random_tensor(rng, {D, D}), random_tensor(rng, {D, D}), {}};
  double total = 0;
  for (std::size_t k = 0; k < K; ++k) total += c.prior.emplace_back(rng.uniform(0.05, 1.0));
  for (double& p : c.prior) p /= total;
  return c;
}

// Bound on the rounding of the two subtractions in (a - p) - (b - p).
inline double ulp_bound(double a, double b, double p) {
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(p), 1.0});
  return 4 * scale * std::numeric_limits<double>::epsilon();
}

}  // namespace cicr::testing
