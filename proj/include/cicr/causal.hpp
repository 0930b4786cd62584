#pragma once

#include <span>
#include <vector>

#include "cicr/numerics/ops.hpp"
#include "cicr/span.hpp"

namespace cicr::causal {

struct TciProjection {
  num::Tensor wk;  // applied to query tokens
  num::Tensor wq;  // applied to confounder embeddings (attention keys)
  num::Tensor wv;  // applied to confounder embeddings (attention values)
};

// Backdoor adjustment over the confounder dictionary: each query token attends
// over the projected confounders. With `use_prior`, the attention weights are
// multiplied by P(z) and renormalized, computed as softmax(scores + log P(z)).
// Returns L_q x D. `attention`, when non-null, receives the L_q x K weights.
num::Tensor tci_adjust(num::Tape& tape, const num::Tensor& q, const num::Tensor& confounders,
                       std::span<const double> prior, const TciProjection& proj, bool use_prior,
                       num::Tensor* attention = nullptr);

// y_m * sigmoid(y_v), elementwise.
num::Tensor fuse(num::Tape& tape, const num::Tensor& y_v, const num::Tensor& y_m);

struct CausalScores {
  num::Tensor y_vm;       // factual fused score
  num::Tensor y_vm_star;  // counterfactual with the multimodal branch replaced by c
  num::Tensor tie;        // y_vm - y_vm_star
};

// `c` is a scalar or a length-1 tensor.
CausalScores counterfactual_scores(num::Tape& tape, const num::Tensor& y_v, const num::Tensor& y_m,
                                   const num::Tensor& c);

// Counterfactual score for the calibration loss: sigmoid(y_v) enters as a
// constant so the only gradient path is through c.
num::Tensor calibration_counterfactual(num::Tape& tape, const num::Tensor& y_v, const num::Tensor& c);

// Total effect and natural direct effect relative to the reference state where
// the video logit is `reference_video_logit` and the multimodal score is c.
struct EffectTerms {
  std::vector<double> te, nde, tie;  // per proposal
};
EffectTerms effect_terms(const num::Tensor& y_v, const num::Tensor& y_m, double c,
                         double reference_video_logit = 0.0);

struct EffectSummary {
  double te_mean = 0, te_max = 0;
  double nde_mean = 0, nde_max = 0;
  double tie_mean = 0, tie_max = 0;
};
EffectSummary summarize_effects(const num::Tensor& y_v, const num::Tensor& y_m, double c,
                                double reference_video_logit = 0.0);

struct RankedSpan {
  std::size_t proposal = 0;
  Span span;
  double score = 0.0;
};

// Sorted by score descending; ties keep ascending proposal index.
std::vector<RankedSpan> rank_by_score(const num::Tensor& scores, const num::Tensor& spans);
inline std::vector<RankedSpan> rank_by_tie(const CausalScores& s, const num::Tensor& spans) {
  return rank_by_score(s.tie, spans);
}

}  // namespace cicr::causal
