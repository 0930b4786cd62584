#pragma once

#include <vector>

#include "cicr/config.hpp"
#include "cicr/numerics/ops.hpp"
#include "cicr/span.hpp"

namespace cicr::loss {

struct LossWeights {
  double l1 = 10.0;
  double iou = 1.0;
  double ce = 4.0;
  double kl = 0.1;

  void validate() const;  // throws ConfigError on a negative weight
};

struct LossBreakdown {
  double l_kl = 0, l_l1 = 0, l_iou = 0, l_ce = 0, total = 0;
};

enum class KlDirection { FactualToCounterfactual, CounterfactualToFactual };

// KL divergence between softmax distributions over the proposal axis. With
// `detach_factual`, y_vm is a constant target and gradients reach only y_vm_star.
num::Tensor kl_loss(num::Tape& tape, const num::Tensor& y_vm, const num::Tensor& y_vm_star,
                    KlDirection direction = KlDirection::FactualToCounterfactual, bool detach_factual = true);

// Generalized IoU of two 1-D intervals, in [-1, 1].
double giou_interval(const Span& pred, const Span& gt);

// Foreground proposals: IoU >= 0.5 with some gt, plus the best proposal for
// every gt. `matched_gt[k]` is the gt with the highest IoU for proposal k.
struct ProposalLabels {
  std::vector<bool> foreground;
  std::vector<std::size_t> matched_gt;
  std::size_t foreground_count() const;
};
ProposalLabels assign_labels(const std::vector<Span>& proposals, const std::vector<Span>& gts,
                             double threshold = 0.5);

struct TsgTerms {
  num::Tensor l1, iou, ce;  // scalars on the tape
};
// `logits` scores every proposal (K); `refined` holds the K x 2 regressed spans.
TsgTerms tsg_loss(num::Tape& tape, const num::Tensor& logits, const num::Tensor& refined,
                  const ProposalLabels& labels, const std::vector<Span>& gts);

double total_loss(const LossBreakdown& parts, const LossWeights& w);
num::Tensor total_loss(num::Tape& tape, const num::Tensor& kl, const TsgTerms& tsg, const LossWeights& w);

}  // namespace cicr::loss
