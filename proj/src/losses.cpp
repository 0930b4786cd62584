#include "cicr/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cicr/metrics.hpp"

namespace cicr::loss {

using num::Tape;
using num::Tensor;

void LossWeights::validate() const {
  if (!(l1 >= 0)) throw ConfigError("loss.lambda_l1", "must be >= 0");
  if (!(iou >= 0)) throw ConfigError("loss.lambda_iou", "must be >= 0");
  if (!(ce >= 0)) throw ConfigError("loss.lambda_ce", "must be >= 0");
  if (!(kl >= 0)) throw ConfigError("loss.lambda_kl", "must be >= 0");
}

namespace {

std::vector<double> softmax_values(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (p[i] = std::exp(x[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> log_softmax_values(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0;
  for (double v : x) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lz;
  return out;
}

}  // namespace

Tensor kl_loss(Tape& tape, const Tensor& y_vm, const Tensor& y_vm_star, KlDirection direction, bool detach_factual) {
  if (y_vm.shape() != y_vm_star.shape())
    throw num::DimensionError("kl_loss: shapes " + num::shape_str(y_vm.shape()) + " and " +
                              num::shape_str(y_vm_star.shape()) + " differ");
  const Tensor factual_flat = y_vm.rank() == 1 ? y_vm : num::reshape(tape, y_vm, {y_vm.size()});
  const Tensor cf_flat = y_vm_star.rank() == 1 ? y_vm_star : num::reshape(tape, y_vm_star, {y_vm_star.size()});

  if (direction == KlDirection::FactualToCounterfactual) {
    Tensor log_q = num::log_softmax(tape, cf_flat, 0);
    if (detach_factual) {
      const auto p = softmax_values(factual_flat.values());
      const auto log_p = log_softmax_values(factual_flat.values());
      double entropy_term = 0;
      for (std::size_t i = 0; i < p.size(); ++i) entropy_term += p[i] * log_p[i];
      Tensor cross = num::sum(tape, num::mul(tape, log_q, Tensor::vector(p)));
      return num::add_scalar(tape, num::scale(tape, cross, -1.0), entropy_term);
    }
    Tensor p = num::softmax(tape, factual_flat, 0);
    Tensor log_p = num::log_softmax(tape, factual_flat, 0);
    return num::sum(tape, num::mul(tape, p, num::sub(tape, log_p, log_q)));
  }

  Tensor q = num::softmax(tape, cf_flat, 0);
  Tensor log_q = num::log_softmax(tape, cf_flat, 0);
  Tensor log_p = detach_factual ? Tensor::vector(log_softmax_values(factual_flat.values()))
                                : num::log_softmax(tape, factual_flat, 0);
  return num::sum(tape, num::mul(tape, q, num::sub(tape, log_q, log_p)));
}

double giou_interval(const Span& pred, const Span& gt) {
  if (!(pred.start < pred.end) || !(gt.start < gt.end)) throw num::ContractError("giou_interval: degenerate interval");
  const double inter = std::max(0.0, std::min(pred.end, gt.end) - std::max(pred.start, gt.start));
  const double uni = pred.length() + gt.length() - inter;
  const double hull = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
  return inter / uni - (hull - uni) / hull;
}

std::size_t ProposalLabels::foreground_count() const {
  return static_cast<std::size_t>(std::count(foreground.begin(), foreground.end(), true));
}

ProposalLabels assign_labels(const std::vector<Span>& proposals, const std::vector<Span>& gts, double threshold) {
  if (gts.empty()) throw std::invalid_argument("assign_labels: no ground-truth moments");
  const std::size_t K = proposals.size();
  ProposalLabels out;
  out.foreground.assign(K, false);
  out.matched_gt.assign(K, 0);
  std::vector<double> best_for_gt(gts.size(), -1.0);
  std::vector<std::size_t> best_proposal(gts.size(), 0);
  for (std::size_t k = 0; k < K; ++k) {
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = metrics::temporal_iou(proposals[k], gts[g]);
      if (iou > best) {
        best = iou;
        out.matched_gt[k] = g;
      }
      if (iou > best_for_gt[g]) {
        best_for_gt[g] = iou;
        best_proposal[g] = k;
      }
    }
    out.foreground[k] = best >= threshold;
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const std::size_t k = best_proposal[g];
    if (!out.foreground[k]) {
      out.foreground[k] = true;
      out.matched_gt[k] = g;
    }
  }
  return out;
}

TsgTerms tsg_loss(Tape& tape, const Tensor& logits, const Tensor& refined, const ProposalLabels& labels,
                  const std::vector<Span>& gts) {
  const std::size_t K = logits.size();
  if (refined.rank() != 2 || refined.rows() != K || refined.cols() != 2 || labels.foreground.size() != K)
    throw num::DimensionError("tsg_loss: logits, refined spans and labels disagree on the proposal count");
  if (gts.empty()) throw std::invalid_argument("tsg_loss: no ground-truth moments");

  TsgTerms t;

  // Binary cross-entropy with logits: softplus(x) - y x.
  std::vector<double> y(K);
  for (std::size_t k = 0; k < K; ++k) y[k] = labels.foreground[k] ? 1.0 : 0.0;
  const Tensor flat = logits.rank() == 1 ? logits : num::reshape(tape, logits, {K});
  t.ce = num::mean(tape, num::sub(tape, num::softplus(tape, flat), num::mul(tape, flat, Tensor::vector(y))));

  std::vector<std::size_t> fg;
  for (std::size_t k = 0; k < K; ++k)
    if (labels.foreground[k]) fg.push_back(k);
  if (fg.empty()) {
    t.l1 = Tensor::scalar(0.0);
    t.iou = Tensor::scalar(0.0);
    return t;
  }

  // Gather foreground rows with a constant selection matrix.
  const std::size_t F = fg.size();
  std::vector<double> sel(F * K, 0.0), target(F * 2);
  for (std::size_t i = 0; i < F; ++i) {
    sel[i * K + fg[i]] = 1.0;
    const Span& g = gts[labels.matched_gt[fg[i]]];
    target[2 * i] = g.start;
    target[2 * i + 1] = g.end;
  }
  Tensor pred = num::matmul(tape, Tensor::matrix(F, K, std::move(sel)), refined);
  const Tensor gt = Tensor::matrix(F, 2, std::move(target));

  // L1 summed over the two endpoints, averaged over foreground proposals.
  t.l1 = num::scale(tape, num::sum(tape, num::abs(tape, num::sub(tape, pred, gt))), 1.0 / static_cast<double>(F));

  Tensor ps = num::slice(tape, pred, 1, 0, 1);
  Tensor pe = num::slice(tape, pred, 1, 1, 2);
  const Tensor gs = num::slice(tape, gt, 1, 0, 1);
  const Tensor ge = num::slice(tape, gt, 1, 1, 2);
  Tensor inter = num::maximum(tape, num::sub(tape, num::minimum(tape, pe, ge), num::maximum(tape, ps, gs)),
                              Tensor::scalar(0.0));
  Tensor uni = num::sub(tape, num::add(tape, num::sub(tape, pe, ps), num::sub(tape, ge, gs)), inter);
  Tensor hull = num::sub(tape, num::maximum(tape, pe, ge), num::minimum(tape, ps, gs));
  Tensor giou = num::sub(tape, num::div(tape, inter, uni), num::div(tape, num::sub(tape, hull, uni), hull));
  t.iou = num::add_scalar(tape, num::scale(tape, num::mean(tape, giou), -1.0), 1.0);
  return t;
}

double total_loss(const LossBreakdown& parts, const LossWeights& w) {
  return w.kl * parts.l_kl + w.l1 * parts.l_l1 + w.iou * parts.l_iou + w.ce * parts.l_ce;
}

Tensor total_loss(Tape& tape, const Tensor& kl, const TsgTerms& tsg, const LossWeights& w) {
  Tensor total = num::scale(tape, tsg.l1, w.l1);
  total = num::add(tape, total, num::scale(tape, tsg.iou, w.iou));
  total = num::add(tape, total, num::scale(tape, tsg.ce, w.ce));
  return num::add(tape, total, num::scale(tape, kl, w.kl));
}

}  // namespace cicr::loss
