#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cicr/span.hpp"

namespace cicr::metrics {

// |a ∩ b| / |a ∪ b|. Throws num::ContractError on a degenerate interval.
double temporal_iou(const Span& a, const Span& b);

struct Prediction {
  Span span;
  double score = 0.0;
};

// One query: its ranked predictions (best first) and ground-truth moments.
struct SampleRecord {
  std::string id;
  std::vector<Prediction> ranked;
  std::vector<Span> gts;
};

// Best IoU of the rank-1 prediction over all gts.
double top1_iou(const SampleRecord& s);

// Percentages in [0, 100]. A hit requires IoU strictly greater than the threshold.
double r1_at(const std::vector<SampleRecord>& samples, double m);
double mean_iou(const std::vector<SampleRecord>& samples);

// Average precision of one ranked list: greedy rank-order matching, each gt
// consumed at most once; AP = (1 / #gt) * sum of precision at each true positive.
double average_precision(const std::vector<Prediction>& ranked, const std::vector<Span>& gts, double n);
double map_at(const std::vector<SampleRecord>& samples, double n);

// 0.50, 0.55, ..., 0.95.
const std::vector<double>& map_avg_thresholds();
double map_avg(const std::vector<SampleRecord>& samples);

// Total, natural direct and indirect effect statistics over a sample's proposals.
struct EffectStats {
  double te_mean = 0, te_max = 0, nde_mean = 0, nde_max = 0, tie_mean = 0, tie_max = 0;
};

struct SampleScore {
  std::string id;
  double top1_iou = 0.0;
  std::vector<double> ap;  // one per map_avg_thresholds() entry
  std::optional<EffectStats> effects;
};

struct EvalResult {
  std::map<double, double> r1;      // threshold -> percentage
  double miou = 0.0;
  std::map<double, double> map_at;  // threshold -> percentage
  double map_avg = 0.0;
  std::vector<SampleScore> per_sample;
  std::optional<EffectStats> effects;  // per-sample statistics averaged over samples

  double r1_at(double m) const;  // throws std::out_of_range for an unreported threshold
  nlohmann::json to_json() const;
};

inline const std::vector<double> kR1Thresholds = {0.3, 0.5, 0.7};
inline const std::vector<double> kMapThresholds = {0.5, 0.75};

// `effects`, when given, must align with `samples`.
EvalResult evaluate(const std::vector<SampleRecord>& samples, const std::vector<EffectStats>* effects = nullptr);

// JSON-lines interchange files. Predictions: {"id", "ranked": [[start, end, score], ...]}.
// Ground truth: {"id", "moments": [[start, end], ...]}.
void write_predictions(const std::filesystem::path& path, const std::vector<SampleRecord>& samples);
void write_ground_truth(const std::filesystem::path& path, const std::vector<SampleRecord>& samples);
// Joins the two files by id; every prediction needs a gt record and vice versa.
std::vector<SampleRecord> read_prediction_pair(const std::filesystem::path& predictions,
                                               const std::filesystem::path& ground_truth);

// Two-decimal rounding used for reported percentages.
double round2(double x);

}  // namespace cicr::metrics
