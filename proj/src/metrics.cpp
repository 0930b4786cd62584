#include "cicr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "cicr/numerics/tensor.hpp"

namespace cicr::metrics {

using nlohmann::json;

double temporal_iou(const Span& a, const Span& b) {
  if (!(a.start < a.end) || !(b.start < b.end)) throw num::ContractError("temporal_iou: degenerate interval");
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  return inter / (a.length() + b.length() - inter);
}

namespace {

void require_scorable(const SampleRecord& s) {
  if (s.ranked.empty()) throw std::invalid_argument("sample " + s.id + " has no predictions");
  if (s.gts.empty()) throw std::invalid_argument("sample " + s.id + " has no ground-truth moments");
}

double percentage(double hits, std::size_t n) { return n == 0 ? 0.0 : 100.0 * hits / static_cast<double>(n); }

std::string threshold_key(double t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", t);
  return buf;
}

json effects_json(const EffectStats& e) {
  return json{{"te_mean", e.te_mean},   {"te_max", e.te_max},   {"nde_mean", e.nde_mean},
              {"nde_max", e.nde_max},   {"tie_mean", e.tie_mean}, {"tie_max", e.tie_max}};
}

}  // namespace

double top1_iou(const SampleRecord& s) {
  require_scorable(s);
  double best = 0.0;
  for (const auto& g : s.gts) best = std::max(best, temporal_iou(s.ranked.front().span, g));
  return best;
}

double r1_at(const std::vector<SampleRecord>& samples, double m) {
  double hits = 0;
  for (const auto& s : samples)
    if (top1_iou(s) > m) hits += 1;
  return percentage(hits, samples.size());
}

double mean_iou(const std::vector<SampleRecord>& samples) {
  double total = 0;
  for (const auto& s : samples) total += top1_iou(s);
  return samples.empty() ? 0.0 : 100.0 * total / static_cast<double>(samples.size());
}

double average_precision(const std::vector<Prediction>& ranked, const std::vector<Span>& gts, double n) {
  if (gts.empty()) throw std::invalid_argument("average_precision: no ground-truth moments");
  std::vector<bool> used(gts.size(), false);
  std::size_t tp = 0;
  double sum = 0;
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    // Match the unused gt with the highest IoU above the threshold.
    std::size_t best = gts.size();
    double best_iou = n;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = temporal_iou(ranked[r].span, gts[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best == gts.size()) continue;
    used[best] = true;
    ++tp;
    sum += static_cast<double>(tp) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(gts.size());
}

double map_at(const std::vector<SampleRecord>& samples, double n) {
  double total = 0;
  for (const auto& s : samples) {
    require_scorable(s);
    total += average_precision(s.ranked, s.gts, n);
  }
  return samples.empty() ? 0.0 : 100.0 * total / static_cast<double>(samples.size());
}

const std::vector<double>& map_avg_thresholds() {
  static const std::vector<double> t = [] {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back(0.5 + 0.05 * i);
    return v;
  }();
  return t;
}

double map_avg(const std::vector<SampleRecord>& samples) {
  double total = 0;
  for (double t : map_avg_thresholds()) total += map_at(samples, t);
  return total / static_cast<double>(map_avg_thresholds().size());
}

double EvalResult::r1_at(double m) const {
  for (const auto& [t, v] : r1)
    if (std::abs(t - m) < 1e-12) return v;
  throw std::out_of_range("R1 at threshold " + threshold_key(m) + " was not computed");
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

json EvalResult::to_json() const {
  json j;
  j["samples"] = per_sample.size();
  json r1j = json::object();
  for (const auto& [t, v] : r1) r1j[threshold_key(t)] = round2(v);
  j["r1"] = r1j;
  j["miou"] = round2(miou);
  json mj = json::object();
  for (const auto& [t, v] : map_at) mj[threshold_key(t)] = round2(v);
  j["map"] = mj;
  j["map_avg"] = round2(map_avg);
  if (effects) j["effects"] = effects_json(*effects);
  json ps = json::array();
  for (const auto& s : per_sample) {
    json e{{"id", s.id}, {"top1_iou", s.top1_iou}, {"ap", s.ap}};
    if (s.effects) e["effects"] = effects_json(*s.effects);
    ps.push_back(std::move(e));
  }
  j["per_sample"] = std::move(ps);
  return j;
}

EvalResult evaluate(const std::vector<SampleRecord>& samples, const std::vector<EffectStats>* effects) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  if (effects && effects->size() != samples.size())
    throw std::invalid_argument("evaluate: effect statistics do not align with samples");
  EvalResult r;
  for (double m : kR1Thresholds) r.r1[m] = r1_at(samples, m);
  r.miou = mean_iou(samples);
  for (double n : kMapThresholds) r.map_at[n] = map_at(samples, n);
  r.map_avg = map_avg(samples);
  EffectStats agg;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    SampleScore sc;
    sc.id = s.id;
    sc.top1_iou = top1_iou(s);
    for (double t : map_avg_thresholds()) sc.ap.push_back(average_precision(s.ranked, s.gts, t));
    if (effects) {
      const auto& e = (*effects)[i];
      sc.effects = e;
      agg.te_mean += e.te_mean;
      agg.te_max += e.te_max;
      agg.nde_mean += e.nde_mean;
      agg.nde_max += e.nde_max;
      agg.tie_mean += e.tie_mean;
      agg.tie_max += e.tie_max;
    }
    r.per_sample.push_back(std::move(sc));
  }
  if (effects) {
    const double n = static_cast<double>(samples.size());
    agg.te_mean /= n;
    agg.te_max /= n;
    agg.nde_mean /= n;
    agg.nde_max /= n;
    agg.tie_mean /= n;
    agg.tie_max /= n;
    r.effects = agg;
  }
  return r;
}

void write_predictions(const std::filesystem::path& path, const std::vector<SampleRecord>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    json ranked = json::array();
    for (const auto& p : s.ranked) ranked.push_back({p.span.start, p.span.end, p.score});
    out << json{{"id", s.id}, {"ranked", ranked}}.dump() << "\n";
  }
}

void write_ground_truth(const std::filesystem::path& path, const std::vector<SampleRecord>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) {
    json moments = json::array();
    for (const auto& g : s.gts) moments.push_back({g.start, g.end});
    out << json{{"id", s.id}, {"moments", moments}}.dump() << "\n";
  }
}

namespace {

std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Span parse_span(const json& a, const std::string& where) {
  if (!a.is_array() || a.size() < 2) throw std::runtime_error(where + ": expected [start, end, ...]");
  Span s{a[0].get<double>(), a[1].get<double>()};
  if (!s.valid()) throw std::runtime_error(where + ": degenerate interval");
  return s;
}

}  // namespace

std::vector<SampleRecord> read_prediction_pair(const std::filesystem::path& predictions,
                                               const std::filesystem::path& ground_truth) {
  std::map<std::string, std::vector<Span>> gts;
  try {
    for (const auto& j : read_json_lines(ground_truth)) {
      const auto id = j.at("id").get<std::string>();
      std::vector<Span> moments;
      for (const auto& m : j.at("moments")) moments.push_back(parse_span(m, ground_truth.string() + " id " + id));
      if (moments.empty()) throw std::runtime_error(ground_truth.string() + ": id " + id + " has no moments");
      if (!gts.emplace(id, std::move(moments)).second)
        throw std::runtime_error(ground_truth.string() + ": duplicate id " + id);
    }
    std::vector<SampleRecord> out;
    std::set<std::string> seen;
    for (const auto& j : read_json_lines(predictions)) {
      SampleRecord s;
      s.id = j.at("id").get<std::string>();
      if (!seen.insert(s.id).second) throw std::runtime_error(predictions.string() + ": duplicate id " + s.id);
      for (const auto& p : j.at("ranked")) {
        if (!p.is_array() || p.size() != 3)
          throw std::runtime_error(predictions.string() + ": id " + s.id + ": expected [start, end, score]");
        s.ranked.push_back({parse_span(p, predictions.string() + " id " + s.id), p[2].get<double>()});
      }
      if (s.ranked.empty()) throw std::runtime_error(predictions.string() + ": id " + s.id + " has no predictions");
      auto it = gts.find(s.id);
      if (it == gts.end()) throw std::runtime_error("no ground truth for prediction id " + s.id);
      s.gts = it->second;
      out.push_back(std::move(s));
    }
    if (out.size() != gts.size())
      throw std::runtime_error("ground truth has " + std::to_string(gts.size()) + " ids but predictions cover " +
                               std::to_string(out.size()));
    return out;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed prediction/gt file: ") + e.what());
  }
}

}  // namespace cicr::metrics
