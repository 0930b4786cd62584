#include "cicr/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace cicr::ablation {

namespace fs = std::filesystem;

const std::vector<Cell>& cells() {
  static const std::vector<Cell> c = {
      {"full", {true, true}}, {"wo_tci", {false, true}}, {"wo_vcr", {true, false}}, {"wo_both", {false, false}}};
  return c;
}

namespace {

struct Task {
  std::string cell;
  train::Flags flags;
  std::uint64_t seed;
  double lambda_kl;
  std::string run_name;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Row to_row(const Task& t, const std::string& split, const metrics::EvalResult& r) {
  Row row;
  row.cell = t.cell;
  row.seed = t.seed;
  row.lambda_kl = t.lambda_kl;
  row.split = split;
  row.r1_03 = r.r1_at(0.3);
  row.r1_05 = r.r1_at(0.5);
  row.r1_07 = r.r1_at(0.7);
  row.miou = r.miou;
  row.map_avg = r.map_avg;
  return row;
}

std::vector<Row> run_tasks(const Config& base, const data::Corpus& corpus, const std::vector<Task>& tasks,
                           const Options& options) {
  // Validate the shared config up front so a bad key fails before any training.
  {
    Config probe = base;
    (void)train::make_experiment(probe, corpus.train);
  }
  std::vector<std::vector<Row>> results(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    options.log(msg);
  };

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& t = tasks[i];
      try {
        Config cfg = base;
        cfg.set("train.use_tci", t.flags.use_tci ? "true" : "false");
        cfg.set("train.use_vcr", t.flags.use_vcr ? "true" : "false");
        cfg.set("train.seed", std::to_string(t.seed));
        cfg.set("model.seed", std::to_string(t.seed));
        cfg.set("loss.lambda_kl", fmt(t.lambda_kl));
        const auto exp = train::make_experiment(cfg, corpus.train);
        train::RunOptions ro;
        if (options.out_dir) ro.out_dir = *options.out_dir / t.run_name;
        const auto rec = train::run_training(exp, corpus.train, &corpus.val, &corpus.test_iid, &corpus.test_ood, ro);
        results[i].push_back(to_row(t, "test_iid", *rec.test_iid));
        results[i].push_back(to_row(t, "test_ood", *rec.test_ood));
        char line[200];
        std::snprintf(line, sizeof(line), "%s: test_ood R1@0.5 %.2f mIoU %.2f (best epoch %zu)", t.run_name.c_str(),
                      rec.test_ood->r1_at(0.5), rec.test_ood->miou, rec.best_epoch);
        log(line);
      } catch (const std::exception& e) {
        errors[i] = t.run_name + ": " + e.what();
      }
    }
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);

  std::vector<Row> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

}  // namespace

std::vector<Row> run_ablation(const Config& base, const data::Corpus& corpus, const Options& options) {
  if (options.seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  const double lambda = train::TrainConfig::from_config(base).weights.kl;
  std::vector<Task> tasks;
  for (auto seed : options.seeds)
    for (const auto& c : cells()) tasks.push_back({c.name, c.flags, seed, lambda, c.name + "_seed" + std::to_string(seed)});
  return run_tasks(base, corpus, tasks, options);
}

std::vector<Row> run_kl_sweep(const Config& base, const data::Corpus& corpus, const std::vector<double>& lambdas,
                              const Options& options) {
  if (options.seeds.empty()) throw std::invalid_argument("sweep needs at least one seed");
  if (lambdas.empty()) throw std::invalid_argument("sweep needs at least one lambda_kl value");
  std::vector<Task> tasks;
  for (double l : lambdas) {
    if (!(l >= 0)) throw ConfigError("loss.lambda_kl", "sweep values must be >= 0");
    for (auto seed : options.seeds) {
      char name[64];
      std::snprintf(name, sizeof(name), "kl%g_seed%llu", l, static_cast<unsigned long long>(seed));
      tasks.push_back({"full", {true, true}, seed, l, name});
    }
  }
  return run_tasks(base, corpus, tasks, options);
}

void write_rows_csv(const fs::path& path, const std::vector<Row>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "cell,seed,lambda_kl,split,r1_0.3,r1_0.5,r1_0.7,miou,map_avg\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%llu,%g,%s,%.2f,%.2f,%.2f,%.2f,%.2f", r.cell.c_str(),
                  static_cast<unsigned long long>(r.seed), r.lambda_kl, r.split.c_str(), r.r1_03, r.r1_05, r.r1_07,
                  r.miou, r.map_avg);
    out << buf << "\n";
  }
}

std::vector<Row> read_rows_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("cell,seed,lambda_kl,split", 0) != 0)
    throw std::runtime_error(path.string() + " is not an ablation CSV");
  std::vector<Row> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    Row r;
    unsigned long long seed = 0;
    if (!(ls >> r.cell >> seed >> r.lambda_kl >> r.split >> r.r1_03 >> r.r1_05 >> r.r1_07 >> r.miou >> r.map_avg))
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    r.seed = seed;
    rows.push_back(r);
  }
  return rows;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

OrderingReport summarize_ablation(const std::vector<Row>& rows, const std::string& split) {
  OrderingReport rep;
  std::map<std::string, CellSummary> by_cell;
  for (const auto& c : cells()) {
    std::vector<double> r1, miou, map;
    for (const auto& r : rows)
      if (r.cell == c.name && r.split == split) {
        r1.push_back(r.r1_05);
        miou.push_back(r.miou);
        map.push_back(r.map_avg);
      }
    if (r1.empty()) throw std::runtime_error("no " + split + " rows for cell " + c.name);
    rep.cells.push_back({c.name, r1.size(), median(r1), median(miou), median(map)});
    by_cell[c.name] = rep.cells.back();
  }
  const double full = by_cell["full"].median_r1_05;
  const double base = by_cell["wo_both"].median_r1_05;
  rep.full_beats_baseline = full > base;
  if (!rep.full_beats_baseline) rep.inversions.push_back("wo_both >= full");
  for (const char* single : {"wo_tci", "wo_vcr"})
    if (by_cell[single].median_r1_05 < base) rep.inversions.push_back(std::string(single) + " < wo_both");
  return rep;
}

std::string OrderingReport::render() const {
  std::vector<CellSummary> sorted = cells;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const CellSummary& a, const CellSummary& b) { return a.median_r1_05 > b.median_r1_05; });
  std::ostringstream out;
  out << "rank cell     runs  median_R1@0.5  median_mIoU  median_mAP_avg\n";
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-4zu %-8s %4zu  %13.2f  %11.2f  %14.2f\n", i + 1, sorted[i].cell.c_str(),
                  sorted[i].runs, sorted[i].median_r1_05, sorted[i].median_miou, sorted[i].median_map_avg);
    out << buf;
  }
  if (inversions.empty()) {
    out << "ordering: as expected (full > wo_both, single-component cells >= wo_both)\n";
  } else {
    out << "ordering inversions:";
    for (const auto& inv : inversions) out << " [" << inv << "]";
    out << "\n";
  }
  return out.str();
}

std::vector<SensitivityRow> summarize_sweep(const std::vector<Row>& rows, const std::string& split) {
  std::map<double, std::vector<const Row*>> groups;
  for (const auto& r : rows)
    if (r.split == split && r.cell == "full") groups[r.lambda_kl].push_back(&r);
  std::vector<SensitivityRow> out;
  for (const auto& [lambda, group] : groups) {
    std::vector<double> r1, miou, map;
    for (const Row* r : group) {
      r1.push_back(r->r1_05);
      miou.push_back(r->miou);
      map.push_back(r->map_avg);
    }
    out.push_back({lambda, group.size(), median(r1), median(miou), median(map)});
  }
  return out;
}

std::string render_sensitivity(const std::vector<SensitivityRow>& table) {
  std::ostringstream out;
  out << "lambda_kl  runs  median_R1@0.5  median_mIoU  median_mAP_avg\n";
  for (const auto& r : table) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-9g  %4zu  %13.2f  %11.2f  %14.2f\n", r.lambda_kl, r.runs, r.median_r1_05,
                  r.median_miou, r.median_map_avg);
    out << buf;
  }
  return out.str();
}

void write_sensitivity_csv(const fs::path& path, const std::vector<SensitivityRow>& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "lambda_kl,runs,median_r1_0.5,median_miou,median_map_avg\n";
  for (const auto& r : table) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%g,%zu,%.2f,%.2f,%.2f", r.lambda_kl, r.runs, r.median_r1_05, r.median_miou,
                  r.median_map_avg);
    out << buf << "\n";
  }
}

}  // namespace cicr::ablation
