#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cicr/config.hpp"
#include "cicr/datagen.hpp"
#include "cicr/trainer.hpp"

namespace cicr::ablation {

struct Cell {
  std::string name;
  train::Flags flags;
};

// full, wo_tci, wo_vcr, wo_both.
const std::vector<Cell>& cells();

struct Row {
  std::string cell;
  std::uint64_t seed = 0;
  double lambda_kl = 0.0;
  std::string split;  // test_iid | test_ood
  double r1_03 = 0, r1_05 = 0, r1_07 = 0, miou = 0, map_avg = 0;
};

struct Options {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t jobs = 1;  // cells trained concurrently
  std::optional<std::filesystem::path> out_dir;  // one run directory per trained cell when set
  std::function<void(const std::string&)> log;
};

// Trains every cell for every seed (seed drives both model init and shuffling).
std::vector<Row> run_ablation(const Config& base, const data::Corpus& corpus, const Options& options);

// Trains the full model once per (lambda_kl, seed).
std::vector<Row> run_kl_sweep(const Config& base, const data::Corpus& corpus, const std::vector<double>& lambdas,
                              const Options& options);

inline const std::vector<double> kDefaultKlSweep = {0.0, 0.05, 0.1, 0.2, 0.5};

void write_rows_csv(const std::filesystem::path& path, const std::vector<Row>& rows);
std::vector<Row> read_rows_csv(const std::filesystem::path& path);

double median(std::vector<double> values);

struct CellSummary {
  std::string cell;
  std::size_t runs = 0;
  double median_r1_05 = 0, median_miou = 0, median_map_avg = 0;
};

struct OrderingReport {
  std::vector<CellSummary> cells;  // in cells() order
  bool full_beats_baseline = false;
  // Single-component cells that score below the baseline, and a baseline at or above full.
  std::vector<std::string> inversions;
  std::string render() const;  // four-row ordering summary
};
OrderingReport summarize_ablation(const std::vector<Row>& rows, const std::string& split = "test_ood");

struct SensitivityRow {
  double lambda_kl = 0;
  std::size_t runs = 0;
  double median_r1_05 = 0, median_miou = 0, median_map_avg = 0;
};
std::vector<SensitivityRow> summarize_sweep(const std::vector<Row>& rows, const std::string& split = "test_ood");
std::string render_sensitivity(const std::vector<SensitivityRow>& table);
void write_sensitivity_csv(const std::filesystem::path& path, const std::vector<SensitivityRow>& table);

}  // namespace cicr::ablation
