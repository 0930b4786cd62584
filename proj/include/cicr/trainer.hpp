#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cicr/causal.hpp"
#include "cicr/config.hpp"
#include "cicr/datagen.hpp"
#include "cicr/losses.hpp"
#include "cicr/metrics.hpp"
#include "cicr/model.hpp"
#include "cicr/numerics/checkpoint.hpp"

namespace cicr::train {

struct Flags {
  bool use_tci = true;
  bool use_vcr = true;
};

struct TrainConfig {
  std::size_t batch_size = 12;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  loss::LossWeights weights;
  Flags flags;
  bool use_prior = true;
  bool kl_stop_gradient = true;
  loss::KlDirection kl_direction = loss::KlDirection::FactualToCounterfactual;
  double grad_clip = 5.0;  // global norm; 0 disables

  static TrainConfig from_config(const Config& cfg);
  Config to_config() const;
  static const std::set<std::string>& keys();
  void validate() const;
};

// Every key accepted by a full experiment config (data, model, train and loss).
const std::set<std::string>& experiment_keys();

// One annotation of one video, ready for the model.
struct PreparedSample {
  std::string id;
  num::Tensor features;
  std::vector<std::size_t> token_ids;
  std::vector<Span> gts;
  loss::ProposalLabels labels;
};

std::vector<PreparedSample> prepare_split(const data::DatasetSplit& split, const model::Vocabulary& vocab,
                                          const model::ProposalGrid& grid);

struct ForwardResult {
  num::Tensor q;          // encoded query tokens
  num::Tensor q_causal;   // after the backdoor adjustment (== q without TCI)
  num::Tensor y_v, y_m, refined, c;
  causal::CausalScores scores;
};

// encode -> (TCI) -> align -> score -> (VCR). Without VCR the ranking and
// training scores are y_m alone; y_v is computed off the tape.
ForwardResult forward_pass(num::Tape& tape, const model::GroundingModel& model, const PreparedSample& sample,
                           const Flags& flags, bool use_prior);

struct SampleLoss {
  num::Tensor total;
  loss::LossBreakdown parts;
};
SampleLoss sample_loss(num::Tape& tape, const ForwardResult& fwd, const PreparedSample& sample,
                       const TrainConfig& config);

struct Evaluation {
  metrics::EvalResult result;
  std::vector<metrics::SampleRecord> records;
};
// Ranks proposals by TIE (by y_m without VCR) and scores the refined spans.
Evaluation evaluate(const model::GroundingModel& model, const std::vector<PreparedSample>& samples,
                    const Flags& flags, bool use_prior);

// Mean total loss over `samples` without updating anything.
double mean_loss(const model::GroundingModel& model, const std::vector<PreparedSample>& samples,
                 const TrainConfig& config);

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossLogRow {
  std::size_t epoch = 0;  // from 1
  std::size_t step = 0;   // global, from 1
  loss::LossBreakdown parts;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean of the epoch's step losses
  std::optional<metrics::EvalResult> val;
};

struct RunRecord {
  Config snapshot;
  double initial_train_loss = 0.0;
  std::vector<LossLogRow> losses;
  std::vector<EpochSummary> epochs;
  std::size_t best_epoch = 0;  // 0: the initial parameters were never beaten
  double best_val_r1 = -1.0;
  std::optional<metrics::EvalResult> test_iid, test_ood;
  std::vector<std::filesystem::path> checkpoints;
  std::shared_ptr<model::GroundingModel> model;  // holds the best-validation parameters after a full run
};

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;
  bool resume = false;                      // continue from out_dir/checkpoints/last.ckpt when present
  std::optional<std::size_t> stop_after;    // stop once this many epochs are complete
  std::function<void(const std::string&)> log;  // progress lines
};

// Bundles everything a model needs besides its parameters.
struct Experiment {
  Config config;  // fully expanded
  data::GenConfig data;
  model::ModelConfig model_config;
  TrainConfig train;
  model::Vocabulary vocab;
  text::ConfounderDictionary dictionary;
};

// Expands `cfg` with defaults and derives the vocabulary from the training
// split. The dictionary is built from the split too unless one is supplied.
Experiment make_experiment(const Config& cfg, const data::DatasetSplit& train_split,
                           const text::ConfounderDictionary* dictionary = nullptr);

// Trains a model for `exp` and evaluates it. Splits other than train may be null.
RunRecord run_training(const Experiment& exp, const data::DatasetSplit& train_split, const data::DatasetSplit* val,
                       const data::DatasetSplit* test_iid, const data::DatasetSplit* test_ood,
                       const RunOptions& options = {});

// Rebuilds the model stored in a run directory (config.txt, vocab.txt,
// dictionary/, checkpoints/<which>.ckpt).
struct LoadedRun {
  Config config;
  TrainConfig train;
  model::Vocabulary vocab;
  std::unique_ptr<model::GroundingModel> model;
};
LoadedRun load_run(const std::filesystem::path& run_dir, const std::string& which = "best");

// Loss log CSV: epoch,step,l_kl,l_l1,l_iou,l_ce,total at full precision.
void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& rows);
std::vector<LossLogRow> read_loss_log(const std::filesystem::path& path);

}  // namespace cicr::train
