#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cicr/config.hpp"
#include "cicr/numerics/tensor.hpp"
#include "cicr/span.hpp"
#include "cicr/textkit.hpp"

namespace cicr::data {

struct SyntheticEvent {
  text::SvoTuple svo;
  int ordinal = 1;  // occurrence index of (action, object) within the video, from 1
  Span span;
};

struct Annotation {
  std::string query;
  std::vector<Span> gt_moments;
};

struct VideoSample {
  std::string id;
  num::Tensor clip_features;  // L_v x D_raw
  std::vector<SyntheticEvent> events;  // sorted by start time
  std::vector<Annotation> annotations;
};

// Co-occurrence tables are indexed [action][object] in lexicon order; each row
// is the distribution of the queried object given the queried action.
struct BiasSpec {
  std::vector<std::vector<double>> cooccurrence;
  std::vector<std::vector<double>> ood_cooccurrence;
  double repeat_rate = 0.3;
  double skew = 0.9;

  // Row a puts its majority mass on object (a mod n_objects): 1/n_o at skew 0.5,
  // rising linearly to 1 as skew -> 1. The OOD table is (1 - row) / (n_o - 1),
  // which turns majority pairs into minority ones and leaves a uniform table unchanged.
  static BiasSpec from_skew(std::size_t n_actions, std::size_t n_objects, double skew, double repeat_rate);
  static std::size_t majority_object(std::size_t action, std::size_t n_objects) { return action % n_objects; }
  void validate() const;
};

struct DatasetSplit {
  std::string name;  // train | val | test_iid | test_ood
  std::vector<VideoSample> samples;
};

struct GenConfig {
  std::size_t train_videos = 600;
  std::size_t val_videos = 100;
  std::size_t test_iid_videos = 200;
  std::size_t test_ood_videos = 200;
  std::size_t clips = 32;    // L_v
  std::size_t raw_dim = 64;  // D_raw
  double skew = 0.9;
  double repeat_rate = 0.3;
  double multi_moment_rate = 0.2;
  double noise_sigma = 0.3;
  double signature_scale = 0.5;
  double pair_weight = 1.0;  // weight of the pair-specific part of an event signature
  std::size_t distractors = 2;
  std::size_t event_min_clips = 3;
  std::size_t event_max_clips = 7;
  std::size_t min_gap = 1;
  std::string holdout_object;  // never shown in train/val when set
  std::uint64_t seed = 7;
  text::Lexicon lexicon = text::Lexicon::default_lexicon();

  static GenConfig from_config(const Config& cfg);
  Config to_config() const;
  static const std::set<std::string>& keys();
  // Throws ConfigError naming the offending key.
  void validate() const;
};

struct Corpus {
  BiasSpec bias;
  DatasetSplit train, val, test_iid, test_ood;

  std::vector<const DatasetSplit*> splits() const { return {&train, &val, &test_iid, &test_ood}; }
};

Corpus generate_corpus(const GenConfig& config);

// Counts of queried (action, object) pairs, recovered from the query text.
std::vector<std::vector<double>> count_cooccurrence(const DatasetSplit& split, const text::Lexicon& lexicon);

// SVO tuples of every annotation that extracts cleanly; failures are logged to
// stderr and skipped.
std::vector<text::SvoTuple> extract_corpus_tuples(const DatasetSplit& split, const text::Lexicon& lexicon);

class SplitParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Text header (one record per line) followed by a binary tensor payload in the
// checkpoint layout holding every video's clip features.
void serialize_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace cicr::data
