#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cicr/config.hpp"
#include "cicr/numerics/ops.hpp"
#include "cicr/numerics/optim.hpp"
#include "cicr/span.hpp"
#include "cicr/textkit.hpp"

namespace cicr::model {

struct ModelConfig {
  std::size_t hidden_dim = 256;  // D
  std::size_t raw_video_dim = 64;
  std::size_t text_dim = 64;  // token embedding width before projection to D
  std::vector<double> scales = {0.125, 0.25, 0.5};
  double stride = 0.0625;
  std::size_t aligner_depth = 2;
  std::size_t aligner_heads = 4;
  std::size_t ffn_mult = 2;
  std::uint64_t seed = 1;

  static ModelConfig from_config(const Config& cfg);
  Config to_config() const;
  static const std::set<std::string>& keys();
  void validate() const;
};

// Fixed multi-scale sliding-window proposals, sorted by (start, end).
class ProposalGrid {
 public:
  static ProposalGrid build(const std::vector<double>& scales, double stride);
  explicit ProposalGrid(std::vector<Span> spans);

  std::size_t size() const { return spans_.size(); }
  const Span& span(std::size_t k) const { return spans_[k]; }
  const std::vector<Span>& spans() const { return spans_; }
  num::Tensor as_tensor() const;  // K_prop x 2

 private:
  std::vector<Span> spans_;
};

// Row k averages the clips whose centers fall inside proposal k; a proposal that
// covers no clip center takes the single nearest clip.
num::Tensor pooling_matrix(const ProposalGrid& grid, std::size_t clips);

// Query-token vocabulary; id 0 is reserved for unknown words.
class Vocabulary {
 public:
  static constexpr std::size_t kUnknown = 0;
  static constexpr const char* kUnknownToken = "<unk>";

  Vocabulary();
  static Vocabulary from_token_lists(const std::vector<std::vector<std::string>>& token_lists);

  std::size_t size() const { return words_.size(); }
  std::size_t id(const std::string& word) const;
  std::vector<std::size_t> ids(const std::vector<std::string>& tokens) const;
  const std::vector<std::string>& words() const { return words_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
};

// Video encoder, query encoder, cross-modal aligner and the two scoring heads,
// plus the parameters of the causal operators (TCI projections, confounder
// embeddings, reference scalar c). All live in one ParameterStore.
class GroundingModel {
 public:
  GroundingModel(ModelConfig config, std::size_t vocab_size, const text::ConfounderDictionary& dict);

  const ModelConfig& config() const { return config_; }
  num::ParameterStore& params() { return params_; }
  const num::ParameterStore& params() const { return params_; }
  const ProposalGrid& grid() const { return grid_; }
  const std::vector<double>& prior() const { return prior_; }
  std::size_t vocab_size() const { return vocab_size_; }

  // Two-layer MLP with relu, layer-normalized: L_v x D_raw -> L_v x D.
  num::Tensor encode_video(num::Tape& tape, const num::Tensor& raw) const;
  // Token embedding lookup, projected to D: L_q x D.
  num::Tensor encode_query(num::Tape& tape, std::span<const std::size_t> token_ids) const;
  // Video rows attend over query tokens, aligner_depth times. Collects the
  // per-layer, per-head attention maps when `attention` is non-null.
  num::Tensor align(num::Tape& tape, const num::Tensor& v, const num::Tensor& q,
                    std::vector<num::Tensor>* attention = nullptr) const;

  struct MultimodalScores {
    num::Tensor logits;         // K_prop
    num::Tensor refined_spans;  // K_prop x 2
  };
  MultimodalScores score_multimodal(num::Tape& tape, const num::Tensor& m, const ProposalGrid& grid) const;
  num::Tensor score_video_only(num::Tape& tape, const num::Tensor& v, const ProposalGrid& grid) const;

  num::Tensor confounders() const { return params_.get("dict.embeddings"); }
  num::Tensor reference_c() const { return params_.get("vcr.c"); }

 private:
  num::Tensor p(const std::string& name) const { return params_.get(name); }

  ModelConfig config_;
  std::size_t vocab_size_;
  ProposalGrid grid_;
  std::vector<double> prior_;
  num::ParameterStore params_;
};

}  // namespace cicr::model
