#pragma once

#include <string>
#include <vector>

#include "cicr/datagen.hpp"
#include "cicr/losses.hpp"
#include "cicr/model.hpp"
#include "cicr/trainer.hpp"
#include "support/gradcheck.hpp"

namespace cicr::testing {

inline model::ModelConfig tiny_model_config(std::size_t raw_dim = 6) {
  model::ModelConfig m;
  m.hidden_dim = 8;
  m.raw_video_dim = raw_dim;
  m.text_dim = 4;
  m.aligner_depth = 2;
  m.aligner_heads = 2;
  m.ffn_mult = 2;
  m.seed = 3;
  return m;
}

// One entry per lexicon word with a hand-set prior.
inline text::ConfounderDictionary tiny_dictionary(std::size_t dim, std::uint64_t seed = 5) {
  return text::build_dictionary({{"person", "wash", "kiwi"}, {"person", "chop", "kiwi"}, {"person", "peel", "apple"}},
                                dim, seed);
}

inline train::PreparedSample random_sample(Rng& rng, const model::ProposalGrid& grid, std::size_t vocab_size,
                                           std::size_t clips, std::size_t raw_dim, std::size_t n_gts = 1) {
  train::PreparedSample s;
  s.id = "sample-" + std::to_string(rng.below(1000000));
  s.features = random_tensor(rng, {clips, raw_dim}, -1.0, 1.0);
  const std::size_t len = 3 + rng.below(3);
  for (std::size_t i = 0; i < len; ++i) s.token_ids.push_back(1 + rng.below(vocab_size - 1));
  for (std::size_t g = 0; g < n_gts; ++g) {
    const std::size_t a = rng.below(clips - 4);
    const std::size_t b = a + 2 + rng.below(3);
    s.gts.push_back({static_cast<double>(a) / static_cast<double>(clips), static_cast<double>(b) / static_cast<double>(clips)});
  }
  s.labels = loss::assign_labels(grid.spans(), s.gts);
  return s;
}

// Adds noise to every parameter so no unit sits exactly at an initialization kink.
inline void jitter_parameters(num::ParameterStore& store, std::uint64_t seed, double sigma = 0.3) {
  Rng rng(seed);
  for (const auto& name : store.names())
    for (double& v : store.get(name).values_mut()) v += sigma * rng.normal();
}

inline data::GenConfig small_gen_config(std::size_t train_videos, std::uint64_t seed = 7) {
  data::GenConfig g;
  g.train_videos = train_videos;
  g.val_videos = 20;
  g.test_iid_videos = 20;
  g.test_ood_videos = 20;
  g.seed = seed;
  return g;
}

// Small, fast experiment config over the given data settings.
inline Config small_experiment_config(const data::GenConfig& g, std::size_t epochs) {
  Config c = g.to_config();
  c.set("model.hidden_dim", "16");
  c.set("model.text_dim", "16");
  c.set("model.aligner_heads", "2");
  c.set("model.aligner_depth", "1");
  c.set("train.lr", "1e-3");
  c.set("train.epochs", std::to_string(epochs));
  return c;
}

}  // namespace cicr::testing
