#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "cicr/model.hpp"
#include "cicr/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace cicr;
using namespace cicr::model;
using num::Tape;
using num::Tensor;
using cicr::testing::grad_check;
using cicr::testing::random_tensor;
using cicr::testing::tiny_dictionary;
using cicr::testing::tiny_model_config;

namespace {

// Proposals on the stride lattice, counted with integer arithmetic.
std::size_t grid_size_oracle(const std::vector<double>& scales, double stride) {
  const long units = std::lround(1.0 / stride);
  std::set<std::pair<long, long>> spans;
  for (double s : scales) {
    const long w = std::lround(s / stride);
    for (long start = 0; start + w <= units; ++start) spans.insert({start, start + w});
  }
  return spans.size();
}

// Loss that sees every element of a tensor with a distinct weight.
Tensor probe(Tape& tape, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return num::sum(tape, num::mul(tape, y, random_tensor(rng, y.shape())));
}

// Evaluates `fn` with the named parameters swapped for the check's inputs.
Tensor with_params(GroundingModel& m, const std::vector<std::string>& names, const std::vector<Tensor>& values,
                   const std::function<Tensor()>& fn) {
  std::vector<Tensor> saved;
  for (std::size_t i = 0; i < names.size(); ++i) {
    saved.push_back(m.params().get(names[i]));
    m.params().get(names[i]) = values[i];
  }
  Tensor out = fn();
  for (std::size_t i = 0; i < names.size(); ++i) m.params().get(names[i]) = saved[i];
  return out;
}

}  // namespace

TEST(ProposalGrid, DefaultSizeMatchesEnumerationOracle) {
  const ModelConfig cfg;
  const auto grid = ProposalGrid::build(cfg.scales, cfg.stride);
  EXPECT_EQ(grid.size(), grid_size_oracle(cfg.scales, cfg.stride));
  EXPECT_EQ(grid.size(), 37u);
  for (const auto& s : grid.spans()) {
    EXPECT_GE(s.start, 0.0);
    EXPECT_LE(s.end, 1.0);
    EXPECT_LT(s.start, s.end);
  }
}

TEST(ProposalGrid, OverlappingScalesAreDeduplicated) {
  const auto grid = ProposalGrid::build({0.25, 0.25, 0.5}, 0.25);
  EXPECT_EQ(grid.size(), grid_size_oracle({0.25, 0.5}, 0.25));
}

TEST(ProposalGrid, RejectsUnsortedOrInvalidSpans) {
  EXPECT_THROW(ProposalGrid({{0.5, 0.7}, {0.1, 0.2}}), std::invalid_argument);
  EXPECT_THROW(ProposalGrid({{0.2, 0.2}}), std::invalid_argument);
  EXPECT_THROW(ProposalGrid({}), std::invalid_argument);
}

TEST(Pooling, RowsAverageClipsWhoseCentersLieInside) {
  const ProposalGrid grid({{0.0, 0.25}, {0.26, 0.27}, {0.5, 1.0}});
  const Tensor P = pooling_matrix(grid, 8);
  for (std::size_t k = 0; k < 3; ++k) {
    double s = 0;
    for (std::size_t t = 0; t < 8; ++t) s += P.at(k, t);
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  EXPECT_EQ(P.at(0, 0), 0.5);
  EXPECT_EQ(P.at(0, 1), 0.5);
  EXPECT_EQ(P.at(1, 2), 1.0);  // covers no clip center: nearest clip
  for (std::size_t t = 4; t < 8; ++t) EXPECT_EQ(P.at(2, t), 0.25);
}

TEST(Vocabulary, UnknownIsIdZeroAndLookupIsExact) {
  const auto v = Vocabulary::from_token_lists({{"person", "washes", "the", "kiwi"}, {"person", "chops", "a", "kiwi"}});
  EXPECT_EQ(v.words().front(), "<unk>");
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.id("banana"), Vocabulary::kUnknown);
  EXPECT_NE(v.id("kiwi"), Vocabulary::kUnknown);
  EXPECT_EQ(v.words()[v.id("kiwi")], "kiwi");
  const auto path = std::filesystem::temp_directory_path() / "cicr_vocab.txt";
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path).words(), v.words());
  std::filesystem::remove(path);
}

TEST(ModelConfig, HeadsMustDivideHiddenDim) {
  ModelConfig c = tiny_model_config();
  c.aligner_heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.aligner_heads");
  }
}

TEST(ModelConfig, RoundTripsThroughConfig) {
  ModelConfig c = tiny_model_config();
  c.scales = {0.25, 0.5};
  EXPECT_EQ(ModelConfig::from_config(c.to_config()).to_config().canonical(), c.to_config().canonical());
}

TEST(Model, DictionaryWidthMustMatchHiddenDim) {
  EXPECT_THROW(GroundingModel(tiny_model_config(), 10, tiny_dictionary(5)), num::DimensionError);
}

TEST(Model, InitializationIsDeterministicInTheSeed) {
  const GroundingModel a(tiny_model_config(), 10, tiny_dictionary(8));
  const GroundingModel b(tiny_model_config(), 10, tiny_dictionary(8));
  ModelConfig other = tiny_model_config();
  other.seed = 99;
  const GroundingModel c(other, 10, tiny_dictionary(8));
  const auto& w = a.params().get("encoder.video.w1");
  EXPECT_TRUE(std::equal(w.values().begin(), w.values().end(), b.params().get("encoder.video.w1").values().begin()));
  EXPECT_FALSE(std::equal(w.values().begin(), w.values().end(), c.params().get("encoder.video.w1").values().begin()));
}

TEST(EncodeVideo, DefaultConfigOutputShape) {
  const ModelConfig cfg;
  const GroundingModel m(cfg, 10, tiny_dictionary(cfg.hidden_dim));
  Tape tape;
  Rng rng(1);
  const Tensor out = m.encode_video(tape, random_tensor(rng, {32, cfg.raw_video_dim}));
  EXPECT_EQ(out.shape(), (num::Shape{32, 256}));
}

TEST(EncodeVideo, ZeroInputWithZeroBiasesIsFinite) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  EXPECT_TRUE(m.encode_video(tape, Tensor(num::Shape{16, 6}, 0.0)).all_finite());
}

TEST(EncodeVideo, RejectsWrongFeatureWidth) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  EXPECT_THROW(m.encode_video(tape, Tensor(num::Shape{16, 5}, 0.0)), num::DimensionError);
}

TEST(EncodeVideo, GradientMatchesFiniteDifferences) {
  GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  cicr::testing::jitter_parameters(m.params(), 4);
  Rng rng(2);
  const Tensor raw = random_tensor(rng, {5, 6});
  const std::vector<std::string> names = {"encoder.video.w1", "encoder.video.b1", "encoder.video.w2",
                                          "encoder.video.b2", "encoder.video.ln.gain", "encoder.video.ln.bias"};
  std::vector<Tensor> inputs = {raw.clone()};
  for (const auto& n : names) inputs.push_back(m.params().get(n).clone());
  const auto r = grad_check(
      [&](Tape& tape, const std::vector<Tensor>& x) {
        const std::vector<Tensor> ps(x.begin() + 1, x.end());
        return with_params(m, names, ps, [&] { return probe(tape, m.encode_video(tape, x[0]), 7); });
      },
      inputs);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(EncodeQuery, SingleTokenGivesOneRow) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  const std::vector<std::size_t> ids = {3};
  EXPECT_EQ(m.encode_query(tape, ids).shape(), (num::Shape{1, 8}));
}

TEST(EncodeQuery, OutOfVocabularyIdsUseTheUnknownEmbedding) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  const std::vector<std::size_t> unk = {Vocabulary::kUnknown}, oov = {12345};
  const Tensor a = m.encode_query(tape, unk), b = m.encode_query(tape, oov), c = m.encode_query(tape, oov);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(b[i], c[i]);
  }
  const std::vector<std::size_t> empty;
  EXPECT_THROW(m.encode_query(tape, empty), std::invalid_argument);
}

TEST(EncodeQuery, HeldOutWordQueriesEncodeWithoutError) {
  data::GenConfig g = cicr::testing::small_gen_config(40);
  g.holdout_object = "kiwi";
  const auto corpus = data::generate_corpus(g);
  std::vector<std::vector<std::string>> tokens;
  for (const auto& v : corpus.train.samples) tokens.push_back(text::tokenize(v.annotations[0].query));
  const auto vocab = Vocabulary::from_token_lists(tokens);
  ASSERT_EQ(vocab.id("kiwi"), Vocabulary::kUnknown);
  const GroundingModel m(tiny_model_config(64), vocab.size(), tiny_dictionary(8));
  Tape tape;
  std::size_t novel = 0;
  for (const auto& v : corpus.test_ood.samples) {
    const auto ids = vocab.ids(text::tokenize(v.annotations[0].query));
    novel += std::count(ids.begin(), ids.end(), Vocabulary::kUnknown);
    EXPECT_TRUE(m.encode_query(tape, ids).all_finite());
  }
  EXPECT_GT(novel, 0u);
}

TEST(Align, DepthZeroIsIdentity) {
  ModelConfig c = tiny_model_config();
  c.aligner_depth = 0;
  const GroundingModel m(c, 10, tiny_dictionary(8));
  Tape tape;
  Rng rng(3);
  const Tensor v = random_tensor(rng, {6, 8}), q = random_tensor(rng, {3, 8});
  EXPECT_TRUE(m.align(tape, v, q).same_storage(v));
}

TEST(Align, AttentionRowsSumToOne) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  Rng rng(4);
  std::vector<Tensor> attn;
  (void)m.align(tape, random_tensor(rng, {6, 8}), random_tensor(rng, {3, 8}), &attn);
  ASSERT_EQ(attn.size(), 2u * 2u);
  for (const auto& a : attn) {
    ASSERT_EQ(a.shape(), (num::Shape{6, 3}));
    for (std::size_t r = 0; r < 6; ++r) EXPECT_NEAR(a.at(r, 0) + a.at(r, 1) + a.at(r, 2), 1.0, 1e-9);
  }
}

TEST(Align, QueryTokenOrderDoesNotMatter) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  Rng rng(5);
  const Tensor v = random_tensor(rng, {6, 8});
  const Tensor q1 = random_tensor(rng, {1, 8});
  const Tensor single_a = m.align(tape, v, q1), single_b = m.align(tape, v, q1.clone());
  EXPECT_TRUE(std::equal(single_a.values().begin(), single_a.values().end(), single_b.values().begin()));

  const Tensor q = random_tensor(rng, {3, 8});
  std::vector<double> swapped(q.values().begin(), q.values().end());
  std::swap_ranges(swapped.begin(), swapped.begin() + 8, swapped.begin() + 16);
  const Tensor a = m.align(tape, v, q), b = m.align(tape, v, Tensor::matrix(3, 8, swapped));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ScoreMultimodal, ShapesAndZeroOffsetsAtInitialization) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Tape tape;
  Rng rng(6);
  const auto s = m.score_multimodal(tape, random_tensor(rng, {32, 8}), m.grid());
  const std::size_t K = m.grid().size();
  EXPECT_EQ(s.logits.shape(), (num::Shape{K}));
  EXPECT_EQ(s.refined_spans.shape(), (num::Shape{K, 2}));
  for (std::size_t k = 0; k < K; ++k) {
    EXPECT_EQ(s.refined_spans.at(k, 0), m.grid().span(k).start);
    EXPECT_EQ(s.refined_spans.at(k, 1), m.grid().span(k).end);
  }
}

TEST(ScoreMultimodal, RefinedSpansStayInsideTheVideoWithOneClipMinimumWidth) {
  GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  cicr::testing::jitter_parameters(m.params(), 8, 3.0);
  Tape tape;
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = m.score_multimodal(tape, random_tensor(rng, {16, 8}, -5, 5), m.grid());
    for (std::size_t k = 0; k < m.grid().size(); ++k) {
      const double a = s.refined_spans.at(k, 0), b = s.refined_spans.at(k, 1);
      EXPECT_GE(a, 0.0);
      EXPECT_LE(b, 1.0);
      EXPECT_GE(b - a, 1.0 / 16 - 1e-12);
    }
  }
}

TEST(ScoreMultimodal, GradientThroughPoolingAndClampMatchesFiniteDifferences) {
  GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  cicr::testing::jitter_parameters(m.params(), 9, 0.5);
  Rng rng(8);
  const std::vector<std::string> names = {"head.multimodal.w1", "head.multimodal.b1", "head.multimodal.w2",
                                          "head.multimodal.b2"};
  std::vector<Tensor> inputs = {random_tensor(rng, {16, 8})};
  for (const auto& n : names) inputs.push_back(m.params().get(n).clone());
  const auto r = grad_check(
      [&](Tape& tape, const std::vector<Tensor>& x) {
        const std::vector<Tensor> ps(x.begin() + 1, x.end());
        return with_params(m, names, ps, [&] {
          const auto s = m.score_multimodal(tape, x[0], m.grid());
          return num::add(tape, probe(tape, s.logits, 1), probe(tape, s.refined_spans, 2));
        });
      },
      inputs);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(ScoreVideoOnly, ShapeAndBranchIsolation) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  Rng rng(9);
  auto s1 = cicr::testing::random_sample(rng, m.grid(), 10, 16, 6);
  auto s2 = s1;
  s2.token_ids = {2, 7, 9, 1};
  for (const train::Flags flags : {train::Flags{true, true}, train::Flags{false, false}}) {
    Tape tape;
    const auto a = train::forward_pass(tape, m, s1, flags, true);
    const auto b = train::forward_pass(tape, m, s2, flags, true);
    EXPECT_EQ(a.y_v.shape(), (num::Shape{m.grid().size()}));
    EXPECT_TRUE(std::equal(a.y_v.values().begin(), a.y_v.values().end(), b.y_v.values().begin()));
    EXPECT_FALSE(std::equal(a.y_m.values().begin(), a.y_m.values().end(), b.y_m.values().begin()));
  }
}

TEST(Model, ParametersHaveTheDocumentedNames) {
  const GroundingModel m(tiny_model_config(), 10, tiny_dictionary(8));
  for (const char* n : {"encoder.video.w1", "encoder.query.embed", "tci.wk", "tci.wq", "tci.wv", "dict.embeddings",
                        "aligner.0.wq", "aligner.1.ffn.w2", "head.multimodal.w2", "head.video.w2", "vcr.c"})
    EXPECT_TRUE(m.params().contains(n)) << n;
  EXPECT_EQ(m.reference_c().item(), 0.0);
  EXPECT_EQ(m.confounders().shape(), (num::Shape{tiny_dictionary(8).size(), 8}));
}
