#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "cicr/datagen.hpp"
#include "cicr/textkit.hpp"

using namespace cicr;
using namespace cicr::text;

namespace {

const Lexicon& lex() {
  static const Lexicon l = Lexicon::default_lexicon();
  return l;
}

double prior_of(const ConfounderDictionary& d, const std::string& label) {
  const auto labels = d.entry_labels();
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw std::runtime_error("no entry " + label);
  return d.prior[static_cast<std::size_t>(it - labels.begin())];
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Lexicon, DefaultHasTheDocumentedSizesAndValidates) {
  EXPECT_EQ(lex().subjects.size(), 1u);
  EXPECT_EQ(lex().actions.size(), 4u);
  EXPECT_EQ(lex().objects.size(), 5u);
  EXPECT_EQ(lex().ordinals.size(), 4u);
  EXPECT_NO_THROW(lex().validate());
}

TEST(Lexicon, OverlappingWordListsAreRejected) {
  Lexicon bad = lex();
  bad.objects.push_back("peel");
  EXPECT_THROW(bad.validate(), TextError);
}

TEST(Tokenize, LowercasesAndDropsPunctuation) {
  EXPECT_EQ(tokenize("Person peels the kiwi."), (std::vector<std::string>{"person", "peels", "the", "kiwi"}));
}

TEST(Tokenize, CollapsesWhitespaceAndCase) {
  EXPECT_EQ(tokenize("PERSON  washes a Kiwi"), (std::vector<std::string>{"person", "washes", "a", "kiwi"}));
}

TEST(Tokenize, EmptyOrPunctuationOnlyQueryIsAnError) {
  EXPECT_THROW(tokenize(""), EmptyQueryError);
  EXPECT_THROW(tokenize("  ...  "), EmptyQueryError);
}

TEST(ExtractSvo, TemplateSentence) {
  EXPECT_EQ(extract_svo({"person", "washes", "a", "kiwi"}, lex()), (SvoTuple{"person", "wash", "kiwi"}));
}

TEST(ExtractSvo, OrdinalIsIgnored) {
  EXPECT_EQ(extract_svo({"person", "peels", "the", "second", "kiwi"}, lex()), (SvoTuple{"person", "peel", "kiwi"}));
}

TEST(ExtractSvo, PluralObjectMapsToItsSingular) {
  EXPECT_EQ(extract_svo({"person", "chops", "potatoes"}, lex()), (SvoTuple{"person", "chop", "potato"}));
}

TEST(ExtractSvo, MissingRoleNamesTheRole) {
  try {
    extract_svo({"person", "the", "kiwi"}, lex());
    FAIL();
  } catch (const ExtractionError& e) {
    EXPECT_EQ(e.role(), "action");
  }
  try {
    extract_svo({"person", "washes", "the", "table"}, lex());
    FAIL();
  } catch (const ExtractionError& e) {
    EXPECT_EQ(e.role(), "object");
  }
  EXPECT_THROW(extract_svo({"washes", "kiwi"}, lex()), ExtractionError);
  EXPECT_THROW(extract_svo({}, lex()), EmptyQueryError);
}

TEST(ExtractSvo, ObjectMustFollowTheAction) {
  EXPECT_THROW(extract_svo({"kiwi", "person", "washes"}, lex()), ExtractionError);
}

TEST(Tokenize, GeneratedQueriesRoundTripThroughTheTemplates) {
  data::GenConfig cfg;
  cfg.train_videos = 1000;
  cfg.val_videos = cfg.test_iid_videos = cfg.test_ood_videos = 0;
  cfg.repeat_rate = 0.5;
  const auto corpus = data::generate_corpus(cfg);
  std::size_t n = 0;
  for (const auto& v : corpus.train.samples)
    for (const auto& a : v.annotations) {
      const auto tokens = tokenize(a.query);
      std::string joined;
      for (const auto& t : tokens) joined += (joined.empty() ? "" : " ") + t;
      EXPECT_EQ(joined, a.query);
      ++n;
    }
  EXPECT_EQ(n, 1000u);
}

TEST(ExtractSvo, SucceedsOnEveryGeneratedTrainingQuery) {
  data::GenConfig cfg;
  const auto corpus = data::generate_corpus(cfg);
  for (const auto& v : corpus.train.samples)
    for (const auto& a : v.annotations) {
      const SvoTuple svo = extract_svo(tokenize(a.query), lex());
      // The queried tuple is one of the video's events.
      const bool found = std::any_of(v.events.begin(), v.events.end(), [&](const auto& e) { return e.svo == svo; });
      EXPECT_TRUE(found) << a.query;
    }
}

TEST(Dictionary, SizesFromTwoTupleCorpus) {
  const auto d = build_dictionary({{"person", "wash", "kiwi"}, {"person", "chop", "kiwi"}}, 8, 1);
  EXPECT_EQ(d.subjects.size(), 1u);
  EXPECT_EQ(d.actions.size(), 2u);
  EXPECT_EQ(d.objects.size(), 1u);
  EXPECT_EQ(d.size(), 4u);
  EXPECT_EQ(d.embeddings.shape(), (num::Shape{4, 8}));
}

TEST(Dictionary, PriorIsFrequencyOverTheConcatenatedDictionary) {
  const auto d = build_dictionary({{"person", "wash", "kiwi"}, {"person", "chop", "kiwi"}}, 8, 1);
  EXPECT_DOUBLE_EQ(prior_of(d, "subject:person"), 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(prior_of(d, "action:wash"), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(prior_of(d, "action:chop"), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(prior_of(d, "object:kiwi"), 2.0 / 6.0);
}

TEST(Dictionary, EmptyCorpusIsRejected) { EXPECT_THROW(build_dictionary({}, 8, 1), TextError); }

TEST(Dictionary, PriorMatchesIndependentCountAndIsOrderInvariant) {
  data::GenConfig cfg;
  const auto corpus = data::generate_corpus(cfg);
  auto tuples = data::extract_corpus_tuples(corpus.train, lex());
  const auto d = build_dictionary(tuples, 16, 3);

  std::map<std::string, double> counts;
  for (const auto& t : tuples) {
    counts["subject:" + t.subject] += 1;
    counts["action:" + t.action] += 1;
    counts["object:" + t.object] += 1;
  }
  double total = 0;
  for (const auto& [k, c] : counts) total += c;
  for (const auto& [label, c] : counts) EXPECT_DOUBLE_EQ(prior_of(d, label), c / total) << label;
  EXPECT_NEAR(std::accumulate(d.prior.begin(), d.prior.end(), 0.0), 1.0, 1e-9);

  std::reverse(tuples.begin(), tuples.end());
  const auto r = build_dictionary(tuples, 16, 3);
  EXPECT_EQ(r.prior, d.prior);
  EXPECT_EQ(r.entry_labels(), d.entry_labels());
}

TEST(Dictionary, RebuildIsBitIdentical) {
  data::GenConfig cfg;
  const auto tuples = data::extract_corpus_tuples(data::generate_corpus(cfg).train, lex());
  const auto a = build_dictionary(tuples, 16, 7);
  const auto b = build_dictionary(tuples, 16, 7);
  EXPECT_EQ(a.prior, b.prior);
  EXPECT_TRUE(std::equal(a.embeddings.values().begin(), a.embeddings.values().end(), b.embeddings.values().begin()));
  EXPECT_EQ(a.size(), lex().subjects.size() + lex().actions.size() + lex().objects.size());
}

TEST(Dictionary, SaveLoadRoundTripAndRewriteAreExact) {
  const auto d = build_dictionary({{"person", "wash", "kiwi"}, {"person", "chop", "apple"}}, 6, 2);
  const auto dir = std::filesystem::temp_directory_path() / "cicr_dict_roundtrip";
  std::filesystem::remove_all(dir);
  save_dictionary(d, dir);
  const auto back = load_dictionary(dir);
  EXPECT_EQ(back.entry_labels(), d.entry_labels());
  EXPECT_EQ(back.prior, d.prior);
  EXPECT_TRUE(std::equal(d.embeddings.values().begin(), d.embeddings.values().end(), back.embeddings.values().begin()));

  const std::string first = read_file(dir / "dictionary.ckpt") + read_file(dir / "dictionary.txt");
  save_dictionary(back, dir);
  EXPECT_EQ(first, read_file(dir / "dictionary.ckpt") + read_file(dir / "dictionary.txt"));
  std::filesystem::remove_all(dir);
}
