#include "cicr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "cicr/rng.hpp"

namespace cicr::data {

BiasSpec BiasSpec::from_skew(std::size_t n_actions, std::size_t n_objects, double skew, double repeat_rate) {
  if (n_objects < 2) throw ConfigError("data.lexicon", "need at least two objects to express a skew");
  BiasSpec b;
  b.skew = skew;
  b.repeat_rate = repeat_rate;
  const double n = static_cast<double>(n_objects);
  const double p_major = 1.0 / n + (skew - 0.5) / 0.5 * (1.0 - 1.0 / n);
  const double p_minor = (1.0 - p_major) / (n - 1.0);
  for (std::size_t a = 0; a < n_actions; ++a) {
    std::vector<double> row(n_objects, p_minor), ood(n_objects);
    row[majority_object(a, n_objects)] = p_major;
    for (std::size_t o = 0; o < n_objects; ++o) ood[o] = (1.0 - row[o]) / (n - 1.0);
    b.cooccurrence.push_back(std::move(row));
    b.ood_cooccurrence.push_back(std::move(ood));
  }
  b.validate();
  return b;
}

void BiasSpec::validate() const {
  auto check = [](const std::vector<std::vector<double>>& table, const char* name) {
    for (const auto& row : table) {
      double s = 0.0;
      for (double p : row) {
        if (p < 0.0) throw ConfigError(name, "negative probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError(name, "row does not sum to 1");
    }
  };
  check(cooccurrence, "bias.cooccurrence");
  check(ood_cooccurrence, "bias.ood_cooccurrence");
  if (repeat_rate < 0.0 || repeat_rate > 1.0) throw ConfigError("data.repeat_rate", "must lie in [0, 1]");
  if (skew < 0.5 || skew >= 1.0) throw ConfigError("data.skew", "must lie in [0.5, 1)");
}

const std::set<std::string>& GenConfig::keys() {
  static const std::set<std::string> k = {
      "data.train_videos",  "data.val_videos",       "data.test_iid_videos", "data.test_ood_videos",
      "data.clips",         "data.raw_dim",          "data.skew",            "data.repeat_rate",
      "data.multi_moment_rate", "data.noise_sigma",  "data.signature_scale", "data.pair_weight",
      "data.distractors",   "data.event_min_clips",  "data.event_max_clips", "data.min_gap",
      "data.holdout_object", "data.seed"};
  return k;
}

GenConfig GenConfig::from_config(const Config& cfg) {
  GenConfig g;
  auto count = [&](const char* key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(key, "must be non-negative");
    return static_cast<std::size_t>(v);
  };
  g.train_videos = count("data.train_videos", g.train_videos);
  g.val_videos = count("data.val_videos", g.val_videos);
  g.test_iid_videos = count("data.test_iid_videos", g.test_iid_videos);
  g.test_ood_videos = count("data.test_ood_videos", g.test_ood_videos);
  g.clips = count("data.clips", g.clips);
  g.raw_dim = count("data.raw_dim", g.raw_dim);
  g.skew = cfg.get_double("data.skew", g.skew);
  g.repeat_rate = cfg.get_double("data.repeat_rate", g.repeat_rate);
  g.multi_moment_rate = cfg.get_double("data.multi_moment_rate", g.multi_moment_rate);
  g.noise_sigma = cfg.get_double("data.noise_sigma", g.noise_sigma);
  g.signature_scale = cfg.get_double("data.signature_scale", g.signature_scale);
  g.pair_weight = cfg.get_double("data.pair_weight", g.pair_weight);
  g.distractors = count("data.distractors", g.distractors);
  g.event_min_clips = count("data.event_min_clips", g.event_min_clips);
  g.event_max_clips = count("data.event_max_clips", g.event_max_clips);
  g.min_gap = count("data.min_gap", g.min_gap);
  g.holdout_object = cfg.get_string("data.holdout_object", g.holdout_object);
  g.seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", static_cast<long long>(g.seed)));
  g.validate();
  return g;
}

Config GenConfig::to_config() const {
  Config c;
  auto num = [](double v) { return join_doubles({v}); };
  c.set("data.train_videos", std::to_string(train_videos));
  c.set("data.val_videos", std::to_string(val_videos));
  c.set("data.test_iid_videos", std::to_string(test_iid_videos));
  c.set("data.test_ood_videos", std::to_string(test_ood_videos));
  c.set("data.clips", std::to_string(clips));
  c.set("data.raw_dim", std::to_string(raw_dim));
  c.set("data.skew", num(skew));
  c.set("data.repeat_rate", num(repeat_rate));
  c.set("data.multi_moment_rate", num(multi_moment_rate));
  c.set("data.noise_sigma", num(noise_sigma));
  c.set("data.signature_scale", num(signature_scale));
  c.set("data.pair_weight", num(pair_weight));
  c.set("data.distractors", std::to_string(distractors));
  c.set("data.event_min_clips", std::to_string(event_min_clips));
  c.set("data.event_max_clips", std::to_string(event_max_clips));
  c.set("data.min_gap", std::to_string(min_gap));
  c.set("data.holdout_object", holdout_object);
  c.set("data.seed", std::to_string(seed));
  return c;
}

void GenConfig::validate() const {
  lexicon.validate();
  if (train_videos == 0) throw ConfigError("data.train_videos", "must be positive");
  if (clips == 0) throw ConfigError("data.clips", "must be positive");
  if (raw_dim == 0) throw ConfigError("data.raw_dim", "must be positive");
  if (skew < 0.5 || skew >= 1.0) throw ConfigError("data.skew", "must lie in [0.5, 1)");
  if (repeat_rate < 0.0 || repeat_rate > 1.0) throw ConfigError("data.repeat_rate", "must lie in [0, 1]");
  if (multi_moment_rate < 0.0 || multi_moment_rate > 1.0)
    throw ConfigError("data.multi_moment_rate", "must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma", "must be non-negative");
  if (event_min_clips == 0 || event_min_clips > event_max_clips)
    throw ConfigError("data.event_min_clips", "need 1 <= event_min_clips <= event_max_clips");
  if (distractors + 1 > lexicon.actions.size() + lexicon.objects.size() - 1)
    throw ConfigError("data.distractors", "more distractors than distinct confusable pairs");
  if (!holdout_object.empty() &&
      std::find(lexicon.objects.begin(), lexicon.objects.end(), holdout_object) == lexicon.objects.end())
    throw ConfigError("data.holdout_object", "'" + holdout_object + "' is not a lexicon object");
  // Worst case: a repeated target plus every distractor, all at maximum length.
  const std::size_t max_events = distractors + 2;
  const std::size_t needed = max_events * event_max_clips + (max_events - 1) * min_gap;
  if (needed > clips)
    throw ConfigError("data.clips", "infeasible packing: up to " + std::to_string(max_events) + " events of " +
                                        std::to_string(event_max_clips) + " clips need " + std::to_string(needed) +
                                        " clips, video has " + std::to_string(clips));
}

namespace {

struct Signatures {
  std::vector<double> subject;                        // raw_dim
  std::vector<std::vector<double>> action, object;    // [n][raw_dim]
  std::vector<std::vector<std::vector<double>>> pair;  // [a][o][raw_dim]
};

std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

Signatures make_signatures(const GenConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x5167));
  const auto& lex = cfg.lexicon;
  Signatures s;
  s.subject = gaussian_vector(rng, cfg.raw_dim, cfg.signature_scale);
  for (std::size_t a = 0; a < lex.actions.size(); ++a) s.action.push_back(gaussian_vector(rng, cfg.raw_dim, cfg.signature_scale));
  for (std::size_t o = 0; o < lex.objects.size(); ++o) s.object.push_back(gaussian_vector(rng, cfg.raw_dim, cfg.signature_scale));
  s.pair.resize(lex.actions.size());
  for (auto& row : s.pair)
    for (std::size_t o = 0; o < lex.objects.size(); ++o)
      row.push_back(gaussian_vector(rng, cfg.raw_dim, cfg.signature_scale * cfg.pair_weight));
  return s;
}

struct PairIndex {
  std::size_t action, object;
  bool operator==(const PairIndex&) const = default;
};

// Inverse CDF of a discrete distribution.
std::size_t inverse_cdf(const std::vector<double>& probs, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  for (std::size_t i = probs.size(); i > 0; --i)
    if (probs[i - 1] > 0) return i - 1;
  return 0;
}

struct VideoPlan {
  PairIndex target;
};

// Balanced actions and stratified object draws: for each action, the m videos
// that ask about it take uniforms (perm(j) + U) / m, so the realized object
// frequencies track the table row closely even for small m.
std::vector<VideoPlan> plan_split(std::size_t n, const std::vector<std::vector<double>>& table, Rng& rng) {
  const std::size_t n_actions = table.size();
  std::vector<std::size_t> actions(n);
  for (std::size_t i = 0; i < n; ++i) actions[i] = i % n_actions;
  rng.shuffle(actions);

  std::vector<std::vector<std::size_t>> by_action(n_actions);
  for (std::size_t i = 0; i < n; ++i) by_action[actions[i]].push_back(i);

  std::vector<VideoPlan> plans(n);
  for (std::size_t a = 0; a < n_actions; ++a) {
    const auto& vids = by_action[a];
    std::vector<std::size_t> strata(vids.size());
    std::iota(strata.begin(), strata.end(), 0);
    rng.shuffle(strata);
    for (std::size_t j = 0; j < vids.size(); ++j) {
      const double u = (static_cast<double>(strata[j]) + rng.uniform()) / static_cast<double>(vids.size());
      plans[vids[j]].target = PairIndex{a, inverse_cdf(table[a], u)};
    }
  }
  return plans;
}

std::vector<std::vector<double>> without_object(std::vector<std::vector<double>> table, std::size_t object) {
  for (auto& row : table) {
    row[object] = 0.0;
    double s = 0.0;
    for (double p : row) s += p;
    for (double& p : row) p /= s;
  }
  return table;
}

VideoSample make_video(const GenConfig& cfg, const BiasSpec& bias, const Signatures& sig, const std::string& id,
                       PairIndex target, std::uint64_t video_seed, int holdout) {
  const auto& lex = cfg.lexicon;
  const std::size_t n_a = lex.actions.size(), n_o = lex.objects.size();
  Rng rng(video_seed);

  const bool repeat = rng.uniform() < bias.repeat_rate;
  const bool multi = repeat && rng.uniform() < cfg.multi_moment_rate;

  std::vector<PairIndex> pairs(repeat ? 2 : 1, target);
  // Distractors come from the base (training) table: the scene statistics stay
  // fixed across splits, only the queried composition shifts.
  for (std::size_t d = 0; d < cfg.distractors; ++d) {
    std::vector<double> w;
    PairIndex p{};
    if (d == 0) {  // same action, different object
      w.assign(n_o, 0.0);
      for (std::size_t o = 0; o < n_o; ++o)
        if (o != target.object && static_cast<int>(o) != holdout) w[o] = bias.cooccurrence[target.action][o] + 1e-12;
      p = {target.action, rng.categorical(w)};
    } else if (d == 1) {  // same object, different action
      w.assign(n_a, 0.0);
      for (std::size_t a = 0; a < n_a; ++a)
        if (a != target.action) w[a] = bias.cooccurrence[a][target.object] + 1e-12;
      p = {rng.categorical(w), target.object};
    } else {
      w.assign(n_a * n_o, 0.0);
      for (std::size_t a = 0; a < n_a; ++a)
        for (std::size_t o = 0; o < n_o; ++o)
          if (static_cast<int>(o) != holdout && std::find(pairs.begin(), pairs.end(), PairIndex{a, o}) == pairs.end())
            w[a * n_o + o] = 1.0;
      const std::size_t k = rng.categorical(w);
      p = {k / n_o, k % n_o};
    }
    pairs.push_back(p);
  }

  // Layout: shuffled order, random lengths, free clips scattered over the gaps.
  rng.shuffle(pairs);
  const std::size_t n_events = pairs.size();
  std::vector<std::size_t> lengths(n_events);
  std::size_t used = 0;
  for (auto& len : lengths) {
    len = cfg.event_min_clips + rng.below(cfg.event_max_clips - cfg.event_min_clips + 1);
    used += len;
  }
  const std::size_t free_clips = cfg.clips - used - (n_events - 1) * cfg.min_gap;
  std::vector<std::size_t> gaps(n_events + 1, 0);
  for (std::size_t i = 1; i < n_events; ++i) gaps[i] = cfg.min_gap;
  for (std::size_t f = 0; f < free_clips; ++f) ++gaps[rng.below(n_events + 1)];

  VideoSample v;
  v.id = id;
  std::vector<double> feats(cfg.clips * cfg.raw_dim);
  for (double& x : feats) x = cfg.noise_sigma * rng.normal();
  const double L = static_cast<double>(cfg.clips);
  std::size_t cursor = gaps[0];
  for (std::size_t e = 0; e < n_events; ++e) {
    const auto [a, o] = pairs[e];
    for (std::size_t t = cursor; t < cursor + lengths[e]; ++t)
      for (std::size_t k = 0; k < cfg.raw_dim; ++k)
        feats[t * cfg.raw_dim + k] += sig.subject[k] + sig.action[a][k] + sig.object[o][k] + sig.pair[a][o][k];
    SyntheticEvent ev;
    ev.svo = {lex.subjects.front(), lex.actions[a], lex.objects[o]};
    ev.span = {static_cast<double>(cursor) / L, static_cast<double>(cursor + lengths[e]) / L};
    v.events.push_back(ev);
    cursor += lengths[e] + gaps[e + 1];
  }
  for (std::size_t e = 0; e < n_events; ++e) {
    int ordinal = 1;
    for (std::size_t j = 0; j < e; ++j)
      if (v.events[j].svo == v.events[e].svo) ++ordinal;
    v.events[e].ordinal = ordinal;
  }
  v.clip_features = num::Tensor::matrix(cfg.clips, cfg.raw_dim, std::move(feats));

  const std::string& act = lex.actions[target.action];
  const std::string& obj = lex.objects[target.object];
  const text::SvoTuple target_svo{lex.subjects.front(), act, obj};
  std::vector<const SyntheticEvent*> occurrences;
  for (const auto& ev : v.events)
    if (ev.svo == target_svo) occurrences.push_back(&ev);

  Annotation ann;
  const std::string head = lex.subjects.front() + " " + lex.inflect(act);
  if (multi) {
    ann.query = head + " " + lex.plural(obj);
    for (const auto* ev : occurrences) ann.gt_moments.push_back(ev->span);
  } else if (occurrences.size() > 1) {
    const std::size_t pick = rng.below(occurrences.size());
    ann.query = head + " the " + lex.ordinals.at(pick) + " " + obj;
    ann.gt_moments.push_back(occurrences[pick]->span);
  } else {
    ann.query = head + " the " + obj;
    ann.gt_moments.push_back(occurrences.front()->span);
  }
  v.annotations.push_back(std::move(ann));
  return v;
}

DatasetSplit make_split(const GenConfig& cfg, const BiasSpec& bias, const Signatures& sig, const std::string& name,
                        std::size_t split_index, std::size_t n, const std::vector<std::vector<double>>& table,
                        int holdout) {
  DatasetSplit split;
  split.name = name;
  if (n == 0) return split;
  Rng plan_rng(derive_seed(cfg.seed, 100 + split_index));
  const auto plans = plan_split(n, table, plan_rng);
  split.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%04zu", name.c_str(), i);
    split.samples.push_back(
        make_video(cfg, bias, sig, id, plans[i].target, derive_seed(cfg.seed, split_index + 1, i), holdout));
  }
  return split;
}

}  // namespace

Corpus generate_corpus(const GenConfig& config) {
  config.validate();
  const auto& lex = config.lexicon;
  Corpus corpus;
  corpus.bias = BiasSpec::from_skew(lex.actions.size(), lex.objects.size(), config.skew, config.repeat_rate);
  const Signatures sig = make_signatures(config);

  int holdout = -1;
  auto seen_table = corpus.bias.cooccurrence;
  if (!config.holdout_object.empty()) {
    holdout = static_cast<int>(std::find(lex.objects.begin(), lex.objects.end(), config.holdout_object) - lex.objects.begin());
    seen_table = without_object(seen_table, static_cast<std::size_t>(holdout));
  }
  corpus.train = make_split(config, corpus.bias, sig, "train", 0, config.train_videos, seen_table, holdout);
  corpus.val = make_split(config, corpus.bias, sig, "val", 1, config.val_videos, seen_table, holdout);
  corpus.test_iid = make_split(config, corpus.bias, sig, "test_iid", 2, config.test_iid_videos, corpus.bias.cooccurrence, -1);
  corpus.test_ood =
      make_split(config, corpus.bias, sig, "test_ood", 3, config.test_ood_videos, corpus.bias.ood_cooccurrence, -1);
  return corpus;
}

std::vector<std::vector<double>> count_cooccurrence(const DatasetSplit& split, const text::Lexicon& lexicon) {
  std::vector<std::vector<double>> counts(lexicon.actions.size(), std::vector<double>(lexicon.objects.size(), 0.0));
  for (const auto& t : extract_corpus_tuples(split, lexicon)) {
    const auto a = std::find(lexicon.actions.begin(), lexicon.actions.end(), t.action) - lexicon.actions.begin();
    const auto o = std::find(lexicon.objects.begin(), lexicon.objects.end(), t.object) - lexicon.objects.begin();
    counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(o)] += 1.0;
  }
  return counts;
}

std::vector<text::SvoTuple> extract_corpus_tuples(const DatasetSplit& split, const text::Lexicon& lexicon) {
  std::vector<text::SvoTuple> out;
  for (const auto& v : split.samples) {
    for (const auto& ann : v.annotations) {
      try {
        out.push_back(text::extract_svo(text::tokenize(ann.query), lexicon));
      } catch (const text::TextError& e) {
        std::cerr << "warning: skipping '" << ann.query << "' in " << v.id << ": " << e.what() << "\n";
      }
    }
  }
  return out;
}

}  // namespace cicr::data
