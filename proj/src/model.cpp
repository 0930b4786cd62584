#include "cicr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "cicr/rng.hpp"

namespace cicr::model {

using num::Tape;
using num::Tensor;

const std::set<std::string>& ModelConfig::keys() {
  static const std::set<std::string> k = {"model.hidden_dim",    "model.raw_video_dim", "model.text_dim",
                                          "model.scales",        "model.stride",        "model.aligner_depth",
                                          "model.aligner_heads", "model.ffn_mult",      "model.seed"};
  return k;
}

ModelConfig ModelConfig::from_config(const Config& cfg) {
  ModelConfig m;
  auto count = [&](const char* key, std::size_t fallback) {
    const long long v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(key, "must be non-negative");
    return static_cast<std::size_t>(v);
  };
  m.hidden_dim = count("model.hidden_dim", m.hidden_dim);
  m.raw_video_dim = count("model.raw_video_dim", m.raw_video_dim);
  m.text_dim = count("model.text_dim", m.text_dim);
  m.scales = cfg.get_doubles("model.scales", m.scales);
  m.stride = cfg.get_double("model.stride", m.stride);
  m.aligner_depth = count("model.aligner_depth", m.aligner_depth);
  m.aligner_heads = count("model.aligner_heads", m.aligner_heads);
  m.ffn_mult = count("model.ffn_mult", m.ffn_mult);
  m.seed = static_cast<std::uint64_t>(cfg.get_int("model.seed", static_cast<long long>(m.seed)));
  m.validate();
  return m;
}

Config ModelConfig::to_config() const {
  Config c;
  c.set("model.hidden_dim", std::to_string(hidden_dim));
  c.set("model.raw_video_dim", std::to_string(raw_video_dim));
  c.set("model.text_dim", std::to_string(text_dim));
  c.set("model.scales", join_doubles(scales));
  c.set("model.stride", join_doubles({stride}));
  c.set("model.aligner_depth", std::to_string(aligner_depth));
  c.set("model.aligner_heads", std::to_string(aligner_heads));
  c.set("model.ffn_mult", std::to_string(ffn_mult));
  c.set("model.seed", std::to_string(seed));
  return c;
}

void ModelConfig::validate() const {
  if (hidden_dim == 0) throw ConfigError("model.hidden_dim", "must be positive");
  if (raw_video_dim == 0) throw ConfigError("model.raw_video_dim", "must be positive");
  if (text_dim == 0) throw ConfigError("model.text_dim", "must be positive");
  if (ffn_mult == 0) throw ConfigError("model.ffn_mult", "must be positive");
  if (scales.empty()) throw ConfigError("model.scales", "need at least one scale");
  for (double s : scales)
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("model.scales", "scales must lie in (0, 1]");
  if (!(stride > 0.0 && stride <= 1.0)) throw ConfigError("model.stride", "must lie in (0, 1]");
  if (aligner_depth > 0 && (aligner_heads == 0 || hidden_dim % aligner_heads != 0))
    throw ConfigError("model.aligner_heads", "must divide model.hidden_dim");
}

// ---------------------------------------------------------------------------

ProposalGrid ProposalGrid::build(const std::vector<double>& scales, double stride) {
  constexpr double kEps = 1e-9;
  std::vector<Span> spans;
  for (double w : scales) {
    for (std::size_t i = 0;; ++i) {
      const double start = static_cast<double>(i) * stride;
      if (start + w > 1.0 + kEps) break;
      spans.push_back({start, std::min(start + w, 1.0)});
    }
  }
  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.start != b.start ? a.start < b.start : a.end < b.end; });
  auto same = [](const Span& a, const Span& b) {
    return std::abs(a.start - b.start) < kEps && std::abs(a.end - b.end) < kEps;
  };
  spans.erase(std::unique(spans.begin(), spans.end(), same), spans.end());
  return ProposalGrid(std::move(spans));
}

ProposalGrid::ProposalGrid(std::vector<Span> spans) : spans_(std::move(spans)) {
  if (spans_.empty()) throw std::invalid_argument("proposal grid is empty");
  for (std::size_t k = 0; k < spans_.size(); ++k) {
    const auto& s = spans_[k];
    if (!(0.0 <= s.start && s.start < s.end && s.end <= 1.0))
      throw std::invalid_argument("proposal " + std::to_string(k) + " is not a valid span in [0, 1]");
    if (k > 0) {
      const auto& prev = spans_[k - 1];
      if (!(prev.start < s.start || (prev.start == s.start && prev.end < s.end)))
        throw std::invalid_argument("proposal grid must be sorted by (start, end) without duplicates");
    }
  }
}

Tensor ProposalGrid::as_tensor() const {
  std::vector<double> v;
  v.reserve(2 * spans_.size());
  for (const auto& s : spans_) {
    v.push_back(s.start);
    v.push_back(s.end);
  }
  return Tensor::matrix(spans_.size(), 2, std::move(v));
}

Tensor pooling_matrix(const ProposalGrid& grid, std::size_t clips) {
  const std::size_t K = grid.size();
  std::vector<double> w(K * clips, 0.0);
  const double L = static_cast<double>(clips);
  for (std::size_t k = 0; k < K; ++k) {
    const Span& s = grid.span(k);
    std::size_t n = 0;
    for (std::size_t t = 0; t < clips; ++t) {
      const double center = (static_cast<double>(t) + 0.5) / L;
      if (center >= s.start && center <= s.end) {
        w[k * clips + t] = 1.0;
        ++n;
      }
    }
    if (n == 0) {
      const double mid = 0.5 * (s.start + s.end);
      const auto t = std::min<std::size_t>(clips - 1, static_cast<std::size_t>(std::max(0.0, std::floor(mid * L))));
      w[k * clips + t] = 1.0;
      n = 1;
    }
    for (std::size_t t = 0; t < clips; ++t) w[k * clips + t] /= static_cast<double>(n);
  }
  return Tensor::matrix(K, clips, std::move(w));
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : words_{kUnknownToken} {}

Vocabulary Vocabulary::from_token_lists(const std::vector<std::vector<std::string>>& token_lists) {
  std::set<std::string> unique;
  for (const auto& tokens : token_lists) unique.insert(tokens.begin(), tokens.end());
  unique.erase(kUnknownToken);
  Vocabulary v;
  v.words_.insert(v.words_.end(), unique.begin(), unique.end());
  return v;
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = std::lower_bound(words_.begin() + 1, words_.end(), word);
  return (it != words_.end() && *it == word) ? static_cast<std::size_t>(it - words_.begin()) : kUnknown;
}

std::vector<std::size_t> Vocabulary::ids(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& w : words_) out << w << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Vocabulary v;
  v.words_.clear();
  std::string w;
  while (std::getline(in, w))
    if (!w.empty()) v.words_.push_back(w);
  if (v.words_.empty() || v.words_[0] != kUnknownToken || !std::is_sorted(v.words_.begin() + 1, v.words_.end()))
    throw std::runtime_error(path.string() + " is not a vocabulary file");
  return v;
}

// ---------------------------------------------------------------------------

namespace {

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = sd * rng.normal();
  return Tensor::matrix(fan_in, fan_out, std::move(v));
}

Tensor row(std::size_t n, double fill) { return Tensor(num::Shape{n}, fill); }

Tensor positional_encoding(std::size_t length, std::size_t dim) {
  std::vector<double> v(length * dim);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      v[t * dim + i] = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return Tensor::matrix(length, dim, std::move(v));
}

}  // namespace

GroundingModel::GroundingModel(ModelConfig config, std::size_t vocab_size, const text::ConfounderDictionary& dict)
    : config_(std::move(config)),
      vocab_size_(vocab_size),
      grid_(ProposalGrid::build(config_.scales, config_.stride)),
      prior_(dict.prior) {
  config_.validate();
  const std::size_t D = config_.hidden_dim;
  if (dict.size() == 0) throw std::invalid_argument("confounder dictionary is empty");
  if (dict.embed_dim() != D)
    throw num::DimensionError("confounder embeddings are " + num::shape_str(dict.embeddings.shape()) +
                              " but model.hidden_dim is " + std::to_string(D));
  if (vocab_size_ == 0) throw std::invalid_argument("vocabulary is empty");

  Rng rng(derive_seed(config_.seed, 0x40DE1));
  const std::size_t F = D * config_.ffn_mult;

  params_.add("encoder.video.w1", glorot(rng, config_.raw_video_dim, D));
  params_.add("encoder.video.b1", row(D, 0.0));
  params_.add("encoder.video.w2", glorot(rng, D, D));
  params_.add("encoder.video.b2", row(D, 0.0));
  params_.add("encoder.video.ln.gain", row(D, 1.0));
  params_.add("encoder.video.ln.bias", row(D, 0.0));

  {
    std::vector<double> e(vocab_size_ * config_.text_dim);
    for (double& x : e) x = rng.normal();
    params_.add("encoder.query.embed", Tensor::matrix(vocab_size_, config_.text_dim, std::move(e)));
  }
  params_.add("encoder.query.w", glorot(rng, config_.text_dim, D));
  params_.add("encoder.query.b", row(D, 0.0));

  params_.add("tci.wk", glorot(rng, D, D));
  params_.add("tci.wq", glorot(rng, D, D));
  params_.add("tci.wv", glorot(rng, D, D));
  params_.add("dict.embeddings", dict.embeddings.detach());

  for (std::size_t l = 0; l < config_.aligner_depth; ++l) {
    const std::string pre = "aligner." + std::to_string(l) + ".";
    params_.add(pre + "wq", glorot(rng, D, D));
    params_.add(pre + "wk", glorot(rng, D, D));
    params_.add(pre + "wv", glorot(rng, D, D));
    params_.add(pre + "wo", glorot(rng, D, D));
    params_.add(pre + "ln1.gain", row(D, 1.0));
    params_.add(pre + "ln1.bias", row(D, 0.0));
    params_.add(pre + "ffn.w1", glorot(rng, D, F));
    params_.add(pre + "ffn.b1", row(F, 0.0));
    params_.add(pre + "ffn.w2", glorot(rng, F, D));
    params_.add(pre + "ffn.b2", row(D, 0.0));
    params_.add(pre + "ln2.gain", row(D, 1.0));
    params_.add(pre + "ln2.bias", row(D, 0.0));
  }

  params_.add("head.multimodal.w1", glorot(rng, D, D));
  params_.add("head.multimodal.b1", row(D, 0.0));
  {
    // Column 0 is the matching logit; columns 1-2 are span offsets and start at zero.
    Tensor w2 = glorot(rng, D, 3);
    auto v = w2.values_mut();
    for (std::size_t r = 0; r < D; ++r) v[r * 3 + 1] = v[r * 3 + 2] = 0.0;
    params_.add("head.multimodal.w2", w2);
  }
  params_.add("head.multimodal.b2", row(3, 0.0));

  params_.add("head.video.w1", glorot(rng, D, D));
  params_.add("head.video.b1", row(D, 0.0));
  params_.add("head.video.w2", glorot(rng, D, 1));
  params_.add("head.video.b2", row(1, 0.0));

  params_.add("vcr.c", Tensor(num::Shape{1}, 0.0));
}

Tensor GroundingModel::encode_video(Tape& tape, const Tensor& raw) const {
  if (raw.rank() != 2 || raw.cols() != config_.raw_video_dim)
    throw num::DimensionError("encode_video: expected L_v x " + std::to_string(config_.raw_video_dim) + ", got " +
                              num::shape_str(raw.shape()));
  Tensor h = num::relu(tape, num::add(tape, num::matmul(tape, raw, p("encoder.video.w1")), p("encoder.video.b1")));
  Tensor o = num::add(tape, num::matmul(tape, h, p("encoder.video.w2")), p("encoder.video.b2"));
  return num::layer_norm(tape, o, p("encoder.video.ln.gain"), p("encoder.video.ln.bias"));
}

Tensor GroundingModel::encode_query(Tape& tape, std::span<const std::size_t> token_ids) const {
  if (token_ids.empty()) throw std::invalid_argument("encode_query: empty token list");
  std::vector<double> onehot(token_ids.size() * vocab_size_, 0.0);
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    const std::size_t id = token_ids[i] < vocab_size_ ? token_ids[i] : Vocabulary::kUnknown;
    onehot[i * vocab_size_ + id] = 1.0;
  }
  const Tensor select = Tensor::matrix(token_ids.size(), vocab_size_, std::move(onehot));
  Tensor e = num::matmul(tape, select, p("encoder.query.embed"));
  return num::add(tape, num::matmul(tape, e, p("encoder.query.w")), p("encoder.query.b"));
}

Tensor GroundingModel::align(Tape& tape, const Tensor& v, const Tensor& q, std::vector<Tensor>* attention) const {
  const std::size_t D = config_.hidden_dim;
  if (v.rank() != 2 || v.cols() != D || q.rank() != 2 || q.cols() != D)
    throw num::DimensionError("align: expected L_v x D and L_q x D, got " + num::shape_str(v.shape()) + " and " +
                              num::shape_str(q.shape()));
  if (config_.aligner_depth == 0) return v;

  const std::size_t H = config_.aligner_heads;
  const std::size_t dh = D / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor pe = positional_encoding(v.rows(), D);

  Tensor x = v;
  for (std::size_t l = 0; l < config_.aligner_depth; ++l) {
    const std::string pre = "aligner." + std::to_string(l) + ".";
    Tensor queries = num::matmul(tape, num::add(tape, x, pe), p(pre + "wq"));
    Tensor keys = num::matmul(tape, q, p(pre + "wk"));
    Tensor values = num::matmul(tape, q, p(pre + "wv"));
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < H; ++h) {
      Tensor qh = num::slice(tape, queries, 1, h * dh, (h + 1) * dh);
      Tensor kh = num::slice(tape, keys, 1, h * dh, (h + 1) * dh);
      Tensor vh = num::slice(tape, values, 1, h * dh, (h + 1) * dh);
      Tensor scores = num::scale(tape, num::matmul(tape, qh, num::transpose(tape, kh)), inv_sqrt);
      Tensor weights = num::softmax(tape, scores, 1);
      if (attention) attention->push_back(weights);
      heads.push_back(num::matmul(tape, weights, vh));
    }
    Tensor attn = num::matmul(tape, H == 1 ? heads.front() : num::concat(tape, heads, 1), p(pre + "wo"));
    x = num::layer_norm(tape, num::add(tape, x, attn), p(pre + "ln1.gain"), p(pre + "ln1.bias"));
    Tensor f = num::relu(tape, num::add(tape, num::matmul(tape, x, p(pre + "ffn.w1")), p(pre + "ffn.b1")));
    f = num::add(tape, num::matmul(tape, f, p(pre + "ffn.w2")), p(pre + "ffn.b2"));
    x = num::layer_norm(tape, num::add(tape, x, f), p(pre + "ln2.gain"), p(pre + "ln2.bias"));
  }
  return x;
}

GroundingModel::MultimodalScores GroundingModel::score_multimodal(Tape& tape, const Tensor& m,
                                                                  const ProposalGrid& grid) const {
  const Tensor pool = pooling_matrix(grid, m.rows());
  const std::size_t K = grid.size();
  Tensor pooled = num::matmul(tape, pool, m);
  Tensor h = num::relu(tape, num::add(tape, num::matmul(tape, pooled, p("head.multimodal.w1")), p("head.multimodal.b1")));
  Tensor out = num::add(tape, num::matmul(tape, h, p("head.multimodal.w2")), p("head.multimodal.b2"));

  MultimodalScores s;
  s.logits = num::reshape(tape, num::slice(tape, out, 1, 0, 1), num::Shape{K});

  // Offsets are in units of the proposal width; the result is clamped to [0, 1]
  // with a floor of one clip on the width.
  const double min_width = 1.0 / static_cast<double>(m.rows());
  std::vector<double> widths(2 * K), starts(K), ends(K);
  for (std::size_t k = 0; k < K; ++k) {
    widths[2 * k] = widths[2 * k + 1] = grid.span(k).length();
    starts[k] = grid.span(k).start;
    ends[k] = grid.span(k).end;
  }
  Tensor shift = num::mul(tape, num::slice(tape, out, 1, 1, 3), Tensor::matrix(K, 2, std::move(widths)));
  Tensor raw_start = num::add(tape, num::slice(tape, shift, 1, 0, 1), Tensor::matrix(K, 1, std::move(starts)));
  Tensor raw_end = num::add(tape, num::slice(tape, shift, 1, 1, 2), Tensor::matrix(K, 1, std::move(ends)));
  Tensor start = num::minimum(tape, num::maximum(tape, raw_start, Tensor::scalar(0.0)), Tensor::scalar(1.0 - min_width));
  Tensor end = num::maximum(tape, num::minimum(tape, raw_end, Tensor::scalar(1.0)), num::add_scalar(tape, start, min_width));
  s.refined_spans = num::concat(tape, {start, end}, 1);
  return s;
}

Tensor GroundingModel::score_video_only(Tape& tape, const Tensor& v, const ProposalGrid& grid) const {
  const Tensor pool = pooling_matrix(grid, v.rows());
  Tensor pooled = num::matmul(tape, pool, v);
  Tensor h = num::relu(tape, num::add(tape, num::matmul(tape, pooled, p("head.video.w1")), p("head.video.b1")));
  Tensor out = num::add(tape, num::matmul(tape, h, p("head.video.w2")), p("head.video.b2"));
  return num::reshape(tape, out, num::Shape{grid.size()});
}

}  // namespace cicr::model
