#include "cicr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cicr/rng.hpp"

namespace cicr::train {

namespace fs = std::filesystem;
using num::Tape;
using num::Tensor;

// ---------------------------------------------------------------------------
// Configuration

const std::set<std::string>& TrainConfig::keys() {
  static const std::set<std::string> k = {
      "train.batch_size", "train.lr",          "train.weight_decay",    "train.epochs",
      "train.seed",       "train.use_tci",     "train.use_vcr",         "train.use_prior",
      "train.kl_stop_gradient", "train.kl_direction", "train.grad_clip", "loss.lambda_l1",
      "loss.lambda_iou",  "loss.lambda_ce",    "loss.lambda_kl"};
  return k;
}

namespace {

const char* direction_name(loss::KlDirection d) {
  return d == loss::KlDirection::FactualToCounterfactual ? "factual_to_counterfactual" : "counterfactual_to_factual";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  const long long batch = cfg.get_int("train.batch_size", static_cast<long long>(t.batch_size));
  if (batch < 1) throw ConfigError("train.batch_size", "must be >= 1");
  t.batch_size = static_cast<std::size_t>(batch);
  t.lr = cfg.get_double("train.lr", t.lr);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  const long long epochs = cfg.get_int("train.epochs", static_cast<long long>(t.epochs));
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  t.epochs = static_cast<std::size_t>(epochs);
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<long long>(t.seed)));
  t.flags.use_tci = cfg.get_bool("train.use_tci", t.flags.use_tci);
  t.flags.use_vcr = cfg.get_bool("train.use_vcr", t.flags.use_vcr);
  t.use_prior = cfg.get_bool("train.use_prior", t.use_prior);
  t.kl_stop_gradient = cfg.get_bool("train.kl_stop_gradient", t.kl_stop_gradient);
  const std::string dir = cfg.get_string("train.kl_direction", direction_name(t.kl_direction));
  if (dir == "factual_to_counterfactual")
    t.kl_direction = loss::KlDirection::FactualToCounterfactual;
  else if (dir == "counterfactual_to_factual")
    t.kl_direction = loss::KlDirection::CounterfactualToFactual;
  else
    throw ConfigError("train.kl_direction", "expected factual_to_counterfactual or counterfactual_to_factual");
  t.grad_clip = cfg.get_double("train.grad_clip", t.grad_clip);
  t.weights.l1 = cfg.get_double("loss.lambda_l1", t.weights.l1);
  t.weights.iou = cfg.get_double("loss.lambda_iou", t.weights.iou);
  t.weights.ce = cfg.get_double("loss.lambda_ce", t.weights.ce);
  t.weights.kl = cfg.get_double("loss.lambda_kl", t.weights.kl);
  t.validate();
  return t;
}

Config TrainConfig::to_config() const {
  Config c;
  c.set("train.batch_size", std::to_string(batch_size));
  c.set("train.lr", fmt(lr));
  c.set("train.weight_decay", fmt(weight_decay));
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.seed", std::to_string(seed));
  c.set("train.use_tci", flags.use_tci ? "true" : "false");
  c.set("train.use_vcr", flags.use_vcr ? "true" : "false");
  c.set("train.use_prior", use_prior ? "true" : "false");
  c.set("train.kl_stop_gradient", kl_stop_gradient ? "true" : "false");
  c.set("train.kl_direction", direction_name(kl_direction));
  c.set("train.grad_clip", fmt(grad_clip));
  c.set("loss.lambda_l1", fmt(weights.l1));
  c.set("loss.lambda_iou", fmt(weights.iou));
  c.set("loss.lambda_ce", fmt(weights.ce));
  c.set("loss.lambda_kl", fmt(weights.kl));
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay", "must be >= 0");
  if (!(grad_clip >= 0)) throw ConfigError("train.grad_clip", "must be >= 0");
  weights.validate();
}

const std::set<std::string>& experiment_keys() {
  static const std::set<std::string> k = [] {
    std::set<std::string> all = data::GenConfig::keys();
    all.insert(model::ModelConfig::keys().begin(), model::ModelConfig::keys().end());
    all.insert(TrainConfig::keys().begin(), TrainConfig::keys().end());
    return all;
  }();
  return k;
}

// ---------------------------------------------------------------------------
// Forward pass and losses

std::vector<PreparedSample> prepare_split(const data::DatasetSplit& split, const model::Vocabulary& vocab,
                                          const model::ProposalGrid& grid) {
  std::vector<PreparedSample> out;
  for (const auto& video : split.samples) {
    for (std::size_t a = 0; a < video.annotations.size(); ++a) {
      const auto& ann = video.annotations[a];
      PreparedSample s;
      s.id = video.annotations.size() == 1 ? video.id : video.id + "#" + std::to_string(a);
      s.features = video.clip_features;
      s.token_ids = vocab.ids(text::tokenize(ann.query));
      s.gts = ann.gt_moments;
      s.labels = loss::assign_labels(grid.spans(), s.gts);
      out.push_back(std::move(s));
    }
  }
  return out;
}

ForwardResult forward_pass(Tape& tape, const model::GroundingModel& model, const PreparedSample& sample,
                           const Flags& flags, bool use_prior) {
  ForwardResult r;
  r.q = model.encode_query(tape, sample.token_ids);
  if (flags.use_tci) {
    const auto& prm = model.params();
    causal::TciProjection proj{prm.get("tci.wk"), prm.get("tci.wq"), prm.get("tci.wv")};
    r.q_causal = causal::tci_adjust(tape, r.q, model.confounders(), model.prior(), proj, use_prior);
  } else {
    r.q_causal = r.q;
  }
  Tensor v = model.encode_video(tape, sample.features);
  Tensor m = model.align(tape, v, r.q_causal);
  auto mm = model.score_multimodal(tape, m, model.grid());
  r.y_m = mm.logits;
  r.refined = mm.refined_spans;
  r.c = model.reference_c();
  if (flags.use_vcr) {
    r.y_v = model.score_video_only(tape, v, model.grid());
    r.scores = causal::counterfactual_scores(tape, r.y_v, r.y_m, r.c);
  } else {
    {
      num::NoGradGuard guard(tape);
      r.y_v = model.score_video_only(tape, v.detach(), model.grid()).detach();
    }
    r.scores.y_vm = r.y_m;
    r.scores.tie = r.y_m;
    r.scores.y_vm_star = Tensor(r.y_m.shape(), 0.0);
  }
  return r;
}

SampleLoss sample_loss(Tape& tape, const ForwardResult& fwd, const PreparedSample& sample, const TrainConfig& config) {
  auto tsg = loss::tsg_loss(tape, fwd.scores.y_vm, fwd.refined, sample.labels, sample.gts);
  Tensor kl = Tensor::scalar(0.0);
  if (config.flags.use_vcr) {
    const Tensor star = config.kl_stop_gradient ? causal::calibration_counterfactual(tape, fwd.y_v, fwd.c)
                                                : fwd.scores.y_vm_star;
    kl = loss::kl_loss(tape, fwd.scores.y_vm, star, config.kl_direction, config.kl_stop_gradient);
  }
  SampleLoss out;
  out.total = loss::total_loss(tape, kl, tsg, config.weights);
  out.parts.l_kl = kl.item();
  out.parts.l_l1 = tsg.l1.item();
  out.parts.l_iou = tsg.iou.item();
  out.parts.l_ce = tsg.ce.item();
  out.parts.total = out.total.item();
  return out;
}

Evaluation evaluate(const model::GroundingModel& model, const std::vector<PreparedSample>& samples, const Flags& flags,
                    bool use_prior) {
  if (samples.empty()) throw std::invalid_argument("evaluate: split has no samples");
  Evaluation ev;
  std::vector<metrics::EffectStats> effects;
  for (const auto& s : samples) {
    Tape tape;
    tape.set_enabled(false);
    const auto fwd = forward_pass(tape, model, s, flags, use_prior);
    metrics::SampleRecord rec;
    rec.id = s.id;
    rec.gts = s.gts;
    for (const auto& r : causal::rank_by_score(fwd.scores.tie, fwd.refined)) rec.ranked.push_back({r.span, r.score});
    ev.records.push_back(std::move(rec));
    const auto e = causal::summarize_effects(fwd.y_v, fwd.y_m, fwd.c.values()[0]);
    effects.push_back({e.te_mean, e.te_max, e.nde_mean, e.nde_max, e.tie_mean, e.tie_max});
  }
  ev.result = metrics::evaluate(ev.records, &effects);
  return ev;
}

double mean_loss(const model::GroundingModel& model, const std::vector<PreparedSample>& samples,
                 const TrainConfig& config) {
  if (samples.empty()) return 0.0;
  double total = 0;
  for (const auto& s : samples) {
    Tape tape;
    tape.set_enabled(false);
    total += sample_loss(tape, forward_pass(tape, model, s, config.flags, config.use_prior), s, config).parts.total;
  }
  return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Run directory helpers

void write_loss_log(const fs::path& path, const std::vector<LossLogRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,step,l_kl,l_l1,l_iou,l_ce,total\n";
  for (const auto& r : rows)
    out << r.epoch << "," << r.step << "," << fmt(r.parts.l_kl) << "," << fmt(r.parts.l_l1) << ","
        << fmt(r.parts.l_iou) << "," << fmt(r.parts.l_ce) << "," << fmt(r.parts.total) << "\n";
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<LossLogRow> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<LossLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    LossLogRow r;
    if (!(ls >> r.epoch >> r.step >> r.parts.l_kl >> r.parts.l_l1 >> r.parts.l_iou >> r.parts.l_ce >> r.parts.total))
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string val_log_line(const EpochSummary& e) {
  std::string line = std::to_string(e.epoch) + "," + fmt(e.train_loss);
  if (e.val) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), ",%.2f,%.2f,%.2f,%.2f,%.2f", e.val->r1_at(0.3), e.val->r1_at(0.5),
                  e.val->r1_at(0.7), e.val->miou, e.val->map_avg);
    line += buf;
  } else {
    line += ",,,,,";
  }
  return line;
}

void write_val_log(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text = "epoch,train_loss,r1_0.3,r1_0.5,r1_0.7,miou,map_avg\n";
  for (const auto& l : lines) text += l + "\n";
  write_text(path, text);
}

void write_eval_json(const fs::path& path, const metrics::EvalResult& r) { write_text(path, r.to_json().dump(2) + "\n"); }

std::vector<num::NamedTensor> run_state_entries(const model::GroundingModel& model, std::size_t epoch,
                                                std::size_t best_epoch, double best_r1, double initial_loss) {
  auto entries = num::store_entries(model.params(), true);
  entries.push_back({"run.epoch", Tensor::scalar(static_cast<double>(epoch))});
  entries.push_back({"run.best_epoch", Tensor::scalar(static_cast<double>(best_epoch))});
  entries.push_back({"run.best_val_r1", Tensor::scalar(best_r1)});
  entries.push_back({"run.initial_train_loss", Tensor::scalar(initial_loss)});
  return entries;
}

double entry_value(const std::vector<num::NamedTensor>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e.value.item();
  throw num::CheckpointError("checkpoint has no entry " + name);
}

}  // namespace

Experiment make_experiment(const Config& cfg, const data::DatasetSplit& train_split,
                           const text::ConfounderDictionary* dictionary) {
  cfg.require_known(experiment_keys());
  Experiment exp;
  exp.data = data::GenConfig::from_config(cfg);
  exp.model_config = model::ModelConfig::from_config(cfg);
  exp.train = TrainConfig::from_config(cfg);
  if (exp.model_config.raw_video_dim != exp.data.raw_dim)
    throw ConfigError("model.raw_video_dim", "must equal data.raw_dim (" + std::to_string(exp.data.raw_dim) + ")");
  exp.config = exp.data.to_config();
  exp.config.merge(exp.model_config.to_config());
  exp.config.merge(exp.train.to_config());

  if (train_split.samples.empty()) throw std::invalid_argument("training split is empty");
  std::vector<std::vector<std::string>> token_lists;
  for (const auto& v : train_split.samples)
    for (const auto& a : v.annotations) token_lists.push_back(text::tokenize(a.query));
  exp.vocab = model::Vocabulary::from_token_lists(token_lists);
  if (dictionary) {
    if (dictionary->embed_dim() != exp.model_config.hidden_dim)
      throw ConfigError("model.hidden_dim", "dictionary embeddings have width " +
                                                std::to_string(dictionary->embed_dim()));
    exp.dictionary = *dictionary;
  } else {
    exp.dictionary = text::build_dictionary(data::extract_corpus_tuples(train_split, exp.data.lexicon),
                                            exp.model_config.hidden_dim, exp.model_config.seed);
  }
  return exp;
}

RunRecord run_training(const Experiment& exp, const data::DatasetSplit& train_split, const data::DatasetSplit* val,
                       const data::DatasetSplit* test_iid, const data::DatasetSplit* test_ood,
                       const RunOptions& options) {
  const TrainConfig& cfg = exp.train;
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  auto model_ptr = std::make_shared<model::GroundingModel>(exp.model_config, exp.vocab.size(), exp.dictionary);
  model::GroundingModel& model = *model_ptr;

  const auto train_samples = prepare_split(train_split, exp.vocab, model.grid());
  if (train_samples.empty()) throw std::invalid_argument("training split has no annotations");
  std::vector<PreparedSample> val_samples;
  if (val) val_samples = prepare_split(*val, exp.vocab, model.grid());

  RunRecord rec;
  rec.snapshot = exp.config;
  rec.model = model_ptr;
  std::vector<std::string> val_lines;

  fs::path ckpt_dir;
  if (options.out_dir) {
    ckpt_dir = *options.out_dir / "checkpoints";
    fs::create_directories(ckpt_dir);
    write_text(*options.out_dir / "config.txt", exp.config.canonical());
    exp.vocab.save(*options.out_dir / "vocab.txt");
    text::save_dictionary(exp.dictionary, *options.out_dir / "dictionary");
  }

  num::AdamConfig adam{cfg.lr, cfg.weight_decay};
  std::vector<num::NamedTensor> best_params = num::store_entries(model.params(), false);
  std::size_t start_epoch = 0;

  const bool resuming = options.resume && options.out_dir && fs::exists(ckpt_dir / "last.ckpt");
  if (resuming) {
    const auto entries = num::read_checkpoint(ckpt_dir / "last.ckpt");
    num::load_store(model.params(), entries, true);
    start_epoch = static_cast<std::size_t>(entry_value(entries, "run.epoch"));
    rec.best_epoch = static_cast<std::size_t>(entry_value(entries, "run.best_epoch"));
    rec.best_val_r1 = entry_value(entries, "run.best_val_r1");
    rec.initial_train_loss = entry_value(entries, "run.initial_train_loss");
    if (fs::exists(ckpt_dir / "best.ckpt")) best_params = num::read_checkpoint(ckpt_dir / "best.ckpt");
    for (const auto& row : read_loss_log(*options.out_dir / "loss.csv"))
      if (row.epoch <= start_epoch) rec.losses.push_back(row);
    std::ifstream vin(*options.out_dir / "val_epochs.csv");
    std::string row;
    std::getline(vin, row);
    while (std::getline(vin, row))
      if (!row.empty() && std::stoul(row.substr(0, row.find(','))) <= start_epoch) val_lines.push_back(row);
    log("resumed at epoch " + std::to_string(start_epoch));
  } else {
    rec.initial_train_loss = mean_loss(model, train_samples, cfg);
  }

  const std::size_t n = train_samples.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t last_epoch = cfg.epochs;
  if (options.stop_after) last_epoch = std::min(last_epoch, *options.stop_after);

  for (std::size_t epoch = start_epoch + 1; epoch <= last_epoch; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, 0x5EED, epoch));
    rng.shuffle(order);

    double epoch_loss = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = step * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - begin);
      model.params().zero_grads();
      loss::LossBreakdown batch;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& s = train_samples[order[i]];
        Tape tape;
        const auto fwd = forward_pass(tape, model, s, cfg.flags, cfg.use_prior);
        const auto sl = sample_loss(tape, fwd, s, cfg);
        if (!std::isfinite(sl.parts.total)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << " step " << step + 1 << " sample " << s.id
              << " (kl=" << sl.parts.l_kl << " l1=" << sl.parts.l_l1 << " iou=" << sl.parts.l_iou
              << " ce=" << sl.parts.l_ce << "); batch:";
          for (std::size_t j = begin; j < end; ++j) msg << " " << train_samples[order[j]].id;
          if (options.out_dir) write_text(*options.out_dir / "nan_dump.txt", msg.str() + "\n");
          throw TrainingAborted(msg.str());
        }
        tape.backward(num::scale(tape, sl.total, inv_b));
        batch.l_kl += sl.parts.l_kl * inv_b;
        batch.l_l1 += sl.parts.l_l1 * inv_b;
        batch.l_iou += sl.parts.l_iou * inv_b;
        batch.l_ce += sl.parts.l_ce * inv_b;
        batch.total += sl.parts.total * inv_b;
      }
      if (cfg.grad_clip > 0) model.params().clip_grad_norm(cfg.grad_clip);
      num::adam_step(model.params(), adam);
      rec.losses.push_back({epoch, (epoch - 1) * steps_per_epoch + step + 1, batch});
      epoch_loss += batch.total;
    }

    EpochSummary summary;
    summary.epoch = epoch;
    summary.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
    if (!val_samples.empty()) {
      summary.val = evaluate(model, val_samples, cfg.flags, cfg.use_prior).result;
      const double r1 = summary.val->r1_at(0.5);
      if (r1 > rec.best_val_r1) {
        rec.best_val_r1 = r1;
        rec.best_epoch = epoch;
        best_params = num::store_entries(model.params(), false);
        if (options.out_dir) num::write_checkpoint(ckpt_dir / "best.ckpt", best_params);
      }
    } else {
      rec.best_epoch = epoch;
      best_params = num::store_entries(model.params(), false);
    }
    rec.epochs.push_back(summary);
    val_lines.push_back(val_log_line(summary));

    char line[160];
    std::snprintf(line, sizeof(line), "epoch %zu/%zu loss %.4f", epoch, cfg.epochs, summary.train_loss);
    std::string msg = line;
    if (summary.val) {
      std::snprintf(line, sizeof(line), " val R1@0.5 %.2f mIoU %.2f", summary.val->r1_at(0.5), summary.val->miou);
      msg += line;
    }
    log(msg);

    if (options.out_dir) {
      write_loss_log(*options.out_dir / "loss.csv", rec.losses);
      write_val_log(*options.out_dir / "val_epochs.csv", val_lines);
      num::write_checkpoint(ckpt_dir / "last.ckpt",
                            run_state_entries(model, epoch, rec.best_epoch, rec.best_val_r1, rec.initial_train_loss));
    }
  }

  if (options.out_dir && rec.losses.empty()) {
    write_loss_log(*options.out_dir / "loss.csv", rec.losses);
    write_val_log(*options.out_dir / "val_epochs.csv", val_lines);
  }

  const bool finished = !options.stop_after || *options.stop_after >= cfg.epochs;
  if (!finished) return rec;

  // Final evaluation uses the best validation checkpoint.
  num::load_store(model.params(), best_params, false);
  if (options.out_dir) {
    if (!fs::exists(ckpt_dir / "best.ckpt")) num::write_checkpoint(ckpt_dir / "best.ckpt", best_params);
    rec.checkpoints = {ckpt_dir / "best.ckpt", ckpt_dir / "last.ckpt"};
  }
  auto score = [&](const data::DatasetSplit* split, const char* name) -> std::optional<metrics::EvalResult> {
    if (!split) return std::nullopt;
    const auto samples = prepare_split(*split, exp.vocab, model.grid());
    auto ev = evaluate(model, samples, cfg.flags, cfg.use_prior);
    if (options.out_dir) {
      write_eval_json(*options.out_dir / (std::string("eval_") + name + ".json"), ev.result);
      metrics::write_predictions(*options.out_dir / (std::string("predictions_") + name + ".jsonl"), ev.records);
      metrics::write_ground_truth(*options.out_dir / (std::string("gt_") + name + ".jsonl"), ev.records);
    }
    return ev.result;
  };
  rec.test_iid = score(test_iid, "test_iid");
  rec.test_ood = score(test_ood, "test_ood");
  return rec;
}

LoadedRun load_run(const fs::path& run_dir, const std::string& which) {
  LoadedRun out;
  out.config = Config::load(run_dir / "config.txt");
  out.config.require_known(experiment_keys());
  out.train = TrainConfig::from_config(out.config);
  const auto mc = model::ModelConfig::from_config(out.config);
  out.vocab = model::Vocabulary::load(run_dir / "vocab.txt");
  const auto dict = text::load_dictionary(run_dir / "dictionary");
  out.model = std::make_unique<model::GroundingModel>(mc, out.vocab.size(), dict);
  fs::path ckpt = which;
  if (which == "best" || which == "last") ckpt = run_dir / "checkpoints" / (which + ".ckpt");
  num::load_store(out.model->params(), num::read_checkpoint(ckpt), false);
  return out;
}

}  // namespace cicr::train
