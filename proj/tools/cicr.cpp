// Command-line driver: gen-data, build-dict, train, eval, ablate, report.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cicr/ablation.hpp"
#include "cicr/datagen.hpp"
#include "cicr/metrics.hpp"
#include "cicr/textkit.hpp"
#include "cicr/trainer.hpp"

namespace fs = std::filesystem;
using namespace cicr;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Input problems (bad config, unreadable or malformed files) exit with 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};


struct CommonFlags {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", f.configs, "Config file; repeat to layer (later files win)");
    cmd->add_option("--set", f.sets, "Override one key, e.g. --set train.epochs=5");
  }
  cmd->add_option("--out", f.out, "Output directory (default: $OUT_ROOT/<command>)");
  cmd->add_flag("--force", f.force, "Allow writing into a non-empty output directory");
}

Config layered_config(const CommonFlags& f) {
  Config cfg;
  for (const auto& path : f.configs) {
    if (!fs::exists(path)) throw InputError("config file not found: " + path);
    cfg.merge(Config::load(path));
  }
  for (const auto& s : f.sets) cfg.set_assignment(s);
  return cfg;
}

fs::path resolve_out(const CommonFlags& f, const std::string& command) {
  const char* root = std::getenv("OUT_ROOT");
  if (f.out.empty()) {
    if (!root || !*root) throw ConfigError("", "--out is required when OUT_ROOT is not set");
    return fs::path(root) / command;
  }
  fs::path p(f.out);
  if (p.is_relative() && root && *root) p = fs::path(root) / p;
  return p;
}

void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw InputError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw InputError(dir.string() + " is not empty; pass --force to overwrite");
  fs::create_directories(dir);
}

data::DatasetSplit read_split(const fs::path& path) {
  try {
    return data::load_split(path);
  } catch (const data::SplitParseError& e) {
    throw InputError(e.what());
  }
}

data::Corpus read_corpus(const fs::path& dir) {
  data::Corpus c;
  c.train = read_split(dir / "train.split");
  c.val = read_split(dir / "val.split");
  c.test_iid = read_split(dir / "test_iid.split");
  c.test_ood = read_split(dir / "test_ood.split");
  return c;
}

std::string hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

double majority_share(const data::DatasetSplit& split, const text::Lexicon& lex) {
  const auto counts = data::count_cooccurrence(split, lex);
  double major = 0, total = 0;
  for (std::size_t a = 0; a < counts.size(); ++a)
    for (std::size_t o = 0; o < counts[a].size(); ++o) {
      total += counts[a][o];
      if (o == data::BiasSpec::majority_object(a, counts[a].size())) major += counts[a][o];
    }
  return total > 0 ? major / total : 0.0;
}

void print_eval(const std::string& label, const metrics::EvalResult& r) {
  std::printf("%-9s R1@0.3 %6.2f  R1@0.5 %6.2f  R1@0.7 %6.2f  mIoU %6.2f  mAP@0.5 %6.2f  mAP@0.75 %6.2f  mAP_avg %6.2f\n",
              label.c_str(), r.r1_at(0.3), r.r1_at(0.5), r.r1_at(0.7), r.miou, r.map_at.at(0.5), r.map_at.at(0.75),
              r.map_avg);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      seeds.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--seeds", "'" + item + "' is not a seed");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds", "need at least one seed");
  return seeds;
}

void log_err(const std::string& msg) { std::cerr << msg << std::endl; }

// --------------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& f, std::optional<long long> seed) {
  Config cfg = layered_config(f);
  if (seed) cfg.set("data.seed", std::to_string(*seed));
  cfg.require_known(train::experiment_keys());
  const auto gen = data::GenConfig::from_config(cfg);
  const fs::path out = resolve_out(f, "data");
  prepare_out(out, f.force);

  const auto corpus = data::generate_corpus(gen);
  nlohmann::json manifest;
  manifest["config_hash"] = fnv1a_hex(gen.to_config().canonical());
  manifest["seed"] = gen.seed;
  manifest["skew"] = gen.skew;
  nlohmann::json files = nlohmann::json::object();
  for (const auto* split : corpus.splits()) {
    const fs::path p = out / (split->name + ".split");
    data::serialize_split(*split, p);
    files[split->name] = {{"videos", split->samples.size()}, {"fnv1a", hash_file(p)}};
  }
  manifest["splits"] = files;
  const double train_major = majority_share(corpus.train, gen.lexicon);
  const double ood_major = majority_share(corpus.test_ood, gen.lexicon);
  manifest["majority_pair_share"] = {{"train", train_major}, {"test_ood", ood_major}};
  manifest["majority_train_to_ood_ratio"] = ood_major > 0 ? nlohmann::json(train_major / ood_major) : nlohmann::json();
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  write_file(out / "data_config.txt", gen.to_config().canonical());

  std::printf("wrote %s\n", out.string().c_str());
  for (const auto* split : corpus.splits()) std::printf("  %-9s %zu videos\n", split->name.c_str(), split->samples.size());
  std::printf("majority-pair share: train %.3f, test_ood %.3f\n", train_major, ood_major);
  return 0;
}

int cmd_build_dict(const CommonFlags& f, const std::string& train_split) {
  Config cfg = layered_config(f);
  cfg.require_known(train::experiment_keys());
  const auto mc = model::ModelConfig::from_config(cfg);
  const auto gen = data::GenConfig::from_config(cfg);
  if (!fs::exists(train_split)) throw InputError("cannot read " + train_split);
  const auto split = read_split(train_split);
  const fs::path out = resolve_out(f, "dictionary");
  prepare_out(out, f.force);

  const auto dict = text::build_dictionary(data::extract_corpus_tuples(split, gen.lexicon), mc.hidden_dim, mc.seed);
  text::save_dictionary(dict, out);
  double prior_sum = 0;
  for (double p : dict.prior) prior_sum += p;
  std::printf("K = L_s + L_a + L_o = %zu + %zu + %zu = %zu\n", dict.subjects.size(), dict.actions.size(),
              dict.objects.size(), dict.size());
  std::printf("embedding width %zu, prior sum %.12g\n", dict.embed_dim(), prior_sum);
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int cmd_train(const CommonFlags& f, const std::string& data_dir, const std::string& dict_dir, bool resume) {
  Config cfg = layered_config(f);
  cfg.require_known(train::experiment_keys());
  (void)train::TrainConfig::from_config(cfg);
  (void)model::ModelConfig::from_config(cfg);
  const auto corpus = read_corpus(data_dir);
  std::optional<text::ConfounderDictionary> dict;
  if (!dict_dir.empty()) {
    try {
      dict = text::load_dictionary(dict_dir);
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
  }
  const auto exp = train::make_experiment(cfg, corpus.train, dict ? &*dict : nullptr);
  const fs::path out = resolve_out(f, "run");
  if (!resume) prepare_out(out, f.force);
  else fs::create_directories(out);

  train::RunOptions ro;
  ro.out_dir = out;
  ro.resume = resume;
  ro.log = log_err;
  const auto rec = train::run_training(exp, corpus.train, &corpus.val, &corpus.test_iid, &corpus.test_ood, ro);
  std::printf("run %s: %zu epochs, best val R1@0.5 %.2f at epoch %zu\n", out.string().c_str(), exp.train.epochs,
              rec.best_val_r1, rec.best_epoch);
  std::printf("initial train loss %.4f", rec.initial_train_loss);
  if (!rec.epochs.empty()) std::printf(", last epoch %.4f", rec.epochs.back().train_loss);
  std::printf("\n");
  if (rec.test_iid) print_eval("test_iid", *rec.test_iid);
  if (rec.test_ood) print_eval("test_ood", *rec.test_ood);
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& run_dir, const std::string& split_path,
             const std::string& checkpoint, const std::string& pred, const std::string& gt) {
  const bool offline = !pred.empty() || !gt.empty();
  if (offline && (pred.empty() || gt.empty())) throw ConfigError("", "offline eval needs both --pred and --gt");
  if (!offline && (run_dir.empty() || split_path.empty()))
    throw ConfigError("", "eval needs --run and --split, or --pred and --gt");

  metrics::EvalResult result;
  std::vector<metrics::SampleRecord> records;
  std::string label;
  if (offline) {
    try {
      records = metrics::read_prediction_pair(pred, gt);
    } catch (const std::exception& e) {
      throw InputError(e.what());
    }
    result = metrics::evaluate(records);
    label = fs::path(pred).stem().string();
  } else {
    train::LoadedRun run;
    try {
      run = train::load_run(run_dir, checkpoint);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError(std::string("cannot load run: ") + e.what());
    }
    const auto split = read_split(split_path);
    const auto samples = train::prepare_split(split, run.vocab, run.model->grid());
    auto ev = train::evaluate(*run.model, samples, run.train.flags, run.train.use_prior);
    result = std::move(ev.result);
    records = std::move(ev.records);
    label = split.name;
  }

  if (!f.out.empty() || std::getenv("OUT_ROOT")) {
    const fs::path out = resolve_out(f, "eval");
    prepare_out(out, f.force);
    write_file(out / ("eval_" + label + ".json"), result.to_json().dump(2) + "\n");
    if (!offline) {
      metrics::write_predictions(out / ("predictions_" + label + ".jsonl"), records);
      metrics::write_ground_truth(out / ("gt_" + label + ".jsonl"), records);
    }
    std::fprintf(stderr, "wrote %s\n", out.string().c_str());
  }
  print_eval(label, result);
  if (result.effects)
    std::printf("effects   TE mean %.4f  NDE mean %.4f  TIE mean %.4f\n", result.effects->te_mean,
                result.effects->nde_mean, result.effects->tie_mean);
  return 0;
}

int cmd_ablate(const CommonFlags& f, const std::string& data_dir, const std::string& seeds, std::size_t jobs,
               bool sweep, bool keep_runs) {
  Config cfg = layered_config(f);
  cfg.require_known(train::experiment_keys());
  (void)train::TrainConfig::from_config(cfg);
  (void)model::ModelConfig::from_config(cfg);
  ablation::Options opt;
  opt.seeds = parse_seeds(seeds);
  opt.jobs = jobs;
  opt.log = log_err;
  const auto corpus = read_corpus(data_dir);
  const fs::path out = resolve_out(f, "ablation");
  prepare_out(out, f.force);
  if (keep_runs) opt.out_dir = out / "runs";
  write_file(out / "config.txt", cfg.canonical());

  const auto rows = ablation::run_ablation(cfg, corpus, opt);
  ablation::write_rows_csv(out / "ablation.csv", rows);
  std::printf("%s", ablation::summarize_ablation(rows).render().c_str());
  if (sweep) {
    const auto sweep_rows = ablation::run_kl_sweep(cfg, corpus, ablation::kDefaultKlSweep, opt);
    ablation::write_rows_csv(out / "kl_sweep.csv", sweep_rows);
    const auto table = ablation::summarize_sweep(sweep_rows);
    ablation::write_sensitivity_csv(out / "sensitivity.csv", table);
    std::printf("\n%s", ablation::render_sensitivity(table).c_str());
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int cmd_report(const CommonFlags& f, const std::string& ablation_csv, const std::string& sweep_csv) {
  if (ablation_csv.empty() && sweep_csv.empty()) throw ConfigError("", "report needs --ablation and/or --sweep");
  std::string text;
  std::optional<std::vector<ablation::SensitivityRow>> table;
  try {
    if (!ablation_csv.empty()) {
      const auto rows = ablation::read_rows_csv(ablation_csv);
      text += "test_ood ordering\n" + ablation::summarize_ablation(rows, "test_ood").render();
      text += "\ntest_iid ordering\n" + ablation::summarize_ablation(rows, "test_iid").render();
    }
    if (!sweep_csv.empty()) {
      table = ablation::summarize_sweep(ablation::read_rows_csv(sweep_csv));
      if (!text.empty()) text += "\n";
      text += "lambda_kl sensitivity (test_ood)\n" + ablation::render_sensitivity(*table);
    }
  } catch (const std::runtime_error& e) {
    throw InputError(e.what());
  }
  if (!f.out.empty() || std::getenv("OUT_ROOT")) {
    const fs::path out = resolve_out(f, "report");
    prepare_out(out, f.force);
    write_file(out / "summary.txt", text);
    if (table) ablation::write_sensitivity_csv(out / "sensitivity.csv", *table);
    std::fprintf(stderr, "wrote %s\n", out.string().c_str());
  }
  std::printf("%s", text.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal intervention and counterfactual reasoning for temporal sentence grounding"};
  app.require_subcommand(1);

  CommonFlags gen_f, dict_f, train_f, eval_f, ablate_f, report_f;
  std::optional<long long> gen_seed;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic biased corpus");
  add_common(gen, gen_f);
  gen->add_option("--seed", gen_seed, "Generator seed (overrides data.seed)");

  std::string train_split;
  auto* dict = app.add_subcommand("build-dict", "Build the confounder dictionary from a training split");
  add_common(dict, dict_f);
  dict->add_option("--train-split", train_split, "Training split file")->required();

  std::string data_dir, dict_dir;
  bool resume = false;
  auto* tr = app.add_subcommand("train", "Train and evaluate one model");
  add_common(tr, train_f);
  tr->add_option("--data", data_dir, "Directory written by gen-data")->required();
  tr->add_option("--dict", dict_dir, "Dictionary directory written by build-dict (default: rebuild)");
  tr->add_flag("--resume", resume, "Continue from <out>/checkpoints/last.ckpt");

  std::string run_dir, split_path, checkpoint = "best", pred, gt;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a split, or a prediction file against ground truth");
  add_common(ev, eval_f, false);
  ev->add_option("--run", run_dir, "Run directory written by train");
  ev->add_option("--split", split_path, "Split file to score");
  ev->add_option("--checkpoint", checkpoint, "best, last, or a checkpoint path");
  ev->add_option("--pred", pred, "Prediction JSON-lines file (offline mode)");
  ev->add_option("--gt", gt, "Ground-truth JSON-lines file (offline mode)");

  std::string ablate_data, seeds = "1,2,3,4,5";
  std::size_t jobs = 1;
  bool sweep = false, keep_runs = false;
  auto* ab = app.add_subcommand("ablate", "Train the four ablation cells over several seeds");
  add_common(ab, ablate_f);
  ab->add_option("--data", ablate_data, "Directory written by gen-data")->required();
  ab->add_option("--seeds", seeds, "Comma-separated seeds");
  ab->add_option("--jobs", jobs, "Cells trained concurrently")->check(CLI::PositiveNumber);
  ab->add_flag("--sweep-kl", sweep, "Also run the lambda_kl sweep 0,0.05,0.1,0.2,0.5");
  ab->add_flag("--keep-runs", keep_runs, "Keep a run directory per trained cell");

  std::string ablation_csv, sweep_csv;
  auto* rp = app.add_subcommand("report", "Summarize ablation and sweep CSVs");
  add_common(rp, report_f, false);
  rp->add_option("--ablation", ablation_csv, "ablation.csv written by ablate");
  rp->add_option("--sweep", sweep_csv, "kl_sweep.csv written by ablate --sweep-kl");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_f, gen_seed);
    if (dict->parsed()) return cmd_build_dict(dict_f, train_split);
    if (tr->parsed()) return cmd_train(train_f, data_dir, dict_dir, resume);
    if (ev->parsed()) return cmd_eval(eval_f, run_dir, split_path, checkpoint, pred, gt);
    if (ab->parsed()) return cmd_ablate(ablate_f, ablate_data, seeds, jobs, sweep, keep_runs);
    if (rp->parsed()) return cmd_report(report_f, ablation_csv, sweep_csv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << std::endl;
    return kExitConfig;
  } catch (const train::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << std::endl;
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return kExitConfig;
}
