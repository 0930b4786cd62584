#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& scratch() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "cicr_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path out = scratch() / ("stdout_" + std::to_string(counter));
  const fs::path err = scratch() / ("stderr_" + std::to_string(counter++));
  const std::string cmd = "env -u OUT_ROOT " + env + " " + CICR_BINARY + " " + args + " > " + out.string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const std::string kSmall =
    "--set data.train_videos=30 --set data.val_videos=10 --set data.test_iid_videos=10 "
    "--set data.test_ood_videos=10 --set model.hidden_dim=16 --set model.text_dim=8 "
    "--set model.aligner_heads=2 --set model.aligner_depth=1 --set train.epochs=1 --set train.lr=1e-3";

// One small corpus shared by the tests that only read it.
const fs::path& small_data() {
  static const fs::path dir = [] {
    const fs::path d = scratch() / "shared_data";
    const auto r = run("gen-data " + kSmall + " --out " + d.string());
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST(Cli, HelpAndUnknownCommand) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST(GenData, WritesFourSplitsAndAManifest) {
  const auto d = small_data();
  for (const char* name : {"train.split", "val.split", "test_iid.split", "test_ood.split", "manifest.json"})
    EXPECT_TRUE(fs::exists(d / name)) << name;
  const auto m = nlohmann::json::parse(slurp(d / "manifest.json"));
  EXPECT_EQ(m.at("seed").get<long long>(), 7);
  EXPECT_EQ(m.at("splits").at("train").at("videos").get<int>(), 30);
  EXPECT_FALSE(m.at("config_hash").get<std::string>().empty());
}

TEST(GenData, SameSeedGivesIdenticalFiles) {
  const fs::path a = scratch() / "gen_a", b = scratch() / "gen_b";
  ASSERT_EQ(run("gen-data " + kSmall + " --seed 11 --out " + a.string()).code, 0);
  ASSERT_EQ(run("gen-data " + kSmall + " --seed 11 --out " + b.string()).code, 0);
  for (const char* name : {"train.split", "val.split", "test_iid.split", "test_ood.split", "manifest.json"})
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  const fs::path c = scratch() / "gen_c";
  ASSERT_EQ(run("gen-data " + kSmall + " --seed 12 --out " + c.string()).code, 0);
  EXPECT_NE(slurp(a / "train.split"), slurp(c / "train.split"));
}

TEST(GenData, ManifestRecordsTheBiasRatio) {
  const fs::path d = scratch() / "gen_bias";
  ASSERT_EQ(run("gen-data --set data.train_videos=300 --set data.test_ood_videos=200 --set data.skew=0.9 --out " +
                d.string())
                .code,
            0);
  const auto m = nlohmann::json::parse(slurp(d / "manifest.json"));
  EXPECT_GE(m.at("majority_train_to_ood_ratio").get<double>(), 4.0);
}

TEST(GenData, ConfigErrorsExitTwoAndNameTheKey) {
  auto r = run("gen-data --set data.skew=1.5 --out " + (scratch() / "bad_skew").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "data.skew")) << r.err;
  EXPECT_FALSE(fs::exists(scratch() / "bad_skew"));
  r = run("gen-data --set data.bogus=1 --out " + (scratch() / "bad_key").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "data.bogus")) << r.err;
  r = run("gen-data --config /nonexistent.cfg --out " + (scratch() / "bad_cfg").string());
  EXPECT_EQ(r.code, 2);
  r = run("gen-data");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "OUT_ROOT")) << r.err;
}

TEST(GenData, LayeredConfigFilesAndOutRoot) {
  const fs::path cfg = scratch() / "layer.cfg";
  std::ofstream(cfg) << "data.train_videos = 12\ndata.val_videos = 3\ndata.test_iid_videos = 3\ndata.test_ood_videos = 3\n";
  const fs::path root = scratch() / "root";
  const auto r = run("gen-data --config " + cfg.string() + " --set data.train_videos=14", "OUT_ROOT=" + root.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(slurp(root / "data" / "manifest.json"));
  EXPECT_EQ(m.at("splits").at("train").at("videos").get<int>(), 14);
  EXPECT_EQ(m.at("splits").at("val").at("videos").get<int>(), 3);
}

TEST(Cli, RefusesToOverwriteWithoutForce) {
  const fs::path d = scratch() / "force";
  ASSERT_EQ(run("gen-data " + kSmall + " --out " + d.string()).code, 0);
  const auto r = run("gen-data " + kSmall + " --out " + d.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "--force")) << r.err;
  EXPECT_EQ(run("gen-data " + kSmall + " --out " + d.string() + " --force").code, 0);
}

TEST(BuildDict, ReportsSizeAndWritesANormalizedPrior) {
  const fs::path a = scratch() / "dict_a", b = scratch() / "dict_b";
  const std::string split = (small_data() / "train.split").string();
  const auto r = run("build-dict --set model.hidden_dim=16 --train-split " + split + " --out " + a.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto at = r.out.find("K = L_s + L_a + L_o = ");
  ASSERT_NE(at, std::string::npos) << r.out;
  std::istringstream summary(r.out.substr(at + 22));
  std::size_t ls = 0, la = 0, lo = 0, k = 0;
  char plus1 = 0, plus2 = 0, eq = 0;
  ASSERT_TRUE(summary >> ls >> plus1 >> la >> plus2 >> lo >> eq >> k);
  EXPECT_EQ(ls + la + lo, k);
  EXPECT_EQ(ls, 1u);

  std::ifstream in(a / "dictionary.txt");
  std::string line;
  double total = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string role, word;
    double p = 0;
    if ((fields >> role) && (role == "subject" || role == "action" || role == "object") && (fields >> word >> p)) {
      total += p;
      ++rows;
    }
  }
  EXPECT_EQ(rows, k);
  EXPECT_NEAR(total, 1.0, 1e-9);

  ASSERT_EQ(run("build-dict --set model.hidden_dim=16 --train-split " + split + " --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "dictionary.txt"), slurp(b / "dictionary.txt"));
  EXPECT_EQ(slurp(a / "dictionary.ckpt"), slurp(b / "dictionary.ckpt"));
}

TEST(BuildDict, UnreadableSplitExitsTwo) {
  EXPECT_EQ(run("build-dict --train-split /nonexistent.split --out " + (scratch() / "d_missing").string()).code, 2);
  const fs::path bad = scratch() / "garbage.split";
  std::ofstream(bad) << "not a split\n";
  EXPECT_EQ(run("build-dict --train-split " + bad.string() + " --out " + (scratch() / "d_bad").string()).code, 2);
}

TEST(Pipeline, TrainThenEvalReproducesTheStoredMetrics) {
  const fs::path dict = scratch() / "pipe_dict", runs = scratch() / "pipe_run";
  ASSERT_EQ(run("build-dict " + kSmall + " --train-split " + (small_data() / "train.split").string() + " --out " +
                dict.string())
                .code,
            0);
  auto r = run("train " + kSmall + " --data " + small_data().string() + " --dict " + dict.string() + " --out " +
               runs.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* name : {"config.txt", "loss.csv", "val_epochs.csv", "eval_test_iid.json", "eval_test_ood.json",
                           "checkpoints/best.ckpt", "checkpoints/last.ckpt", "predictions_test_ood.jsonl"})
    EXPECT_TRUE(fs::exists(runs / name)) << name;
  EXPECT_TRUE(contains(r.out, "test_ood"));
  EXPECT_TRUE(contains(r.err, "epoch 1/1"));

  const auto stored = nlohmann::json::parse(slurp(runs / "eval_test_ood.json"));
  // Checkpoint mode.
  const fs::path e1 = scratch() / "pipe_eval";
  r = run("eval --run " + runs.string() + " --split " + (small_data() / "test_ood.split").string() + " --out " +
          e1.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(slurp(e1 / "eval_test_ood.json")), stored);
  // Offline mode, no model.
  const fs::path e2 = scratch() / "pipe_offline";
  r = run("eval --pred " + (runs / "predictions_test_ood.jsonl").string() + " --gt " +
          (runs / "gt_test_ood.jsonl").string() + " --out " + e2.string());
  ASSERT_EQ(r.code, 0) << r.err;
  auto offline = nlohmann::json::parse(slurp(e2 / "eval_predictions_test_ood.json"));
  auto expected = stored;
  // Effect diagnostics need the model.
  expected.erase("effects");
  for (auto& row : expected.at("per_sample")) row.erase("effects");
  EXPECT_EQ(offline, expected);
}

TEST(Eval, MissingArgumentsAndBadFiles) {
  EXPECT_EQ(run("eval").code, 2);
  EXPECT_EQ(run("eval --pred /nonexistent.jsonl").code, 2);
  EXPECT_EQ(run("eval --pred /nonexistent.jsonl --gt /nonexistent.jsonl").code, 2);
  EXPECT_EQ(run("eval --run /nonexistent --split " + (small_data() / "val.split").string()).code, 2);
}

TEST(Train, DivergenceExitsThree) {
  const auto r = run("train " + kSmall + " --set train.lr=1e300 --set train.grad_clip=0 --set train.epochs=3 --data " +
                     small_data().string() + " --out " + (scratch() / "nan_run").string());
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(contains(r.err, "non-finite loss")) << r.err;
  EXPECT_TRUE(fs::exists(scratch() / "nan_run" / "nan_dump.txt"));
}

TEST(Ablate, WritesRowsAndReportRendersFourCells) {
  const fs::path out = scratch() / "ablate";
  auto r = run("ablate " + kSmall + " --seeds 1,2 --data " + small_data().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(out / "ablation.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4u * 2u * 2u);

  const fs::path rep = scratch() / "report";
  r = run("report --ablation " + (out / "ablation.csv").string() + " --out " + rep.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = slurp(rep / "summary.txt");
  EXPECT_EQ(text, r.out);
  for (const char* cell : {"full", "wo_tci", "wo_vcr", "wo_both"}) EXPECT_TRUE(contains(text, cell)) << cell;
  // Four ranked rows per split summary.
  std::size_t ranked = 0;
  std::istringstream ts(text);
  while (std::getline(ts, line))
    if (!line.empty() && line[0] >= '1' && line[0] <= '4' && line[1] == ' ') ++ranked;
  EXPECT_EQ(ranked, 8u);

  EXPECT_EQ(run("ablate " + kSmall + " --seeds 1,x --data " + small_data().string() + " --out " +
                (scratch() / "ablate_bad").string())
                .code,
            2);
  EXPECT_EQ(run("report --ablation /nonexistent.csv").code, 2);
  EXPECT_EQ(run("report").code, 2);
}
