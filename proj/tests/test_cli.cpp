#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mosbench/pipeline.hpp"
#include "support/tmpdir.hpp"

// Drives the installed binary through std::system. The binary path arrives
// via the MOSBENCH_CLI environment variable set by the ctest wiring.

namespace {

namespace fs = std::filesystem;

std::string cli_path() {
  const char* p = std::getenv("MOSBENCH_CLI");
  REQUIRE(p != nullptr);
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const testutil::TempDir& tmp, const std::string& args) {
  const std::string out_file = tmp.sub("stdout.txt");
  const std::string err_file = tmp.sub("stderr.txt");
  const std::string cmd =
      cli_path() + " " + args + " >" + out_file + " 2>" + err_file;
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -2;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

nlohmann::json error_doc(const CliResult& r) {
  const nlohmann::json doc = nlohmann::json::parse(r.err);
  REQUIRE(doc.contains("error"));
  return doc["error"];
}

}  // namespace

TEST_CASE("full pipeline over a synthetic corpus", "[cli]") {
  testutil::TempDir tmp("cli");
  const std::string corpus = tmp.sub("corpus");
  const std::string config = corpus + "/config.json";

  const CliResult synth =
      run_cli(tmp, "synth --dir " + corpus + " --utterances 60 --seed 5");
  INFO(synth.err);
  REQUIRE(synth.code == 0);
  REQUIRE(fs::exists(corpus + "/manifest.csv"));
  REQUIRE(fs::exists(config));

  // Shrink the demo setup so the smoke run stays quick.
  nlohmann::json cfg = mosbench::read_json_file(config);
  cfg["training"]["max_epochs"] = 2;
  cfg["training"]["patience_epochs"] = 2;
  cfg["seeds"] = {1, 2};
  mosbench::write_json_file(config, cfg);

  const CliResult train = run_cli(tmp, "train --config " + config);
  INFO(train.out + train.err);
  REQUIRE(train.code == 0);
  const std::string runs = corpus + "/out/runs";
  for (const char* model : {"CNN-maxpool", "w2vMOS-frozen"}) {
    for (const char* seed : {"1", "2"}) {
      const std::string run =
          runs + "/" + model + "/seed_" + seed;
      REQUIRE(fs::exists(run + "/predictions.csv"));
      REQUIRE(fs::exists(run + "/checkpoint/meta.json"));
      const nlohmann::json rec =
          mosbench::read_json_file(run + "/run_record.json");
      REQUIRE(rec["seed"].get<uint64_t>() == std::stoull(seed));
      const std::string stop = rec["stop_reason"].get<std::string>();
      REQUIRE((stop == "PATIENCE" || stop == "MAX_EPOCHS"));
      REQUIRE_FALSE(rec["val_losses"].empty());
    }
  }

  const CliResult eval = run_cli(tmp, "evaluate --config " + config);
  INFO(eval.out + eval.err);
  REQUIRE(eval.code == 0);
  const std::string reports = corpus + "/out/reports";
  const nlohmann::json erep = mosbench::read_json_file(
      reports + "/eval_CNN-maxpool_utterance_all.json");
  REQUIRE(erep["run_count"].get<int>() == 2);
  REQUIRE(erep["metrics"]["mse"].contains("mean"));
  REQUIRE(erep["per_run"].size() == 2);
  REQUIRE(fs::exists(reports + "/eval_CNN-maxpool_system_all.json"));
  REQUIRE(fs::exists(reports + "/summary_utterance_all.csv"));
  REQUIRE(fs::exists(reports + "/summary_system_all.csv"));

  const CliResult cmp = run_cli(tmp, "compare --config " + config);
  INFO(cmp.out + cmp.err);
  REQUIRE(cmp.code == 0);
  const nlohmann::json crep =
      mosbench::read_json_file(reports + "/comparison_all.json");
  REQUIRE(crep.contains("cells"));
  REQUIRE_FALSE(crep["cells"].empty());
  REQUIRE(slurp(reports + "/comparison_all.txt").find("mse") !=
          std::string::npos);

  const CliResult ana = run_cli(tmp, "analyze --config " + config);
  INFO(ana.out + ana.err);
  REQUIRE(ana.code == 0);
  const std::string analysis = corpus + "/out/analysis";
  for (const char* f :
       {"fig_mos_hist_train.csv", "fig_mos_hist_train.svg",
        "fig_mos_hist_test.csv", "fig_system_bins_train.json",
        "fig_system_bins_test.csv", "breakdown_CNN-maxpool_utterance.json",
        "worst_systems_CNN-maxpool.csv", "worst_systems_w2vMOS-frozen.json"})
    REQUIRE(fs::exists(analysis + "/" + f));

  const CliResult rep = run_cli(tmp, "report --config " + config);
  INFO(rep.out + rep.err);
  REQUIRE(rep.code == 0);
  const std::string md = slurp(corpus + "/out/report.md");
  REQUIRE(md.find("## Evaluation") != std::string::npos);
  REQUIRE(md.find("CNN-maxpool") != std::string::npos);

  const std::string pred_csv = tmp.sub("pred_test.csv");
  const CliResult pred = run_cli(
      tmp, "predict --config " + config +
               " --model CNN-maxpool --seed 1 --role test --out-file " +
               pred_csv);
  INFO(pred.out + pred.err);
  REQUIRE(pred.code == 0);
  const mosbench::CsvTable pt = mosbench::read_csv(pred_csv);
  REQUIRE(pt.rows.size() == 12);
  REQUIRE(pt.column("prediction") >= 0);

  // Retraining with one seed into fresh output directories is bit-stable.
  const std::string out_a = tmp.sub("rerun_a");
  const std::string out_b = tmp.sub("rerun_b");
  for (const std::string& out : {out_a, out_b}) {
    const CliResult r = run_cli(
        tmp, "train --config " + config + " --out " + out +
                 " --seed-list 1 --model CNN-maxpool");
    INFO(r.out + r.err);
    REQUIRE(r.code == 0);
  }
  REQUIRE(slurp(out_a + "/runs/CNN-maxpool/seed_1/predictions.csv") ==
          slurp(out_b + "/runs/CNN-maxpool/seed_1/predictions.csv"));

  // A checkpoint trained under different features refuses to load.
  nlohmann::json drifted = mosbench::read_json_file(config);
  drifted["features"]["n_mels"] = 32;
  const std::string config2 = corpus + "/config_drifted.json";
  mosbench::write_json_file(config2, drifted);
  const CliResult mism = run_cli(
      tmp, "predict --config " + config2 +
               " --model CNN-maxpool --seed 1 --role test --out-file " +
               tmp.sub("nope.csv"));
  REQUIRE(mism.code == 1);
  REQUIRE_FALSE(error_doc(mism)["message"].get<std::string>().empty());
}

TEST_CASE("unknown config keys exit with a usage error", "[cli]") {
  testutil::TempDir tmp("cli_badkey");
  const std::string config = tmp.sub("config.json");
  mosbench::write_json_file(config, {{"bogus", true}});
  const CliResult r = run_cli(tmp, "evaluate --config " + config);
  REQUIRE(r.code == 2);
  const nlohmann::json err = error_doc(r);
  REQUIRE(err["code"].get<std::string>() == "CONFIG");
  REQUIRE(err["message"].get<std::string>().find("bogus") !=
          std::string::npos);
}

TEST_CASE("a config without every dataset role is rejected", "[cli]") {
  testutil::TempDir tmp("cli_norole");
  const std::string config = tmp.sub("config.json");
  mosbench::write_json_file(
      config,
      {{"datasets",
        {{"train", {{"path", "m.csv"}}}, {"validation", {{"path", "m.csv"}}}}},
       {"models",
        {{{"id", "m1"}, {"architecture", "conv_max_pool"}}}}});
  const CliResult r = run_cli(tmp, "train --config " + config);
  REQUIRE(r.code == 2);
  REQUIRE(error_doc(r)["message"].get<std::string>().find("test") !=
          std::string::npos);
}

TEST_CASE("predicting without a trained checkpoint fails cleanly", "[cli]") {
  testutil::TempDir tmp("cli_nockpt");
  const std::string config = tmp.sub("config.json");
  mosbench::write_json_file(
      config,
      {{"datasets",
        {{"train", {{"path", "m.csv"}}},
         {"validation", {{"path", "m.csv"}}},
         {"test", {{"path", "m.csv"}}}}},
       {"models",
        {{{"id", "m1"}, {"architecture", "conv_max_pool"}}}}});
  const CliResult r = run_cli(
      tmp, "predict --config " + config + " --model m1 --seed 1 --role test");
  REQUIRE(r.code == 1);
  REQUIRE_FALSE(error_doc(r)["message"].get<std::string>().empty());
}

TEST_CASE("bad command line usage exits with code 2", "[cli]") {
  testutil::TempDir tmp("cli_usage");
  REQUIRE(run_cli(tmp, "definitely-not-a-command").code == 2);
  REQUIRE(run_cli(tmp, "train").code == 2);
}
