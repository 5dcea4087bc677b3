#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mosbench/config.hpp"
#include "mosbench/pipeline.hpp"
#include "mosbench/synthetic.hpp"

namespace {

using namespace mosbench;

int exit_code_for(const MosError& e) {
  switch (e.code()) {
    case ErrorCode::kConfig:
    case ErrorCode::kValidation:
    case ErrorCode::kEmptySplit:
      return 2;
    default:
      return 1;
  }
}

void print_error(const std::string& code, const std::string& message) {
  nlohmann::json doc = {{"error", {{"code", code}, {"message", message}}}};
  std::cerr << doc.dump(2) << "\n";
}

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty())
      throw MosError(ErrorCode::kConfig, "--seed-list: empty entry");
    size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(cur, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != cur.size())
      throw MosError(ErrorCode::kConfig,
                     "--seed-list: '" + cur + "' is not a seed");
    out.push_back(v);
    cur.clear();
  };
  for (char c : s) {
    if (c == ',')
      flush();
    else
      cur += c;
  }
  flush();
  return out;
}

// A runnable demo setup next to the generated audio: every split in one
// manifest, two quick models, training caps sized for a smoke run.
void write_demo_config(const std::string& dir) {
  nlohmann::json cfg = {
      {"schema_version", 1},
      {"output_dir", "out"},
      {"datasets",
       {{"train", {{"path", "manifest.csv"}, {"split", "TRAIN"}}},
        {"validation", {{"path", "manifest.csv"}, {"split", "VAL"}}},
        {"test", {{"path", "manifest.csv"}, {"split", "TEST"}}}}},
      {"features", {{"cache_dir", "out/feature_cache"}, {"normalize", true}}},
      {"training",
       {{"optimizer", "ADAM"}, {"patience_epochs", 5}, {"max_epochs", 30}}},
      {"evaluation", {{"levels", {"utterance", "system"}}}},
      {"seeds", {1, 2, 3}},
      {"models",
       {{{"id", "CNN-maxpool"}, {"architecture", "conv_max_pool"}},
        {{"id", "w2vMOS-frozen"},
         {"architecture", "w2v_mos"},
         {"backbone",
          {{"provider", "toy"}, {"embed_dim", 64}, {"stride", 160}}}}}}};
  write_json_file(dir + "/config.json", cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"benchmark suite for learned speech quality predictors"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string seed_list;
  int workers_override = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON)")
        ->required();
    cmd->add_option("--out", out_override,
                    "override the configured output directory");
    cmd->add_option("--seed-list", seed_list,
                    "comma-separated seeds, overrides the configured set");
    cmd->add_option("--workers", workers_override,
                    "worker threads for the training matrix");
  };

  std::string model_id, subset = "all", role = "test", out_file;
  uint64_t seed = 1;

  CLI::App* c_train = app.add_subcommand("train", "train the model matrix");
  add_common(c_train);
  c_train->add_option("--model", model_id, "train only this model id");

  CLI::App* c_pre = app.add_subcommand(
      "pretrain-ae", "autoencoder-pretrain convolutional trunks");
  add_common(c_pre);

  CLI::App* c_pred = app.add_subcommand(
      "predict", "score a manifest with a trained checkpoint");
  add_common(c_pred);
  c_pred->add_option("--model", model_id, "model id")->required();
  c_pred->add_option("--seed", seed, "training seed of the checkpoint");
  c_pred->add_option("--role", role, "dataset role to score (train|validation|test)");
  c_pred->add_option("--out-file", out_file, "prediction CSV path");

  CLI::App* c_eval = app.add_subcommand(
      "evaluate", "metrics with confidence intervals from stored predictions");
  add_common(c_eval);
  c_eval->add_option("--model", model_id, "evaluate only this model id");
  c_eval->add_option("--subset", subset, "system subset: all, tts or vc");

  CLI::App* c_cmp = app.add_subcommand(
      "compare", "variance analysis and pairwise separation across models");
  add_common(c_cmp);
  c_cmp->add_option("--subset", subset, "system subset: all, tts or vc");

  CLI::App* c_ana =
      app.add_subcommand("analyze", "label and error-structure analyses");
  add_common(c_ana);

  CLI::App* c_rep =
      app.add_subcommand("report", "combined markdown report from stored results");
  add_common(c_rep);

  std::string synth_dir;
  int synth_utts = 600;
  uint64_t synth_seed = 7;
  CLI::App* c_synth = app.add_subcommand(
      "synth", "generate a small synthetic corpus with a demo config");
  c_synth->add_option("--dir", synth_dir, "output directory")->required();
  c_synth->add_option("--utterances", synth_utts, "corpus size");
  c_synth->add_option("--seed", synth_seed, "generation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_synth->parsed()) {
      SyntheticCorpusConfig sc;
      sc.dir = synth_dir;
      sc.utterances = synth_utts;
      sc.seed = synth_seed;
      const SyntheticCorpus corpus = generate_corpus(sc);
      write_demo_config(synth_dir);
      std::cout << "wrote " << corpus.manifest.size() << " utterances, "
                << "manifest.csv and config.json -> " << synth_dir << "\n";
      return 0;
    }

    RunConfig rc = load_run_config(config_path);
    if (!out_override.empty())  // relative to the invocation directory
      rc.output_dir =
          std::filesystem::absolute(out_override).lexically_normal().string();
    if (!seed_list.empty()) rc.seeds = parse_seed_list(seed_list);
    if (workers_override > 0) rc.workers = workers_override;

    const std::optional<std::string> only_model =
        model_id.empty() ? std::nullopt
                         : std::optional<std::string>(model_id);
    const std::optional<std::string> pred_out =
        out_file.empty() ? std::nullopt : std::optional<std::string>(out_file);

    if (c_train->parsed()) return cmd_train(rc, only_model, std::cout);
    if (c_pre->parsed()) return cmd_pretrain_ae(rc, std::cout);
    if (c_pred->parsed())
      return cmd_predict(rc, model_id, seed, role, pred_out, std::cout);
    if (c_eval->parsed()) return cmd_evaluate(rc, only_model, subset, std::cout);
    if (c_cmp->parsed()) return cmd_compare(rc, subset, std::cout);
    if (c_ana->parsed()) return cmd_analyze(rc, std::cout);
    if (c_rep->parsed()) return cmd_report(rc, std::cout);
    return 2;
  } catch (const MosError& e) {
    print_error(error_code_name(e.code()), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    print_error("INTERNAL", e.what());
    return 1;
  }
}
