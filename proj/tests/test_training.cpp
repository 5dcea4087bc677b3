#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "mosbench/models.hpp"
#include "mosbench/training.hpp"
#include "support/tmpdir.hpp"

using namespace mosbench;

namespace {

// Parameterless predictor whose validation losses follow a script. With one
// training and one validation sample per epoch, forward calls alternate
// train, val, train, val, ...; the k-th validation call returns the sample's
// target plus script[k], so the observed validation loss is exactly
// script[k]. The training calls return the target itself (zero loss).
class ScriptedModel : public Predictor {
 public:
  explicit ScriptedModel(std::vector<double> script)
      : script_(std::move(script)) {}

  std::string architecture() const override { return "scripted"; }
  std::string config_string() const override { return "scripted"; }
  DataNeeds needs() const override { return {}; }
  void init(Rng&) override { calls_ = 0; }
  std::unique_ptr<PredictorCache> make_cache() const override {
    return std::make_unique<PredictorCache>();
  }
  double forward(const Sample& s, PredictorCache&) const override {
    const size_t call = calls_++;
    if (call % 2 == 0) return s.mos;  // training pass
    const size_t k = call / 2;
    return s.mos + (k < script_.size() ? script_[k] : script_.back());
  }
  void backward(PredictorCache&, double) override {}
  std::vector<ParamGroup> param_groups() override { return {}; }

 private:
  std::vector<double> script_;
  mutable size_t calls_ = 0;
};

Sample trivial_sample(double mos) {
  Sample s;
  s.utterance_id = "u";
  s.mos = mos;
  return s;
}

FramewiseCnnConfig small_trunk() {
  FramewiseCnnConfig t;
  t.in_h = 12;
  t.in_w = 9;
  t.channels = {4, 4, 8};
  t.pool_after = {0, 2};
  return t;
}

Sample conv_sample(const FramewiseCnnConfig& trunk, uint64_t seed, double mos) {
  Rng rng(seed);
  Sample s;
  s.utterance_id = "u" + std::to_string(seed);
  s.mos = mos;
  for (int p = 0; p < 2; ++p) {
    Mat patch(trunk.in_h, trunk.in_w);
    for (Eigen::Index j = 0; j < patch.cols(); ++j)
      for (Eigen::Index i = 0; i < patch.rows(); ++i)
        patch(i, j) = rng.gaussian() * (0.3 + 0.2 * mos);
    s.patches.patches.push_back(std::move(patch));
  }
  return s;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("l1 loss and validation loss are plain means", "[training]") {
  REQUIRE_THAT(l1_loss({1.0, 2.0, 5.0}, {2.0, 2.0, 1.0}),
               Catch::Matchers::WithinAbs((1.0 + 0.0 + 4.0) / 3.0, 1e-12));
  REQUIRE_THROWS_AS(l1_loss({1.0}, {1.0, 2.0}), ValidationError);
}

TEST_CASE("patience stopping fires at the exact scripted epoch",
          "[training]") {
  // Script: improve at epoch 2, then 20 flat epochs. With patience 20 the
  // stop lands exactly at epoch 22.
  std::vector<double> script = {1.0, 0.9};
  for (int i = 0; i < 30; ++i) script.push_back(0.9);
  ScriptedModel m(script);
  const std::vector<Sample> tr = {trivial_sample(3.0)};
  const std::vector<Sample> va = {trivial_sample(2.0)};

  TrainConfig cfg;
  cfg.patience_epochs = 20;
  cfg.max_epochs = 100;
  cfg.batch_size = 1;
  const RunRecord rec = train(m, tr, va, cfg, "scripted");

  REQUIRE(rec.stop_reason == StopReason::kPatience);
  REQUIRE(rec.epochs_run == 22);
  REQUIRE(rec.best_epoch == 2);
  REQUIRE_THAT(rec.best_val_loss, Catch::Matchers::WithinAbs(0.9, 1e-12));
  REQUIRE(rec.val_losses.size() == 22);
  REQUIRE_THAT(rec.val_losses[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
  REQUIRE_THAT(rec.val_losses[1], Catch::Matchers::WithinAbs(0.9, 1e-12));
  REQUIRE_THAT(rec.train_losses[0], Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("improvement must beat the minimum delta strictly", "[training]") {
  // A zero-MOS validation sample makes the scripted loss land exactly on
  // 1.0 - k*min_delta; any other anchor rounds the low bits away.
  // An improvement of exactly min_delta does not reset the patience clock.
  {
    std::vector<double> script = {1.0};
    for (int i = 0; i < 10; ++i) script.push_back(1.0 - 1e-6);
    ScriptedModel m(script);
    TrainConfig cfg;
    cfg.patience_epochs = 3;
    cfg.max_epochs = 50;
    const RunRecord rec = train(m, {trivial_sample(3.0)},
                                {trivial_sample(0.0)}, cfg, "s");
    REQUIRE(rec.best_epoch == 1);
    REQUIRE(rec.epochs_run == 4);
    REQUIRE(rec.stop_reason == StopReason::kPatience);
  }
  // An improvement of twice min_delta does.
  {
    std::vector<double> script = {1.0};
    for (int i = 0; i < 10; ++i) script.push_back(1.0 - 2e-6);
    ScriptedModel m(script);
    TrainConfig cfg;
    cfg.patience_epochs = 3;
    cfg.max_epochs = 50;
    const RunRecord rec = train(m, {trivial_sample(3.0)},
                                {trivial_sample(0.0)}, cfg, "s");
    REQUIRE(rec.best_epoch == 2);
    REQUIRE(rec.epochs_run == 5);
  }
}

TEST_CASE("the epoch budget caps training", "[training]") {
  std::vector<double> script;
  for (int i = 0; i < 40; ++i) script.push_back(1.0 - 0.01 * i);
  ScriptedModel m(script);  // improves every epoch
  TrainConfig cfg;
  cfg.patience_epochs = 20;
  cfg.max_epochs = 7;
  const RunRecord rec =
      train(m, {trivial_sample(3.0)}, {trivial_sample(2.0)}, cfg, "s");
  REQUIRE(rec.stop_reason == StopReason::kMaxEpochs);
  REQUIRE(rec.epochs_run == 7);
  REQUIRE(rec.best_epoch == 7);
}

TEST_CASE("non-finite losses abort training with a structured error",
          "[training]") {
  ScriptedModel m({std::numeric_limits<double>::quiet_NaN()});
  TrainConfig cfg;
  try {
    train(m, {trivial_sample(3.0)}, {trivial_sample(2.0)}, cfg, "diverging");
    FAIL("expected kTrainingDiverged");
  } catch (const MosError& e) {
    REQUIRE(e.code() == ErrorCode::kTrainingDiverged);
    REQUIRE(std::string(e.what()).find("diverging") != std::string::npos);
  }
}

TEST_CASE("empty splits are rejected before training", "[training]") {
  ScriptedModel m({1.0});
  TrainConfig cfg;
  try {
    train(m, {}, {trivial_sample(2.0)}, cfg, "s");
    FAIL("expected kEmptySplit");
  } catch (const MosError& e) {
    REQUIRE(e.code() == ErrorCode::kEmptySplit);
  }
  try {
    train(m, {trivial_sample(2.0)}, {}, cfg, "s");
    FAIL("expected kEmptySplit");
  } catch (const MosError& e) {
    REQUIRE(e.code() == ErrorCode::kEmptySplit);
  }
}

TEST_CASE("training config validation", "[training]") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), MosError);
  cfg = {};
  cfg.patience_epochs = 0;
  REQUIRE_THROWS_AS(cfg.validate(), MosError);
  cfg = {};
  cfg.batch_size = 0;
  REQUIRE_THROWS_AS(cfg.validate(), MosError);
  cfg = {};
  REQUIRE(cfg.optimizer == OptimizerKind::kAdam);
  REQUIRE(cfg.learning_rate == 0.001);
  REQUIRE(cfg.patience_epochs == 20);
  REQUIRE(default_learning_rate(OptimizerKind::kSgd) == 0.0001);
}

TEST_CASE("the returned model carries the best-epoch weights", "[training]") {
  const auto trunk = small_trunk();
  std::vector<Sample> tr, va;
  for (uint64_t i = 0; i < 8; ++i)
    tr.push_back(conv_sample(trunk, 100 + i, 1.5 + 0.4 * static_cast<double>(i % 5)));
  for (uint64_t i = 0; i < 4; ++i)
    va.push_back(conv_sample(trunk, 200 + i, 1.5 + 0.4 * static_cast<double>(i)));

  ConvMaxPoolModel m{ConvMaxPoolConfig{trunk}};
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.patience_epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  const RunRecord rec = train(m, tr, va, cfg, "conv");

  auto cache = m.make_cache();
  const double val = mean_val_loss(m, va, *cache);
  REQUIRE_THAT(val, Catch::Matchers::WithinAbs(rec.best_val_loss, 1e-9));
  REQUIRE(rec.best_val_loss <= rec.val_losses.front() + 1e-12);
}

TEST_CASE("identical seeds reproduce byte-identical predictions",
          "[training]") {
  const testutil::TempDir dir("det");
  const auto trunk = small_trunk();
  std::vector<Sample> tr, va, te;
  for (uint64_t i = 0; i < 6; ++i)
    tr.push_back(conv_sample(trunk, 300 + i, 1.5 + 0.5 * static_cast<double>(i % 4)));
  for (uint64_t i = 0; i < 3; ++i)
    va.push_back(conv_sample(trunk, 400 + i, 2.0 + 0.5 * static_cast<double>(i)));
  for (uint64_t i = 0; i < 3; ++i)
    te.push_back(conv_sample(trunk, 500 + i, 2.5 + 0.5 * static_cast<double>(i)));

  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.patience_epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 21;

  std::vector<std::string> paths;
  for (int round = 0; round < 2; ++round) {
    ConvMaxPoolModel m{ConvMaxPoolConfig{trunk}};
    const RunRecord rec = train(m, tr, va, cfg, "conv");
    const PredictionSet ps = predict_set(m, te, "conv", "21");
    const std::string path = dir.sub("preds_" + std::to_string(round) + ".csv");
    save_predictions(ps, path);
    paths.push_back(path);
    REQUIRE(rec.seed == 21);
  }
  REQUIRE(file_bytes(paths[0]) == file_bytes(paths[1]));

  // A different seed must not silently produce the same bytes.
  ConvMaxPoolModel m{ConvMaxPoolConfig{trunk}};
  cfg.seed = 22;
  train(m, tr, va, cfg, "conv");
  const PredictionSet other = predict_set(m, te, "conv", "22");
  const std::string path3 = dir.sub("preds_2.csv");
  save_predictions(other, path3);
  REQUIRE(file_bytes(paths[0]) != file_bytes(path3));
}

TEST_CASE("autoencoder pretraining reduces reconstruction loss",
          "[training]") {
  const auto trunk = small_trunk();
  Rng rng(44);
  std::vector<Mat> patches;
  for (int i = 0; i < 12; ++i) {
    Mat p(trunk.in_h, trunk.in_w);
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        p(r, j) = rng.gaussian() * 0.5 + std::sin(0.3 * static_cast<double>(j));
    patches.push_back(std::move(p));
  }
  ConvAutoencoder ae(trunk);
  AePretrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.seed = 2;
  const auto result = ae.fit(patches, cfg);
  REQUIRE(result.epoch_losses.size() == 6);
  REQUIRE(result.epoch_losses.back() < result.epoch_losses.front());
  for (double l : result.epoch_losses) REQUIRE(std::isfinite(l));

  // The trained encoder transfers into a matching trunk.
  FramewiseCnn dst(trunk);
  Rng r2(9);
  dst.init(r2);
  transfer_encoder(ae.encoder(), dst);
  std::vector<Parameter*> sp, dp;
  ae.encoder().collect(sp);
  dst.collect(dp);
  for (size_t i = 0; i < sp.size(); ++i)
    REQUIRE(sp[i]->value == dp[i]->value);

  FramewiseCnnConfig other = trunk;
  other.channels = {4, 8, 8};
  FramewiseCnn bad(other);
  try {
    transfer_encoder(ae.encoder(), bad);
    FAIL("expected kShapeMismatch");
  } catch (const MosError& e) {
    REQUIRE(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("the run matrix isolates per-run failures", "[training]") {
  const auto trunk = small_trunk();
  std::vector<Sample> tr, va, te;
  for (uint64_t i = 0; i < 4; ++i)
    tr.push_back(conv_sample(trunk, 600 + i, 2.0 + 0.5 * static_cast<double>(i)));
  va.push_back(conv_sample(trunk, 700, 3.0));
  te.push_back(conv_sample(trunk, 800, 3.5));

  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.batch_size = 2;

  bool on_trained_called = false;
  std::vector<MatrixJob> jobs(2);
  jobs[0].model_id = "good";
  jobs[0].seed = 3;
  jobs[0].make_model = [&] {
    return std::make_unique<ConvMaxPoolModel>(ConvMaxPoolConfig{trunk});
  };
  jobs[0].train_set = &tr;
  jobs[0].val_set = &va;
  jobs[0].test_set = &te;
  jobs[0].cfg = cfg;
  jobs[0].on_trained = [&](Predictor&, const RunRecord& rec) {
    on_trained_called = true;
    REQUIRE(rec.seed == 3);
  };

  jobs[1].model_id = "broken";
  jobs[1].seed = 4;
  jobs[1].make_model = [] {
    return std::make_unique<ScriptedModel>(
        std::vector<double>{std::numeric_limits<double>::quiet_NaN()});
  };
  jobs[1].train_set = &tr;
  jobs[1].val_set = &va;
  jobs[1].test_set = &te;
  jobs[1].cfg = cfg;

  const auto outcomes = run_matrix(jobs, 1);
  REQUIRE(outcomes.size() == 2);
  REQUIRE(outcomes[0].ok);
  REQUIRE(outcomes[0].model_id == "good");
  REQUIRE(outcomes[0].predictions.records.size() == 1);
  REQUIRE(outcomes[0].predictions.run_id == "3");
  REQUIRE(on_trained_called);
  REQUIRE_FALSE(outcomes[1].ok);
  REQUIRE(outcomes[1].error.find("diverged") != std::string::npos);
}

TEST_CASE("run records serialize completely", "[training]") {
  RunRecord r;
  r.model_id = "m";
  r.seed = 5;
  r.train_losses = {1.0, 0.5};
  r.val_losses = {1.1, 0.6};
  r.best_epoch = 2;
  r.best_val_loss = 0.6;
  r.stop_reason = StopReason::kPatience;
  r.epochs_run = 2;
  const nlohmann::json j = to_json(r);
  REQUIRE(j["model_id"] == "m");
  REQUIRE(j["seed"] == 5);
  REQUIRE(j["best_epoch"] == 2);
  REQUIRE(j["stop_reason"] == "PATIENCE");
  REQUIRE(j["val_losses"].size() == 2);
}
