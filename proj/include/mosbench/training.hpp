#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mosbench/common.hpp"
#include "mosbench/evaluation.hpp"
#include "mosbench/models.hpp"
#include "mosbench/optim.hpp"
#include "mosbench/rng.hpp"

namespace mosbench {

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 0.001;
  int patience_epochs = 20;
  int max_epochs = 10000;
  int batch_size = 32;
  uint64_t seed = 1;
  double min_delta = 1e-6;  // improvement = strict decrease by more than this

  void validate() const {
    if (learning_rate <= 0.0)
      throw MosError(ErrorCode::kConfig, "learning_rate must be positive");
    if (patience_epochs < 1)
      throw MosError(ErrorCode::kConfig, "patience_epochs must be >= 1");
    if (max_epochs < 1)
      throw MosError(ErrorCode::kConfig, "max_epochs must be >= 1");
    if (batch_size < 1)
      throw MosError(ErrorCode::kConfig, "batch_size must be >= 1");
  }
};

enum class StopReason { kPatience, kMaxEpochs };

inline const char* to_string(StopReason r) {
  return r == StopReason::kPatience ? "PATIENCE" : "MAX_EPOCHS";
}

// Patience rule on a validation-loss stream. Epochs are 1-based.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta = 1e-6)
      : patience_(patience), min_delta_(min_delta) {}

  struct Decision {
    bool improved = false;
    bool stop = false;
  };

  Decision observe(double val_loss) {
    ++epoch_;
    Decision d;
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
      d.improved = true;
    }
    d.stop = (epoch_ - best_epoch_) >= patience_;
    return d;
  }

  int epoch() const { return epoch_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int epoch_ = 0;
};

struct RunRecord {
  std::string model_id;
  uint64_t seed = 0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  StopReason stop_reason = StopReason::kMaxEpochs;
  int epochs_run = 0;
};

inline nlohmann::json to_json(const RunRecord& r) {
  return {{"schema_version", kSchemaVersion},
          {"model_id", r.model_id},
          {"seed", r.seed},
          {"train_losses", r.train_losses},
          {"val_losses", r.val_losses},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"stop_reason", to_string(r.stop_reason)},
          {"epochs_run", r.epochs_run}};
}

inline double l1_loss(const std::vector<double>& pred,
                      const std::vector<double>& target) {
  check_pair(pred, target, "l1_loss");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

inline double mean_val_loss(const Predictor& model,
                            const std::vector<Sample>& samples,
                            PredictorCache& cache) {
  double s = 0.0;
  for (const auto& smp : samples)
    s += std::abs(model.forward(smp, cache) - smp.mos);
  return s / static_cast<double>(samples.size());
}

// Optimizes the per-sample L1 loss, snapshots the best-validation epoch, and
// restores that snapshot before returning.
inline RunRecord train(Predictor& model, const std::vector<Sample>& train_set,
                       const std::vector<Sample>& val_set,
                       const TrainConfig& cfg,
                       const std::string& model_id = "model") {
  cfg.validate();
  if (train_set.empty())
    throw MosError(ErrorCode::kEmptySplit, "train: empty training set");
  if (val_set.empty())
    throw MosError(ErrorCode::kEmptySplit, "train: empty validation set");

  Rng rng(cfg.seed);
  model.init(rng);
  auto params = model.parameters();
  auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
  EarlyStopping stopper(cfg.patience_epochs, cfg.min_delta);
  auto cache = model.make_cache();

  RunRecord rec;
  rec.model_id = model_id;
  rec.seed = cfg.seed;

  std::vector<Mat> best_snapshot;
  auto snapshot = [&] {
    best_snapshot.clear();
    for (auto* p : params) best_snapshot.push_back(p->value);
  };
  snapshot();

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  rec.stop_reason = StopReason::kMaxEpochs;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double train_sum = 0.0;
    size_t pos = 0;
    while (pos < order.size()) {
      const size_t batch_n =
          std::min<size_t>(cfg.batch_size, order.size() - pos);
      Optimizer::zero_grad(params);
      for (size_t b = 0; b < batch_n; ++b) {
        const Sample& smp = train_set[order[pos + b]];
        const double pred = model.forward(smp, *cache);
        const double diff = pred - smp.mos;
        train_sum += std::abs(diff);
        const double g =
            ((diff > 0.0) - (diff < 0.0)) / static_cast<double>(batch_n);
        model.backward(*cache, g);
      }
      opt->step(params);
      pos += batch_n;
    }
    const double train_loss = train_sum / static_cast<double>(train_set.size());
    const double val_loss = mean_val_loss(model, val_set, *cache);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw MosError(ErrorCode::kTrainingDiverged,
                     model_id + ": training diverged at epoch " +
                         std::to_string(epoch) + " (non-finite loss)");
    rec.train_losses.push_back(train_loss);
    rec.val_losses.push_back(val_loss);
    rec.epochs_run = epoch;

    const auto d = stopper.observe(val_loss);
    if (d.improved) snapshot();
    if (d.stop) {
      rec.stop_reason = StopReason::kPatience;
      break;
    }
  }
  rec.best_epoch = stopper.best_epoch();
  rec.best_val_loss = stopper.best();
  for (size_t i = 0; i < params.size(); ++i)
    params[i]->value = best_snapshot[i];
  return rec;
}

inline PredictionSet predict_set(const Predictor& model,
                                 const std::vector<Sample>& samples,
                                 const std::string& model_id,
                                 const std::string& run_id) {
  PredictionSet ps;
  ps.model_id = model_id;
  ps.run_id = run_id;
  auto cache = model.make_cache();
  for (const auto& s : samples)
    ps.records.emplace_back(s.utterance_id, model.forward(s, *cache));
  return ps;
}

// ---------------------------------------------------------------------------
// Autoencoder pretraining of the convolutional trunk

struct AePretrainConfig {
  int epochs = 10;
  double learning_rate = 0.001;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int batch_size = 32;
  uint64_t seed = 1;
};

// Mirrored decoder: walks the encoder blocks in reverse, undoing each pool
// with a nearest-neighbour resize; the last convolution is linear.
class ConvAutoencoder {
 public:
  explicit ConvAutoencoder(FramewiseCnnConfig cfg) : encoder_(cfg) {
    int h = cfg.in_h, w = cfg.in_w;
    std::vector<std::pair<int, int>> pre_pool(cfg.channels.size(), {0, 0});
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      if (encoder_.pooled[i]) {
        pre_pool[i] = {h, w};
        h /= 2;
        w /= 2;
      }
    }
    for (size_t ri = cfg.channels.size(); ri-- > 0;) {
      DecoderStage st;
      if (encoder_.pooled[ri]) {
        st.resize = true;
        st.out_h = pre_pool[ri].first;
        st.out_w = pre_pool[ri].second;
      }
      const int in_ch = cfg.channels[ri];
      const int out_ch = ri > 0 ? cfg.channels[ri - 1] : 1;
      st.relu = ri > 0;
      stages_.push_back(std::move(st));
      deconvs_.emplace_back("decoder.conv" + std::to_string(ri), in_ch, out_ch);
    }
  }

  void init(Rng& rng) {
    encoder_.init(rng);
    for (auto& c : deconvs_) c.init(rng);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder_.collect(out);
    for (auto& c : deconvs_) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
    return out;
  }

  struct Cache {
    FramewiseCnn::Cache enc;
    std::vector<NearestResize::Cache> resize;
    std::vector<Conv2d::Cache> conv;
    std::vector<ReluT::Cache> relu;
  };

  Tensor3 reconstruct(const Mat& patch, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.resize.resize(stages_.size());
    c.conv.resize(stages_.size());
    c.relu.resize(stages_.size());
    Tensor3 x = encoder_.forward(tensor_from_patch(patch), &c.enc);
    for (size_t i = 0; i < stages_.size(); ++i) {
      if (stages_[i].resize)
        x = NearestResize::forward(x, stages_[i].out_h, stages_[i].out_w,
                                   &c.resize[i]);
      x = deconvs_[i].forward(x, &c.conv[i]);
      if (stages_[i].relu) x = ReluT::forward(x, &c.relu[i]);
    }
    return x;
  }

  // Mean squared reconstruction error; backward accumulates all gradients.
  double loss_and_backward(const Mat& patch, double grad_scale) {
    Cache c;
    Tensor3 recon = reconstruct(patch, &c);
    const Tensor3 target = tensor_from_patch(patch);
    const Eigen::Index n = recon.data.size();
    Mat diff = recon.data - target.data;
    const double loss = diff.squaredNorm() / static_cast<double>(n);
    Tensor3 g(recon.c, recon.h, recon.w);
    g.data = diff * (2.0 * grad_scale / static_cast<double>(n));
    for (size_t i = stages_.size(); i-- > 0;) {
      if (stages_[i].relu) g = ReluT::backward(c.relu[i], g);
      g = deconvs_[i].backward(c.conv[i], g);
      if (stages_[i].resize) g = NearestResize::backward(c.resize[i], g);
    }
    encoder_.backward(c.enc, g);
    return loss;
  }

  struct Result {
    std::vector<double> epoch_losses;
  };

  Result fit(const std::vector<Mat>& patches, const AePretrainConfig& cfg) {
    if (patches.empty())
      throw MosError(ErrorCode::kEmptySplit,
                     "autoencoder: no patches to train on");
    Rng rng(cfg.seed);
    init(rng);
    auto params = parameters();
    auto opt = make_optimizer(cfg.optimizer, cfg.learning_rate);
    std::vector<size_t> order(patches.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Result res;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      rng.shuffle(order);
      double sum = 0.0;
      size_t pos = 0;
      while (pos < order.size()) {
        const size_t batch_n =
            std::min<size_t>(cfg.batch_size, order.size() - pos);
        Optimizer::zero_grad(params);
        for (size_t b = 0; b < batch_n; ++b)
          sum += loss_and_backward(patches[order[pos + b]],
                                   1.0 / static_cast<double>(batch_n));
        opt->step(params);
        pos += batch_n;
      }
      const double loss = sum / static_cast<double>(patches.size());
      if (!std::isfinite(loss))
        throw MosError(ErrorCode::kTrainingDiverged,
                       "autoencoder: diverged at epoch " +
                           std::to_string(epoch) + " (non-finite loss)");
      res.epoch_losses.push_back(loss);
    }
    return res;
  }

  FramewiseCnn& encoder() { return encoder_; }

 private:
  struct DecoderStage {
    bool resize = false;
    int out_h = 0, out_w = 0;
    bool relu = true;
  };
  FramewiseCnn encoder_;
  std::vector<DecoderStage> stages_;
  std::vector<Conv2d> deconvs_;
};

// Copies trained encoder weights into a compatible trunk.
inline void transfer_encoder(FramewiseCnn& src, FramewiseCnn& dst) {
  std::vector<Parameter*> sp, dp;
  src.collect(sp);
  dst.collect(dp);
  if (sp.size() != dp.size())
    throw MosError(ErrorCode::kShapeMismatch,
                   "encoder transfer: trunk depth mismatch");
  for (size_t i = 0; i < sp.size(); ++i) {
    if (sp[i]->value.rows() != dp[i]->value.rows() ||
        sp[i]->value.cols() != dp[i]->value.cols())
      throw MosError(ErrorCode::kShapeMismatch,
                     "encoder transfer: tensor '" + dp[i]->name + "' is " +
                         std::to_string(dp[i]->value.rows()) + "x" +
                         std::to_string(dp[i]->value.cols()) +
                         ", source has " +
                         std::to_string(sp[i]->value.rows()) + "x" +
                         std::to_string(sp[i]->value.cols()));
    dp[i]->value = sp[i]->value;
  }
}

// ---------------------------------------------------------------------------
// Training matrix

struct MatrixJob {
  std::string model_id;
  uint64_t seed = 0;
  std::function<std::unique_ptr<Predictor>()> make_model;
  const std::vector<Sample>* train_set = nullptr;
  const std::vector<Sample>* val_set = nullptr;
  const std::vector<Sample>* test_set = nullptr;
  TrainConfig cfg;
  // Called with the trained model before prediction (checkpointing etc).
  std::function<void(Predictor&, const RunRecord&)> on_trained;
};

struct MatrixOutcome {
  std::string model_id;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunRecord record;
  PredictionSet predictions;
};

// Runs every (model, seed) job, isolating failures; jobs are independent and
// may execute on a small worker pool.
inline std::vector<MatrixOutcome> run_matrix(const std::vector<MatrixJob>& jobs,
                                             int workers = 1) {
  std::vector<MatrixOutcome> out(jobs.size());
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const MatrixJob& job = jobs[i];
      MatrixOutcome& res = out[i];
      res.model_id = job.model_id;
      res.seed = job.seed;
      try {
        auto model = job.make_model();
        TrainConfig cfg = job.cfg;
        cfg.seed = job.seed;
        res.record = train(*model, *job.train_set, *job.val_set, cfg,
                           job.model_id);
        if (job.on_trained) job.on_trained(*model, res.record);
        res.predictions = predict_set(*model, *job.test_set, job.model_id,
                                      std::to_string(job.seed));
        res.ok = true;
      } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

}  // namespace mosbench
