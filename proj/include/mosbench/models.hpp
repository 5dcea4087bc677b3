#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosbench/common.hpp"
#include "mosbench/mel.hpp"
#include "mosbench/nn.hpp"

namespace mosbench {

// One training or evaluation example with whichever feature views the
// consuming model asked for.
struct Sample {
  std::string utterance_id;
  double mos = 0.0;
  MelPatchSequence patches;
  Mat ssl_frames;             // rows = frames, cols = embed dim
  std::vector<double> audio;  // 16 kHz mono
};

struct DataNeeds {
  bool patches = false;
  bool ssl_frames = false;
  bool audio = false;
};

struct ParamGroup {
  std::string name;
  bool trainable = true;
  std::vector<Parameter*> params;
};

// ---------------------------------------------------------------------------
// Convolutional trunk

struct FramewiseCnnConfig {
  int in_h = 48;
  int in_w = 15;
  std::vector<int> channels = {16, 16, 32, 32, 64, 64};
  std::vector<int> pool_after = {1, 3, 5};  // block indices, 0-based

  void validate() const {
    if (channels.empty())
      throw MosError(ErrorCode::kConfig, "cnn trunk: empty channel plan");
    if (in_h < 1 || in_w < 1)
      throw MosError(ErrorCode::kConfig, "cnn trunk: invalid input shape");
    int h = in_h, w = in_w;
    for (int idx : pool_after) {
      if (idx < 0 || idx >= static_cast<int>(channels.size()))
        throw MosError(ErrorCode::kConfig,
                       "cnn trunk: pool index " + std::to_string(idx) +
                           " out of range");
      h /= 2;
      w /= 2;
      if (h < 1 || w < 1)
        throw MosError(ErrorCode::kConfig,
                       "cnn trunk: pooling collapses the spatial extent");
    }
  }
  int out_h() const {
    int h = in_h;
    for (size_t i = 0; i < pool_after.size(); ++i) h /= 2;
    return h;
  }
  int out_w() const {
    int w = in_w;
    for (size_t i = 0; i < pool_after.size(); ++i) w /= 2;
    return w;
  }
  int out_c() const { return channels.back(); }
  int flat_dim() const { return out_c() * out_h() * out_w(); }

  std::string canonical_string() const {
    std::ostringstream os;
    os << in_h << "x" << in_w << ":";
    for (size_t i = 0; i < channels.size(); ++i)
      os << (i ? "," : "") << channels[i];
    os << ":p";
    for (size_t i = 0; i < pool_after.size(); ++i)
      os << (i ? "," : "") << pool_after[i];
    return os.str();
  }
};

// Stack of 3x3 conv + ReLU blocks with 2x2 max pools at configured depths.
struct FramewiseCnn {
  FramewiseCnnConfig cfg;
  std::vector<Conv2d> convs;
  std::vector<bool> pooled;

  explicit FramewiseCnn(FramewiseCnnConfig c) : cfg(std::move(c)) {
    cfg.validate();
    int in_ch = 1;
    for (size_t i = 0; i < cfg.channels.size(); ++i) {
      convs.emplace_back("cnn_trunk.conv" + std::to_string(i), in_ch,
                         cfg.channels[i]);
      in_ch = cfg.channels[i];
      pooled.push_back(std::find(cfg.pool_after.begin(), cfg.pool_after.end(),
                                 static_cast<int>(i)) != cfg.pool_after.end());
    }
  }

  void init(Rng& rng) {
    for (auto& c : convs) c.init(rng);
  }
  void collect(std::vector<Parameter*>& out) {
    for (auto& c : convs) {
      out.push_back(&c.w);
      out.push_back(&c.b);
    }
  }

  struct Cache {
    std::vector<Conv2d::Cache> conv;
    std::vector<ReluT::Cache> relu;
    std::vector<MaxPool2d::Cache> pool;
  };

  Tensor3 forward(const Tensor3& patch, Cache* cache) const {
    check_tensor(patch, 1, cfg.in_h, cfg.in_w, "cnn trunk input");
    if (cache) {
      cache->conv.resize(convs.size());
      cache->relu.resize(convs.size());
      cache->pool.resize(convs.size());
    }
    Tensor3 x = patch;
    for (size_t i = 0; i < convs.size(); ++i) {
      x = convs[i].forward(x, cache ? &cache->conv[i] : nullptr);
      x = ReluT::forward(x, cache ? &cache->relu[i] : nullptr);
      if (pooled[i]) x = MaxPool2d::forward(x, cache ? &cache->pool[i] : nullptr);
    }
    return x;
  }

  Tensor3 backward(const Cache& cache, Tensor3 g) {
    for (size_t ii = convs.size(); ii-- > 0;) {
      if (pooled[ii]) g = MaxPool2d::backward(cache.pool[ii], g);
      g = ReluT::backward(cache.relu[ii], g);
      g = convs[ii].backward(cache.conv[ii], g);
    }
    return g;
  }
};

// Trunk tensor snapshot, reapplied after a reinitialization so transferred
// weights survive a fresh init.
inline std::vector<Mat> trunk_values(FramewiseCnn& t) {
  std::vector<Parameter*> ps;
  t.collect(ps);
  std::vector<Mat> out;
  out.reserve(ps.size());
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

inline void apply_trunk_values(const std::vector<Mat>& vals, FramewiseCnn& t) {
  std::vector<Parameter*> ps;
  t.collect(ps);
  if (ps.size() != vals.size())
    throw MosError(ErrorCode::kShapeMismatch,
                   "trunk transfer: depth mismatch (" +
                       std::to_string(vals.size()) + " tensors vs " +
                       std::to_string(ps.size()) + ")");
  for (size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->value.rows() != vals[i].rows() ||
        ps[i]->value.cols() != vals[i].cols())
      throw MosError(ErrorCode::kShapeMismatch,
                     "trunk transfer: tensor '" + ps[i]->name + "' is " +
                         std::to_string(vals[i].rows()) + "x" +
                         std::to_string(vals[i].cols()) + ", trunk wants " +
                         std::to_string(ps[i]->value.rows()) + "x" +
                         std::to_string(ps[i]->value.cols()));
    ps[i]->value = vals[i];
  }
}

// Mel patch (n_mels x frames) as a 1-channel feature map.
inline Tensor3 tensor_from_patch(const Mat& patch) {
  Tensor3 t(1, static_cast<int>(patch.rows()), static_cast<int>(patch.cols()));
  for (int y = 0; y < t.h; ++y)
    t.data.row(0).segment(static_cast<Eigen::Index>(y) * t.w, t.w) =
        patch.row(y);
  return t;
}

inline Vec flatten(const Tensor3& t) {
  const int hw = t.h * t.w;
  Vec f(static_cast<Eigen::Index>(t.c) * hw);
  for (int c = 0; c < t.c; ++c)
    f.segment(static_cast<Eigen::Index>(c) * hw, hw) = t.data.row(c);
  return f;
}

inline Tensor3 unflatten(const Vec& f, int c, int h, int w) {
  if (f.size() != static_cast<Eigen::Index>(c) * h * w)
    throw MosError(ErrorCode::kShapeMismatch,
                   "unflatten: vector of " + std::to_string(f.size()) +
                       " does not fill " + std::to_string(c) + "x" +
                       std::to_string(h) + "x" + std::to_string(w));
  Tensor3 t(c, h, w);
  const int hw = h * w;
  for (int ch = 0; ch < c; ++ch)
    t.data.row(ch) = f.segment(static_cast<Eigen::Index>(ch) * hw, hw);
  return t;
}

// ---------------------------------------------------------------------------
// Predictor contract

struct PredictorCache {
  virtual ~PredictorCache() = default;
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string architecture() const = 0;
  virtual std::string config_string() const = 0;
  virtual DataNeeds needs() const = 0;
  // Randomizes the parameters trained from scratch; pretrained backbone
  // weights keep their fixed initialization.
  virtual void init(Rng& rng) = 0;
  virtual std::unique_ptr<PredictorCache> make_cache() const = 0;
  virtual double forward(const Sample& s, PredictorCache& c) const = 0;
  // Accumulates parameter gradients (including frozen groups; the optimizer
  // enforces freezing).
  virtual void backward(PredictorCache& c, double gpred) = 0;
  virtual std::vector<ParamGroup> param_groups() = 0;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& g : param_groups())
      for (auto* p : g.params) out.push_back(p);
    return out;
  }
  double predict(const Sample& s) const {
    auto c = make_cache();
    return forward(s, *c);
  }
  uint64_t config_hash() const { return fnv1a(config_string()); }
};

struct GroupCount {
  std::string name;
  bool trainable = true;
  size_t count = 0;
};

struct ParameterCounts {
  size_t total = 0;
  size_t trainable = 0;
  size_t frozen = 0;
  std::vector<GroupCount> groups;
};

inline ParameterCounts count_parameters(Predictor& m) {
  ParameterCounts pc;
  for (auto& g : m.param_groups()) {
    GroupCount gc{g.name, g.trainable, 0};
    for (auto* p : g.params) gc.count += p->count();
    pc.total += gc.count;
    (g.trainable ? pc.trainable : pc.frozen) += gc.count;
    pc.groups.push_back(std::move(gc));
  }
  return pc;
}

inline void set_group_trainable(std::vector<Parameter*> params, bool flag) {
  for (auto* p : params) p->trainable = flag;
}

// ---------------------------------------------------------------------------
// Architectures

struct NisqaConfig {
  FramewiseCnnConfig trunk;
  int att_dim = 64;
  int pool_hidden = 128;
  std::string canonical_string() const {
    return "nisqa|trunk=" + trunk.canonical_string() + "|att=" +
           std::to_string(att_dim) + "|pool=" + std::to_string(pool_hidden);
  }
};

// Per-patch CNN features, projected and passed through self-attention over
// the patch sequence, then attention-pooled to one score.
class NisqaModel : public Predictor {
 public:
  explicit NisqaModel(NisqaConfig cfg)
      : cfg_(cfg),
        trunk_(cfg.trunk),
        proj_("head.proj", cfg.trunk.flat_dim(), cfg.att_dim),
        attn_("head.attn", cfg.att_dim),
        pool_("head.pool", cfg.att_dim, cfg.pool_hidden),
        fc_("head.fc", cfg.att_dim, 1) {}

  std::string architecture() const override { return "nisqa"; }
  std::string config_string() const override { return cfg_.canonical_string(); }
  DataNeeds needs() const override { return {true, false, false}; }

  void init(Rng& rng) override {
    trunk_.init(rng);
    proj_.init(rng);
    attn_.init(rng);
    pool_.init(rng);
    fc_.init(rng);
    // The attention stack feeds the scoring layer activations large enough
    // to pin the range head at a scale end, where its gradient vanishes.
    // Starting the final affine at zero opens training at the midpoint.
    fc_.w.value.setZero();
    fc_.b.value.setZero();
    if (!adopted_trunk_.empty()) apply_trunk_values(adopted_trunk_, trunk_);
  }

  // Installs transferred trunk weights now and after every init(), so the
  // training loop's reinitialization cannot discard them.
  void adopt_pretrained_trunk(FramewiseCnn& src) {
    adopted_trunk_ = trunk_values(src);
    apply_trunk_values(adopted_trunk_, trunk_);
  }

  struct Cache : PredictorCache {
    std::vector<FramewiseCnn::Cache> trunk;
    Linear::SeqCache proj;
    SelfAttention::Cache attn;
    AttentionPool::Cache pool;
    Linear::Cache fc;
    RangeHead::Cache range;
    int n = 0;
  };

  std::unique_ptr<PredictorCache> make_cache() const override {
    return std::make_unique<Cache>();
  }

  double forward(const Sample& s, PredictorCache& pc) const override {
    auto& c = static_cast<Cache&>(pc);
    const auto& patches = s.patches.patches;
    if (patches.empty())
      throw ValidationError("nisqa: empty patch sequence for utterance '" +
                            s.utterance_id + "'");
    c.n = static_cast<int>(patches.size());
    c.trunk.resize(patches.size());
    Mat x(static_cast<Eigen::Index>(patches.size()), cfg_.trunk.flat_dim());
    for (size_t i = 0; i < patches.size(); ++i) {
      const Tensor3 in = tensor_from_patch(patches[i]);
      x.row(static_cast<Eigen::Index>(i)) =
          flatten(trunk_.forward(in, &c.trunk[i])).transpose();
    }
    Mat h = proj_.forward_seq(x, &c.proj);
    h += positional_encoding(h.rows(), h.cols());
    h = attn_.forward(h, &c.attn);
    Vec pooled = pool_.forward(h, &c.pool);
    const double z = fc_.forward(pooled, &c.fc)(0);
    return RangeHead::forward(z, &c.range);
  }

  void backward(PredictorCache& pc, double gpred) override {
    auto& c = static_cast<Cache&>(pc);
    const double gz = RangeHead::backward(c.range, gpred);
    Vec gpooled = fc_.backward(c.fc, Vec::Constant(1, gz));
    Mat gh = pool_.backward(c.pool, gpooled);
    gh = attn_.backward(c.attn, gh);
    Mat gx = proj_.backward_seq(c.proj, gh);
    for (int i = 0; i < c.n; ++i) {
      Tensor3 g = unflatten(gx.row(i).transpose(), cfg_.trunk.out_c(),
                            cfg_.trunk.out_h(), cfg_.trunk.out_w());
      trunk_.backward(c.trunk[static_cast<size_t>(i)], g);
    }
  }

  std::vector<ParamGroup> param_groups() override {
    ParamGroup trunk{"cnn_trunk", true, {}};
    trunk_.collect(trunk.params);
    ParamGroup head{"head", true, {}};
    head.params = {&proj_.w, &proj_.b, &attn_.q.w, &attn_.q.b, &attn_.k.w,
                   &attn_.k.b, &attn_.v.w, &attn_.v.b, &attn_.o.w, &attn_.o.b,
                   &pool_.w,  &pool_.b,   &pool_.v,   &fc_.w,     &fc_.b};
    return {trunk, head};
  }

  // Pooling weights of the last forward through the given cache.
  static const Vec& attention_weights(const PredictorCache& pc) {
    return static_cast<const Cache&>(pc).pool.alpha;
  }

 private:
  NisqaConfig cfg_;
  FramewiseCnn trunk_;
  Linear proj_;
  SelfAttention attn_;
  AttentionPool pool_;
  Linear fc_;
  std::vector<Mat> adopted_trunk_;
};

struct ConvMaxPoolConfig {
  FramewiseCnnConfig trunk;
  std::string canonical_string() const {
    return "conv_max_pool|trunk=" + trunk.canonical_string();
  }
};

// GAP per patch to one vector per patch, coordinatewise max over the patch
// sequence, affine score, range head. Patch order cannot matter.
class ConvMaxPoolModel : public Predictor {
 public:
  explicit ConvMaxPoolModel(ConvMaxPoolConfig cfg)
      : cfg_(cfg), trunk_(cfg.trunk), fc_("head.fc", cfg.trunk.out_c(), 1) {}

  std::string architecture() const override { return "conv_max_pool"; }
  std::string config_string() const override { return cfg_.canonical_string(); }
  DataNeeds needs() const override { return {true, false, false}; }

  void init(Rng& rng) override {
    trunk_.init(rng);
    fc_.init(rng);
    if (!adopted_trunk_.empty()) apply_trunk_values(adopted_trunk_, trunk_);
  }

  // Installs transferred trunk weights now and after every init(), so the
  // training loop's reinitialization cannot discard them.
  void adopt_pretrained_trunk(FramewiseCnn& src) {
    adopted_trunk_ = trunk_values(src);
    apply_trunk_values(adopted_trunk_, trunk_);
  }

  struct Cache : PredictorCache {
    std::vector<FramewiseCnn::Cache> trunk;
    std::vector<Gap::Cache> gap;
    TemporalMaxPool::Cache maxpool;
    Linear::Cache fc;
    RangeHead::Cache range;
    Vec embedding;
  };

  std::unique_ptr<PredictorCache> make_cache() const override {
    return std::make_unique<Cache>();
  }

  double forward(const Sample& s, PredictorCache& pc) const override {
    auto& c = static_cast<Cache&>(pc);
    const auto& patches = s.patches.patches;
    if (patches.empty())
      throw ValidationError(
          "conv_max_pool: empty patch sequence for utterance '" +
          s.utterance_id + "'");
    c.trunk.resize(patches.size());
    c.gap.resize(patches.size());
    std::vector<Vec> seq(patches.size());
    for (size_t i = 0; i < patches.size(); ++i) {
      const Tensor3 in = tensor_from_patch(patches[i]);
      seq[i] = Gap::forward(trunk_.forward(in, &c.trunk[i]), &c.gap[i]);
    }
    c.embedding = TemporalMaxPool::forward(seq, &c.maxpool);
    const double z = fc_.forward(c.embedding, &c.fc)(0);
    return RangeHead::forward(z, &c.range);
  }

  void backward(PredictorCache& pc, double gpred) override {
    auto& c = static_cast<Cache&>(pc);
    const double gz = RangeHead::backward(c.range, gpred);
    Vec gemb = fc_.backward(c.fc, Vec::Constant(1, gz));
    std::vector<Vec> gseq = TemporalMaxPool::backward(c.maxpool, gemb);
    for (size_t i = 0; i < gseq.size(); ++i) {
      Tensor3 g = Gap::backward(c.gap[i], gseq[i]);
      trunk_.backward(c.trunk[i], g);
    }
  }

  std::vector<ParamGroup> param_groups() override {
    ParamGroup trunk{"cnn_trunk", true, {}};
    trunk_.collect(trunk.params);
    ParamGroup head{"head", true, {}};
    head.params = {&fc_.w, &fc_.b};
    return {trunk, head};
  }

  // Prediction plus the order-invariant utterance embedding.
  std::pair<double, Vec> predict_with_embedding(const Sample& s) const {
    Cache c;
    const double pred = forward(s, c);
    return {pred, c.embedding};
  }

  FramewiseCnn& trunk() { return trunk_; }

 private:
  ConvMaxPoolConfig cfg_;
  FramewiseCnn trunk_;
  Linear fc_;
  std::vector<Mat> adopted_trunk_;
};

// ---------------------------------------------------------------------------
// SSL backbone

struct BackboneConfig {
  enum class Provider { kExternalSsl, kToy };
  Provider provider = Provider::kToy;
  int embed_dim = 768;
  int stride = 320;  // samples per frame at 16 kHz
  bool trainable = false;
  std::string provider_name;  // registry key for kExternalSsl

  std::string canonical_string() const {
    std::ostringstream os;
    os << (provider == Provider::kToy ? "toy" : "ext:" + provider_name) << ":"
       << embed_dim << ":" << stride << ":" << (trainable ? "ft" : "frozen");
    return os.str();
  }
};

// Deterministic stand-in for a pretrained speech encoder: a fixed random
// projection of non-overlapping sample chunks through tanh.
struct ToyBackbone {
  BackboneConfig cfg;
  Parameter w;  // embed_dim x stride

  explicit ToyBackbone(BackboneConfig c) : cfg(c) {
    w.name = "w2v_backbone.w";
    w.resize(cfg.embed_dim, cfg.stride);
    Rng rng(0x70b4cc0de);  // fixed: pretrained weights, never re-randomized
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.stride));
    for (Eigen::Index j = 0; j < w.value.cols(); ++j)
      for (Eigen::Index i = 0; i < w.value.rows(); ++i)
        w.value(i, j) = rng.gaussian() * scale;
    w.trainable = cfg.trainable;
  }

  int frame_count(size_t samples) const {
    return static_cast<int>(samples / static_cast<size_t>(cfg.stride));
  }

  struct Cache {
    Mat chunks;  // stride x n
    Mat tanh;    // embed x n
  };

  // Returns n x embed_dim, rows in time order.
  Mat forward(const std::vector<double>& audio, Cache* cache) const {
    const int n = frame_count(audio.size());
    if (n < 1)
      throw MosError(ErrorCode::kAudioTooShort,
                     "backbone: audio shorter than one stride (" +
                         std::to_string(cfg.stride) + " samples)");
    Mat chunks(cfg.stride, n);
    for (int t = 0; t < n; ++t)
      for (int i = 0; i < cfg.stride; ++i)
        chunks(i, t) = audio[static_cast<size_t>(t) * cfg.stride + i];
    Mat th = (w.value * chunks).array().tanh().matrix();
    if (cache) {
      cache->chunks = std::move(chunks);
      cache->tanh = th;
    }
    return th.transpose();
  }

  void backward(const Cache& cache, const Mat& gframes) {
    Mat gz = gframes.transpose().cwiseProduct(
        (1.0 - cache.tanh.array().square()).matrix());
    w.grad.noalias() += gz * cache.chunks.transpose();
  }
};

using SslProviderFn =
    std::function<Mat(const std::string& utterance_id,
                      const std::vector<double>& audio16k)>;

inline std::map<std::string, SslProviderFn>& ssl_provider_registry() {
  static std::map<std::string, SslProviderFn> registry;
  return registry;
}

inline void register_ssl_provider(const std::string& name, SslProviderFn fn) {
  ssl_provider_registry()[name] = std::move(fn);
}

// Frame embeddings for one utterance, from the toy backbone or a registered
// external provider. Never falls back silently.
inline Mat backbone_embed(const std::vector<double>& audio,
                          const BackboneConfig& cfg,
                          const std::string& utterance_id,
                          const ToyBackbone* toy = nullptr) {
  if (cfg.provider == BackboneConfig::Provider::kToy) {
    if (toy) return toy->forward(audio, nullptr);
    ToyBackbone local(cfg);
    return local.forward(audio, nullptr);
  }
  auto& reg = ssl_provider_registry();
  auto it = reg.find(cfg.provider_name);
  if (it == reg.end())
    throw MosError(
        ErrorCode::kProviderUnavailable,
        "no SSL embedding provider named '" + cfg.provider_name +
            "' is registered; register one with register_ssl_provider(\"" +
            cfg.provider_name +
            "\", fn) before running, or set the backbone provider to \"toy\"");
  Mat frames = it->second(utterance_id, audio);
  if (frames.cols() != cfg.embed_dim)
    throw MosError(ErrorCode::kShapeMismatch,
                   "provider '" + cfg.provider_name + "' returned " +
                       std::to_string(frames.cols()) +
                       "-dim frames, expected " +
                       std::to_string(cfg.embed_dim));
  return frames;
}

// Time-mean of backbone frames, one affine layer, range head.
class W2vMosModel : public Predictor {
 public:
  explicit W2vMosModel(BackboneConfig cfg)
      : cfg_(cfg), head_("w2v_head.fc", cfg.embed_dim, 1) {
    if (cfg_.provider == BackboneConfig::Provider::kExternalSsl) {
      if (cfg_.trainable)
        throw MosError(ErrorCode::kConfig,
                       "an external SSL provider is opaque to the optimizer; "
                       "the trainable-backbone switch applies to the toy "
                       "backbone only");
    } else {
      toy_.emplace(cfg_);
    }
  }

  std::string architecture() const override { return "w2v_mos"; }
  std::string config_string() const override {
    return "w2v_mos|backbone=" + cfg_.canonical_string();
  }
  DataNeeds needs() const override {
    DataNeeds n;
    if (cfg_.provider == BackboneConfig::Provider::kToy && cfg_.trainable)
      n.audio = true;
    else
      n.ssl_frames = true;
    return n;
  }

  void init(Rng& rng) override { head_.init(rng); }

  const Linear& head() const { return head_; }

  struct Cache : PredictorCache {
    ToyBackbone::Cache backbone;
    bool backbone_live = false;
    int n_frames = 0;
    Linear::Cache fc;
    RangeHead::Cache range;
    Vec pooled;
  };

  std::unique_ptr<PredictorCache> make_cache() const override {
    return std::make_unique<Cache>();
  }

  double forward(const Sample& s, PredictorCache& pc) const override {
    auto& c = static_cast<Cache&>(pc);
    Mat frames;
    if (cfg_.provider == BackboneConfig::Provider::kToy && cfg_.trainable) {
      frames = toy_->forward(s.audio, &c.backbone);
      c.backbone_live = true;
    } else {
      frames = s.ssl_frames;
      c.backbone_live = false;
      if (frames.rows() == 0)
        throw ValidationError("w2v_mos: no backbone frames for utterance '" +
                              s.utterance_id + "'");
      if (frames.cols() != cfg_.embed_dim)
        throw MosError(ErrorCode::kShapeMismatch,
                       "w2v_mos: got " + std::to_string(frames.cols()) +
                           "-dim frames, expected " +
                           std::to_string(cfg_.embed_dim));
    }
    c.n_frames = static_cast<int>(frames.rows());
    c.pooled = frames.colwise().mean().transpose();
    const double z = head_.forward(c.pooled, &c.fc)(0);
    return RangeHead::forward(z, &c.range);
  }

  void backward(PredictorCache& pc, double gpred) override {
    auto& c = static_cast<Cache&>(pc);
    const double gz = RangeHead::backward(c.range, gpred);
    Vec gpooled = head_.backward(c.fc, Vec::Constant(1, gz));
    if (c.backbone_live && toy_) {
      Mat gframes = Mat::Zero(c.n_frames, cfg_.embed_dim);
      gframes.rowwise() =
          (gpooled / static_cast<double>(c.n_frames)).transpose();
      toy_->backward(c.backbone, gframes);
    }
  }

  std::vector<ParamGroup> param_groups() override {
    std::vector<ParamGroup> groups;
    if (toy_) {
      ParamGroup bb{"w2v_backbone", cfg_.trainable, {&toy_->w}};
      groups.push_back(bb);
    }
    ParamGroup head{"w2v_head", true, {&head_.w, &head_.b}};
    groups.push_back(head);
    return groups;
  }

  const BackboneConfig& backbone_config() const { return cfg_; }
  const ToyBackbone* toy() const { return toy_ ? &*toy_ : nullptr; }
  Linear& head() { return head_; }

 private:
  BackboneConfig cfg_;
  std::optional<ToyBackbone> toy_;
  Linear head_;
};

// ---------------------------------------------------------------------------
// Fusion

enum class FusionVariant { kFusion1, kFusion2 };

struct FusionConfig {
  FusionVariant variant = FusionVariant::kFusion1;
  FramewiseCnnConfig trunk;
  BackboneConfig backbone;  // trainable flag ignored: always frozen here

  int fusion_input_dim() const {
    return variant == FusionVariant::kFusion1
               ? trunk.channels.back() + 1
               : trunk.channels.back() + 1 + backbone.embed_dim;
  }
  std::string canonical_string() const {
    return std::string(variant == FusionVariant::kFusion1 ? "fusion1"
                                                          : "fusion2") +
           "|trunk=" + trunk.canonical_string() +
           "|backbone=" + backbone.canonical_string();
  }
};

// Joint model: order-invariant CNN embedding concatenated with the frozen
// w2v score (and, for the wide variant, the frozen pooled embedding), then
// one affine layer and the range head. Only the CNN trunk and the fusion
// layer train.
class FusionModel : public Predictor {
 public:
  explicit FusionModel(FusionConfig cfg)
      : cfg_(cfg),
        trunk_(cfg.trunk),
        w2v_head_("w2v_head.fc", cfg.backbone.embed_dim, 1),
        fc_("fusion_fc.fc", cfg.fusion_input_dim(), 1) {
    BackboneConfig bc = cfg_.backbone;
    bc.trainable = false;
    cfg_.backbone = bc;
    if (bc.provider == BackboneConfig::Provider::kToy) toy_.emplace(bc);
    set_group_trainable({&w2v_head_.w, &w2v_head_.b}, false);
  }

  std::string architecture() const override {
    return cfg_.variant == FusionVariant::kFusion1 ? "fusion1" : "fusion2";
  }
  std::string config_string() const override { return cfg_.canonical_string(); }
  DataNeeds needs() const override { return {true, true, false}; }

  void init(Rng& rng) override {
    trunk_.init(rng);
    fc_.init(rng);
    if (adopted_w2v_w_) {
      w2v_head_.w.value = *adopted_w2v_w_;
      w2v_head_.b.value = *adopted_w2v_b_;
    } else {
      // The frozen w2v head stands in for a separately trained model; give
      // it a deterministic pretrained-style initialization.
      Rng fixed(0x57a71cfe);
      kaiming_uniform(w2v_head_.w.value, cfg_.backbone.embed_dim, fixed);
      w2v_head_.b.value.setZero();
    }
  }

  // Copies a trained w2v scoring head so the frozen path predicts sensibly.
  // Applied now and after every init(), so the training loop's
  // reinitialization cannot discard it.
  void adopt_w2v_head(const Linear& head) {
    if (head.w.value.rows() != w2v_head_.w.value.rows() ||
        head.w.value.cols() != w2v_head_.w.value.cols())
      throw MosError(ErrorCode::kShapeMismatch,
                     "fusion: w2v head shape mismatch on transfer");
    adopted_w2v_w_ = head.w.value;
    adopted_w2v_b_ = head.b.value;
    w2v_head_.w.value = head.w.value;
    w2v_head_.b.value = head.b.value;
  }

  struct Cache : PredictorCache {
    std::vector<FramewiseCnn::Cache> trunk;
    std::vector<Gap::Cache> gap;
    TemporalMaxPool::Cache maxpool;
    Linear::Cache w2v_fc;
    RangeHead::Cache w2v_range;
    Linear::Cache fc;
    RangeHead::Cache range;
    Vec pooled;
    int n_frames = 0;
  };

  std::unique_ptr<PredictorCache> make_cache() const override {
    return std::make_unique<Cache>();
  }

  double forward(const Sample& s, PredictorCache& pc) const override {
    auto& c = static_cast<Cache&>(pc);
    const auto& patches = s.patches.patches;
    if (patches.empty())
      throw ValidationError("fusion: empty patch sequence for utterance '" +
                            s.utterance_id + "'");
    if (s.ssl_frames.rows() == 0)
      throw ValidationError("fusion: no backbone frames for utterance '" +
                            s.utterance_id + "'");
    if (s.ssl_frames.cols() != cfg_.backbone.embed_dim)
      throw MosError(ErrorCode::kShapeMismatch,
                     "fusion: got " + std::to_string(s.ssl_frames.cols()) +
                         "-dim frames, expected " +
                         std::to_string(cfg_.backbone.embed_dim));
    c.trunk.resize(patches.size());
    c.gap.resize(patches.size());
    std::vector<Vec> seq(patches.size());
    for (size_t i = 0; i < patches.size(); ++i) {
      const Tensor3 in = tensor_from_patch(patches[i]);
      seq[i] = Gap::forward(trunk_.forward(in, &c.trunk[i]), &c.gap[i]);
    }
    Vec embedding = TemporalMaxPool::forward(seq, &c.maxpool);
    c.n_frames = static_cast<int>(s.ssl_frames.rows());
    c.pooled = s.ssl_frames.colwise().mean().transpose();
    const double w2v_z = w2v_head_.forward(c.pooled, &c.w2v_fc)(0);
    const double w2v_pred = RangeHead::forward(w2v_z, &c.w2v_range);
    Vec cat(cfg_.fusion_input_dim());
    cat.head(embedding.size()) = embedding;
    cat(embedding.size()) = w2v_pred;
    if (cfg_.variant == FusionVariant::kFusion2)
      cat.tail(cfg_.backbone.embed_dim) = c.pooled;
    const double z = fc_.forward(cat, &c.fc)(0);
    return RangeHead::forward(z, &c.range);
  }

  void backward(PredictorCache& pc, double gpred) override {
    auto& c = static_cast<Cache&>(pc);
    const double gz = RangeHead::backward(c.range, gpred);
    Vec gcat = fc_.backward(c.fc, Vec::Constant(1, gz));
    const int emb_dim = cfg_.trunk.channels.back();
    Vec gemb = gcat.head(emb_dim);
    const double gw2v_pred = gcat(emb_dim);
    const double gw2v_z = RangeHead::backward(c.w2v_range, gw2v_pred);
    w2v_head_.backward(c.w2v_fc, Vec::Constant(1, gw2v_z));
    std::vector<Vec> gseq = TemporalMaxPool::backward(c.maxpool, gemb);
    for (size_t i = 0; i < gseq.size(); ++i)
      trunk_.backward(c.trunk[i], Gap::backward(c.gap[i], gseq[i]));
  }

  std::vector<ParamGroup> param_groups() override {
    ParamGroup trunk{"cnn_trunk", true, {}};
    trunk_.collect(trunk.params);
    std::vector<ParamGroup> groups{trunk};
    if (toy_) groups.push_back({"w2v_backbone", false, {&toy_->w}});
    groups.push_back({"w2v_head", false, {&w2v_head_.w, &w2v_head_.b}});
    groups.push_back({"fusion_fc", true, {&fc_.w, &fc_.b}});
    return groups;
  }

  const BackboneConfig& backbone_config() const { return cfg_.backbone; }
  const ToyBackbone* toy() const { return toy_ ? &*toy_ : nullptr; }
  FramewiseCnn& trunk() { return trunk_; }

 private:
  FusionConfig cfg_;
  FramewiseCnn trunk_;
  std::optional<ToyBackbone> toy_;
  Linear w2v_head_;
  Linear fc_;
  std::optional<Mat> adopted_w2v_w_;
  std::optional<Mat> adopted_w2v_b_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_params_bin(const std::vector<Parameter*>& params,
                            const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MosError(ErrorCode::kIo, "cannot write " + path);
  f.write("MBCP", 4);
  const uint32_t version = 1;
  auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  w32(version);
  w32(static_cast<uint32_t>(params.size()));
  for (auto* p : params) {
    w32(static_cast<uint32_t>(p->name.size()));
    f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    w32(static_cast<uint32_t>(p->value.rows()));
    w32(static_cast<uint32_t>(p->value.cols()));
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
  if (!f) throw MosError(ErrorCode::kIo, "short write to " + path);
}

inline void save_params_bin(Predictor& m, const std::string& path) {
  save_params_bin(m.parameters(), path);
}

inline void load_params_bin(const std::vector<Parameter*>& params,
                            const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MosError(ErrorCode::kIo, "cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "MBCP")
    throw MosError(ErrorCode::kCheckpointMismatch,
                   path + ": not a parameter blob");
  auto r32 = [&]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  if (r32() != 1)
    throw MosError(ErrorCode::kCheckpointMismatch,
                   path + ": unsupported blob version");
  const uint32_t count = r32();
  if (count != params.size())
    throw MosError(ErrorCode::kCheckpointMismatch,
                   path + ": holds " + std::to_string(count) +
                       " tensors, model has " + std::to_string(params.size()));
  for (auto* p : params) {
    const uint32_t name_len = r32();
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (name != p->name)
      throw MosError(ErrorCode::kCheckpointMismatch,
                     path + ": tensor '" + name + "' where '" + p->name +
                         "' expected");
    const uint32_t rows = r32(), cols = r32();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw MosError(ErrorCode::kCheckpointMismatch,
                     path + ": tensor '" + name + "' is " +
                         std::to_string(rows) + "x" + std::to_string(cols) +
                         ", model wants " + std::to_string(p->value.rows()) +
                         "x" + std::to_string(p->value.cols()));
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
  if (!f) throw MosError(ErrorCode::kIo, "truncated parameter blob " + path);
}

inline void load_params_bin(Predictor& m, const std::string& path) {
  load_params_bin(m.parameters(), path);
}

inline void save_checkpoint(Predictor& m, const std::string& dir,
                            const nlohmann::json& provenance) {
  std::filesystem::create_directories(dir);
  nlohmann::json freezing = nlohmann::json::object();
  for (auto& g : m.param_groups()) freezing[g.name] = g.trainable;
  nlohmann::json meta = {{"schema_version", kSchemaVersion},
                         {"architecture", m.architecture()},
                         {"config_hash", hex64(m.config_hash())},
                         {"freezing", freezing},
                         {"provenance", provenance}};
  std::ofstream f(dir + "/meta.json", std::ios::binary);
  if (!f) throw MosError(ErrorCode::kIo, "cannot write " + dir + "/meta.json");
  f << meta.dump(2) << "\n";
  save_params_bin(m, dir + "/params.bin");
}

inline nlohmann::json load_checkpoint(Predictor& m, const std::string& dir) {
  std::ifstream f(dir + "/meta.json", std::ios::binary);
  if (!f) throw MosError(ErrorCode::kIo, "cannot read " + dir + "/meta.json");
  nlohmann::json meta = nlohmann::json::parse(f, nullptr, true);
  if (meta.value("architecture", "") != m.architecture())
    throw MosError(ErrorCode::kCheckpointMismatch,
                   dir + ": checkpoint architecture '" +
                       meta.value("architecture", "") + "' does not match '" +
                       m.architecture() + "'");
  if (meta.value("config_hash", "") != hex64(m.config_hash()))
    throw MosError(ErrorCode::kCheckpointMismatch,
                   dir + ": checkpoint config hash " +
                       meta.value("config_hash", "") +
                       " does not match the constructed model (" +
                       hex64(m.config_hash()) + ")");
  load_params_bin(m, dir + "/params.bin");
  return meta;
}

}  // namespace mosbench
