#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mosbench/common.hpp"
#include "mosbench/evaluation.hpp"
#include "mosbench/manifest.hpp"
#include "mosbench/mel.hpp"
#include "mosbench/models.hpp"
#include "mosbench/training.hpp"

namespace mosbench {

inline const std::set<std::string>& known_architectures() {
  static const std::set<std::string> k = {"nisqa", "conv_max_pool", "w2v_mos",
                                          "fusion1", "fusion2"};
  return k;
}

struct DatasetRef {
  std::string path;
  std::optional<Split> split;  // absent: take every row
};

struct FeatureConfig {
  MelConfig mel;
  std::string cache_dir;  // empty: no on-disk patch cache
};

struct ModelSpec {
  std::string id;
  std::string architecture;
  bool pretrained_trunk = false;
  std::optional<std::string> w2v_head_from;  // fusion: adopt this model's head
  FramewiseCnnConfig trunk;
  int att_dim = 64;
  int pool_hidden = 128;
  BackboneConfig backbone;
  nlohmann::json training_override;  // merged over the base block per model
};

struct RunConfig {
  std::string config_dir;  // directory of the loaded file; anchors paths
  std::string output_dir = "out";
  int workers = 1;
  double alpha = 0.05;
  std::vector<uint64_t> seeds;
  std::map<std::string, DatasetRef> datasets;
  FeatureConfig features;
  TrainConfig training;
  bool batch_size_explicit = false;
  AePretrainConfig ae;
  std::vector<EvalLevel> eval_levels = {EvalLevel::kUtterance,
                                        EvalLevel::kSystem};
  std::vector<ModelSpec> models;

  const ModelSpec* find_model(const std::string& id) const {
    for (const auto& m : models)
      if (m.id == id) return &m;
    return nullptr;
  }

  std::string resolve_path(const std::string& p) const {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || config_dir.empty()) return p;
    return (std::filesystem::path(config_dir) / fp).lexically_normal().string();
  }
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& msg) {
  throw MosError(ErrorCode::kConfig, "config: " + msg);
}

inline void check_keys(const nlohmann::json& j, const std::string& ctx,
                       const std::set<std::string>& allowed) {
  if (!j.is_object()) config_fail(ctx + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      config_fail(ctx + ": unknown key '" + it.key() + "'");
}

inline double get_num(const nlohmann::json& j, const std::string& ctx) {
  if (!j.is_number()) config_fail(ctx + " must be a number");
  return j.get<double>();
}

inline int get_int(const nlohmann::json& j, const std::string& ctx) {
  if (!j.is_number_integer()) config_fail(ctx + " must be an integer");
  return j.get<int>();
}

inline std::string get_str(const nlohmann::json& j, const std::string& ctx) {
  if (!j.is_string()) config_fail(ctx + " must be a string");
  return j.get<std::string>();
}

inline bool get_bool(const nlohmann::json& j, const std::string& ctx) {
  if (!j.is_boolean()) config_fail(ctx + " must be a boolean");
  return j.get<bool>();
}

inline MelConfig parse_features(const nlohmann::json& j, std::string* cache) {
  check_keys(j, "features",
             {"sample_rate_hz", "window_ms", "hop_ms", "n_mels",
              "patch_frames", "patch_hop_frames", "fmin_hz", "fmax_hz",
              "log_floor", "normalize", "cache_dir"});
  MelConfig m;
  if (j.contains("sample_rate_hz"))
    m.sample_rate_hz = get_int(j["sample_rate_hz"], "features.sample_rate_hz");
  if (j.contains("window_ms"))
    m.window_ms = get_num(j["window_ms"], "features.window_ms");
  if (j.contains("hop_ms")) m.hop_ms = get_num(j["hop_ms"], "features.hop_ms");
  if (j.contains("n_mels")) m.n_mels = get_int(j["n_mels"], "features.n_mels");
  if (j.contains("patch_frames"))
    m.patch_frames = get_int(j["patch_frames"], "features.patch_frames");
  if (j.contains("patch_hop_frames"))
    m.patch_hop_frames =
        get_int(j["patch_hop_frames"], "features.patch_hop_frames");
  if (j.contains("fmin_hz")) m.fmin_hz = get_num(j["fmin_hz"], "features.fmin_hz");
  if (j.contains("fmax_hz")) m.fmax_hz = get_num(j["fmax_hz"], "features.fmax_hz");
  if (j.contains("log_floor"))
    m.log_floor = get_num(j["log_floor"], "features.log_floor");
  if (j.contains("normalize"))
    m.normalize = get_bool(j["normalize"], "features.normalize");
  if (j.contains("cache_dir"))
    *cache = get_str(j["cache_dir"], "features.cache_dir");
  try {
    m.validate();
  } catch (const ValidationError& e) {
    config_fail(std::string("features: ") + e.what());
  }
  return m;
}

// Merges one training block over a base. Absent learning_rate follows the
// optimizer's default when the optimizer changes.
inline TrainConfig parse_training(const nlohmann::json& j, TrainConfig base,
                                  const std::string& ctx,
                                  bool* batch_explicit) {
  check_keys(j, ctx,
             {"optimizer", "learning_rate", "patience_epochs", "max_epochs",
              "batch_size", "min_delta"});
  if (j.contains("optimizer")) {
    base.optimizer =
        optimizer_from_string(get_str(j["optimizer"], ctx + ".optimizer"));
    if (!j.contains("learning_rate"))
      base.learning_rate = default_learning_rate(base.optimizer);
  }
  if (j.contains("learning_rate"))
    base.learning_rate = get_num(j["learning_rate"], ctx + ".learning_rate");
  if (j.contains("patience_epochs"))
    base.patience_epochs = get_int(j["patience_epochs"], ctx + ".patience_epochs");
  if (j.contains("max_epochs"))
    base.max_epochs = get_int(j["max_epochs"], ctx + ".max_epochs");
  if (j.contains("batch_size")) {
    base.batch_size = get_int(j["batch_size"], ctx + ".batch_size");
    if (batch_explicit) *batch_explicit = true;
  }
  if (j.contains("min_delta"))
    base.min_delta = get_num(j["min_delta"], ctx + ".min_delta");
  try {
    base.validate();
  } catch (const ValidationError& e) {
    config_fail(ctx + ": " + e.what());
  }
  return base;
}

inline BackboneConfig parse_backbone(const nlohmann::json& j,
                                     const std::string& ctx) {
  check_keys(j, ctx,
             {"provider", "embed_dim", "stride", "trainable", "provider_name"});
  BackboneConfig b;
  if (j.contains("provider")) {
    const std::string p = get_str(j["provider"], ctx + ".provider");
    if (p == "toy")
      b.provider = BackboneConfig::Provider::kToy;
    else if (p == "external_ssl")
      b.provider = BackboneConfig::Provider::kExternalSsl;
    else
      config_fail(ctx + ".provider must be 'toy' or 'external_ssl'");
  }
  if (j.contains("embed_dim"))
    b.embed_dim = get_int(j["embed_dim"], ctx + ".embed_dim");
  if (j.contains("stride")) b.stride = get_int(j["stride"], ctx + ".stride");
  if (j.contains("trainable"))
    b.trainable = get_bool(j["trainable"], ctx + ".trainable");
  if (j.contains("provider_name"))
    b.provider_name = get_str(j["provider_name"], ctx + ".provider_name");
  if (b.embed_dim < 1 || b.stride < 1)
    config_fail(ctx + ": embed_dim and stride must be positive");
  return b;
}

inline FramewiseCnnConfig parse_trunk(const nlohmann::json& j,
                                      const std::string& ctx) {
  check_keys(j, ctx, {"in_h", "in_w", "channels", "pool_after"});
  FramewiseCnnConfig t;
  if (j.contains("in_h")) t.in_h = get_int(j["in_h"], ctx + ".in_h");
  if (j.contains("in_w")) t.in_w = get_int(j["in_w"], ctx + ".in_w");
  if (j.contains("channels")) {
    if (!j["channels"].is_array()) config_fail(ctx + ".channels must be an array");
    t.channels.clear();
    for (const auto& c : j["channels"])
      t.channels.push_back(get_int(c, ctx + ".channels[]"));
  }
  if (j.contains("pool_after")) {
    if (!j["pool_after"].is_array())
      config_fail(ctx + ".pool_after must be an array");
    t.pool_after.clear();
    for (const auto& c : j["pool_after"])
      t.pool_after.push_back(get_int(c, ctx + ".pool_after[]"));
  }
  try {
    t.validate();
  } catch (const ValidationError& e) {
    config_fail(ctx + ": " + e.what());
  }
  return t;
}

inline ModelSpec parse_model(const nlohmann::json& j, const MelConfig& mel,
                             size_t index) {
  const std::string ctx = "models[" + std::to_string(index) + "]";
  check_keys(j, ctx,
             {"id", "architecture", "pretrained_trunk", "w2v_head_from",
              "trunk", "att_dim", "pool_hidden", "backbone", "training"});
  ModelSpec m;
  if (!j.contains("id")) config_fail(ctx + ": missing 'id'");
  m.id = get_str(j["id"], ctx + ".id");
  if (m.id.empty()) config_fail(ctx + ".id must be non-empty");
  if (!j.contains("architecture")) config_fail(ctx + ": missing 'architecture'");
  m.architecture = get_str(j["architecture"], ctx + ".architecture");
  if (!known_architectures().count(m.architecture)) {
    std::string allowed;
    for (const auto& a : known_architectures())
      allowed += (allowed.empty() ? "" : ", ") + a;
    config_fail(ctx + ".architecture '" + m.architecture +
                "' unknown (expected one of: " + allowed + ")");
  }
  m.trunk.in_h = mel.n_mels;
  m.trunk.in_w = mel.patch_frames;
  if (j.contains("trunk")) {
    m.trunk = parse_trunk(j["trunk"], ctx + ".trunk");
  } else {
    try {
      m.trunk.validate();
    } catch (const ValidationError& e) {
      config_fail(ctx + ": features imply an invalid trunk input (" +
                  std::string(e.what()) + ")");
    }
  }
  if (j.contains("pretrained_trunk"))
    m.pretrained_trunk =
        get_bool(j["pretrained_trunk"], ctx + ".pretrained_trunk");
  if (j.contains("w2v_head_from"))
    m.w2v_head_from = get_str(j["w2v_head_from"], ctx + ".w2v_head_from");
  if (j.contains("att_dim")) m.att_dim = get_int(j["att_dim"], ctx + ".att_dim");
  if (j.contains("pool_hidden"))
    m.pool_hidden = get_int(j["pool_hidden"], ctx + ".pool_hidden");
  if (m.att_dim < 1 || m.pool_hidden < 1)
    config_fail(ctx + ": att_dim and pool_hidden must be positive");
  if (j.contains("backbone"))
    m.backbone = parse_backbone(j["backbone"], ctx + ".backbone");
  if (j.contains("training")) {
    if (!j["training"].is_object())
      config_fail(ctx + ".training must be an object");
    m.training_override = j["training"];
  }

  const bool uses_backbone = m.architecture == "w2v_mos" ||
                             m.architecture == "fusion1" ||
                             m.architecture == "fusion2";
  if (!uses_backbone && j.contains("backbone"))
    config_fail(ctx + ": '" + m.architecture + "' takes no backbone block");
  const bool uses_trunk = m.architecture != "w2v_mos";
  if (!uses_trunk && j.contains("trunk"))
    config_fail(ctx + ": 'w2v_mos' takes no trunk block");
  if (!uses_trunk && m.pretrained_trunk)
    config_fail(ctx + ": 'w2v_mos' has no trunk to pretrain");
  if (m.architecture != "nisqa" &&
      (j.contains("att_dim") || j.contains("pool_hidden")))
    config_fail(ctx + ": att_dim/pool_hidden apply to 'nisqa' only");
  if (m.w2v_head_from && m.architecture != "fusion1" &&
      m.architecture != "fusion2")
    config_fail(ctx + ": w2v_head_from applies to fusion models only");
  if (m.architecture == "w2v_mos" &&
      m.backbone.provider == BackboneConfig::Provider::kExternalSsl &&
      m.backbone.trainable)
    config_fail(ctx + ": an external SSL backbone is opaque to the optimizer;"
                " set backbone.trainable=false or provider='toy'");
  return m;
}

}  // namespace detail

// Per-model effective training config: the base block, per-model overrides,
// and the smaller default batch for live-backbone fine-tuning when nothing
// set a batch size explicitly.
inline TrainConfig effective_train_config(const RunConfig& rc,
                                          const ModelSpec& m) {
  TrainConfig t = rc.training;
  bool batch_explicit = rc.batch_size_explicit;
  if (!m.training_override.is_null())
    t = detail::parse_training(m.training_override, t,
                               "models." + m.id + ".training",
                               &batch_explicit);
  if (!batch_explicit && m.architecture == "w2v_mos" && m.backbone.trainable)
    t.batch_size = 8;
  return t;
}

inline RunConfig parse_run_config(const nlohmann::json& j,
                                  std::string config_dir = {}) {
  using detail::config_fail;
  detail::check_keys(j, "config",
                     {"schema_version", "output_dir", "workers", "alpha",
                      "seeds", "datasets", "features", "training", "ae",
                      "evaluation", "models"});
  RunConfig rc;
  rc.config_dir = std::move(config_dir);
  if (j.contains("schema_version") &&
      detail::get_int(j["schema_version"], "schema_version") != kSchemaVersion)
    config_fail("unsupported schema_version (this build reads " +
                std::to_string(kSchemaVersion) + ")");
  if (j.contains("output_dir"))
    rc.output_dir = detail::get_str(j["output_dir"], "output_dir");
  if (j.contains("workers")) {
    rc.workers = detail::get_int(j["workers"], "workers");
    if (rc.workers < 1) config_fail("workers must be >= 1");
  }
  if (j.contains("alpha")) {
    rc.alpha = detail::get_num(j["alpha"], "alpha");
    if (!(rc.alpha > 0.0 && rc.alpha < 1.0))
      config_fail("alpha must be in (0, 1)");
  }
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array() || j["seeds"].empty())
      config_fail("seeds must be a non-empty array of integers");
    for (const auto& s : j["seeds"]) {
      const int v = detail::get_int(s, "seeds[]");
      if (v < 0) config_fail("seeds must be non-negative");
      rc.seeds.push_back(static_cast<uint64_t>(v));
    }
    std::set<uint64_t> uniq(rc.seeds.begin(), rc.seeds.end());
    if (uniq.size() != rc.seeds.size()) config_fail("seeds must be distinct");
  } else {
    for (uint64_t s = 1; s <= 10; ++s) rc.seeds.push_back(s);
  }

  if (!j.contains("datasets")) config_fail("missing 'datasets'");
  detail::check_keys(j["datasets"], "datasets", {"train", "validation", "test"});
  for (const char* role : {"train", "validation", "test"}) {
    if (!j["datasets"].contains(role))
      config_fail(std::string("datasets: missing role '") + role + "'");
    const auto& dj = j["datasets"][role];
    detail::check_keys(dj, std::string("datasets.") + role, {"path", "split"});
    if (!dj.contains("path"))
      config_fail(std::string("datasets.") + role + ": missing 'path'");
    DatasetRef ref;
    ref.path = detail::get_str(dj["path"], std::string("datasets.") + role + ".path");
    if (dj.contains("split")) {
      const std::string s =
          detail::get_str(dj["split"], std::string("datasets.") + role + ".split");
      auto sp = split_from_string(s);
      if (!sp)
        config_fail(std::string("datasets.") + role + ".split '" + s +
                    "' unknown (TRAIN, VAL, TEST)");
      ref.split = *sp;
    }
    rc.datasets[role] = std::move(ref);
  }

  if (j.contains("features"))
    rc.features.mel = detail::parse_features(j["features"], &rc.features.cache_dir);
  if (j.contains("training"))
    rc.training = detail::parse_training(j["training"], rc.training, "training",
                                         &rc.batch_size_explicit);
  if (j.contains("ae")) {
    detail::check_keys(j["ae"], "ae",
                       {"epochs", "learning_rate", "batch_size", "seed"});
    const auto& aj = j["ae"];
    if (aj.contains("epochs"))
      rc.ae.epochs = detail::get_int(aj["epochs"], "ae.epochs");
    if (aj.contains("learning_rate"))
      rc.ae.learning_rate = detail::get_num(aj["learning_rate"], "ae.learning_rate");
    if (aj.contains("batch_size"))
      rc.ae.batch_size = detail::get_int(aj["batch_size"], "ae.batch_size");
    if (aj.contains("seed"))
      rc.ae.seed = static_cast<uint64_t>(detail::get_int(aj["seed"], "ae.seed"));
    if (rc.ae.epochs < 1 || rc.ae.learning_rate <= 0 || rc.ae.batch_size < 1)
      config_fail("ae: epochs, learning_rate, batch_size must be positive");
  }
  if (j.contains("evaluation")) {
    detail::check_keys(j["evaluation"], "evaluation", {"levels"});
    if (j["evaluation"].contains("levels")) {
      const auto& lv = j["evaluation"]["levels"];
      if (!lv.is_array() || lv.empty())
        config_fail("evaluation.levels must be a non-empty array");
      rc.eval_levels.clear();
      for (const auto& l : lv) {
        const std::string s = detail::get_str(l, "evaluation.levels[]");
        if (s == "utterance")
          rc.eval_levels.push_back(EvalLevel::kUtterance);
        else if (s == "system")
          rc.eval_levels.push_back(EvalLevel::kSystem);
        else
          config_fail("evaluation.levels[] '" + s +
                      "' unknown ('utterance' or 'system')");
      }
    }
  }

  if (!j.contains("models") || !j["models"].is_array() || j["models"].empty())
    config_fail("'models' must be a non-empty array");
  std::set<std::string> ids;
  for (size_t i = 0; i < j["models"].size(); ++i) {
    ModelSpec m = detail::parse_model(j["models"][i], rc.features.mel, i);
    if (!ids.insert(m.id).second)
      config_fail("duplicate model id '" + m.id + "'");
    rc.models.push_back(std::move(m));
  }
  for (size_t i = 0; i < rc.models.size(); ++i) {
    const auto& m = rc.models[i];
    if (!m.w2v_head_from) continue;
    bool found = false;
    for (size_t k = 0; k < i; ++k)
      if (rc.models[k].id == *m.w2v_head_from) {
        if (rc.models[k].architecture != "w2v_mos")
          config_fail("models." + m.id + ".w2v_head_from must name a w2v_mos"
                      " model, '" + *m.w2v_head_from + "' is '" +
                      rc.models[k].architecture + "'");
        if (rc.models[k].backbone.embed_dim != m.backbone.embed_dim)
          config_fail("models." + m.id + ".w2v_head_from: embed_dim " +
                      std::to_string(rc.models[k].backbone.embed_dim) +
                      " does not match this model's " +
                      std::to_string(m.backbone.embed_dim));
        found = true;
        break;
      }
    if (!found)
      config_fail("models." + m.id + ".w2v_head_from '" + *m.w2v_head_from +
                  "' must name a w2v_mos model listed earlier");
  }
  // Per-model overrides must parse; surface bad blocks at load time.
  for (const auto& m : rc.models) (void)effective_train_config(rc, m);
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MosError(ErrorCode::kIo, "cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw MosError(ErrorCode::kConfig,
                   "config: " + path + " is not valid JSON (" + e.what() + ")");
  }
  return parse_run_config(
      j, std::filesystem::path(path).parent_path().string());
}

}  // namespace mosbench
