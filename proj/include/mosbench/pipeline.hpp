#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mosbench/analysis.hpp"
#include "mosbench/common.hpp"
#include "mosbench/config.hpp"
#include "mosbench/csv.hpp"
#include "mosbench/evaluation.hpp"
#include "mosbench/manifest.hpp"
#include "mosbench/mel.hpp"
#include "mosbench/models.hpp"
#include "mosbench/stats.hpp"
#include "mosbench/training.hpp"
#include "mosbench/wav.hpp"

namespace mosbench {

// ---------------------------------------------------------------------------
// Output layout

// Model ids may hold characters that are awkward on disk ('*' marks the
// pretrained variants); path components are sanitized, ids inside files are
// not.
inline std::string sanitize_component(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '*') {
      out += "_star";
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
               c == '-' || c == '_') {
      out += c;
    } else {
      out += '_';
    }
  }
  return out.empty() ? "_" : out;
}

struct OutputLayout {
  std::string root;

  std::string runs_dir() const { return root + "/runs"; }
  std::string reports_dir() const { return root + "/reports"; }
  std::string analysis_dir() const { return root + "/analysis"; }
  std::string pretrain_dir(const FramewiseCnnConfig& trunk) const {
    return root + "/pretrain/trunk_" + hex64(fnv1a(trunk.canonical_string()));
  }
  std::string run_dir(const std::string& model_id, uint64_t seed) const {
    return runs_dir() + "/" + sanitize_component(model_id) + "/seed_" +
           std::to_string(seed);
  }
  std::string checkpoint_dir(const std::string& model_id, uint64_t seed) const {
    return run_dir(model_id, seed) + "/checkpoint";
  }
  std::string predictions_path(const std::string& model_id,
                               uint64_t seed) const {
    return run_dir(model_id, seed) + "/predictions.csv";
  }
  std::string run_record_path(const std::string& model_id,
                              uint64_t seed) const {
    return run_dir(model_id, seed) + "/run_record.json";
  }
  std::string failure_path(const std::string& model_id, uint64_t seed) const {
    return run_dir(model_id, seed) + "/failure.json";
  }
};

inline OutputLayout output_layout(const RunConfig& rc) {
  return OutputLayout{rc.resolve_path(rc.output_dir)};
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw MosError(ErrorCode::kIo, "cannot write " + path);
  f << content;
  if (!f) throw MosError(ErrorCode::kIo, "short write to " + path);
}

inline void write_json_file(const std::string& path,
                            const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MosError(ErrorCode::kIo, "cannot read " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw MosError(ErrorCode::kIo, path + ": invalid JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Datasets and features

inline Manifest load_role_manifest(const RunConfig& rc,
                                   const std::string& role) {
  auto it = rc.datasets.find(role);
  if (it == rc.datasets.end())
    throw MosError(ErrorCode::kConfig,
                   "config declares no '" + role + "' dataset");
  const std::string path = rc.resolve_path(it->second.path);
  Manifest m = load_manifest(path, role);
  m.name = role;
  if (it->second.split) m = m.require_split(*it->second.split);
  m.name = role;
  return m;
}

// Paths in a manifest resolve as written first (covers absolute paths and
// paths relative to the invocation directory), then relative to the manifest.
inline std::string resolve_audio_path(const std::string& manifest_dir,
                                      const std::string& audio_path) {
  if (std::filesystem::path(audio_path).is_absolute() ||
      std::filesystem::exists(audio_path))
    return audio_path;
  const auto joined = std::filesystem::path(manifest_dir) / audio_path;
  if (std::filesystem::exists(joined)) return joined.string();
  return audio_path;
}

// Loads audio once per utterance and derives the per-model views: mel patch
// sequences (optionally cached on disk) and frozen backbone frames.
class FeatureAssembler {
 public:
  explicit FeatureAssembler(const RunConfig& rc) : rc_(rc) {
    if (!rc.features.cache_dir.empty())
      patch_cache_.emplace(rc.resolve_path(rc.features.cache_dir));
  }

  std::vector<Sample> assemble(const Manifest& m, const DataNeeds& needs,
                               const BackboneConfig* backbone) {
    if (needs.ssl_frames && backbone == nullptr)
      throw ValidationError("feature assembly: backbone frames requested "
                            "without a backbone configuration");
    std::vector<Sample> out;
    out.reserve(m.size());
    std::optional<ToyBackbone> toy;
    if (needs.ssl_frames &&
        backbone->provider == BackboneConfig::Provider::kToy)
      toy.emplace(*backbone);
    for (const auto& u : m.utterances) {
      Sample s;
      s.utterance_id = u.utterance_id;
      s.mos = u.mos;
      const Audio& a = audio(u, manifest_dir(rc_, m.name));
      if (needs.patches) s.patches = patches(u, a);
      if (needs.audio) s.audio = a.at_16k;
      if (needs.ssl_frames) {
        const std::string key =
            backbone->canonical_string() + "#" + u.utterance_id;
        auto it = ssl_.find(key);
        if (it == ssl_.end())
          it = ssl_.emplace(key, backbone_embed(a.at_16k, *backbone,
                                                u.utterance_id,
                                                toy ? &*toy : nullptr))
                   .first;
        s.ssl_frames = it->second;
      }
      out.push_back(std::move(s));
    }
    return out;
  }

 private:
  struct Audio {
    std::vector<double> raw;
    int rate = 0;
    std::vector<double> at_16k;
    uint64_t content_hash = 0;
  };

  static std::string manifest_dir(const RunConfig& rc,
                                  const std::string& role) {
    auto it = rc.datasets.find(role);
    if (it == rc.datasets.end()) return {};
    return std::filesystem::path(rc.resolve_path(it->second.path))
        .parent_path()
        .string();
  }

  const Audio& audio(const Utterance& u, const std::string& mdir) {
    auto it = audio_.find(u.utterance_id);
    if (it != audio_.end()) return it->second;
    const std::string path = resolve_audio_path(mdir, u.audio_path);
    WavData w = read_wav(path);
    Audio a;
    a.rate = w.sample_rate;
    a.content_hash =
        fnv1a(w.samples.data(), w.samples.size() * sizeof(double),
              fnv1a(&w.sample_rate, sizeof(w.sample_rate)));
    a.at_16k = w.sample_rate == 16000
                   ? w.samples
                   : resample_linear(w.samples, w.sample_rate, 16000);
    a.raw = std::move(w.samples);
    return audio_.emplace(u.utterance_id, std::move(a)).first->second;
  }

  MelPatchSequence patches(const Utterance& u, const Audio& a) {
    const MelConfig& mel = rc_.features.mel;
    if (patch_cache_) {
      const uint64_t key = PatchCache::key(a.content_hash, mel);
      if (auto hit = patch_cache_->load(key)) {
        hit->utterance_id = u.utterance_id;
        hit->config = mel;
        return std::move(*hit);
      }
      MelPatchSequence seq =
          patches_from_audio(a.raw, a.rate, mel, u.utterance_id);
      patch_cache_->store(key, seq);
      return seq;
    }
    return patches_from_audio(a.raw, a.rate, mel, u.utterance_id);
  }

  const RunConfig& rc_;
  std::optional<PatchCache> patch_cache_;
  std::map<std::string, Audio> audio_;
  std::map<std::string, Mat> ssl_;
};

// ---------------------------------------------------------------------------
// Model construction

inline std::unique_ptr<Predictor> make_model(const ModelSpec& spec) {
  if (spec.architecture == "nisqa")
    return std::make_unique<NisqaModel>(
        NisqaConfig{spec.trunk, spec.att_dim, spec.pool_hidden});
  if (spec.architecture == "conv_max_pool")
    return std::make_unique<ConvMaxPoolModel>(ConvMaxPoolConfig{spec.trunk});
  if (spec.architecture == "w2v_mos")
    return std::make_unique<W2vMosModel>(spec.backbone);
  if (spec.architecture == "fusion1" || spec.architecture == "fusion2")
    return std::make_unique<FusionModel>(FusionConfig{
        spec.architecture == "fusion1" ? FusionVariant::kFusion1
                                       : FusionVariant::kFusion2,
        spec.trunk, spec.backbone});
  throw MosError(ErrorCode::kConfig,
                 "unknown architecture '" + spec.architecture + "'");
}

inline FramewiseCnn load_pretrained_trunk(const OutputLayout& out,
                                          const FramewiseCnnConfig& cfg) {
  const std::string dir = out.pretrain_dir(cfg);
  if (!std::filesystem::exists(dir + "/params.bin"))
    throw MosError(ErrorCode::kConfig,
                   "no pretrained trunk for this configuration under " + dir +
                       "; run 'pretrain-ae' first");
  FramewiseCnn trunk(cfg);
  std::vector<Parameter*> ps;
  trunk.collect(ps);
  load_params_bin(ps, dir + "/params.bin");
  return trunk;
}

// Fully constructed model for one (spec, seed): architecture, pretrained
// trunk weights, and an adopted w2v scoring head where configured.
inline std::unique_ptr<Predictor> make_model_for_run(const RunConfig& rc,
                                                     const ModelSpec& spec,
                                                     const OutputLayout& out,
                                                     uint64_t seed) {
  std::unique_ptr<Predictor> model = make_model(spec);
  if (spec.pretrained_trunk) {
    FramewiseCnn enc = load_pretrained_trunk(out, spec.trunk);
    if (auto* n = dynamic_cast<NisqaModel*>(model.get()))
      n->adopt_pretrained_trunk(enc);
    else if (auto* c = dynamic_cast<ConvMaxPoolModel*>(model.get()))
      c->adopt_pretrained_trunk(enc);
    else
      throw MosError(ErrorCode::kConfig,
                     "model '" + spec.id + "' cannot adopt a pretrained trunk");
  }
  if (spec.w2v_head_from) {
    const ModelSpec* src = rc.find_model(*spec.w2v_head_from);
    if (!src)
      throw MosError(ErrorCode::kConfig,
                     "w2v_head_from '" + *spec.w2v_head_from +
                         "' is not in the config");
    W2vMosModel donor(src->backbone);
    load_checkpoint(donor, out.checkpoint_dir(src->id, seed));
    auto* fusion = dynamic_cast<FusionModel*>(model.get());
    if (!fusion)
      throw MosError(ErrorCode::kConfig,
                     "model '" + spec.id + "' cannot adopt a w2v head");
    fusion->adopt_w2v_head(donor.head());
  }
  return model;
}

// ---------------------------------------------------------------------------
// pretrain-ae

inline int cmd_pretrain_ae(const RunConfig& rc, std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  std::map<std::string, FramewiseCnnConfig> trunks;
  for (const auto& m : rc.models)
    if (m.pretrained_trunk) trunks.emplace(m.trunk.canonical_string(), m.trunk);
  if (trunks.empty()) {
    log << "no model requests a pretrained trunk; nothing to do\n";
    return 0;
  }
  const Manifest train_m = load_role_manifest(rc, "train");
  FeatureAssembler fa(rc);
  DataNeeds needs;
  needs.patches = true;
  const std::vector<Sample> samples = fa.assemble(train_m, needs, nullptr);
  std::vector<Mat> patches;
  for (const auto& s : samples)
    for (const auto& p : s.patches.patches) patches.push_back(p);
  for (const auto& [canon, cfg] : trunks) {
    ConvAutoencoder ae(cfg);
    const auto res = ae.fit(patches, rc.ae);
    const std::string dir = out.pretrain_dir(cfg);
    std::filesystem::create_directories(dir);
    std::vector<Parameter*> ps;
    ae.encoder().collect(ps);
    save_params_bin(ps, dir + "/params.bin");
    write_json_file(dir + "/meta.json",
                    {{"schema_version", kSchemaVersion},
                     {"kind", "conv_autoencoder_encoder"},
                     {"trunk", canon},
                     {"epochs", rc.ae.epochs},
                     {"epoch_losses", res.epoch_losses}});
    log << "pretrained trunk " << hex64(fnv1a(canon)) << " on "
        << patches.size() << " patches, reconstruction loss "
        << format_double(res.epoch_losses.back(), 6) << " -> " << dir << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

namespace detail {

// Sample vectors shared between models with identical data needs.
class SampleStore {
 public:
  SampleStore(FeatureAssembler& fa, const Manifest& m) : fa_(fa), m_(m) {}

  const std::vector<Sample>* get(const DataNeeds& needs,
                                 const BackboneConfig* backbone) {
    std::string key = std::string(needs.patches ? "p" : "") +
                      (needs.ssl_frames ? "s" : "") + (needs.audio ? "a" : "");
    if (needs.ssl_frames) key += "|" + backbone->canonical_string();
    auto it = cache_.find(key);
    if (it == cache_.end())
      it = cache_
               .emplace(key, std::make_unique<std::vector<Sample>>(
                                 fa_.assemble(m_, needs, backbone)))
               .first;
    return it->second.get();
  }

 private:
  FeatureAssembler& fa_;
  const Manifest& m_;
  std::map<std::string, std::unique_ptr<std::vector<Sample>>> cache_;
};

}  // namespace detail

inline std::vector<const ModelSpec*> select_models(
    const RunConfig& rc, const std::optional<std::string>& only_model) {
  std::vector<const ModelSpec*> specs;
  if (only_model) {
    const ModelSpec* m = rc.find_model(*only_model);
    if (!m) {
      std::string ids;
      for (const auto& s : rc.models)
        ids += (ids.empty() ? "" : ", ") + s.id;
      throw MosError(ErrorCode::kConfig, "unknown model '" + *only_model +
                                             "' (config has: " + ids + ")");
    }
    specs.push_back(m);
  } else {
    for (const auto& s : rc.models) specs.push_back(&s);
  }
  return specs;
}

inline int cmd_train(const RunConfig& rc,
                     const std::optional<std::string>& only_model,
                     std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  const Manifest train_m = load_role_manifest(rc, "train");
  const Manifest val_m = load_role_manifest(rc, "validation");
  const Manifest test_m = load_role_manifest(rc, "test");
  FeatureAssembler fa(rc);
  detail::SampleStore train_s(fa, train_m), val_s(fa, val_m),
      test_s(fa, test_m);

  const std::vector<const ModelSpec*> specs = select_models(rc, only_model);
  // Models that adopt another model's head train in a second wave, after
  // their donors' checkpoints exist.
  std::vector<const ModelSpec*> waves[2];
  for (const ModelSpec* s : specs)
    waves[s->w2v_head_from ? 1 : 0].push_back(s);

  int failures = 0;
  for (const auto& wave : waves) {
    std::vector<MatrixJob> jobs;
    for (const ModelSpec* spec : wave) {
      const DataNeeds needs = make_model(*spec)->needs();
      const BackboneConfig* bb = &spec->backbone;
      MatrixJob base;
      base.model_id = spec->id;
      base.train_set = train_s.get(needs, bb);
      base.val_set = val_s.get(needs, bb);
      base.test_set = test_s.get(needs, bb);
      base.cfg = effective_train_config(rc, *spec);
      for (uint64_t seed : rc.seeds) {
        MatrixJob job = base;
        job.seed = seed;
        job.make_model = [&rc, spec, out, seed] {
          return make_model_for_run(rc, *spec, out, seed);
        };
        job.on_trained = [&rc, spec, out, seed](Predictor& m,
                                                const RunRecord& rec) {
          const TrainConfig tc = effective_train_config(rc, *spec);
          save_checkpoint(m, out.checkpoint_dir(spec->id, seed),
                          {{"model_id", spec->id},
                           {"seed", seed},
                           {"optimizer", to_string(tc.optimizer)},
                           {"learning_rate", tc.learning_rate},
                           {"batch_size", tc.batch_size},
                           {"patience_epochs", tc.patience_epochs},
                           {"max_epochs", tc.max_epochs}});
          write_json_file(out.run_record_path(spec->id, seed), to_json(rec));
        };
        jobs.push_back(std::move(job));
      }
    }
    const auto outcomes = run_matrix(jobs, rc.workers);
    for (const auto& o : outcomes) {
      if (o.ok) {
        save_predictions(o.predictions, out.predictions_path(o.model_id, o.seed));
        log << "trained " << o.model_id << " seed " << o.seed << ": "
            << o.record.epochs_run << " epochs, best epoch "
            << o.record.best_epoch << ", val loss "
            << format_double(o.record.best_val_loss, 6) << "\n";
      } else {
        ++failures;
        write_json_file(out.failure_path(o.model_id, o.seed),
                        {{"schema_version", kSchemaVersion},
                         {"model_id", o.model_id},
                         {"seed", o.seed},
                         {"error", o.error}});
        log << "FAILED " << o.model_id << " seed " << o.seed << ": "
            << o.error << "\n";
      }
    }
  }
  if (failures)
    log << failures << " run(s) failed; see failure.json under "
        << out.runs_dir() << "\n";
  return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// predict

inline int cmd_predict(const RunConfig& rc, const std::string& model_id,
                       uint64_t seed, const std::string& role,
                       const std::optional<std::string>& out_file,
                       std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  const ModelSpec* spec = rc.find_model(model_id);
  if (!spec)
    throw MosError(ErrorCode::kConfig, "unknown model '" + model_id + "'");
  std::unique_ptr<Predictor> model = make_model(*spec);
  load_checkpoint(*model, out.checkpoint_dir(model_id, seed));
  const Manifest m = load_role_manifest(rc, role);
  FeatureAssembler fa(rc);
  const std::vector<Sample> samples =
      fa.assemble(m, model->needs(), &spec->backbone);
  const PredictionSet ps =
      predict_set(*model, samples, model_id, std::to_string(seed));
  const std::string path =
      out_file ? *out_file
               : out.root + "/predict/" + sanitize_component(model_id) +
                     "_seed_" + std::to_string(seed) + "_" + role + ".csv";
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  save_predictions(ps, path);
  log << "wrote " << ps.records.size() << " predictions -> " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

inline std::vector<PredictionSet> load_run_predictions(
    const OutputLayout& out, const RunConfig& rc, const std::string& model_id) {
  std::vector<PredictionSet> runs;
  for (uint64_t seed : rc.seeds) {
    const std::string path = out.predictions_path(model_id, seed);
    if (std::filesystem::exists(path)) runs.push_back(load_predictions(path));
  }
  if (runs.empty())
    throw MosError(ErrorCode::kIo, "no predictions for model '" + model_id +
                                       "' under " + out.runs_dir() +
                                       "; run 'train' first");
  return runs;
}

inline std::optional<std::set<SystemType>> subset_filter(
    const std::string& name) {
  if (name == "all") return std::nullopt;
  if (name == "tts")
    return std::set<SystemType>{SystemType::kBc, SystemType::kEspnet};
  if (name == "vc") return std::set<SystemType>{SystemType::kVcc};
  throw MosError(ErrorCode::kConfig,
                 "unknown subset '" + name + "' (all, tts, vc)");
}

inline std::string eval_report_path(const OutputLayout& out,
                                    const std::string& model_id,
                                    EvalLevel level,
                                    const std::string& subset) {
  return out.reports_dir() + "/eval_" + sanitize_component(model_id) + "_" +
         to_string(level) + "_" + subset + ".json";
}

inline int cmd_evaluate(const RunConfig& rc,
                        const std::optional<std::string>& only_model,
                        const std::string& subset, std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  const Manifest test_m = load_role_manifest(rc, "test");
  const auto filter = subset_filter(subset);
  const auto specs = select_models(rc, only_model);
  for (EvalLevel level : rc.eval_levels) {
    std::vector<std::vector<std::string>> rows;
    for (const ModelSpec* spec : specs) {
      const auto runs = load_run_predictions(out, rc, spec->id);
      EvalReport rep = evaluate(runs, test_m, level, filter, subset);
      if (runs.size() != rc.seeds.size())
        rep.notes.push_back(std::to_string(runs.size()) + " of " +
                            std::to_string(rc.seeds.size()) +
                            " runs have predictions");
      write_json_file(eval_report_path(out, spec->id, level, subset),
                      to_json(rep));
      rows.push_back({spec->id, format_double(rep.mse.mean, 6),
                      format_double(rep.mse.ci95_half, 6),
                      format_double(rep.lcc.mean, 6),
                      format_double(rep.lcc.ci95_half, 6),
                      format_double(rep.srcc.mean, 6),
                      format_double(rep.srcc.ci95_half, 6),
                      std::to_string(rep.run_count)});
      log << to_string(level) << "/" << subset << " " << spec->id
          << ": mse " << format_double(rep.mse.mean, 4) << " lcc "
          << format_double(rep.lcc.mean, 4) << " srcc "
          << format_double(rep.srcc.mean, 4) << " (" << rep.run_count
          << " runs)\n";
    }
    write_csv(out.reports_dir() + "/summary_" + std::string(to_string(level)) +
                  "_" + subset + ".csv",
              {"model_id", "mse", "mse_ci95", "lcc", "lcc_ci95", "srcc",
               "srcc_ci95", "runs"},
              rows);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// compare

inline int cmd_compare(const RunConfig& rc, const std::string& subset,
                       std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  const Manifest test_m = load_role_manifest(rc, "test");
  const auto filter = subset_filter(subset);
  if (rc.models.size() < 2)
    throw MosError(ErrorCode::kConfig,
                   "model comparison needs at least two models in the config");
  ComparisonReport report;
  report.alpha = rc.alpha;
  std::vector<std::string> notes;
  for (EvalLevel level : rc.eval_levels) {
    // Observations: one metric value per run, recomputed from stored
    // predictions so the compared numbers match the evaluation reports.
    std::map<std::string, std::vector<MetricSamples>> samples_by_metric;
    for (const auto& spec : rc.models) {
      const auto runs = load_run_predictions(out, rc, spec.id);
      const EvalReport rep = evaluate(runs, test_m, level, filter, subset);
      std::map<std::string, MetricSamples> per_metric;
      for (const char* metric : {"mse", "lcc", "srcc"})
        per_metric[metric].model_id = spec.id;
      size_t dropped = 0;
      for (const auto& rm : rep.per_run) {
        auto push = [&](const char* metric, double v) {
          if (std::isfinite(v))
            per_metric[metric].values.push_back(v);
          else
            ++dropped;
        };
        push("mse", rm.mse);
        push("lcc", rm.lcc);
        push("srcc", rm.srcc);
      }
      if (dropped)
        notes.push_back(spec.id + " at " + to_string(level) + " level: " +
                        std::to_string(dropped) +
                        " non-finite metric value(s) excluded");
      for (const char* metric : {"mse", "lcc", "srcc"})
        samples_by_metric[metric].push_back(std::move(per_metric[metric]));
    }
    for (const char* metric : {"mse", "lcc", "srcc"}) {
      try {
        report.cells.push_back(compare_one_cell(samples_by_metric[metric],
                                                metric, level, rc.alpha));
      } catch (const MosError& e) {
        notes.push_back(std::string(metric) + " at " + to_string(level) +
                        " level skipped: " + e.what());
      }
    }
  }
  nlohmann::json j = to_json(report);
  j["subset"] = subset;
  j["notes"] = notes;
  write_json_file(out.reports_dir() + "/comparison_" + subset + ".json", j);
  std::string text = render_comparison(report);
  for (const auto& n : notes) text += "note: " + n + "\n";
  write_text_file(out.reports_dir() + "/comparison_" + subset + ".txt", text);
  log << text;
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

inline void write_histogram_outputs(const OutputLayout& out,
                                    const std::string& name,
                                    const Histogram& h) {
  std::vector<std::vector<std::string>> rows;
  for (size_t i = 0; i + 1 < h.edges.size(); ++i)
    rows.push_back({format_double(h.edges[i], 6),
                    format_double(h.edges[i + 1], 6),
                    format_double(h.values[i], 6)});
  write_csv(out.analysis_dir() + "/" + name + ".csv",
            {"bin_lo", "bin_hi", "value"}, rows);
  write_text_file(out.analysis_dir() + "/" + name + ".svg",
                  svg_histogram(name, h));
}

inline int cmd_analyze(const RunConfig& rc, std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  std::filesystem::create_directories(out.analysis_dir());
  const Manifest test_m = load_role_manifest(rc, "test");

  for (const char* role : {"train", "test"}) {
    const Manifest m = load_role_manifest(rc, role);
    HistogramSpec spec;
    spec.norm = HistogramSpec::Norm::kProportion;
    write_histogram_outputs(out, std::string("fig_mos_hist_") + role,
                            mos_histogram(m, spec));
    const PercentileBinReport bins = percentile_bins_by_system(m);
    write_json_file(
        out.analysis_dir() + "/fig_system_bins_" + role + ".json",
        to_json(bins));
    std::vector<std::vector<std::string>> rows;
    for (size_t b = 0; b < bins.bins.size(); ++b)
      for (const auto& [type, count] : bins.bins[b].by_type)
        rows.push_back({std::to_string(b + 1), type, std::to_string(count)});
    write_csv(out.analysis_dir() + "/fig_system_bins_" + role + ".csv",
              {"bin", "system_type", "systems"}, rows);
    std::set<std::string> types;
    for (const auto& b : bins.bins)
      for (const auto& [type, count] : b.by_type) types.insert(type);
    std::vector<std::string> cats;
    for (size_t b = 1; b <= bins.bins.size(); ++b)
      cats.push_back("bin " + std::to_string(b));
    std::vector<BarSeries> series;
    for (const auto& type : types) {
      BarSeries s;
      s.label = type;
      for (const auto& b : bins.bins) {
        auto it = b.by_type.find(type);
        s.values.push_back(it == b.by_type.end() ? 0.0
                                                 : static_cast<double>(it->second));
      }
      series.push_back(std::move(s));
    }
    write_text_file(out.analysis_dir() + "/fig_system_bins_" + role + ".svg",
                    svg_bar_chart(std::string("per-system MOS percentile bins (") +
                                      role + ")",
                                  cats, series));
    log << "analyzed " << role << ": " << m.size() << " utterances, "
        << bins.systems.size() << " systems\n";
  }

  // Prediction-dependent views, for models that have trained runs.
  std::vector<std::string> skipped;
  for (EvalLevel level : rc.eval_levels) {
    std::vector<std::string> cats;
    std::map<std::string, BarSeries> series_by_partition;
    for (const auto& spec : rc.models) {
      std::vector<PredictionSet> runs;
      try {
        runs = load_run_predictions(out, rc, spec.id);
      } catch (const MosError&) {
        skipped.push_back(spec.id);
        continue;
      }
      const BreakdownReport br =
          system_type_breakdown(runs, test_m, default_partitions(), level);
      write_json_file(out.analysis_dir() + "/breakdown_" +
                          sanitize_component(spec.id) + "_" +
                          to_string(level) + ".json",
                      to_json(br));
      cats.push_back(spec.id);
      for (const auto& e : br.entries) {
        BarSeries& s = series_by_partition[e.partition];
        s.label = e.partition;
        s.values.push_back(e.report.srcc.mean);
        s.ci_half.push_back(e.report.srcc.ci95_half);
      }
      if (level == rc.eval_levels.front()) {
        const WorstSystemsReport worst = worst_systems_audit(runs, test_m, 5);
        write_json_file(out.analysis_dir() + "/worst_systems_" +
                            sanitize_component(spec.id) + ".json",
                        to_json(worst));
        std::vector<std::vector<std::string>> rows;
        for (const auto& w : worst.items)
          rows.push_back({w.system_id, to_string(w.type),
                          std::to_string(w.utterances),
                          format_double(w.mean_abs_error, 6)});
        write_csv(out.analysis_dir() + "/worst_systems_" +
                      sanitize_component(spec.id) + ".csv",
                  {"system_id", "system_type", "utterances",
                   "mean_abs_system_error"},
                  rows);
      }
    }
    if (!cats.empty()) {
      std::vector<BarSeries> series;
      for (auto& [name, s] : series_by_partition) series.push_back(s);
      write_text_file(out.analysis_dir() + "/fig_breakdown_srcc_" +
                          std::string(to_string(level)) + ".svg",
                      svg_bar_chart("SRCC by system type (" +
                                        std::string(to_string(level)) + ")",
                                    cats, series));
    }
  }
  std::sort(skipped.begin(), skipped.end());
  skipped.erase(std::unique(skipped.begin(), skipped.end()), skipped.end());
  for (const auto& id : skipped)
    log << "skipped prediction-dependent analyses for '" << id
        << "' (no trained runs)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report

inline int cmd_report(const RunConfig& rc, std::ostream& log) {
  const OutputLayout out = output_layout(rc);
  std::string md = "# Benchmark report\n";

  auto section_from_summaries = [&](EvalLevel level) {
    std::string s;
    for (const char* subset : {"all", "tts", "vc"}) {
      const std::string path = out.reports_dir() + "/summary_" +
                               to_string(level) + "_" + subset + ".csv";
      if (!std::filesystem::exists(path)) continue;
      const CsvTable t = read_csv(path);
      s += "\n### " + std::string(to_string(level)) + " level, subset " +
           subset + "\n\n";
      s += "| model | MSE | LCC | SRCC | runs |\n";
      s += "|---|---|---|---|---|\n";
      for (const auto& r : t.rows)
        s += "| " + r[0] + " | " + r[1] + " +/- " + r[2] + " | " + r[3] +
             " +/- " + r[4] + " | " + r[5] + " +/- " + r[6] + " | " + r[7] +
             " |\n";
    }
    return s;
  };

  std::string eval_md;
  for (EvalLevel level : rc.eval_levels) eval_md += section_from_summaries(level);
  md += "\n## Evaluation\n";
  md += eval_md.empty()
            ? "\nNo evaluation summaries found; run 'evaluate' first.\n"
            : eval_md;
  md += "\nMetrics are computed after a per-run first-degree polynomial "
        "mapping of predictions onto the subjective scale, fitted at the "
        "evaluated level; mapped values are not clipped. Intervals are 95% "
        "Student-t over runs.\n";

  md += "\n## Model comparison\n";
  bool have_cmp = false;
  for (const char* subset : {"all", "tts", "vc"}) {
    const std::string path =
        out.reports_dir() + "/comparison_" + std::string(subset) + ".txt";
    if (!std::filesystem::exists(path)) continue;
    std::ifstream f(path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    md += "\n### subset " + std::string(subset) + "\n\n```\n" + text + "```\n";
    have_cmp = true;
  }
  if (!have_cmp) md += "\nNo comparison found; run 'compare' first.\n";

  md += "\n## Analyses\n\n";
  bool have_analysis = false;
  if (std::filesystem::exists(out.analysis_dir())) {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(out.analysis_dir()))
      if (e.is_regular_file()) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      md += "- [" + f + "](analysis/" + f + ")\n";
      have_analysis = true;
    }
  }
  if (!have_analysis) md += "No analysis outputs found; run 'analyze' first.\n";

  // Worst-systems tables inline, most useful part of the audit.
  if (std::filesystem::exists(out.analysis_dir())) {
    std::vector<std::string> worst_files;
    for (const auto& e : std::filesystem::directory_iterator(out.analysis_dir())) {
      const std::string name = e.path().filename().string();
      if (name.rfind("worst_systems_", 0) == 0 &&
          name.size() > 4 && name.substr(name.size() - 4) == ".csv")
        worst_files.push_back(e.path().string());
    }
    std::sort(worst_files.begin(), worst_files.end());
    for (const auto& path : worst_files) {
      const CsvTable t = read_csv(path);
      md += "\n### " +
            std::filesystem::path(path).stem().string() +
            " (mean absolute system error after mapping)\n\n";
      md += "| system | type | utterances | error |\n|---|---|---|---|\n";
      for (const auto& r : t.rows)
        md += "| " + r[0] + " | " + r[1] + " | " + r[2] + " | " + r[3] +
              " |\n";
    }
  }

  const std::string path = out.root + "/report.md";
  write_text_file(path, md);
  log << "wrote " << path << "\n";
  return 0;
}

}  // namespace mosbench
