#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "mosbench/common.hpp"
#include "mosbench/manifest.hpp"
#include "mosbench/rng.hpp"
#include "mosbench/wav.hpp"

namespace mosbench {

struct SyntheticSystemSpec {
  std::string id;
  SystemType type = SystemType::kBc;
  double noise_sigma = 0.1;
};

// 12 systems spanning all source types, noise levels spread so system MOS
// values are well separated.
inline std::vector<SyntheticSystemSpec> default_synthetic_systems() {
  return {
      {"natA", SystemType::kNatural, 0.02}, {"bcA", SystemType::kBc, 0.06},
      {"bcB", SystemType::kBc, 0.12},       {"bcC", SystemType::kBc, 0.20},
      {"bcD", SystemType::kBc, 0.30},       {"bcE", SystemType::kBc, 0.42},
      {"espA", SystemType::kEspnet, 0.56},  {"espB", SystemType::kEspnet, 0.72},
      {"vccA", SystemType::kVcc, 0.90},     {"vccB", SystemType::kVcc, 1.10},
      {"vccC", SystemType::kVcc, 1.35},     {"vccD", SystemType::kVcc, 1.65},
  };
}

// Monotone quality curve: heavier injected noise, lower MOS.
inline double synthetic_mos_for_sigma(double sigma) {
  return 1.3 + 3.5 * std::exp(-1.6 * sigma);
}

struct SyntheticCorpusConfig {
  std::string dir;  // receives wav/ and manifest.csv when write_audio
  int utterances = 600;
  uint64_t seed = 7;
  int sample_rate = 16000;
  double min_duration_s = 0.19;
  double max_duration_s = 0.24;
  double mos_jitter = 0.1;
  bool write_audio = true;
  std::vector<SyntheticSystemSpec> systems = default_synthetic_systems();
};

struct SyntheticCorpus {
  Manifest manifest;          // all rows, split column assigned 3/1/1
  std::string manifest_path;  // set when written to disk
};

// Tone-plus-noise utterances whose ground-truth MOS tracks the injected
// noise level. Split assignment cycles train,train,train,validation,test
// inside each system.
inline SyntheticCorpus generate_corpus(const SyntheticCorpusConfig& cfg) {
  if (cfg.systems.empty())
    throw ValidationError("synthetic corpus: no systems configured");
  if (cfg.utterances < static_cast<int>(cfg.systems.size()))
    throw ValidationError("synthetic corpus: fewer utterances than systems");
  Rng rng(cfg.seed);
  SyntheticCorpus corpus;
  corpus.manifest.name = "synthetic";
  if (cfg.write_audio)
    std::filesystem::create_directories(std::filesystem::path(cfg.dir) / "wav");
  for (int i = 0; i < cfg.utterances; ++i) {
    const auto& sys = cfg.systems[static_cast<size_t>(i) % cfg.systems.size()];
    const int round = i / static_cast<int>(cfg.systems.size());
    Utterance u;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "u%05d", i);
    u.utterance_id = idbuf;
    u.system_id = sys.id;
    u.system_type = sys.type;
    const double jitter = (rng.uniform() * 2.0 - 1.0) * cfg.mos_jitter;
    u.mos = std::clamp(synthetic_mos_for_sigma(sys.noise_sigma) + jitter, 1.0,
                       5.0);
    u.num_raters = 8;
    switch (round % 5) {
      case 0:
      case 1:
      case 2: u.split = Split::kTrain; break;
      case 3: u.split = Split::kVal; break;
      default: u.split = Split::kTest; break;
    }
    const double dur = cfg.min_duration_s +
                       rng.uniform() * (cfg.max_duration_s - cfg.min_duration_s);
    const size_t n = static_cast<size_t>(dur * cfg.sample_rate);
    const double f0 = 110.0 + rng.uniform() * 190.0;
    const double f1 = f0 * (2.0 + rng.uniform());
    const double phase = rng.uniform() * 2.0 * M_PI;
    std::vector<double> audio(n);
    for (size_t t = 0; t < n; ++t) {
      const double x = static_cast<double>(t) / cfg.sample_rate;
      audio[t] = 0.35 * std::sin(2.0 * M_PI * f0 * x + phase) +
                 0.15 * std::sin(2.0 * M_PI * f1 * x) +
                 sys.noise_sigma * rng.gaussian();
    }
    if (cfg.write_audio) {
      const auto path =
          std::filesystem::path(cfg.dir) / "wav" / (u.utterance_id + ".wav");
      write_wav_pcm16(path.string(), audio, cfg.sample_rate);
      // Relative to the manifest, so the corpus directory is relocatable.
      u.audio_path = "wav/" + u.utterance_id + ".wav";
    } else {
      u.audio_path = "unwritten://" + u.utterance_id;
    }
    corpus.manifest.utterances.push_back(std::move(u));
  }
  if (cfg.write_audio) {
    const auto mpath = std::filesystem::path(cfg.dir) / "manifest.csv";
    save_manifest(corpus.manifest, mpath.string());
    corpus.manifest_path = mpath.string();
  }
  return corpus;
}

// Label-only population for subsampling studies: no audio, MOS drawn from a
// two-hump mixture so the bin histogram has structure worth preserving.
inline Manifest generate_label_population(size_t n, uint64_t seed,
                                          const std::string& name = "pop") {
  Rng rng(seed);
  Manifest m;
  m.name = name;
  m.utterances.reserve(n);
  const SystemType types[] = {SystemType::kBc, SystemType::kEspnet,
                              SystemType::kVcc, SystemType::kNatural};
  for (size_t i = 0; i < n; ++i) {
    Utterance u;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "p%07zu", i);
    u.utterance_id = idbuf;
    u.system_id = "sys" + std::to_string(i % 200);
    u.system_type = types[(i / 200) % 4];
    const double center = rng.uniform() < 0.6 ? 3.8 : 2.1;
    u.mos = std::clamp(center + rng.gaussian() * 0.55, 1.0, 5.0);
    u.num_raters = 1 + static_cast<int>(rng.below(16));
    u.split = Split::kTrain;
    u.audio_path = "unwritten://" + u.utterance_id;
    m.utterances.push_back(std::move(u));
  }
  return m;
}

}  // namespace mosbench
