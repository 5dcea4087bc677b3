#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mosbench/common.hpp"
#include "mosbench/fft.hpp"
#include "mosbench/wav.hpp"

namespace mosbench {

struct MelConfig {
  int sample_rate_hz = 16000;
  double window_ms = 32.0;
  double hop_ms = 10.0;
  int n_mels = 48;
  int patch_frames = 15;
  int patch_hop_frames = 4;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-7;
  bool normalize = false;  // per-utterance mean/variance normalization

  int window_samples() const {
    return static_cast<int>(std::lround(window_ms * sample_rate_hz / 1000.0));
  }
  int hop_samples() const {
    return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
  }

  void validate() const {
    if (sample_rate_hz <= 0 || window_ms <= 0 || hop_ms <= 0 || n_mels < 1 ||
        patch_frames < 1 || patch_hop_frames < 1 || log_floor <= 0)
      throw ValidationError("MelConfig: all fields must be positive");
    if (hop_ms > window_ms)
      throw ValidationError("MelConfig: hop_ms must be <= window_ms");
    if (fmax_hz <= fmin_hz || fmax_hz > sample_rate_hz / 2.0 + 1e-9)
      throw ValidationError("MelConfig: bad mel frequency range");
  }

  std::string canonical_string() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "sr=%d;win=%.6g;hop=%.6g;mels=%d;pf=%d;ph=%d;f=%.6g-%.6g;floor=%.6g;norm=%d",
                  sample_rate_hz, window_ms, hop_ms, n_mels, patch_frames,
                  patch_hop_frames, fmin_hz, fmax_hz, log_floor,
                  normalize ? 1 : 0);
    return buf;
  }
  uint64_t hash() const { return fnv1a(canonical_string()); }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filterbank over FFT bins 0..n_fft/2, HTK mel spacing,
// unnormalized weights. Row f holds the weights of mel band f.
inline Eigen::MatrixXd mel_filterbank(const MelConfig& cfg) {
  const int n_fft = cfg.window_samples();
  const int n_bins = n_fft / 2 + 1;
  const double m_lo = hz_to_mel(cfg.fmin_hz);
  const double m_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, n_bins);
  for (int f = 0; f < cfg.n_mels; ++f) {
    const double lo = edges[f], c = edges[f + 1], hi = edges[f + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double freq = static_cast<double>(k) * cfg.sample_rate_hz / n_fft;
      double w = 0.0;
      if (freq >= lo && freq <= c && c > lo) w = (freq - lo) / (c - lo);
      else if (freq > c && freq <= hi && hi > c) w = (hi - freq) / (hi - c);
      fb(f, k) = w;
    }
  }
  return fb;
}

// Log-compressed mel energies, one column per frame.
// T = 1 + floor((L - window) / hop). Audio shorter than one window is a
// structured error; resampling to cfg.sample_rate_hz happens here.
inline Eigen::MatrixXd compute_mel(const std::vector<double>& audio,
                                   int sample_rate, const MelConfig& cfg) {
  cfg.validate();
  if (audio.empty())
    throw MosError(ErrorCode::kAudioTooShort, "compute_mel: empty audio");
  const std::vector<double>* samples = &audio;
  std::vector<double> resampled;
  if (sample_rate != cfg.sample_rate_hz) {
    resampled = resample_linear(audio, sample_rate, cfg.sample_rate_hz);
    samples = &resampled;
  }
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  const auto n = static_cast<long>(samples->size());
  if (n < win)
    throw MosError(ErrorCode::kAudioTooShort,
                   "compute_mel: audio has " + std::to_string(n) +
                       " samples, shorter than one window (" +
                       std::to_string(win) + ")");
  const long frames = 1 + (n - win) / hop;

  std::vector<double> hann(win);
  for (int i = 0; i < win; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

  const Eigen::MatrixXd fb = mel_filterbank(cfg);
  Eigen::MatrixXd mel(cfg.n_mels, frames);
  std::vector<double> frame(win);
  for (long t = 0; t < frames; ++t) {
    const long off = t * hop;
    for (int i = 0; i < win; ++i) frame[i] = (*samples)[off + i] * hann[i];
    const std::vector<double> power = power_spectrum(frame);
    const Eigen::Map<const Eigen::VectorXd> p(power.data(),
                                              static_cast<long>(power.size()));
    Eigen::VectorXd energies = fb * p;
    for (int f = 0; f < cfg.n_mels; ++f)
      mel(f, t) = std::log(std::max(energies(f), cfg.log_floor));
  }
  if (cfg.normalize) {
    const double mean = mel.mean();
    const double var = (mel.array() - mean).square().mean();
    const double sd = std::sqrt(std::max(var, 1e-12));
    mel = ((mel.array() - mean) / sd).matrix();
  }
  return mel;
}

// An utterance rendered as a sequence of n_mels x patch_frames patches.
struct MelPatchSequence {
  std::string utterance_id;
  std::vector<Eigen::MatrixXd> patches;
  MelConfig config;
  bool padded = false;  // true when the source was right-padded to one patch
};

// Contiguous column slices; inputs shorter than one patch are right-padded
// with the log floor (flagged). n_patches = 1 + floor((T - pf) / hop).
inline MelPatchSequence make_patches(const Eigen::MatrixXd& mel,
                                     const MelConfig& cfg,
                                     std::string utterance_id = {}) {
  MelPatchSequence seq;
  seq.utterance_id = std::move(utterance_id);
  seq.config = cfg;
  const long T = mel.cols();
  const int pf = cfg.patch_frames;
  const int ph = cfg.patch_hop_frames;
  if (T < pf) {
    Eigen::MatrixXd padded =
        Eigen::MatrixXd::Constant(mel.rows(), pf, std::log(cfg.log_floor));
    padded.leftCols(T) = mel;
    seq.patches.push_back(std::move(padded));
    seq.padded = true;
    return seq;
  }
  const long n = 1 + (T - pf) / ph;
  seq.patches.reserve(n);
  for (long k = 0; k < n; ++k)
    seq.patches.push_back(mel.block(0, k * ph, mel.rows(), pf));
  return seq;
}

inline MelPatchSequence patches_from_audio(const std::vector<double>& audio,
                                           int sample_rate, const MelConfig& cfg,
                                           std::string utterance_id = {}) {
  return make_patches(compute_mel(audio, sample_rate, cfg), cfg,
                      std::move(utterance_id));
}

// On-disk patch cache keyed by (audio content hash, config hash).
// Binary round-trip is bit-exact. Writers stage to a temp file and rename,
// so concurrent readers only ever see complete entries.
class PatchCache {
 public:
  explicit PatchCache(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  static uint64_t key(uint64_t audio_hash, const MelConfig& cfg) {
    uint64_t h = audio_hash;
    h = fnv1a(cfg.canonical_string(), h);
    return h;
  }

  std::optional<MelPatchSequence> load(uint64_t cache_key) const {
    const std::string path = entry_path(cache_key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MBMP", 4) != 0) return std::nullopt;
    uint32_t version = 0, rows = 0, cols = 0, count = 0;
    uint8_t padded = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    in.read(reinterpret_cast<char*>(&count), 4);
    in.read(reinterpret_cast<char*>(&padded), 1);
    if (!in || version != 1) return std::nullopt;
    MelPatchSequence seq;
    seq.padded = padded != 0;
    seq.patches.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
      seq.patches[i].resize(rows, cols);
      in.read(reinterpret_cast<char*>(seq.patches[i].data()),
              static_cast<std::streamsize>(sizeof(double) * rows * cols));
    }
    if (!in) return std::nullopt;
    return seq;
  }

  void store(uint64_t cache_key, const MelPatchSequence& seq) const {
    const std::string path = entry_path(cache_key);
    const std::string tmp =
        path + ".tmp" +
        std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw MosError(ErrorCode::kIo, "cannot write cache: " + tmp);
      out.write("MBMP", 4);
      const uint32_t version = 1;
      const uint32_t rows = seq.patches.empty()
                                ? 0
                                : static_cast<uint32_t>(seq.patches[0].rows());
      const uint32_t cols = seq.patches.empty()
                                ? 0
                                : static_cast<uint32_t>(seq.patches[0].cols());
      const auto count = static_cast<uint32_t>(seq.patches.size());
      const uint8_t padded = seq.padded ? 1 : 0;
      out.write(reinterpret_cast<const char*>(&version), 4);
      out.write(reinterpret_cast<const char*>(&rows), 4);
      out.write(reinterpret_cast<const char*>(&cols), 4);
      out.write(reinterpret_cast<const char*>(&count), 4);
      out.write(reinterpret_cast<const char*>(&padded), 1);
      for (const auto& p : seq.patches)
        out.write(reinterpret_cast<const char*>(p.data()),
                  static_cast<std::streamsize>(sizeof(double) * p.size()));
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::string entry_path(uint64_t cache_key) const {
    return dir_ + "/" + hex64(cache_key) + ".melpatch";
  }
  std::string dir_;
};

}  // namespace mosbench
