#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "mosbench/mel.hpp"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"

using namespace mosbench;

namespace {

std::vector<double> random_signal(size_t n, uint32_t seed, double amp = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  std::vector<double> x(n);
  for (auto& v : x) v = d(gen);
  return x;
}

}  // namespace

TEST_CASE("power spectrum matches a quadratic-time transform", "[features]") {
  for (size_t n : {size_t{8}, size_t{64}, size_t{512}, size_t{96}}) {
    const auto x = random_signal(n, 1234 + static_cast<uint32_t>(n));
    const auto got = power_spectrum(x);
    const auto ref = oracle::dft(x);
    REQUIRE(got.size() == n / 2 + 1);
    for (size_t k = 0; k <= n / 2; ++k) {
      const double want = std::norm(ref[k]);
      REQUIRE_THAT(got[k], Catch::Matchers::WithinAbs(want, 1e-7 * (1.0 + want)));
    }
  }
}

TEST_CASE("fft of an impulse is flat", "[features]") {
  std::vector<std::complex<double>> a(16, 0.0);
  a[0] = 1.0;
  fft_radix2(a);
  for (const auto& v : a) {
    REQUIRE_THAT(v.real(), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(v.imag(), Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
}

TEST_CASE("mel filterbank matches the triangle construction", "[features]") {
  MelConfig cfg;
  const Eigen::MatrixXd fb = mel_filterbank(cfg);
  const int n_fft = cfg.window_samples();
  REQUIRE(fb.rows() == cfg.n_mels);
  REQUIRE(fb.cols() == n_fft / 2 + 1);

  const double m_lo = oracle::hz_to_mel(cfg.fmin_hz);
  const double m_hi = oracle::hz_to_mel(cfg.fmax_hz);
  std::vector<double> corners(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    corners[i] = oracle::mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));

  for (int f = 0; f < cfg.n_mels; ++f) {
    double row_sum = 0.0;
    for (int k = 0; k <= n_fft / 2; ++k) {
      const double freq = static_cast<double>(k) * cfg.sample_rate_hz / n_fft;
      const double want =
          oracle::tri_weight(freq, corners[f], corners[f + 1], corners[f + 2]);
      REQUIRE_THAT(fb(f, k), Catch::Matchers::WithinAbs(want, 1e-12));
      row_sum += fb(f, k);
    }
    // Every band must cover at least one FFT bin at 48 mels / 16 kHz.
    REQUIRE(row_sum > 0.0);
  }
}

TEST_CASE("log mel frames match a direct computation", "[features]") {
  MelConfig cfg;
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  const auto audio = random_signal(960, 99, 0.5);
  const Eigen::MatrixXd mel = compute_mel(audio, cfg.sample_rate_hz, cfg);
  const long frames = 1 + (static_cast<long>(audio.size()) - win) / hop;
  REQUIRE(mel.rows() == cfg.n_mels);
  REQUIRE(mel.cols() == frames);

  const double m_lo = oracle::hz_to_mel(cfg.fmin_hz);
  const double m_hi = oracle::hz_to_mel(cfg.fmax_hz);
  std::vector<double> corners(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    corners[i] = oracle::mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));

  for (long t = 0; t < frames; ++t) {
    std::vector<double> frame(win);
    for (int i = 0; i < win; ++i) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);
      frame[i] = audio[t * hop + i] * hann;
    }
    const auto spec = oracle::dft(frame);
    for (int f = 0; f < cfg.n_mels; ++f) {
      double e = 0.0;
      for (int k = 0; k <= win / 2; ++k) {
        const double freq = static_cast<double>(k) * cfg.sample_rate_hz / win;
        e += oracle::tri_weight(freq, corners[f], corners[f + 1],
                                corners[f + 2]) *
             std::norm(spec[k]);
      }
      const double want = std::log(std::max(e, cfg.log_floor));
      REQUIRE_THAT(mel(f, t), Catch::Matchers::WithinAbs(want, 1e-8));
    }
  }
}

TEST_CASE("too-short audio is a structured error", "[features]") {
  MelConfig cfg;
  REQUIRE_THROWS_MATCHES(
      compute_mel({}, cfg.sample_rate_hz, cfg), MosError,
      Catch::Matchers::Predicate<MosError>([](const MosError& e) {
        return e.code() == ErrorCode::kAudioTooShort;
      }));
  const auto tiny = random_signal(100, 5);
  try {
    compute_mel(tiny, cfg.sample_rate_hz, cfg);
    FAIL("expected kAudioTooShort");
  } catch (const MosError& e) {
    REQUIRE(e.code() == ErrorCode::kAudioTooShort);
  }
}

TEST_CASE("resampling on the way into the frontend", "[features]") {
  MelConfig cfg;
  // A constant 8 kHz signal resampled to 16 kHz stays constant, so every
  // frame of the two computations agrees.
  std::vector<double> flat(4000, 0.25);
  const Eigen::MatrixXd a = compute_mel(flat, 8000, cfg);
  std::vector<double> flat16(8000, 0.25);
  const Eigen::MatrixXd b = compute_mel(flat16, 16000, cfg);
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("patch slicing walks the frame axis with the configured hop",
          "[features]") {
  MelConfig cfg;
  std::mt19937 gen(7);
  std::uniform_int_distribution<int> tdist(cfg.patch_frames, 90);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = tdist(gen);
    Eigen::MatrixXd mel = Eigen::MatrixXd::Random(cfg.n_mels, T);
    const MelPatchSequence seq = make_patches(mel, cfg, "u1");
    const long want_n = 1 + (T - cfg.patch_frames) / cfg.patch_hop_frames;
    REQUIRE(static_cast<long>(seq.patches.size()) == want_n);
    REQUIRE_FALSE(seq.padded);
    REQUIRE(seq.utterance_id == "u1");
    for (long k = 0; k < want_n; ++k) {
      REQUIRE(seq.patches[k].rows() == cfg.n_mels);
      REQUIRE(seq.patches[k].cols() == cfg.patch_frames);
      for (int j = 0; j < cfg.patch_frames; ++j)
        REQUIRE(seq.patches[k].col(j) ==
                mel.col(k * cfg.patch_hop_frames + j));
    }
  }
}

TEST_CASE("short utterances are right-padded with the log floor",
          "[features]") {
  MelConfig cfg;
  const int T = 7;
  Eigen::MatrixXd mel = Eigen::MatrixXd::Random(cfg.n_mels, T);
  const MelPatchSequence seq = make_patches(mel, cfg);
  REQUIRE(seq.patches.size() == 1);
  REQUIRE(seq.padded);
  const Eigen::MatrixXd& p = seq.patches[0];
  REQUIRE(p.cols() == cfg.patch_frames);
  for (int j = 0; j < T; ++j) REQUIRE(p.col(j) == mel.col(j));
  const double floor_val = std::log(cfg.log_floor);
  for (int j = T; j < cfg.patch_frames; ++j)
    for (int i = 0; i < cfg.n_mels; ++i) REQUIRE(p(i, j) == floor_val);
}

TEST_CASE("per-utterance normalization zeroes mean and fixes variance",
          "[features]") {
  MelConfig cfg;
  cfg.normalize = true;
  const auto audio = random_signal(1600, 21, 0.8);
  const Eigen::MatrixXd mel = compute_mel(audio, cfg.sample_rate_hz, cfg);
  const double mean = mel.mean();
  const double var = (mel.array() - mean).square().mean();
  REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-10));
  REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-8));

  MelConfig plain;
  REQUIRE(cfg.canonical_string() != plain.canonical_string());
  REQUIRE(cfg.hash() != plain.hash());
}

TEST_CASE("patch cache round-trips bit-exactly", "[features]") {
  const testutil::TempDir dir("cache");
  PatchCache cache(dir.str());
  MelConfig cfg;
  MelPatchSequence seq;
  seq.config = cfg;
  seq.padded = true;
  for (int i = 0; i < 3; ++i)
    seq.patches.push_back(Eigen::MatrixXd::Random(cfg.n_mels, cfg.patch_frames));

  const uint64_t audio_hash = fnv1a("fake audio bytes");
  const uint64_t key = PatchCache::key(audio_hash, cfg);
  REQUIRE_FALSE(cache.load(key).has_value());
  cache.store(key, seq);
  const auto back = cache.load(key);
  REQUIRE(back.has_value());
  REQUIRE(back->padded == seq.padded);
  REQUIRE(back->patches.size() == seq.patches.size());
  for (size_t i = 0; i < seq.patches.size(); ++i)
    REQUIRE(back->patches[i] == seq.patches[i]);

  MelConfig other = cfg;
  other.normalize = true;
  REQUIRE(PatchCache::key(audio_hash, other) != key);
  REQUIRE(PatchCache::key(fnv1a("different audio"), cfg) != key);
}
