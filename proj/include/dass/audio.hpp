#pragma once

// Waveform -> log-mel filterbank features. Framing uses a Hann window, the
// power spectrum comes from an in-repo radix-2 FFT, and mel weights follow
// the HTK convention mel(f) = 2595 log10(1 + f/700). All spectral math runs
// in double; the output is cast to the caller's precision.

#include <complex>
#include <string>
#include <vector>

#include "dass/common.hpp"

namespace dass {

struct FbankConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int mel_bins = 128;
  double log_floor = 1e-10;
  double fmin = 20.0;
  double fmax = 0.0;  // 0 => Nyquist
  // dataset normalization, applied as (x - mean) / stddev
  double mean = 0.0;
  double stddev = 1.0;

  int window_samples() const { return int(window_ms * sample_rate / 1000.0 + 0.5); }
  int hop_samples() const { return int(hop_ms * sample_rate / 1000.0 + 0.5); }
  double nyquist() const { return sample_rate / 2.0; }
  double fmax_hz() const { return fmax > 0.0 ? fmax : nyquist(); }

  void validate() const {
    require_param(sample_rate > 0, "FbankConfig: sample_rate");
    require_param(mel_bins >= 1, "FbankConfig: mel_bins >= 1");
    require_param(hop_samples() >= 1 && window_samples() >= 1, "FbankConfig: window/hop");
    require_param(hop_samples() <= window_samples(), "FbankConfig: hop must be <= window");
    require_param(log_floor > 0.0, "FbankConfig: log_floor");
    require_param(stddev > 0.0, "FbankConfig: stddev");
    require_param(fmin >= 0.0 && fmin < fmax_hz(), "FbankConfig: band");
  }

  int frame_count(std::size_t samples) const {
    int win = window_samples();
    if (int(samples) < win) return 0;
    return 1 + (int(samples) - win) / hop_samples();
  }
  int frames_for_seconds(double seconds) const {
    return frame_count(std::size_t(seconds * sample_rate + 0.5));
  }

  // Smaller toy pipeline used by the desk-scale experiments.
  static FbankConfig toy() {
    FbankConfig c;
    c.window_ms = 50.0;
    c.hop_ms = 40.0;
    c.mel_bins = 32;
    return c;
  }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  require_arg(n && (n & (n - 1)) == 0, "fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / double(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Triangular mel filterbank over FFT bins; returns mel_bins rows of
// (fft_size/2 + 1) weights plus the per-filter peak frequencies.
struct MelBank {
  int n_fft_bins = 0;
  std::vector<std::vector<double>> weights;
  std::vector<double> center_hz;
};

inline MelBank make_mel_bank(const FbankConfig& cfg, int fft_size) {
  MelBank bank;
  bank.n_fft_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin), mel_hi = hz_to_mel(cfg.fmax_hz());
  std::vector<double> edges(std::size_t(cfg.mel_bins) + 2, 0.0);
  for (int i = 0; i < cfg.mel_bins + 2; ++i)
    edges[std::size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / double(cfg.mel_bins + 1));
  bank.weights.assign(std::size_t(cfg.mel_bins),
                      std::vector<double>(std::size_t(bank.n_fft_bins), 0.0));
  bank.center_hz.assign(std::size_t(cfg.mel_bins), 0.0);
  const double bin_hz = double(cfg.sample_rate) / fft_size;
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double fl = edges[std::size_t(m)], fc = edges[std::size_t(m) + 1],
                 fr = edges[std::size_t(m) + 2];
    bank.center_hz[std::size_t(m)] = fc;
    for (int b = 0; b < bank.n_fft_bins; ++b) {
      double f = b * bin_hz;
      double w = 0.0;
      if (f > fl && f < fc)
        w = (f - fl) / (fc - fl);
      else if (f >= fc && f < fr)
        w = (fr - f) / (fr - fc);
      bank.weights[std::size_t(m)][std::size_t(b)] = w;
    }
  }
  return bank;
}

template <typename T>
T normalize_value(double x, const FbankConfig& cfg) {
  return T((x - cfg.mean) / cfg.stddev);
}
template <typename T>
T denormalize_value(T x, const FbankConfig& cfg) {
  return T(double(x) * cfg.stddev + cfg.mean);
}

// The fill value used for zero-padded haystacks: a zero-power cell after the
// log and normalization.
template <typename T>
T zero_pad_value(const FbankConfig& cfg) {
  return normalize_value<T>(std::log(cfg.log_floor), cfg);
}

// waveform -> frames x mel_bins normalized log-mel features.
template <typename T>
Mat<T> fbank(const std::vector<double>& waveform, const FbankConfig& cfg) {
  cfg.validate();
  require_arg(!waveform.empty(), "fbank: empty waveform");
  const int win = cfg.window_samples(), hop = cfg.hop_samples();
  const int frames = cfg.frame_count(waveform.size());
  require_arg(frames >= 1, "fbank: waveform shorter than one window");

  int fft_size = 1;
  while (fft_size < win) fft_size <<= 1;
  MelBank bank = make_mel_bank(cfg, fft_size);

  std::vector<double> hann(std::size_t(win), 0.0);
  for (int i = 0; i < win; ++i) hann[std::size_t(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / win);

  Mat<T> out(frames, cfg.mel_bins);
  std::vector<std::complex<double>> buf(std::size_t(fft_size), std::complex<double>(0.0, 0.0));
  std::vector<double> power(std::size_t(bank.n_fft_bins), 0.0);
  for (int fr = 0; fr < frames; ++fr) {
    const std::size_t start = std::size_t(fr) * std::size_t(hop);
    for (int i = 0; i < win; ++i)
      buf[std::size_t(i)] = waveform[start + std::size_t(i)] * hann[std::size_t(i)];
    for (int i = win; i < fft_size; ++i) buf[std::size_t(i)] = 0.0;
    fft_radix2(buf);
    for (int b = 0; b < bank.n_fft_bins; ++b) power[std::size_t(b)] = std::norm(buf[std::size_t(b)]);
    for (int m = 0; m < cfg.mel_bins; ++m) {
      const auto& w = bank.weights[std::size_t(m)];
      double acc = 0.0;
      for (int b = 0; b < bank.n_fft_bins; ++b) acc += w[std::size_t(b)] * power[std::size_t(b)];
      out(fr, m) = normalize_value<T>(std::log(acc + cfg.log_floor), cfg);
    }
  }
  return out;
}

inline double waveform_power(const std::vector<double>& w) {
  if (w.empty()) return 0.0;
  double s = 0.0;
  for (double v : w) s += v * v;
  return s / double(w.size());
}

// 16-bit PCM mono WAV files.
std::vector<double> read_wav(const std::string& path, int expected_rate = 0);
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);

}  // namespace dass
