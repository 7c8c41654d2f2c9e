#include "emoint/audio_features.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "emoint/errors.hpp"
#include "emoint/rng.hpp"

namespace emoint {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters on the mel scale, bins × bands.
Eigen::MatrixXd mel_filterbank(const AudioFeatureConfig& c) {
  const int bins = c.fft_size / 2 + 1;
  const double lo = hz_to_mel(50.0);
  const double hi = hz_to_mel(c.sample_rate / 2.0);
  std::vector<double> centers(static_cast<std::size_t>(c.mel_bands + 2));
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double mel = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(c.mel_bands + 1);
    centers[i] = mel_to_hz(mel) * c.fft_size / c.sample_rate;  // in bins
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(bins, c.mel_bands);
  for (int m = 0; m < c.mel_bands; ++m) {
    const double l = centers[m], ctr = centers[m + 1], r = centers[m + 2];
    for (int b = 0; b < bins; ++b) {
      const double x = b;
      double w = 0.0;
      if (x > l && x <= ctr) w = (x - l) / (ctr - l);
      if (x > ctr && x < r) w = (r - x) / (r - ctr);
      fb(b, m) = w;
    }
  }
  return fb;
}

struct FftwPlan {
  fftw_plan plan = nullptr;
  ~FftwPlan() {
    if (plan) fftw_destroy_plan(plan);
  }
};

}  // namespace

ag::Matrix log_mel_energies(const Waveform& wave, const AudioFeatureConfig& c) {
  if (wave.sample_rate != c.sample_rate) {
    throw DomainError("audio features expect " + std::to_string(c.sample_rate) + " Hz audio, got " +
                      std::to_string(wave.sample_rate));
  }
  if (c.window > c.fft_size) throw ConfigError("feature window longer than FFT size");
  const Eigen::Index frames = static_cast<Eigen::Index>(wave.samples.size()) / c.hop;
  if (frames < 1) throw DimensionError("waveform shorter than one feature hop");
  const int bins = c.fft_size / 2 + 1;

  std::unique_ptr<double, decltype(&fftw_free)> in(
      static_cast<double*>(fftw_malloc(sizeof(double) * c.fft_size)), &fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> out(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)), &fftw_free);
  FftwPlan plan;
  plan.plan = fftw_plan_dft_r2c_1d(c.fft_size, in.get(), out.get(), FFTW_ESTIMATE);

  std::vector<double> hann(static_cast<std::size_t>(c.window));
  for (int i = 0; i < c.window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / c.window);
  }
  const Eigen::MatrixXd fb = mel_filterbank(c);
  ag::Matrix energies(frames, c.mel_bands);
  Eigen::RowVectorXd power(bins);
  for (Eigen::Index t = 0; t < frames; ++t) {
    std::fill(in.get(), in.get() + c.fft_size, 0.0);
    const std::size_t start = static_cast<std::size_t>(t * c.hop);
    for (int i = 0; i < c.window; ++i) {
      const std::size_t s = start + static_cast<std::size_t>(i);
      const double v = s < wave.samples.size() ? wave.samples[s] / 32768.0 : 0.0;
      in.get()[i] = v * hann[i];
    }
    fftw_execute(plan.plan);
    for (int b = 0; b < bins; ++b) {
      power[b] = out.get()[b][0] * out.get()[b][0] + out.get()[b][1] * out.get()[b][1];
    }
    energies.row(t) = ((power * fb).array() + 1e-10).log10().matrix();
  }
  return energies;
}

AudioFeatureSequence extract_features(const Waveform& wave, const AudioFeatureConfig& c) {
  const ag::Matrix mel = log_mel_energies(wave, c);
  Rng rng(c.projection_seed, "audio-feature-projection");
  const ag::Matrix proj = rng.normal_matrix(c.mel_bands, c.dim, 1.0 / std::sqrt(c.mel_bands));
  // Fixed affine pre-scaling keeps typical log10 energies (about -8..2) near unit range.
  const ag::Matrix centered = ((mel.array() + 3.0) / 3.0).matrix();
  AudioFeatureSequence seq;
  seq.features = centered * proj;
  seq.fps = static_cast<double>(c.sample_rate) / c.hop;
  return seq;
}

}  // namespace emoint
