#pragma once

// Deterministic stand-in for a pretrained speech encoder: log-mel filterbank
// energies per video frame, projected to a fixed width by a frozen seeded
// matrix. Real features can be supplied as feature files instead.

#include <cstdint>

#include "emoint/corpus_io.hpp"

namespace emoint {

struct AudioFeatureConfig {
  int sample_rate = 16000;
  int hop = 640;  // 16 kHz / 640 = 25 frames per second
  int window = 640;
  int fft_size = 1024;
  int mel_bands = 40;
  int dim = 64;
  std::uint64_t projection_seed = 0x5EEDF00DULL;
};

// One feature row per complete hop of samples.
AudioFeatureSequence extract_features(const Waveform& wave, const AudioFeatureConfig& config);

// Log-mel energies before projection (frames × mel_bands).
ag::Matrix log_mel_energies(const Waveform& wave, const AudioFeatureConfig& config);

}  // namespace emoint
