#pragma once

// Analysis metrics over generated expression keypoints: diversity, beat
// alignment, intensity error, landmark distance and a linear emotion probe.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoint/corpus_io.hpp"
#include "emoint/keypoint_intensity.hpp"

namespace emoint {

// Mean l2 distance between flattened sequences over all unordered pairs.
double diversity(const std::vector<KeypointSequence>& samples);

struct BeatList {
  std::vector<double> times;  // seconds, strictly increasing
};

enum class BeatMode {
  kMaxima,  // audio onsets: local maxima above the signal median
  kMinima,  // kinematic beats: local minima
};

// Strict three-point extrema of a signal sampled at fps; interior frames only.
BeatList extract_beats(const std::vector<double>& signal, double fps, BeatMode mode);

// Half-wave rectified spectral flux of the audio features, one value per frame.
std::vector<double> audio_onset_envelope(const AudioFeatureSequence& audio);
// Keypoint velocity magnitude per frame (the first frame repeats the second).
std::vector<double> motion_speed(const KeypointSequence& seq);

BeatList audio_beats(const AudioFeatureSequence& audio);
BeatList motion_beats(const KeypointSequence& seq);

inline constexpr double kDefaultBeatSigma = 0.1;

// Mean over audio beats of exp(-d^2 / 2σ^2), d the distance to the nearest motion beat.
double beat_align(const BeatList& audio, const BeatList& motion, double sigma = kDefaultBeatSigma);

// Re-labels generated and compares against target frame by frame (MSE).
double intensity_l2(const KeypointSequence& generated, const IntensitySequence& target,
                    const NeutralReference& neutral, const NormalizationSpec& norm);

// Mean per-keypoint Euclidean distance over all frames.
double f_lmd(const KeypointSequence& pred, const KeypointSequence& target);

struct ProbeExample {
  Eigen::VectorXd features;
  std::string label;
};

// Mean-pooled keypoint deviation from neutral.
Eigen::VectorXd probe_features(const KeypointSequence& seq, const NeutralReference& neutral);

struct ProbeConfig {
  int iterations = 500;
  double learning_rate = 0.5;
  double l2 = 1e-4;
};

struct LinearProbe {
  std::vector<std::string> classes;
  Eigen::RowVectorXd mean, scale;
  Eigen::MatrixXd weight;
  Eigen::RowVectorXd bias;

  std::string predict(const Eigen::VectorXd& features) const;
};

// Multinomial logistic regression on standardized features, full-batch
// gradient descent from zero. Throws DegenerateError for a single class.
LinearProbe fit_emotion_probe(const std::vector<ProbeExample>& train_set, const ProbeConfig& config = {});

// Accuracy on eval_set of a probe fitted on train_set. Both sets need at
// least two classes.
double emotion_probe(const std::vector<ProbeExample>& train_set, const std::vector<ProbeExample>& eval_set,
                     const ProbeConfig& config = {});

struct ClipMetrics {
  std::string clip_id;
  double beat_align = 0.0;
  double intensity_l2 = 0.0;
  double f_lmd = 0.0;
  bool has_beats = false;  // clips without beats on either side are left out of beat_align
  bool probe_correct = false;
};

struct MetricReport {
  double diversity = 0.0;
  double beat_align = 0.0;
  double intensity_l2 = 0.0;
  double f_lmd = 0.0;
  double probe_accuracy = 0.0;
  std::vector<ClipMetrics> clips;
};

nlohmann::json to_json(const MetricReport& report);

struct EvaluationInputs {
  std::vector<KeypointSequence> generated;      // expression deviations, one per clip
  std::vector<IntensitySequence> targets;       // conditioning intensity per generated clip
  std::vector<KeypointSequence> references;     // real clips (absolute keypoints)
  std::vector<AudioFeatureSequence> audio;      // features for the generated clips
  std::vector<NeutralReference> neutrals;       // for the real clips
  NormalizationSpec norm;
  double beat_sigma = kDefaultBeatSigma;
};

// Matches generated clips to references and audio by clip_id. The probe is
// fitted on the training split of the references and scored on the
// generated clips against their emotion labels.
MetricReport evaluate(const EvaluationInputs& inputs, const ProbeConfig& probe = {});

}  // namespace emoint
