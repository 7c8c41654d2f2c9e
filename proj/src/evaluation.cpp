#include "emoint/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "emoint/errors.hpp"

namespace emoint {

namespace {

void require_same_shape(const KeypointSequence& a, const KeypointSequence& b, const char* what) {
  if (a.size() != b.size() || a.keypoint_count() != b.keypoint_count()) {
    throw DimensionError(std::string(what) + ": sequences differ in shape (" + std::to_string(a.size()) + "x" +
                         std::to_string(a.keypoint_count()) + " vs " + std::to_string(b.size()) + "x" +
                         std::to_string(b.keypoint_count()) + ")");
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename T>
const T* find_clip(const std::vector<T>& items, const std::string& clip_id) {
  for (const auto& x : items) {
    if (x.clip_id == clip_id) return &x;
  }
  return nullptr;
}

}  // namespace

double diversity(const std::vector<KeypointSequence>& samples) {
  if (samples.size() < 2) throw InsufficientDataError("diversity needs at least two samples");
  for (const auto& s : samples) require_same_shape(s, samples.front(), "diversity");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      double sq = 0.0;
      for (std::size_t t = 0; t < samples[i].size(); ++t) {
        sq += (samples[i].frames[t].points.cast<double>() - samples[j].frames[t].points.cast<double>()).squaredNorm();
      }
      total += std::sqrt(sq);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

BeatList extract_beats(const std::vector<double>& signal, double fps, BeatMode mode) {
  if (signal.size() < 3) throw InsufficientDataError("beat extraction needs at least three samples");
  if (!(fps > 0.0)) throw DomainError("beat extraction needs a positive frame rate");
  const double threshold = mode == BeatMode::kMaxima ? median(signal) : 0.0;
  BeatList beats;
  for (std::size_t t = 1; t + 1 < signal.size(); ++t) {
    const double a = signal[t - 1], b = signal[t], c = signal[t + 1];
    const bool hit = mode == BeatMode::kMaxima ? (b > a && b > c && b > threshold) : (b < a && b < c);
    if (hit) beats.times.push_back(static_cast<double>(t) / fps);
  }
  return beats;
}

std::vector<double> audio_onset_envelope(const AudioFeatureSequence& audio) {
  const auto& f = audio.features;
  std::vector<double> env(static_cast<std::size_t>(f.rows()), 0.0);
  for (Eigen::Index t = 1; t < f.rows(); ++t) {
    env[static_cast<std::size_t>(t)] = (f.row(t) - f.row(t - 1)).cwiseMax(0.0).sum();
  }
  return env;
}

std::vector<double> motion_speed(const KeypointSequence& seq) {
  std::vector<double> speed(seq.size(), 0.0);
  for (std::size_t t = 1; t < seq.size(); ++t) {
    speed[t] = (seq.frames[t].points.cast<double>() - seq.frames[t - 1].points.cast<double>()).norm();
  }
  if (speed.size() > 1) speed[0] = speed[1];
  return speed;
}

BeatList audio_beats(const AudioFeatureSequence& audio) {
  return extract_beats(audio_onset_envelope(audio), audio.fps, BeatMode::kMaxima);
}

BeatList motion_beats(const KeypointSequence& seq) {
  return extract_beats(motion_speed(seq), seq.fps, BeatMode::kMinima);
}

double beat_align(const BeatList& audio, const BeatList& motion, double sigma) {
  if (audio.times.empty() || motion.times.empty()) throw InsufficientDataError("beat_align needs beats on both sides");
  if (!(sigma > 0.0)) throw DomainError("beat_align sigma must be positive");
  double total = 0.0;
  for (double ta : audio.times) {
    // motion times are sorted: the nearest beat is adjacent to the insertion point.
    auto it = std::lower_bound(motion.times.begin(), motion.times.end(), ta);
    double d = std::numeric_limits<double>::infinity();
    if (it != motion.times.end()) d = std::min(d, std::abs(*it - ta));
    if (it != motion.times.begin()) d = std::min(d, std::abs(*std::prev(it) - ta));
    total += std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return total / static_cast<double>(audio.times.size());
}

double intensity_l2(const KeypointSequence& generated, const IntensitySequence& target,
                    const NeutralReference& neutral, const NormalizationSpec& norm) {
  if (generated.size() != target.size()) {
    throw AlignmentError("intensity_l2: " + std::to_string(generated.size()) + " generated frames vs " +
                         std::to_string(target.size()) + " target frames");
  }
  if (target.size() == 0) throw AlignmentError("intensity_l2: empty sequences");
  const IntensitySequence measured = label_sequence(generated, neutral, norm);
  double s = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const double d = measured.values[t] - target.values[t];
    s += d * d;
  }
  return s / static_cast<double>(target.size());
}

double f_lmd(const KeypointSequence& pred, const KeypointSequence& target) {
  require_same_shape(pred, target, "f_lmd");
  const Eigen::Index K = pred.keypoint_count();
  if (pred.size() == 0 || K == 0) throw DimensionError("f_lmd: empty sequences");
  double total = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    total += (pred.frames[t].points.cast<double>() - target.frames[t].points.cast<double>()).rowwise().norm().sum();
  }
  return total / (static_cast<double>(pred.size()) * static_cast<double>(K));
}

Eigen::VectorXd probe_features(const KeypointSequence& seq, const NeutralReference& neutral) {
  const Eigen::Index K = seq.keypoint_count();
  if (neutral.neutral_points.rows() != K) throw DimensionError("probe_features: neutral reference has the wrong K");
  if (seq.size() == 0) throw DimensionError("probe_features: empty sequence");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(K, 3);
  for (const auto& f : seq.frames) mean += (f.points - neutral.neutral_points).cast<double>();
  mean /= static_cast<double>(seq.size());
  return Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
}

LinearProbe fit_emotion_probe(const std::vector<ProbeExample>& train_set, const ProbeConfig& config) {
  std::set<std::string> train_classes;
  for (const auto& e : train_set) train_classes.insert(e.label);
  if (train_classes.size() < 2) throw DegenerateError("emotion probe needs at least two training classes");
  LinearProbe probe;
  probe.classes.assign(train_classes.begin(), train_classes.end());
  const auto C = static_cast<Eigen::Index>(probe.classes.size());
  const Eigen::Index D = train_set.front().features.size();
  const auto N = static_cast<Eigen::Index>(train_set.size());

  Eigen::MatrixXd X(N, D);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(N, C);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& e = train_set[static_cast<std::size_t>(i)];
    if (e.features.size() != D) throw DimensionError("emotion probe: feature sizes differ");
    X.row(i) = e.features.transpose();
    const auto c = std::lower_bound(probe.classes.begin(), probe.classes.end(), e.label) - probe.classes.begin();
    Y(i, c) = 1.0;
  }
  probe.mean = X.colwise().mean();
  probe.scale = ((X.rowwise() - probe.mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < D; ++j) {
    if (!(probe.scale[j] > 1e-12)) probe.scale[j] = 1.0;
  }
  const Eigen::MatrixXd Xs = (X.rowwise() - probe.mean).array().rowwise() / probe.scale.array();

  probe.weight = Eigen::MatrixXd::Zero(D, C);
  probe.bias = Eigen::RowVectorXd::Zero(C);
  for (int it = 0; it < config.iterations; ++it) {
    Eigen::MatrixXd logits = (Xs * probe.weight).rowwise() + probe.bias;
    const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
    Eigen::MatrixXd p = (logits.colwise() - mx).array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    const Eigen::MatrixXd g = (p - Y) / static_cast<double>(N);
    probe.weight -= config.learning_rate * (Xs.transpose() * g + config.l2 * probe.weight);
    probe.bias -= config.learning_rate * g.colwise().sum();
  }
  return probe;
}

std::string LinearProbe::predict(const Eigen::VectorXd& features) const {
  if (features.size() != weight.rows()) throw DimensionError("emotion probe: feature size mismatch");
  const Eigen::RowVectorXd x = (features.transpose() - mean).array() / scale.array();
  const Eigen::RowVectorXd logits = x * weight + bias;
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return classes[static_cast<std::size_t>(best)];
}

double emotion_probe(const std::vector<ProbeExample>& train_set, const std::vector<ProbeExample>& eval_set,
                     const ProbeConfig& config) {
  std::set<std::string> eval_classes;
  for (const auto& e : eval_set) eval_classes.insert(e.label);
  if (eval_classes.size() < 2) throw DegenerateError("emotion probe needs at least two evaluation classes");
  const LinearProbe probe = fit_emotion_probe(train_set, config);
  int correct = 0;
  for (const auto& e : eval_set) correct += probe.predict(e.features) == e.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(eval_set.size());
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : r.clips) {
    clips.push_back({{"clip_id", c.clip_id},
                     {"beat_align", c.beat_align},
                     {"intensity_l2", c.intensity_l2},
                     {"f_lmd", c.f_lmd},
                     {"has_beats", c.has_beats},
                     {"probe_correct", c.probe_correct}});
  }
  return {{"diversity", r.diversity},       {"beat_align", r.beat_align},
          {"intensity_l2", r.intensity_l2}, {"f_lmd", r.f_lmd},
          {"probe_accuracy", r.probe_accuracy}, {"clips", clips}};
}

MetricReport evaluate(const EvaluationInputs& in, const ProbeConfig& probe) {
  if (in.generated.empty()) throw InsufficientDataError("evaluation needs generated clips");
  MetricReport report;
  report.diversity = in.generated.size() >= 2 ? diversity(in.generated) : 0.0;

  std::vector<ProbeExample> train_set;
  bool any_split = false;
  for (const auto& r : in.references) any_split = any_split || !r.split.empty();
  for (const auto& r : in.references) {
    if (any_split && r.split != "train") continue;
    train_set.push_back({probe_features(r, find_neutral(in.neutrals, r.identity_id)), r.emotion_label});
  }

  const LinearProbe probe_model = fit_emotion_probe(train_set, probe);

  double beat_total = 0.0, l2_total = 0.0, lmd_total = 0.0;
  std::size_t beat_count = 0;
  for (const auto& g : in.generated) {
    const KeypointSequence* ref = find_clip(in.references, g.clip_id);
    const IntensitySequence* target = find_clip(in.targets, g.clip_id);
    const AudioFeatureSequence* audio = find_clip(in.audio, g.clip_id);
    if (!ref || !target || !audio) {
      throw ReferenceError("evaluation: clip '" + g.clip_id + "' lacks a reference, target or audio entry");
    }
    const NeutralReference zero = expression_neutral(static_cast<int>(g.keypoint_count()));
    const NeutralReference& neutral = find_neutral(in.neutrals, ref->identity_id);

    ClipMetrics m;
    m.clip_id = g.clip_id;
    m.intensity_l2 = intensity_l2(g, *target, zero, in.norm);

    KeypointSequence ref_dev = *ref;
    for (auto& f : ref_dev.frames) f.points -= neutral.neutral_points;
    m.f_lmd = f_lmd(g, ref_dev);

    const BeatList ab = audio_beats(*audio);
    const BeatList mb = motion_beats(g);
    if (!ab.times.empty() && !mb.times.empty()) {
      m.has_beats = true;
      m.beat_align = beat_align(ab, mb, in.beat_sigma);
      beat_total += m.beat_align;
      ++beat_count;
    }
    m.probe_correct = probe_model.predict(probe_features(g, zero)) == g.emotion_label;
    l2_total += m.intensity_l2;
    lmd_total += m.f_lmd;
    report.clips.push_back(m);
  }
  const double n = static_cast<double>(in.generated.size());
  report.intensity_l2 = l2_total / n;
  report.f_lmd = lmd_total / n;
  report.beat_align = beat_count > 0 ? beat_total / static_cast<double>(beat_count) : 0.0;

  std::size_t correct = 0;
  for (const auto& c : report.clips) correct += c.probe_correct ? 1 : 0;
  report.probe_accuracy = static_cast<double>(correct) / n;
  return report;
}

}  // namespace emoint
