#include "emoint/keypoint_intensity.hpp"

#include <algorithm>
#include <limits>

namespace emoint {

void KeypointSequence::validate() const {
  const Eigen::Index k = keypoint_count();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.points.rows() != k) {
      throw DimensionError("keypoint sequence '" + clip_id + "': frame " + std::to_string(i) +
                           " has " + std::to_string(f.points.rows()) + " keypoints, expected " +
                           std::to_string(k));
    }
    if (f.frame_index != static_cast<int>(i)) {
      throw DomainError("keypoint sequence '" + clip_id + "': frame indices are not contiguous from 0");
    }
    if (!f.points.allFinite()) {
      throw DomainError("keypoint sequence '" + clip_id + "': non-finite coordinate in frame " +
                        std::to_string(i));
    }
  }
}

double NormalizationSpec::apply(double raw) const {
  const double scale = max - min;
  if (!(scale > 0.0)) {
    // A zero-scale spec can only label a perfectly neutral input.
    if (raw == 0.0) return 0.0;
    throw DegenerateError("normalization spec has zero scale (min == max)");
  }
  return std::clamp((raw - min) / scale, 0.0, 1.0);
}

float raw_pseudo_intensity(const KeypointFrame& frame, const NeutralReference& neutral) {
  return raw_pseudo_intensity_as<float>(frame.points, neutral.neutral_points);
}

IntensitySequence raw_intensity_sequence(const KeypointSequence& seq, const NeutralReference& neutral) {
  if (neutral.identity_id != seq.identity_id) {
    throw ReferenceError("neutral reference for identity '" + neutral.identity_id +
                         "' used to label a sequence of identity '" + seq.identity_id + "'");
  }
  IntensitySequence out;
  out.fps = seq.fps;
  out.clip_id = seq.clip_id;
  out.normalized = false;
  out.values.reserve(seq.size());
  for (const auto& f : seq.frames) out.values.push_back(raw_pseudo_intensity(f, neutral));
  return out;
}

IntensitySequence label_sequence(const KeypointSequence& seq, const NeutralReference& neutral,
                                 const NormalizationSpec& norm) {
  IntensitySequence out = raw_intensity_sequence(seq, neutral);
  for (auto& v : out.values) v = norm.apply(v);
  out.normalized = true;
  return out;
}

NeutralReference select_neutral_reference(const std::vector<KeypointSequence>& corpus,
                                          const std::string& identity_id) {
  Eigen::MatrixXd acc;
  std::size_t count = 0;
  for (const auto& seq : corpus) {
    if (seq.identity_id != identity_id || seq.emotion_label != "neutral") continue;
    for (const auto& f : seq.frames) {
      if (count == 0) {
        acc = Eigen::MatrixXd::Zero(f.points.rows(), 3);
      } else if (f.points.rows() != acc.rows()) {
        throw DimensionError("neutral frames of identity '" + identity_id + "' disagree on K");
      }
      acc += f.points.cast<double>();
      ++count;
    }
  }
  if (count == 0) {
    throw MissingReferenceError("no neutral-labeled frames for identity '" + identity_id + "'");
  }
  NeutralReference ref;
  ref.identity_id = identity_id;
  ref.neutral_points = (acc / static_cast<double>(count)).cast<float>();
  return ref;
}

const NeutralReference& find_neutral(const std::vector<NeutralReference>& neutrals,
                                     const std::string& identity_id) {
  for (const auto& n : neutrals) {
    if (n.identity_id == identity_id) return n;
  }
  throw MissingReferenceError("no neutral reference for identity '" + identity_id + "'");
}

std::vector<NeutralReference> neutral_references(const std::vector<KeypointSequence>& corpus) {
  std::vector<NeutralReference> out;
  for (const auto& seq : corpus) {
    if (seq.emotion_label != "neutral") continue;
    const bool seen = std::any_of(out.begin(), out.end(),
                                  [&](const auto& n) { return n.identity_id == seq.identity_id; });
    if (!seen) out.push_back(select_neutral_reference(corpus, seq.identity_id));
  }
  return out;
}

NormalizationSpec fit_normalization(const std::vector<KeypointSequence>& corpus,
                                    const std::vector<NeutralReference>& neutrals,
                                    const std::string& split_filter) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& seq : corpus) {
    if (!split_filter.empty() && seq.split != split_filter) continue;
    const auto raw = raw_intensity_sequence(seq, find_neutral(neutrals, seq.identity_id));
    for (double v : raw.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) {
    throw DegenerateError("cannot fit normalization: raw pseudo-intensities have zero spread");
  }
  return NormalizationSpec{lo, hi};
}

NeutralReference expression_neutral(int keypoints) {
  return {kExpressionIdentity, KeypointMatrix::Zero(keypoints, 3)};
}

}  // namespace emoint
