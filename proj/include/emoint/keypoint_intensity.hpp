#pragma once

// Emotion-agnostic pseudo-intensity: how far each frame's expression
// keypoints sit from the same identity's neutral face, normalized to [0,1].

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "emoint/errors.hpp"

namespace emoint {

inline constexpr int kDefaultKeypoints = 15;
inline constexpr double kDefaultFps = 25.0;

using KeypointMatrix = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct KeypointFrame {
  KeypointMatrix points;
  int frame_index = 0;
};

struct KeypointSequence {
  std::vector<KeypointFrame> frames;
  double fps = kDefaultFps;
  std::string identity_id;
  std::string emotion_label;
  std::optional<int> intensity_level;
  // Corpus bookkeeping; not part of the labeling contract.
  std::string clip_id;
  std::string split;

  Eigen::Index keypoint_count() const { return frames.empty() ? 0 : frames.front().points.rows(); }
  std::size_t size() const { return frames.size(); }
  // Throws DimensionError/DomainError when frames disagree on K, indices are
  // not contiguous from 0, or a coordinate is non-finite.
  void validate() const;
};

struct IntensitySequence {
  std::vector<double> values;
  double fps = kDefaultFps;
  bool normalized = false;
  std::string clip_id;

  std::size_t size() const { return values.size(); }
};

struct NeutralReference {
  std::string identity_id;
  KeypointMatrix neutral_points;
};

// Corpus-level min-max map from raw pseudo-intensity to [0,1].
struct NormalizationSpec {
  double min = 0.0;
  double max = 1.0;

  double apply(double raw) const;
};

// Sum over all K×3 entries of |frame - neutral|, accumulated in row-major
// order in the precision of Scalar.
template <typename Scalar, typename A, typename B>
Scalar raw_pseudo_intensity_as(const Eigen::MatrixBase<A>& frame, const Eigen::MatrixBase<B>& neutral) {
  if (frame.rows() != neutral.rows() || frame.cols() != neutral.cols()) {
    throw DimensionError("pseudo-intensity: frame is " + std::to_string(frame.rows()) + "x" +
                         std::to_string(frame.cols()) + " but neutral is " +
                         std::to_string(neutral.rows()) + "x" + std::to_string(neutral.cols()));
  }
  Scalar total = 0;
  for (Eigen::Index k = 0; k < frame.rows(); ++k) {
    for (Eigen::Index c = 0; c < frame.cols(); ++c) {
      const auto f = static_cast<Scalar>(frame(k, c));
      const auto n = static_cast<Scalar>(neutral(k, c));
      if (!std::isfinite(f) || !std::isfinite(n)) {
        throw DomainError("pseudo-intensity: non-finite keypoint coordinate");
      }
      total += std::abs(f - n);
    }
  }
  return total;
}

float raw_pseudo_intensity(const KeypointFrame& frame, const NeutralReference& neutral);

// Raw per-frame pseudo-intensities (unnormalized, all >= 0).
IntensitySequence raw_intensity_sequence(const KeypointSequence& seq, const NeutralReference& neutral);

IntensitySequence label_sequence(const KeypointSequence& seq, const NeutralReference& neutral,
                                 const NormalizationSpec& norm);

// Mean keypoint frame over every frame of identity_id's neutral-labeled sequences.
NeutralReference select_neutral_reference(const std::vector<KeypointSequence>& corpus,
                                          const std::string& identity_id);

// Fits min/max over raw values of every sequence accepted by the split
// filter (empty filter accepts all). Neutral references are looked up by
// identity. Throws DegenerateError when all raw values coincide.
NormalizationSpec fit_normalization(const std::vector<KeypointSequence>& corpus,
                                    const std::vector<NeutralReference>& neutrals,
                                    const std::string& split_filter = "");

const NeutralReference& find_neutral(const std::vector<NeutralReference>& neutrals,
                                     const std::string& identity_id);

// One reference per identity that has neutral clips, in first-seen order.
std::vector<NeutralReference> neutral_references(const std::vector<KeypointSequence>& corpus);

// Generated sequences are deviations from a neutral face, so they carry this
// identity and are labeled against an all-zero neutral reference.
inline const std::string kExpressionIdentity = "expression";
NeutralReference expression_neutral(int keypoints);

}  // namespace emoint
