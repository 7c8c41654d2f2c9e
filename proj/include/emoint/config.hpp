#pragma once

// Run configuration: one JSON document with a section per module. Missing
// keys keep their defaults; unknown keys are rejected so typos surface.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "emoint/audio_features.hpp"
#include "emoint/emotion_space.hpp"
#include "emoint/evaluation.hpp"
#include "emoint/expression_transformer.hpp"
#include "emoint/intensity_predictor.hpp"
#include "emoint/synthworld.hpp"
#include "emoint/training.hpp"

namespace emoint {

struct EvaluationConfig {
  double beat_sigma = kDefaultBeatSigma;
  ProbeConfig probe;
};

struct InferenceConfig {
  std::string split = "test";      // pipeline runs over clips of this split
  std::string predict_mode = "mean";
  int default_level = 2;           // infer without --intensity or --level
  bool render = false;
};

struct RunConfig {
  SynthWorldConfig world;
  AudioFeatureConfig features;
  EmotionSpaceConfig emotion_space;
  PredictorConfig predictor;
  TransformerConfig transformer;
  ToyRendererConfig renderer;
  SyncEmbedderConfig sync;
  GeneratorTrainingConfig training;
  EvaluationConfig evaluation;
  InferenceConfig inference;

  // Cross-section consistency (shared dimensions) and per-section checks.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
// Throws ConfigError naming the first unknown key or mistyped value.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

// Applies overrides on top of base, with the same strictness.
RunConfig merge_config(const RunConfig& base, const nlohmann::json& overrides);

PredictMode parse_predict_mode(const std::string& s);

}  // namespace emoint
