// emoint: command-line front end for the intensity-aware talking-head pipeline.

#include <CLI11.hpp>

#include <iostream>

#include "emoint/errors.hpp"
#include "emoint/pipeline.hpp"

using namespace emoint;

int main(int argc, char** argv) {
  CLI::App app{"Intensity-aware emotional talking-head generation at the keypoint level"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::string config_path;
  bool verbose = false;
  bool sample_noise = false;
  app.add_option("--seed", seed, "Run seed; every random stream derives from it");
  app.add_option("--config", config_path, "JSON run configuration (missing keys keep defaults)")->check(CLI::ExistingFile);
  app.add_flag("--verbose,-v", verbose, "Progress messages on stderr");

  std::string corpus, out, labels, norm_spec, model, audio, mode, emotion, intensity, pred, ref, neutral, report, plots;
  std::string predictor, generator;
  int steps = -1, level = 0, pretrain_steps = -1, finetune_steps = -1;
  double beat_sigma = -1.0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus directory");
  synth->add_option("--out", out, "Output directory")->required();

  auto* label = app.add_subcommand("label", "Pseudo-label every clip of a corpus");
  label->add_option("--corpus", corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  label->add_option("--out", out, "Intensity labels (JSONL)")->required();
  label->add_option("--norm-spec", norm_spec, "Normalization to reuse, or where to write the fitted one");

  auto* train_pred = app.add_subcommand("train-predictor", "Train the audio-to-intensity predictor");
  train_pred->add_option("--corpus", corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train_pred->add_option("--labels", labels, "Intensity labels from 'label'")->required()->check(CLI::ExistingFile);
  train_pred->add_option("--out", out, "Model archive")->required();
  train_pred->add_option("--steps", steps, "Override predictor.steps");

  auto* predict = app.add_subcommand("predict", "Predict an intensity sequence for a WAV file");
  predict->add_option("--model", model, "Predictor archive")->required();
  predict->add_option("--audio", audio, "16 kHz mono WAV")->required()->check(CLI::ExistingFile);
  predict->add_option("--mode", mode, "mean or sample")->check(CLI::IsMember({"mean", "sample"}));
  predict->add_option("--out", out, "Intensity sequence (JSON)")->required();

  auto* train_gen = app.add_subcommand("train-generator", "Train the expression transformer and emotion space");
  train_gen->add_option("--corpus", corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train_gen->add_option("--out", out, "Model archive")->required();
  train_gen->add_option("--pretrain-steps", pretrain_steps, "Override training.pretrain_steps");
  train_gen->add_option("--finetune-steps", finetune_steps, "Override training.finetune_steps");

  auto* infer = app.add_subcommand("infer", "Generate expression keypoints for a WAV file");
  infer->add_option("--model", model, "Generator archive")->required();
  infer->add_option("--audio", audio, "16 kHz mono WAV")->required()->check(CLI::ExistingFile);
  infer->add_option("--emotion", emotion, "Emotion text, e.g. \"happy\"")->required();
  auto* intensity_opt = infer->add_option("--intensity", intensity, "Frame-wise intensity sequence (JSON)")
                            ->check(CLI::ExistingFile);
  infer->add_option("--level", level, "Discrete intensity level")->check(CLI::Range(1, 3))->excludes(intensity_opt);
  infer->add_option("--out", out, "Keypoint sequence (JSONL)")->required();
  infer->add_flag("--sample-noise", sample_noise, "Draw the emotion noise code from the seed instead of using zero");

  auto* eval = app.add_subcommand("eval", "Score generated clips against a reference corpus");
  eval->add_option("--pred", pred, "Directory with keypoints/ and intensity/")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ref", ref, "Reference corpus directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--neutral", neutral, "Neutral references (JSONL)")->required()->check(CLI::ExistingFile);
  eval->add_option("--norm-spec", norm_spec, "Normalization (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("--report", report, "Metric report (JSON)")->required();
  eval->add_option("--plots", plots, "Directory for per-clip trace plots (PGM)");
  eval->add_option("--beat-sigma", beat_sigma, "Beat alignment tolerance in seconds");

  auto* pipeline = app.add_subcommand("pipeline", "predict -> condition -> generate -> eval over a corpus split");
  pipeline->add_option("--predictor", predictor, "Predictor archive")->required();
  pipeline->add_option("--generator", generator, "Generator archive")->required();
  pipeline->add_option("--corpus", corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  pipeline->add_option("--neutral", neutral, "Neutral references; labeled from the corpus when omitted");
  pipeline->add_option("--norm-spec", norm_spec, "Normalization; fitted on the corpus when omitted");
  pipeline->add_option("--emotion", emotion, "Emotion for every clip (default: each clip's own label)");
  pipeline->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  const Logger log = [verbose](const std::string& msg) {
    if (verbose) std::cerr << msg << '\n';
  };

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    config.validate();

    if (*synth) {
      run_synth(config, seed, out, log);
    } else if (*label) {
      run_label(corpus, out, norm_spec.empty() ? std::nullopt : std::optional<fs::path>(norm_spec), log);
    } else if (*train_pred) {
      if (steps >= 0) config.predictor.steps = steps;
      run_train_predictor(config, corpus, labels, out, seed, log);
    } else if (*predict) {
      run_predict(model, audio, mode.empty() ? config.inference.predict_mode : mode, out, seed);
    } else if (*train_gen) {
      if (pretrain_steps >= 0) config.training.pretrain_steps = pretrain_steps;
      if (finetune_steps >= 0) config.training.finetune_steps = finetune_steps;
      run_train_generator(config, corpus, out, seed, log);
    } else if (*infer) {
      InferOptions o;
      o.model = model;
      o.audio = audio;
      o.emotion = emotion;
      if (!intensity.empty()) o.intensity = fs::path(intensity);
      if (level > 0) o.level = level;
      o.out = out;
      o.seed = seed;
      o.sample_noise = sample_noise;
      const InferResult r = run_infer(o);
      log("infer: " + std::to_string(r.keypoints.size()) + " frames");
    } else if (*eval) {
      EvaluationConfig ec = config.evaluation;
      if (beat_sigma > 0.0) ec.beat_sigma = beat_sigma;
      run_eval(pred, ref, neutral, norm_spec, report, ec, plots);
    } else if (*pipeline) {
      PipelineOptions o;
      o.predictor = predictor;
      o.generator = generator;
      o.corpus = corpus;
      o.neutrals = neutral;
      o.norm_spec = norm_spec;
      o.out = out;
      if (!emotion.empty()) o.emotion = emotion;
      o.seed = seed;
      run_pipeline(config, o, log);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
