#include "emoint/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "emoint/errors.hpp"

namespace emoint {

namespace {

void note(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

ModelArchive load_model(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " model not found: " + path.string());
  return ModelArchive::load(path);
}

fs::path sibling(const fs::path& out, const std::string& name) {
  return out.has_parent_path() ? out.parent_path() / name : fs::path(name);
}

IntensitySequence predict_from_wav(const IntensityVae& vae, const RunConfig& config, const fs::path& wav,
                                   const std::string& mode, std::uint64_t seed) {
  AudioFeatureSequence features = extract_features(read_wav(wav), config.features);
  features.clip_id = wav.stem().string();
  IntensitySequence seq = predict_intensity(vae, features, parse_predict_mode(mode), Rng(seed, "predict/sample"));
  seq.clip_id = features.clip_id;
  return seq;
}

struct LoadedGenerator {
  RunConfig config;
  GeneratorModel model;
};

LoadedGenerator load_generator(const fs::path& path) {
  const ModelArchive archive = load_model(path, "generator");
  RunConfig config = config_from_archive(archive);
  return {config, GeneratorModel(config.transformer, config.emotion_space, config.sync, archive)};
}

InferResult infer_with(const LoadedGenerator& g, const InferOptions& o) {
  const RunConfig& config = g.config;
  AudioFeatureSequence features = extract_features(read_wav(o.audio), config.features);
  features.clip_id = o.clip_id.empty() ? o.audio.stem().string() : o.clip_id;
  const auto T = static_cast<std::size_t>(features.frames());
  const int dim = config.emotion_space.emotion_dim;

  std::vector<EmotionEmbedding> condition;
  if (is_neutral_emotion(o.emotion)) {
    condition.assign(T, EmotionEmbedding{Eigen::VectorXd::Zero(dim), true});
  } else {
    ag::Matrix noise = ag::Matrix::Zero(1, config.emotion_space.noise_dim);
    if (o.sample_noise) {
      Rng rng(o.seed, "infer/emotion-noise");
      noise = rng.normal_matrix(1, config.emotion_space.noise_dim);
    }
    const EmotionEmbedding direction =
        g.model.embed(o.emotion, std::span<const double>(noise.data(), static_cast<std::size_t>(noise.size())));
    if (o.intensity) {
      if (o.level) throw ConfigError("infer takes either an intensity sequence or a level, not both");
      const IntensitySequence trace = intensity_sequence_from_json(read_json(*o.intensity));
      if (trace.size() != T) {
        throw AlignmentError("intensity sequence has " + std::to_string(trace.size()) + " frames, audio has " +
                             std::to_string(T));
      }
      condition = sequence_emotion_condition(direction, trace, config.emotion_space);
    } else {
      const int level = o.level.value_or(config.inference.default_level);
      condition.assign(T, rescale_to_norm(direction, norm_for_level(config.emotion_space, level)));
    }
  }

  InferResult result;
  result.keypoints = generate_keypoints(g.model.transformer, features, condition);
  result.keypoints.emotion_label = canonicalize_emotion_text(o.emotion);
  result.condition_norms.reserve(T);
  for (const auto& e : condition) result.condition_norms.push_back(e.vector.norm());

  ensure_parent(o.out);
  write_corpus(o.out, {result.keypoints});
  if (config.inference.render) {
    fs::path sheet = o.out;
    write_render_sheet(sheet.replace_extension(".pgm"), g.model.renderer, result.keypoints);
  }
  return result;
}

std::vector<IntensitySequence> label_corpus(const std::vector<KeypointSequence>& sequences,
                                            const NormalizationSpec& norm,
                                            const std::vector<NeutralReference>& neutrals) {
  std::vector<IntensitySequence> labels;
  labels.reserve(sequences.size());
  for (const auto& s : sequences) labels.push_back(label_sequence(s, find_neutral(neutrals, s.identity_id), norm));
  return labels;
}

void write_pgm(const fs::path& path, int width, int height, const std::vector<unsigned char>& pixels) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

// Four pixels per frame, 100 rows for [0,1]. Target trace mid-gray, recomputed
// trace white; audio beats tick the top edge, motion beats the bottom edge.
void write_trace_plot(const fs::path& path, const std::vector<double>& target, const std::vector<double>& generated,
                      const BeatList& audio, const BeatList& motion, double fps) {
  const int px = 4;
  const int H = 101;
  const int W = px * static_cast<int>(std::max(target.size(), generated.size()));
  if (W == 0) return;
  std::vector<unsigned char> img(static_cast<std::size_t>(W * H), 0);
  auto plot = [&](const std::vector<double>& v, unsigned char shade) {
    for (std::size_t t = 0; t < v.size(); ++t) {
      const int y = H - 1 - static_cast<int>(std::lround(100.0 * std::clamp(v[t], 0.0, 1.0)));
      for (int dx = 0; dx < px; ++dx) img[static_cast<std::size_t>(y * W) + t * px + static_cast<std::size_t>(dx)] = shade;
    }
  };
  auto ticks = [&](const BeatList& beats, int y0, int y1) {
    for (double s : beats.times) {
      const int x = static_cast<int>(std::lround(s * fps)) * px;
      if (x < 0 || x >= W) continue;
      for (int y = y0; y < y1; ++y) img[static_cast<std::size_t>(y * W + x)] = 200;
    }
  };
  plot(target, 128);
  plot(generated, 255);
  ticks(audio, 0, 8);
  ticks(motion, H - 8, H);
  write_pgm(path, W, H, img);
}

}  // namespace

RunConfig config_from_archive(const ModelArchive& archive) {
  if (!archive.has_text("config")) throw ConfigError("model archive carries no configuration");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(archive.text("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model archive configuration is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

void run_synth(const RunConfig& config, std::uint64_t seed, const fs::path& out_dir, const Logger& log) {
  SynthWorldConfig wc = config.world;
  wc.seed = seed;
  const SynthWorld world = build_world(wc);
  const std::vector<Clip> clips = generate_corpus(world, config.features);
  write_corpus_dir(out_dir, world, clips);
  note(log, "synth: wrote " + std::to_string(clips.size()) + " clips to " + out_dir.string());
}

LabelOutputs run_label(const fs::path& corpus_dir, const fs::path& out, const std::optional<fs::path>& norm_spec,
                       const Logger& log) {
  const CorpusBundle corpus = read_corpus_dir(corpus_dir);
  const std::vector<NeutralReference> neutrals = neutral_references(corpus.sequences);

  LabelOutputs paths{out, norm_spec.value_or(sibling(out, "norm_spec.json")), sibling(out, "neutrals.jsonl")};
  NormalizationSpec norm;
  if (norm_spec && fs::exists(*norm_spec)) {
    norm = read_normalization_spec(*norm_spec);
    note(log, "label: reusing normalization " + norm_spec->string());
  } else {
    norm = fit_normalization(corpus.sequences, neutrals, "train");
    ensure_parent(paths.norm_spec);
    write_normalization_spec(paths.norm_spec, norm);
  }
  const std::vector<IntensitySequence> labels = label_corpus(corpus.sequences, norm, neutrals);
  ensure_parent(out);
  write_intensities(out, labels);
  write_neutrals(paths.neutrals, neutrals);
  note(log, "label: " + std::to_string(labels.size()) + " sequences, normalization [" + std::to_string(norm.min) +
                ", " + std::to_string(norm.max) + "]");
  return paths;
}

void run_train_predictor(const RunConfig& config, const fs::path& corpus_dir, const fs::path& labels,
                         const fs::path& out_model, std::uint64_t seed, const Logger& log) {
  const CorpusBundle corpus = read_corpus_dir(corpus_dir);
  const std::vector<IntensitySequence> label_seqs = read_intensities(labels);
  const auto by_clip = index_by_clip(label_seqs);

  std::vector<PredictorExample> examples;
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    if (corpus.sequences[i].split != "train") continue;
    const auto it = by_clip.find(corpus.sequences[i].clip_id);
    if (it == by_clip.end()) throw ReferenceError("no labels for clip '" + corpus.sequences[i].clip_id + "'");
    examples.push_back({it->second, &corpus.features[i]});
  }

  Rng rng(seed, "init/predictor");
  IntensityVae vae(config.predictor, rng);
  const int every = std::max(1, config.predictor.steps / 20);
  train_predictor(vae, examples, seed, [&](const PredictorTrainLog& l) {
    if (l.step % every == 0) {
      note(log, "train-predictor: step " + std::to_string(l.step) + " loss " + std::to_string(l.loss));
    }
  });

  ModelArchive archive;
  vae.save_to(archive);
  archive.put_text("config", to_json(config).dump());
  ensure_parent(out_model);
  archive.save(out_model);
}

void run_predict(const fs::path& model, const fs::path& audio, const std::string& mode, const fs::path& out,
                 std::uint64_t seed) {
  const ModelArchive archive = load_model(model, "predictor");
  const RunConfig config = config_from_archive(archive);
  const IntensityVae vae(config.predictor, archive);
  const IntensitySequence seq = predict_from_wav(vae, config, audio, mode, seed);
  ensure_parent(out);
  write_json(out, to_json(seq));
}

void run_train_generator(const RunConfig& config, const fs::path& corpus_dir, const fs::path& out_model,
                         std::uint64_t seed, const Logger& log) {
  const CorpusBundle corpus = read_corpus_dir(corpus_dir);
  const SynthWorld world = world_from_json(read_json(corpus_dir / "world.json"));
  const std::vector<NeutralReference> neutrals = neutral_references(corpus.sequences);
  const NormalizationSpec norm = fit_normalization(corpus.sequences, neutrals, "train");
  const std::vector<IntensitySequence> labels = label_corpus(corpus.sequences, norm, neutrals);

  GeneratorModel model(config.transformer, config.emotion_space, config.sync, config.renderer, world.canonical, seed);

  std::vector<SyncExample> sync_examples;
  std::vector<GeneratorExample> examples;
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    const auto& seq = corpus.sequences[i];
    if (seq.split != "train") continue;
    const NeutralReference& neutral = find_neutral(neutrals, seq.identity_id);
    sync_examples.push_back({deviation_rows(seq, neutral), corpus.features[i].features});
    examples.push_back({&seq, &neutral, &corpus.features[i], &labels[i]});
  }
  note(log, "train-generator: pre-training sync expert on " + std::to_string(sync_examples.size()) + " clips");
  pretrain_sync_embedder(model.sync, sync_examples, seed);
  note(log, "train-generator: sync discrimination " +
                std::to_string(sync_discrimination_rate(model.sync, sync_examples, seed)));

  fs::path log_path = out_model;
  log_path += ".log.jsonl";
  fs::path checkpoints = out_model;
  checkpoints += ".checkpoints";
  ensure_parent(out_model);
  std::ofstream loss_log(log_path, std::ios::binary);
  if (!loss_log) throw std::runtime_error("cannot write " + log_path.string());
  const int total = config.training.pretrain_steps + config.training.finetune_steps;
  const int every = std::max(1, total / 20);
  train_generator(
      model, examples, config.training, seed,
      [&](const GeneratorStepLog& l) {
        loss_log << to_json(l).dump() << '\n';
        if (l.step % every == 0) {
          note(log, "train-generator: step " + std::to_string(l.step) + " loss " + std::to_string(l.loss));
        }
      },
      checkpoints);

  ModelArchive archive;
  model.save_to(archive);
  archive.put_text("config", to_json(config).dump());
  archive.save(out_model);
}

InferResult run_infer(const InferOptions& options) { return infer_with(load_generator(options.model), options); }

void run_eval(const fs::path& pred_dir, const fs::path& ref_dir, const fs::path& neutrals, const fs::path& norm_spec,
              const fs::path& report, const EvaluationConfig& config, const fs::path& plot_dir) {
  const fs::path kp_dir = pred_dir / "keypoints";
  if (!fs::is_directory(kp_dir)) throw ConfigError("no keypoints directory in " + pred_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(kp_dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  EvaluationInputs in;
  for (const auto& f : files) {
    std::vector<KeypointSequence> seqs = read_corpus(f);
    if (seqs.size() != 1) throw ConfigError(f.string() + " must hold exactly one sequence");
    const std::string clip = seqs.front().clip_id;
    in.generated.push_back(std::move(seqs.front()));
    IntensitySequence target = intensity_sequence_from_json(read_json(pred_dir / "intensity" / (clip + ".json")));
    target.clip_id = clip;
    in.targets.push_back(std::move(target));
  }
  const CorpusBundle corpus = read_corpus_dir(ref_dir);
  in.references = corpus.sequences;
  in.audio = corpus.features;
  in.neutrals = read_neutrals(neutrals);
  in.norm = read_normalization_spec(norm_spec);
  in.beat_sigma = config.beat_sigma;
  const MetricReport r = evaluate(in, config.probe);
  ensure_parent(report);
  write_json(report, to_json(r));
  if (!plot_dir.empty()) {
    for (std::size_t i = 0; i < in.generated.size(); ++i) {
      const auto& g = in.generated[i];
      const NeutralReference zero = expression_neutral(static_cast<int>(g.keypoint_count()));
      const AudioFeatureSequence* audio = nullptr;
      for (const auto& a : in.audio) {
        if (a.clip_id == g.clip_id) audio = &a;
      }
      write_trace_plot(plot_dir / (g.clip_id + ".pgm"), in.targets[i].values,
                       label_sequence(g, zero, in.norm).values, audio ? audio_beats(*audio) : BeatList{},
                       motion_beats(g), g.fps);
    }
  }
}

void run_pipeline(const RunConfig& config, const PipelineOptions& o, const Logger& log) {
  const ModelArchive predictor_archive = load_model(o.predictor, "predictor");
  const RunConfig predictor_config = config_from_archive(predictor_archive);
  const IntensityVae vae(predictor_config.predictor, predictor_archive);
  const LoadedGenerator generator = load_generator(o.generator);

  fs::path neutrals = o.neutrals;
  fs::path norm_spec = o.norm_spec;
  if (neutrals.empty() || norm_spec.empty()) {
    try {
      const LabelOutputs labels = run_label(o.corpus, o.out / "labels" / "intensity.jsonl", std::nullopt, log);
      if (neutrals.empty()) neutrals = labels.neutrals;
      if (norm_spec.empty()) norm_spec = labels.norm_spec;
    } catch (const std::exception& e) {
      throw StageError("label", e.what());
    }
  }

  const CorpusBundle corpus = read_corpus_dir(o.corpus);
  std::size_t done = 0;
  for (const auto& seq : corpus.sequences) {
    if (seq.split != config.inference.split) continue;
    const fs::path wav = o.corpus / "audio" / (seq.clip_id + ".wav");
    const fs::path trace = o.out / "intensity" / (seq.clip_id + ".json");
    try {
      const IntensitySequence predicted = predict_from_wav(vae, predictor_config, wav, config.inference.predict_mode, o.seed);
      ensure_parent(trace);
      write_json(trace, to_json(predicted));
    } catch (const std::exception& e) {
      throw StageError("predict", seq.clip_id + ": " + e.what());
    }
    try {
      InferOptions io;
      io.audio = wav;
      io.emotion = o.emotion.value_or(seq.emotion_label);
      io.intensity = trace;
      io.out = o.out / "keypoints" / (seq.clip_id + ".jsonl");
      io.seed = o.seed;
      io.clip_id = seq.clip_id;
      infer_with(generator, io);
    } catch (const std::exception& e) {
      throw StageError("infer", seq.clip_id + ": " + e.what());
    }
    ++done;
  }
  if (done == 0) throw StageError("predict", "no clips in split '" + config.inference.split + "'");
  note(log, "pipeline: generated " + std::to_string(done) + " clips");
  try {
    run_eval(o.out, o.corpus, neutrals, norm_spec, o.out / "report.json", config.evaluation);
  } catch (const std::exception& e) {
    throw StageError("eval", e.what());
  }
}

void write_render_sheet(const fs::path& path, const ToyRenderer& renderer, const KeypointSequence& deviations) {
  const int per_row = 10;
  const int n = static_cast<int>(deviations.size());
  if (n == 0) throw DimensionError("render sheet needs at least one frame");
  const int H = renderer.config.height;
  const int W = renderer.config.width;
  const int cols = std::min(n, per_row);
  const int rows = (n + per_row - 1) / per_row;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(rows * H) * static_cast<std::size_t>(cols * W), 0);
  for (int i = 0; i < n; ++i) {
    KeypointFrame f = deviations.frames[static_cast<std::size_t>(i)];
    f.points += renderer.canonical;
    const ag::Matrix img = renderer.render(f);
    const int oy = (i / per_row) * H;
    const int ox = (i % per_row) * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const auto v = static_cast<unsigned char>(std::lround(255.0 * img(y, x)));
        pixels[static_cast<std::size_t>(oy + y) * static_cast<std::size_t>(cols * W) + static_cast<std::size_t>(ox + x)] = v;
      }
    }
  }
  write_pgm(path, cols * W, rows * H, pixels);
}

}  // namespace emoint
