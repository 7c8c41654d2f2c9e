#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "emoint/errors.hpp"
#include "emoint/synthworld.hpp"
#include "emoint/training.hpp"
#include "test_support.hpp"

namespace emoint {
namespace {

using ag::Matrix;
using ag::Var;

// ---- losses ----------------------------------------------------------------

TEST(LossExp, Examples) {
  Rng rng(1);
  const auto a = testutil::random_sequence(rng, 3, 5);
  EXPECT_EQ(loss_exp(a, a), 0.0);
  auto b = a;
  b.frames[1].points(2, 1) += 2.0f;
  EXPECT_NEAR(loss_exp(a, b), 4.0 / 45.0, 1e-6);
}

TEST(LossExp, MatchesNestedLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 1 + static_cast<int>(rng.index(10));
    const int K = 1 + static_cast<int>(rng.index(20));
    const auto a = testutil::random_sequence(rng, T, K);
    const auto b = testutil::random_sequence(rng, T, K);
    double s = 0.0;
    for (int t = 0; t < T; ++t) {
      for (int k = 0; k < K; ++k) {
        for (int c = 0; c < 3; ++c) {
          const double d = static_cast<double>(a.frames[t].points(k, c)) - b.frames[t].points(k, c);
          s += d * d;
        }
      }
    }
    EXPECT_NEAR(loss_exp(a, b), s / (T * K * 3), 1e-6);
  }
  EXPECT_THROW(loss_exp(testutil::random_sequence(rng, 3, 5), testutil::random_sequence(rng, 4, 5)),
               DimensionError);
  EXPECT_THROW(loss_exp(testutil::random_sequence(rng, 3, 5), testutil::random_sequence(rng, 3, 6)),
               DimensionError);
}

TEST(LossRec, Examples) {
  Rng rng(3);
  const Matrix img = rng.uniform_matrix(4, 6, 0, 1);
  EXPECT_EQ(loss_rec(img, img, Matrix::Ones(4, 6)), 0.0);
  Matrix other = img;
  other(2, 3) += 0.3;
  other(0, 0) += 0.9;  // outside the mask
  Matrix mask = Matrix::Zero(4, 6);
  mask(2, 3) = 1.0;
  EXPECT_NEAR(loss_rec(other, img, mask), 0.3, 1e-12);
  EXPECT_THROW(loss_rec(other, img, Matrix::Zero(4, 6)), DegenerateError);
  EXPECT_THROW(loss_rec(Var(other), img, Matrix::Zero(4, 6)), DegenerateError);
  EXPECT_THROW(loss_rec(other, img, Matrix::Zero(4, 5)), DimensionError);
}

TEST(LossRec, MatchesMaskedMeanOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.uniform_matrix(5, 7, 0, 1);
    const Matrix b = rng.uniform_matrix(5, 7, 0, 1);
    Matrix mask(5, 7);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    mask(0, 0) = 1.0;
    double s = 0.0, n = 0.0;
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 7; ++c) {
        if (mask(r, c) == 1.0) {
          s += std::abs(a(r, c) - b(r, c));
          n += 1.0;
        }
      }
    }
    EXPECT_NEAR(loss_rec(a, b, mask), s / n, 1e-6);
    EXPECT_NEAR(loss_rec(Var(a), b, mask).item(), s / n, 1e-12);
  }
}

TEST(LossSync, Examples) {
  Eigen::VectorXd v(3), s(3);
  v << 1.0, 2.0, -0.5;
  EXPECT_NEAR(loss_sync(v, v), 0.0, 1e-12);
  EXPECT_NEAR(loss_sync(v, 3.0 * v), 0.0, 1e-12);
  v << 1.0, 0.0, 0.0;
  s << 0.0, 2.0, 0.0;
  EXPECT_NEAR(loss_sync(v, s), 16.1181, 1e-4);
  EXPECT_NEAR(loss_sync(v, s), -std::log(1e-7), 1e-12);
  EXPECT_NEAR(loss_sync(v, -v), -std::log(1e-7), 1e-12);
  EXPECT_NEAR(loss_sync(Eigen::VectorXd::Zero(3), s), -std::log(1e-7), 1e-12);
  EXPECT_THROW(loss_sync(v, Eigen::VectorXd::Ones(4)), DimensionError);
}

TEST(LossSync, MatchesCosineLogOracleAndStaysBounded) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + static_cast<int>(rng.index(16));
    Eigen::VectorXd v(d), s(d);
    for (int i = 0; i < d; ++i) {
      v[i] = rng.normal();
      s[i] = rng.normal();
    }
    double dot = 0, nv = 0, ns = 0;
    for (int i = 0; i < d; ++i) {
      dot += v[i] * s[i];
      nv += v[i] * v[i];
      ns += s[i] * s[i];
    }
    const double cos = std::clamp(dot / std::max(std::sqrt(nv) * std::sqrt(ns), 1e-7), 1e-7, 1.0);
    const double l = loss_sync(v, s);
    EXPECT_NEAR(l, -std::log(cos), 1e-6);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, -std::log(1e-7) + 1e-12);
  }
}

TEST(LossSync, RowFormAveragesAndDifferentiates) {
  Rng rng(6);
  // Positive-leaning pairs keep every cosine off the clamp.
  const Matrix base = rng.normal_matrix(6, 5);
  Var v(base + 0.3 * rng.normal_matrix(6, 5), true);
  const Var s(base);
  double mean = 0.0;
  for (int r = 0; r < 6; ++r) mean += loss_sync(v.value().row(r).transpose(), s.value().row(r).transpose());
  EXPECT_NEAR(loss_sync_rows(v, s).item(), mean / 6.0, 1e-12);
  EXPECT_LT(testutil::gradient_error([&] { return loss_sync_rows(v, s); }, v), 1e-6);
}

TEST(TotalLoss, Examples) {
  const LossWeights w;
  EXPECT_EQ(total_loss(LossParts{}, w, true), 0.0);
  EXPECT_NEAR(total_loss({0.01, 0.02, 0.03, 0.04}, w, true), 1.504, 1e-12);
  EXPECT_NEAR(total_loss({0.01, 0.02, 0.03, 0.04}, w, false), 1.5, 1e-12);
  EXPECT_THROW(total_loss({0.01, -0.02, 0.03, 0.04}, w, true), ContractError);
  EXPECT_THROW(total_loss({0.01, 0.02, std::nan(""), 0.04}, w, true), ContractError);
}

TEST(TotalLoss, WeightedSumLinearityAndGating) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const LossParts p{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
    const LossWeights w{rng.uniform(0, 100), rng.uniform(0, 10), rng.uniform(0, 30), rng.uniform(0, 1)};
    const double neutral = w.exp * p.exp + w.rec * p.rec + w.sync * p.sync + w.norm * p.norm;
    const double emotional = w.exp * p.exp + w.rec * p.rec + w.sync * p.sync;
    EXPECT_EQ(total_loss(p, w, true), neutral);
    EXPECT_EQ(total_loss(p, w, false), emotional);

    LossParts doubled = p;
    doubled.rec *= 2.0;
    EXPECT_NEAR(total_loss(doubled, w, true) - total_loss(p, w, true), w.rec * p.rec, 1e-9);

    LossParts other_norm = p;
    other_norm.norm = rng.uniform(0, 50);
    EXPECT_EQ(total_loss(other_norm, w, false), total_loss(p, w, false));

    const double graph = total_loss(Var::scalar(p.exp), Var::scalar(p.rec), Var::scalar(p.sync),
                                    Var::scalar(p.norm), w, true).item();
    EXPECT_NEAR(graph, neutral, 1e-12);
  }
  // Missing parts count as zero.
  EXPECT_EQ(total_loss(Var::scalar(0.5), Var::scalar(0.25), Var(), Var(), LossWeights{}, true).item(), 52.5);
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.sync = -1.0;
  EXPECT_THROW(w.validate(), ConfigError);
}

// ---- desk fixture ----------------------------------------------------------

struct Desk {
  SynthWorld world;
  std::vector<Clip> clips;
  std::vector<NeutralReference> neutrals;
  NormalizationSpec norm;
  std::vector<IntensitySequence> labels;

  Desk() {
    SynthWorldConfig wc;
    wc.clips = 32;
    wc.frames_per_clip = 30;
    wc.identities = 2;
    world = build_world(wc);
    clips = generate_corpus(world, AudioFeatureConfig{});
    std::vector<KeypointSequence> seqs;
    for (const auto& c : clips) seqs.push_back(c.keypoints);
    neutrals = neutral_references(seqs);
    norm = fit_normalization(seqs, neutrals, "train");
    for (const auto& c : clips) {
      labels.push_back(label_sequence(c.keypoints, find_neutral(neutrals, c.keypoints.identity_id), norm));
    }
  }

  std::vector<SyncExample> sync_examples() const {
    std::vector<SyncExample> out;
    for (const auto& c : clips) {
      out.push_back({deviation_rows(c.keypoints, find_neutral(neutrals, c.keypoints.identity_id)),
                     c.features.features});
    }
    return out;
  }

  std::vector<GeneratorExample> examples() const {
    std::vector<GeneratorExample> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      out.push_back({&clips[i].keypoints, &find_neutral(neutrals, clips[i].keypoints.identity_id),
                     &clips[i].features, &labels[i]});
    }
    return out;
  }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

TransformerConfig tiny_transformer() {
  TransformerConfig c;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.token_dim = 16;
  c.ffn_hidden = 32;
  c.deform_hidden = 16;
  c.emotion_dim = 12;
  return c;
}

EmotionSpaceConfig tiny_emotion() {
  EmotionSpaceConfig c;
  c.text_dim = 16;
  c.noise_dim = 4;
  c.hidden = 12;
  c.emotion_dim = 12;
  return c;
}

SyncEmbedderConfig tiny_sync(int steps = 40) {
  SyncEmbedderConfig c;
  c.hidden = 24;
  c.embed_dim = 16;
  c.steps = steps;
  c.batch = 8;
  return c;
}

ToyRendererConfig tiny_renderer() {
  ToyRendererConfig c;
  c.height = 16;
  c.width = 16;
  c.scale = 5.0;
  return c;
}

GeneratorModel tiny_model(std::uint64_t seed = 11) {
  return GeneratorModel(tiny_transformer(), tiny_emotion(), tiny_sync(), tiny_renderer(), desk().world.canonical,
                        seed);
}

GeneratorTrainingConfig tiny_training(int pre = 20, int fin = 20) {
  GeneratorTrainingConfig c;
  c.pretrain_steps = pre;
  c.finetune_steps = fin;
  c.batch = 2;
  c.crop = 16;
  c.learning_rate = 1e-3;
  c.transformer_learning_rate = 1e-3;
  return c;
}

TEST(DeviationRows, SubtractsNeutralFace) {
  Rng rng(8);
  const auto seq = testutil::random_sequence(rng, 4, 3);
  NeutralReference n;
  n.identity_id = "id0";
  n.neutral_points = testutil::random_points(rng, 3);
  const Matrix d = deviation_rows(seq, n);
  ASSERT_EQ(d.rows(), 4);
  ASSERT_EQ(d.cols(), 9);
  for (int t = 0; t < 4; ++t) {
    for (int k = 0; k < 3; ++k) {
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(d(t, 3 * k + c), static_cast<double>(seq.frames[t].points(k, c)) - n.neutral_points(k, c), 1e-7);
      }
    }
  }
}

TEST(SyncEmbedder, WindowShapes) {
  Rng rng(9);
  SyncEmbedder s(tiny_sync(), rng);
  EXPECT_EQ(s.video(Var(Matrix::Zero(12, 3 * kDefaultKeypoints))).rows(), 8);
  EXPECT_EQ(s.audio(Var(Matrix::Zero(12, 64))).cols(), 16);
}

TEST(SyncEmbedder, UntrainedIsAtChance) {
  const auto ex = desk().sync_examples();
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    SyncEmbedder s(tiny_sync(), rng);
    const double rate = sync_discrimination_rate(s, ex, seed, 2000);
    EXPECT_NEAR(rate, 0.5, 0.1) << "seed " << seed;
  }
}

TEST(SyncEmbedder, TrainingIsDeterministicAndDiscriminates) {
  const auto ex = desk().sync_examples();
  std::vector<SyncExample> train(ex.begin(), ex.begin() + 24);
  std::vector<SyncExample> held(ex.begin() + 24, ex.end());
  auto run = [&] {
    Rng rng(10);
    SyncEmbedder s(tiny_sync(300), rng);
    pretrain_sync_embedder(s, train, 4);
    return s;
  };
  const SyncEmbedder a = run();
  const SyncEmbedder b = run();
  ModelArchive aa, bb;
  a.save_to(aa);
  b.save_to(bb);
  for (const auto& [name, p] : a.params().params()) EXPECT_EQ(p.value(), b.params().at(name).value()) << name;
  EXPECT_GT(sync_discrimination_rate(a, held, 5, 1000), 0.6);
}

TEST(SyncEmbedder, NeedsTwentySequences) {
  const auto ex = desk().sync_examples();
  Rng rng(12);
  SyncEmbedder s(tiny_sync(), rng);
  EXPECT_THROW(pretrain_sync_embedder(s, std::vector<SyncExample>(ex.begin(), ex.begin() + 19), 0),
               InsufficientDataError);
  EXPECT_NO_THROW(pretrain_sync_embedder(s, std::vector<SyncExample>(ex.begin(), ex.begin() + 20), 0));
}

bool any_changed(const nn::ParamStore& before, const nn::ParamStore& after, const std::string& prefix) {
  for (const auto& name : after.names_with_prefix(prefix)) {
    if (before.at(name).value() != after.at(name).value()) return true;
  }
  return false;
}

nn::ParamStore snapshot(const nn::ParamStore& store) {
  nn::ParamStore out;
  for (const auto& [name, p] : store.params()) out.create(name, p.value());
  return out;
}

TEST(TrainGenerator, EveryGroupLearnsAndTheExpertStaysFrozen) {
  auto model = tiny_model();
  const auto ex = desk().examples();
  const auto xf0 = snapshot(model.transformer.params());
  const auto emo0 = snapshot(model.emotion_params);
  const auto sync0 = snapshot(model.sync.params());
  auto cfg = tiny_training(0, 1);
  cfg.batch = 8;
  train_generator(model, ex, cfg, 3);
  EXPECT_TRUE(any_changed(xf0, model.transformer.params(), "xf."));
  EXPECT_TRUE(any_changed(xf0, model.transformer.params(), "defo."));
  EXPECT_TRUE(any_changed(emo0, model.emotion_params, "adapt."));
  for (const auto& [name, p] : model.sync.params().params()) EXPECT_EQ(p.value(), sync0.at(name).value()) << name;

  // Every transformer tensor receives some gradient (positional rows past the crop excepted).
  for (const auto& [name, p] : model.transformer.params().params()) {
    EXPECT_NE(p.value(), xf0.at(name).value()) << name;
  }
  for (const auto& [name, p] : model.emotion_params.params()) EXPECT_NE(p.value(), emo0.at(name).value()) << name;
}

TEST(TrainGenerator, PretrainLeavesEmotionPartsAlone) {
  auto model = tiny_model();
  const auto ex = desk().examples();
  const auto xf0 = snapshot(model.transformer.params());
  const auto emo0 = snapshot(model.emotion_params);
  std::vector<GeneratorStepLog> logs;
  train_generator_stage(model, ex, tiny_training(5, 0), TrainStage::kPretrain, 3, 0,
                        [&](const GeneratorStepLog& l) { logs.push_back(l); });
  ASSERT_EQ(logs.size(), 5u);
  for (const auto& l : logs) {
    EXPECT_EQ(l.parts.sync, 0.0);
    EXPECT_EQ(l.parts.norm, 0.0);
    EXPECT_EQ(l.stage, TrainStage::kPretrain);
  }
  EXPECT_FALSE(any_changed(xf0, model.transformer.params(), "defo."));
  EXPECT_FALSE(any_changed(xf0, model.transformer.params(), "xf.emo_proj"));
  EXPECT_FALSE(any_changed(emo0, model.emotion_params, "adapt."));
  EXPECT_TRUE(any_changed(xf0, model.transformer.params(), "xf.out_head"));
}

TEST(TrainGenerator, TotalLossGradientMatchesFiniteDifferences) {
  GeneratorModel model = tiny_model(23);
  const Desk& d = desk();
  std::size_t pick = 0;
  while (is_neutral_emotion(d.clips[pick].keypoints.emotion_label)) ++pick;
  const Clip& clip = d.clips[pick];
  KeypointSequence short_seq = clip.keypoints;
  short_seq.frames.resize(9);
  AudioFeatureSequence short_audio = clip.features;
  short_audio.features = clip.features.features.topRows(9);
  IntensitySequence short_labels = d.labels[pick];
  short_labels.values.resize(9);
  const GeneratorExample ex{&short_seq, &find_neutral(d.neutrals, short_seq.identity_id), &short_audio, &short_labels};
  const GeneratorTrainingConfig cfg = tiny_training();
  const Rng noise(5);
  {
    Rng r = noise;
    const LossParts parts = evaluate_generator_losses(model, ex, cfg, TrainStage::kFinetune, r);
    ASSERT_GT(parts.sync, 0.0);
    ASSERT_LT(parts.sync, 5.0);
  }
  auto f = [&] {
    Rng r = noise;
    return generator_loss(model, ex, cfg, TrainStage::kFinetune, r);
  };
  for (const char* name : {"xf.out_head.bias", "xf.dec.l1.cross.v.bias", "defo.fc2.weight", "xf.emo_proj.weight"}) {
    Var p = model.transformer.params().at(name);
    EXPECT_LT(testutil::gradient_error(f, p, 1e-6), 1e-4) << name;
  }
  for (const char* name : {"adapt.fc1.bias", "adapt.fc8.bias"}) {
    Var p = model.emotion_params.at(name);
    EXPECT_LT(testutil::gradient_error(f, p, 1e-6), 1e-4) << name;
  }
}

TEST(TrainGenerator, StepsAreNumberedAcrossStages) {
  auto model = tiny_model();
  std::vector<GeneratorStepLog> logs;
  train_generator(model, desk().examples(), tiny_training(3, 4), 3,
                  [&](const GeneratorStepLog& l) { logs.push_back(l); });
  ASSERT_EQ(logs.size(), 7u);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(logs[i].step, i);
  EXPECT_EQ(logs[2].stage, TrainStage::kPretrain);
  EXPECT_EQ(logs[3].stage, TrainStage::kFinetune);
  EXPECT_GT(logs[3].parts.sync, 0.0);
  const auto j = to_json(logs[3]);
  EXPECT_EQ(j.at("step"), 3);
  EXPECT_TRUE(j.contains("loss"));
}

TEST(TrainGenerator, FixedSeedReproducesFinalLoss) {
  auto run = [] {
    auto model = tiny_model();
    double last = 0.0;
    train_generator(model, desk().examples(), tiny_training(10, 10), 21,
                    [&](const GeneratorStepLog& l) { last = l.loss; });
    return last;
  };
  const double a = run();
  const double b = run();
  EXPECT_NEAR(a, b, 1e-6);
  EXPECT_EQ(a, b);
}

TEST(TrainGenerator, WindowedLossFallsBelowStartOfEachStage) {
  auto model = tiny_model();
  std::vector<double> losses;
  auto cfg = tiny_training(150, 150);
  train_generator(model, desk().examples(), cfg, 5, [&](const GeneratorStepLog& l) { losses.push_back(l.loss); });
  ASSERT_EQ(losses.size(), 300u);
  auto window_mean = [&](std::size_t end) {
    return std::accumulate(losses.begin() + static_cast<long>(end - 50), losses.begin() + static_cast<long>(end), 0.0) /
           50.0;
  };
  EXPECT_LT(window_mean(150), losses[0]);
  EXPECT_LT(window_mean(300), losses[150]);
}

TEST(TrainGenerator, FinetuneNeedsLabels) {
  auto model = tiny_model();
  auto ex = desk().examples();
  for (auto& e : ex) {
    if (!is_neutral_emotion(e.keypoints->emotion_label)) {
      e.labels = nullptr;
      break;
    }
  }
  EXPECT_THROW(train_generator_stage(model, ex, tiny_training(), TrainStage::kFinetune, 0), ConfigError);
  EXPECT_NO_THROW(train_generator_stage(model, ex, tiny_training(2, 0), TrainStage::kPretrain, 0));
}

TEST(TrainGenerator, ArchiveRoundTripKeepsLosses) {
  auto model = tiny_model();
  ModelArchive archive;
  model.save_to(archive);
  GeneratorModel loaded(tiny_transformer(), tiny_emotion(), tiny_sync(), archive);
  const auto ex = desk().examples();
  const auto cfg = tiny_training();
  for (std::size_t i = 0; i < 4; ++i) {
    Rng r1(1), r2(1);
    const auto a = evaluate_generator_losses(model, ex[i], cfg, TrainStage::kFinetune, r1);
    const auto b = evaluate_generator_losses(loaded, ex[i], cfg, TrainStage::kFinetune, r2);
    EXPECT_NEAR(a.exp, b.exp, 1e-4 * std::max(1.0, a.exp));
    EXPECT_NEAR(a.sync, b.sync, 1e-3 * std::max(1.0, a.sync));
  }
}

}  // namespace
}  // namespace emoint
