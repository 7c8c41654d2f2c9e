#include "emoint/intensity_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "emoint/errors.hpp"

namespace emoint {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void require_aligned(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw AlignmentError(std::string(what) + ": sequences have " + std::to_string(a) + " and " +
                         std::to_string(b) + " frames");
  }
}

ag::Var audio_var(const AudioFeatureSequence& a) { return ag::Var(a.features); }

}  // namespace

ag::Var to_column(const std::vector<double>& values) {
  ag::Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return ag::Var(std::move(m));
}

WaveNet::WaveNet(nn::ParamStore& store, const std::string& prefix, int channels, int cond_dim, int layers,
                 int kernel, bool circular, Rng& rng)
    : channels_(channels) {
  for (int i = 0; i < layers; ++i) {
    const std::string p = prefix + ".l" + std::to_string(i + 1);
    Layer l;
    l.in = nn::make_conv1d(store, p + ".in", channels, 2 * channels, kernel, 1 << i, rng);
    l.in.circular = circular;
    l.cond = nn::make_linear(store, p + ".cond", cond_dim, 2 * channels, rng);
    const int rs_out = i + 1 < layers ? 2 * channels : channels;
    l.res_skip = nn::make_linear(store, p + ".res_skip", channels, rs_out, rng);
    layers_.push_back(std::move(l));
  }
}

ag::Var WaveNet::operator()(const ag::Var& x_in, const ag::Var& cond) const {
  const Eigen::Index c = channels_;
  ag::Var x = x_in;
  ag::Var out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const ag::Var h = ag::add(l.in(x), l.cond(cond));
    const ag::Var acts = ag::mul(ag::tanh(ag::slice_cols(h, 0, c)), ag::sigmoid(ag::slice_cols(h, c, c)));
    const ag::Var rs = l.res_skip(acts);
    ag::Var skip;
    if (i + 1 < layers_.size()) {
      x = ag::add(x, ag::slice_cols(rs, 0, c));
      skip = ag::slice_cols(rs, c, c);
    } else {
      skip = rs;
    }
    out = out.defined() ? ag::add(out, skip) : skip;
  }
  return out;
}

IntensityVae::IntensityVae(const PredictorConfig& config, Rng& rng) : config_(config) { build(rng); }

IntensityVae::IntensityVae(const PredictorConfig& config, const ModelArchive& archive) : config_(config) {
  Rng rng(0);
  build(rng);
  store_.load_from(archive);
}

void IntensityVae::build(Rng& rng) {
  const auto& c = config_;
  if (c.latent_dim < 2 || c.latent_dim % 2 != 0) {
    throw ConfigError("predictor latent_dim must be even and at least 2");
  }
  const bool circ = c.circular_padding;
  enc_in_ = nn::make_conv1d(store_, "vae.enc.in", 1 + c.audio_dim, c.channels, c.kernel, 1, rng);
  enc_in_.circular = circ;
  enc_ln_ = nn::make_layer_norm(store_, "vae.enc.ln", c.channels);
  enc_wn_ = WaveNet(store_, "vae.enc.wn", c.channels, c.audio_dim, c.wavenet_layers, c.kernel, circ, rng);
  enc_proj_ = nn::make_linear(store_, "vae.enc.proj", c.channels, 2 * c.latent_dim, rng);

  dec_pre_ = nn::make_linear(store_, "vae.dec.pre", c.latent_dim, c.channels, rng);
  dec_wn_ = WaveNet(store_, "vae.dec.wn", c.channels, c.audio_dim, c.wavenet_layers, c.kernel, circ, rng);
  dec_up_ = nn::make_conv1d(store_, "vae.dec.up", c.channels, c.channels, c.kernel, 1, rng);
  dec_up_.transposed = true;
  dec_up_.circular = circ;
  dec_ln_ = nn::make_layer_norm(store_, "vae.dec.ln", c.channels);
  dec_proj_ = nn::make_linear(store_, "vae.dec.proj", c.channels, 1, rng);

  const int half = c.latent_dim / 2;
  flow_pre_ = nn::make_linear(store_, "vae.flow.pre", half, c.channels, rng);
  flow_wn_ = WaveNet(store_, "vae.flow.wn", c.channels, c.audio_dim, c.wavenet_layers, c.kernel, circ, rng);
  // Zero-initialized so the coupling starts as the identity map.
  flow_post_.weight = store_.create("vae.flow.post.weight", ag::Matrix::Zero(c.channels, 2 * half));
  flow_post_.bias = store_.create("vae.flow.post.bias", ag::Matrix::Zero(1, 2 * half));
}

GaussianParams IntensityVae::encode(const ag::Var& intensity, const ag::Var& audio) const {
  require_aligned(intensity.rows(), audio.rows(), "encode");
  if (intensity.cols() != 1) throw DimensionError("encode: intensity must be a single column");
  if (audio.cols() != config_.audio_dim) throw DimensionError("encode: audio feature width mismatch");
  ag::Var h = enc_in_(ag::concat_cols({intensity, audio}));
  h = enc_ln_(ag::relu(h));
  h = enc_wn_(h, audio);
  const ag::Var stats = enc_proj_(h);
  const int d = config_.latent_dim;
  return {ag::slice_cols(stats, 0, d),
          ag::clamp(ag::slice_cols(stats, d, d), config_.logvar_min, config_.logvar_max)};
}

ag::Var IntensityVae::decode(const ag::Var& z, const ag::Var& audio) const {
  require_aligned(z.rows(), audio.rows(), "decode");
  if (z.cols() != config_.latent_dim) throw DimensionError("decode: latent width mismatch");
  ag::Var h = dec_wn_(dec_pre_(z), audio);
  h = dec_ln_(ag::relu(dec_up_(h)));
  return dec_proj_(h);
}

FlowResult IntensityVae::coupling_forward(const ag::Var& z, const ag::Var& audio) const {
  require_aligned(z.rows(), audio.rows(), "prior");
  if (z.cols() != config_.latent_dim) throw DimensionError("prior: latent width mismatch");
  const int half = config_.latent_dim / 2;
  const ag::Var za = ag::slice_cols(z, 0, half);
  const ag::Var zb = ag::slice_cols(z, half, half);
  const ag::Var stats = flow_post_(flow_wn_(flow_pre_(za), audio));
  const ag::Var shift = ag::slice_cols(stats, 0, half);
  const ag::Var log_scale = ag::slice_cols(stats, half, half);
  const ag::Var yb = ag::add(shift, ag::mul(zb, ag::exp(log_scale)));
  return {ag::concat_cols({za, yb}), ag::sum(log_scale)};
}

ag::Var IntensityVae::coupling_inverse(const ag::Var& u, const ag::Var& audio) const {
  require_aligned(u.rows(), audio.rows(), "prior inverse");
  const int half = config_.latent_dim / 2;
  const ag::Var ya = ag::slice_cols(u, 0, half);
  const ag::Var yb = ag::slice_cols(u, half, half);
  const ag::Var stats = flow_post_(flow_wn_(flow_pre_(ya), audio));
  const ag::Var shift = ag::slice_cols(stats, 0, half);
  const ag::Var log_scale = ag::slice_cols(stats, half, half);
  const ag::Var zb = ag::mul(ag::sub(yb, shift), ag::exp(ag::scale(log_scale, -1.0)));
  return ag::concat_cols({ya, zb});
}

FlowResult IntensityVae::prior_forward(const ag::Var& z, const ag::Var& audio) const {
  FlowResult r = coupling_forward(z, audio);
  r.u = ag::reverse_cols(r.u);
  if (!r.u.value().allFinite()) throw NumericError("prior flow produced a non-finite latent");
  return r;
}

ag::Var IntensityVae::prior_inverse(const ag::Var& u, const ag::Var& audio) const {
  return coupling_inverse(ag::reverse_cols(u), audio);
}

ElboParts IntensityVae::elbo(const ag::Var& intensity, const ag::Var& audio, Rng& rng) const {
  const auto T = static_cast<double>(intensity.rows());
  const GaussianParams q = encode(intensity, audio);
  const ag::Var eps(rng.normal_matrix(q.mean.rows(), q.mean.cols()));
  const ag::Var z = ag::add(q.mean, ag::mul(ag::exp(ag::scale(q.logvar, 0.5)), eps));
  const ag::Var pred = decode(z, audio);

  // Gaussian NLL with unit variance, averaged over frames.
  const ag::Var nll =
      ag::add_scalar(ag::scale(ag::sum(ag::square(ag::sub(intensity, pred))), 0.5 / T), 0.5 * kLog2Pi);

  ag::Var kl;
  if (config_.flow_prior) {
    // KL = E_q[log q(z)] - E_q[log p(z|a)]; the first term is analytic, the
    // second uses the reparameterized sample and the change of variables.
    const double dz = static_cast<double>(q.mean.value().size());
    const ag::Var neg_entropy = ag::scale(ag::add_scalar(ag::sum(q.logvar), dz * (kLog2Pi + 1.0)), -0.5);
    const FlowResult f = prior_forward(z, audio);
    const ag::Var log_prior =
        ag::add(ag::scale(ag::add_scalar(ag::sum(ag::square(f.u)), dz * kLog2Pi), -0.5), f.log_det);
    kl = ag::scale(ag::sub(neg_entropy, log_prior), 1.0 / T);
  } else {
    // Closed form KL(N(mu, sigma^2) || N(0, I)).
    const ag::Var terms =
        ag::sub(ag::add(ag::square(q.mean), ag::exp(q.logvar)), ag::add_scalar(q.logvar, 1.0));
    kl = ag::scale(ag::sum(terms), 0.5 / T);
  }
  ElboParts parts;
  parts.loss = ag::add(nll, kl);
  parts.nll = nll.item();
  parts.kl = kl.item();
  return parts;
}

std::pair<ag::Matrix, ag::Matrix> encode(const IntensityVae& vae, const IntensitySequence& intensity,
                                         const AudioFeatureSequence& audio) {
  if (!intensity.normalized) throw DomainError("encode expects normalized intensities");
  require_aligned(static_cast<Eigen::Index>(intensity.size()), audio.frames(), "encode");
  ag::NoGradGuard ng;
  const auto q = vae.encode(to_column(intensity.values), audio_var(audio));
  return {q.mean.value(), q.logvar.value()};
}

std::vector<double> decode(const IntensityVae& vae, const LatentSequence& z, const AudioFeatureSequence& audio) {
  require_aligned(z.z.rows(), audio.frames(), "decode");
  ag::NoGradGuard ng;
  const ag::Matrix out = vae.decode(ag::Var(z.z), audio_var(audio)).value();
  return std::vector<double>(out.data(), out.data() + out.size());
}

std::pair<LatentSequence, double> prior_forward(const IntensityVae& vae, const LatentSequence& z,
                                                const AudioFeatureSequence& audio) {
  if (!z.z.allFinite()) throw NumericError("prior_forward: non-finite latent");
  ag::NoGradGuard ng;
  const auto r = vae.prior_forward(ag::Var(z.z), audio_var(audio));
  return {LatentSequence{r.u.value()}, r.log_det.item()};
}

LatentSequence prior_inverse(const IntensityVae& vae, const LatentSequence& u, const AudioFeatureSequence& audio) {
  ag::NoGradGuard ng;
  return LatentSequence{vae.prior_inverse(ag::Var(u.z), audio_var(audio)).value()};
}

ElboValue elbo_loss(const IntensityVae& vae, const IntensitySequence& intensity,
                    const AudioFeatureSequence& audio, Rng rng) {
  require_aligned(static_cast<Eigen::Index>(intensity.size()), audio.frames(), "elbo");
  ag::NoGradGuard ng;
  const auto p = vae.elbo(to_column(intensity.values), audio_var(audio), rng);
  return {p.loss.item(), p.nll, p.kl};
}

IntensitySequence predict_intensity(const IntensityVae& vae, const AudioFeatureSequence& audio,
                                    PredictMode mode, Rng rng) {
  ag::NoGradGuard ng;
  const Eigen::Index T = audio.frames();
  const int d = vae.config().latent_dim;
  ag::Matrix u = mode == PredictMode::kMean ? ag::Matrix::Zero(T, d) : rng.normal_matrix(T, d);
  const ag::Var a = audio_var(audio);
  const ag::Var z = vae.config().flow_prior ? vae.prior_inverse(ag::Var(std::move(u)), a) : ag::Var(std::move(u));
  const ag::Matrix pred = vae.decode(z, a).value();
  IntensitySequence out;
  out.fps = audio.fps;
  out.clip_id = audio.clip_id;
  out.normalized = true;
  out.values.resize(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) out.values[static_cast<std::size_t>(t)] = std::clamp(pred(t, 0), 0.0, 1.0);
  return out;
}

void train_predictor(IntensityVae& vae, const std::vector<PredictorExample>& examples, std::uint64_t seed,
                     const std::function<void(const PredictorTrainLog&)>& on_step) {
  if (examples.empty()) throw InsufficientDataError("predictor training needs at least one example");
  for (const auto& ex : examples) {
    require_aligned(static_cast<Eigen::Index>(ex.labels->size()), ex.audio->frames(), "train_predictor");
  }
  const auto& c = vae.config();
  nn::AdamConfig ac;
  ac.learning_rate = c.learning_rate;
  ac.beta1 = c.beta1;
  ac.beta2 = c.beta2;
  nn::Adam adam(ac);
  Rng batch_rng(seed, "predictor/batches");
  Rng noise_rng(seed, "predictor/noise");
  for (int step = 0; step < c.steps; ++step) {
    vae.params().zero_grad();
    ag::Var total;
    double nll = 0.0, kl = 0.0;
    for (int b = 0; b < c.batch; ++b) {
      const auto& ex = examples[batch_rng.index(examples.size())];
      const auto T = static_cast<Eigen::Index>(ex.labels->size());
      const Eigen::Index len = std::min<Eigen::Index>(T, c.crop);
      const Eigen::Index start = T > len ? static_cast<Eigen::Index>(batch_rng.index(static_cast<std::size_t>(T - len + 1))) : 0;
      const ag::Var L(to_column(ex.labels->values).value().middleRows(start, len));
      const ag::Var a(ex.audio->features.middleRows(start, len));
      const auto parts = vae.elbo(L, a, noise_rng);
      nll += parts.nll;
      kl += parts.kl;
      total = total.defined() ? ag::add(total, parts.loss) : parts.loss;
    }
    total = ag::scale(total, 1.0 / c.batch);
    ag::backward(total);
    adam.step(vae.params());
    if (on_step) on_step({step, total.item(), nll / c.batch, kl / c.batch});
  }
  vae.params().zero_grad();
}

double intensity_mse(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw AlignmentError("intensity_mse: length mismatch");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace emoint
