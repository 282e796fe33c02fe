#include "dapr/predictor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dapr/nn/adam.h"

namespace dapr::predictor {

using nn::Shape;
using nn::Tensor;
using nn::Var;

void PredictorConfig::validate() const {
  if (catalog_size == 0) throw std::invalid_argument("predictor: catalog_size must be > 0");
  if (num_locations == 0 || num_time_buckets == 0) {
    throw std::invalid_argument("predictor: embedding tables need at least one row");
  }
  if (latent_dim == 0 || hidden_dim == 0 || vae_hidden == 0 || location_embed_dim == 0 ||
      time_embed_dim == 0) {
    throw std::invalid_argument("predictor: layer sizes must be > 0");
  }
}

std::size_t PredictorConfig::input_dim() const {
  return catalog_size + location_embed_dim + time_embed_dim + context_dim;
}

std::size_t PredictorConfig::recurrent_input_dim() const {
  return recurrent_input == RecurrentInput::kReconstruction ? catalog_size : latent_dim;
}

std::size_t PredictorConfig::state_dim() const {
  return cell == RecurrentCell::kLstm ? 2 * hidden_dim : hidden_dim;
}

PredictorParams make_zero_params(const PredictorConfig& cfg) {
  cfg.validate();
  PredictorParams p;
  p.add_segment("emb.loc", {cfg.num_locations, cfg.location_embed_dim});
  p.add_segment("emb.time", {cfg.num_time_buckets, cfg.time_embed_dim});
  nn::add_dense(p, "enc.hidden", cfg.input_dim(), cfg.vae_hidden);
  nn::add_dense(p, "enc.mu", cfg.vae_hidden, cfg.latent_dim);
  nn::add_dense(p, "enc.sigma", cfg.vae_hidden, cfg.latent_dim);
  nn::add_dense(p, "dec.hidden", cfg.latent_dim, cfg.vae_hidden);
  nn::add_dense(p, "dec.out", cfg.vae_hidden, cfg.catalog_size);
  switch (cfg.cell) {
    case RecurrentCell::kGru: nn::add_gru(p, "rec", cfg.recurrent_input_dim(), cfg.hidden_dim); break;
    case RecurrentCell::kRnn: nn::add_rnn(p, "rec", cfg.recurrent_input_dim(), cfg.hidden_dim); break;
    case RecurrentCell::kLstm: nn::add_lstm(p, "rec", cfg.recurrent_input_dim(), cfg.hidden_dim); break;
  }
  nn::add_dense(p, "head", cfg.hidden_dim, cfg.catalog_size);
  return p;
}

PredictorParams make_params(const PredictorConfig& cfg, std::mt19937_64& rng) {
  PredictorParams p = make_zero_params(cfg);
  p.init_uniform(rng);
  return p;
}

bool is_vae_segment(const nn::Segment& s) {
  return s.name.starts_with("emb.") || s.name.starts_with("enc.") || s.name.starts_with("dec.");
}

Network::Network(nn::Tape& tape, PredictorParams& params, const PredictorConfig& cfg)
    : tape_(&tape), cfg_(cfg) {
  bind(params);
}

Network::Network(nn::Tape& tape, const PredictorParams& params, const PredictorConfig& cfg)
    : tape_(&tape), cfg_(cfg) {
  // Parameter leaves only write grads during backward(), which an inference
  // tape never runs.
  bind(const_cast<PredictorParams&>(params));
}

void Network::bind(PredictorParams& params) {
  cfg_.validate();
  if (!params.same_layout(make_zero_params(cfg_))) {
    throw std::invalid_argument("predictor: parameter layout does not match config");
  }
  nn::Tape& t = *tape_;
  loc_table_ = t.param(params, "emb.loc");
  time_table_ = t.param(params, "emb.time");
  enc_hidden_ = nn::Dense::bind(t, params, "enc.hidden");
  enc_mu_ = nn::Dense::bind(t, params, "enc.mu");
  enc_sigma_ = nn::Dense::bind(t, params, "enc.sigma");
  dec_hidden_ = nn::Dense::bind(t, params, "dec.hidden");
  dec_out_ = nn::Dense::bind(t, params, "dec.out");
  switch (cfg_.cell) {
    case RecurrentCell::kGru: gru_ = nn::GruCell::bind(t, params, "rec"); break;
    case RecurrentCell::kRnn: rnn_ = nn::RnnCell::bind(t, params, "rec"); break;
    case RecurrentCell::kLstm: lstm_ = nn::LstmCell::bind(t, params, "rec"); break;
  }
  head_ = nn::Dense::bind(t, params, "head");
}

Var Network::requests(std::span<const FeatureFrame* const> frames) const {
  Tensor x(Shape{frames.size(), cfg_.catalog_size});
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const auto& req = frames[r]->requests;
    if (req.size() != cfg_.catalog_size) {
      throw nn::ShapeError("frame has " + std::to_string(req.size()) + " request entries, catalog is " +
                           std::to_string(cfg_.catalog_size));
    }
    for (std::size_t i = 0; i < req.size(); ++i) {
      if (!(req[i] >= 0.0) || !std::isfinite(req[i])) {
        throw std::invalid_argument("frame request entries must be finite and >= 0");
      }
      x.at(r, i) = req[i];
    }
  }
  return tape_->constant(std::move(x));
}

Var Network::build_input(std::span<const FeatureFrame* const> frames) const {
  if (frames.empty()) throw std::invalid_argument("build_input: empty batch");
  std::vector<std::size_t> loc, tod;
  Tensor ctx(Shape{frames.size(), cfg_.context_dim});
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const FeatureFrame& f = *frames[r];
    loc.push_back(f.location);
    tod.push_back(f.time_bucket);
    if (!f.context.empty()) {
      if (f.context.size() != cfg_.context_dim) throw nn::ShapeError("frame context width mismatch");
      for (std::size_t i = 0; i < cfg_.context_dim; ++i) ctx.at(r, i) = f.context[i];
    }
  }
  std::vector<Var> parts{requests(frames), nn::gather_rows(loc_table_, loc),
                         nn::gather_rows(time_table_, tod)};
  if (cfg_.context_dim > 0) parts.push_back(tape_->constant(std::move(ctx)));
  return nn::concat(parts);
}

std::pair<Var, Var> Network::encode(Var h) const {
  Var hidden = nn::tanh(enc_hidden_(h));
  return {enc_mu_(hidden), nn::softplus(enc_sigma_(hidden))};
}

Var Network::decode(Var z) const { return dec_out_(nn::tanh(dec_hidden_(z))); }

Var Network::initial_state(std::size_t batch) const {
  return tape_->constant(Tensor(Shape{batch, cfg_.state_dim()}));
}

Var Network::step(Var state, Var input) const {
  switch (cfg_.cell) {
    case RecurrentCell::kGru: return gru_(state, input);
    case RecurrentCell::kRnn: return rnn_(state, input);
    case RecurrentCell::kLstm: return lstm_(state, input);
  }
  throw std::logic_error("unknown recurrent cell");
}

Var Network::head(Var state) const {
  Var h = cfg_.cell == RecurrentCell::kLstm ? nn::slice(state, 0, cfg_.hidden_dim) : state;
  return nn::softmax(head_(h));
}

namespace {

Tensor as_row(const Tensor& v) {
  if (v.rank() != 1) throw nn::ShapeError("expected a vector, got " + nn::shape_string(v.shape()));
  return Tensor(Shape{1, v.size()}, v.values());
}

Tensor as_vector(const Tensor& v) { return Tensor(Shape{v.size()}, v.values()); }

Tensor normal_noise(std::size_t rows, std::size_t cols, std::mt19937_64* rng) {
  Tensor eps(Shape{rows, cols});
  if (rng == nullptr) return eps;
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& e : eps.data()) e = n(*rng);
  return eps;
}

}  // namespace

Tensor build_input(const FeatureFrame& frame, const PredictorParams& params,
                   const PredictorConfig& cfg) {
  nn::Tape tape;
  Network net(tape, params, cfg);
  const FeatureFrame* f = &frame;
  return as_vector(net.build_input({&f, 1}).value());
}

std::pair<Tensor, Tensor> vae_encode(const Tensor& h, const PredictorParams& params,
                                     const PredictorConfig& cfg) {
  nn::Tape tape;
  Network net(tape, params, cfg);
  auto [mu, sigma] = net.encode(tape.constant(as_row(h)));
  return {as_vector(mu.value()), as_vector(sigma.value())};
}

Tensor reparameterize(const Tensor& mu, const Tensor& sigma, const Tensor& eps) {
  if (mu.shape() != sigma.shape() || mu.shape() != eps.shape()) {
    throw nn::ShapeError("reparameterize: mu, sigma and eps must share a shape");
  }
  Tensor z(mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + sigma[i] * eps[i];
  return z;
}

Tensor vae_decode(const Tensor& z, const PredictorParams& params, const PredictorConfig& cfg) {
  nn::Tape tape;
  Network net(tape, params, cfg);
  return as_vector(net.decode(tape.constant(as_row(z))).value());
}

double vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mu, const Tensor& sigma,
                double beta_kl) {
  const double rows = static_cast<double>(mu.rows());
  return nn::mse(x, x_hat) + beta_kl * nn::kl_gauss(mu, sigma) / rows;
}

Var reparameterize(Var mu, Var sigma, const Tensor& eps) {
  return nn::add(mu, nn::mul(sigma, mu.tape().constant(eps)));
}

Var vae_loss(Var x, Var x_hat, Var mu, Var sigma, double beta_kl) {
  const double rows = static_cast<double>(mu.value().rows());
  return nn::add(nn::mse(x, x_hat), nn::scale(nn::kl_gauss(mu, sigma), beta_kl / rows));
}

PopularityForecast predict_popularity(std::span<const FeatureFrame> frames,
                                      const PredictorParams& params, const PredictorConfig& cfg,
                                      std::mt19937_64* noise) {
  if (frames.empty()) throw std::invalid_argument("predict_popularity: empty frame sequence");
  nn::Tape tape;
  Network net(tape, params, cfg);
  Var state = net.initial_state(1);
  for (const FeatureFrame& f : frames) {
    const FeatureFrame* p = &f;
    auto [mu, sigma] = net.encode(net.build_input({&p, 1}));
    Var z = reparameterize(mu, sigma, normal_noise(1, cfg.latent_dim, noise));
    Var input = cfg.recurrent_input == RecurrentInput::kReconstruction ? net.decode(z) : z;
    state = net.step(state, input);
  }
  PopularityForecast out;
  const auto v = net.head(state).value().values();
  out.probabilities.assign(v.begin(), v.end());
  out.slot = frames.size();
  return out;
}

double combine_losses(double vae, double gru, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("joint loss weight must lie in [0, 1]");
  }
  return lambda * vae + (1.0 - lambda) * gru;
}

JointGraph joint_loss_graph(const Network& net, std::span<const SequenceSample* const> batch,
                            const LossOptions& opts, std::mt19937_64* noise) {
  combine_losses(0.0, 0.0, opts.lambda);  // validates lambda
  if (batch.empty()) throw std::invalid_argument("joint loss of an empty batch");
  const std::size_t steps = batch.front()->frames.size();
  if (steps == 0) throw std::invalid_argument("sample with no frames");
  const auto& cfg = net.config();
  Tensor y(Shape{batch.size(), cfg.catalog_size});
  for (std::size_t r = 0; r < batch.size(); ++r) {
    if (batch[r]->frames.size() != steps) {
      throw std::invalid_argument("samples in one batch must have equal window length");
    }
    if (batch[r]->target.size() != cfg.catalog_size) throw nn::ShapeError("target width mismatch");
    for (std::size_t i = 0; i < cfg.catalog_size; ++i) y.at(r, i) = batch[r]->target[i];
  }

  Var state = net.initial_state(batch.size());
  nn::Tape& tape = state.tape();
  Var recon, kl;
  const double rows = static_cast<double>(batch.size());
  std::vector<const FeatureFrame*> frames(batch.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t r = 0; r < batch.size(); ++r) frames[r] = &batch[r]->frames[t];
    auto [mu, sigma] = net.encode(net.build_input(frames));
    Var z = reparameterize(mu, sigma, normal_noise(batch.size(), cfg.latent_dim, noise));
    Var x_hat = net.decode(z);
    Var rec_t = nn::mse(net.requests(frames), x_hat);
    Var kl_t = nn::scale(nn::kl_gauss(mu, sigma), 1.0 / rows);
    recon = t == 0 ? rec_t : nn::add(recon, rec_t);
    kl = t == 0 ? kl_t : nn::add(kl, kl_t);
    state = net.step(state, cfg.recurrent_input == RecurrentInput::kReconstruction ? x_hat : z);
  }
  const double inv_steps = 1.0 / static_cast<double>(steps);
  JointGraph g;
  g.recon = nn::scale(recon, inv_steps);
  g.kl = nn::scale(kl, inv_steps);
  g.vae = nn::add(g.recon, nn::scale(g.kl, opts.beta_kl));
  g.gru = nn::mse(net.head(state), tape.constant(std::move(y)));
  g.total = nn::add(nn::scale(g.vae, opts.lambda), nn::scale(g.gru, 1.0 - opts.lambda));
  return g;
}

namespace {

std::vector<const SequenceSample*> pointers(std::span<const SequenceSample> batch) {
  std::vector<const SequenceSample*> out;
  for (const auto& s : batch) out.push_back(&s);
  return out;
}

LossParts parts_of(const JointGraph& g) {
  return {g.vae.value().item(), g.gru.value().item(), g.total.value().item()};
}

}  // namespace

LossParts joint_loss(std::span<const SequenceSample> batch, const PredictorParams& params,
                     const PredictorConfig& cfg, const LossOptions& opts,
                     std::mt19937_64* noise) {
  nn::Tape tape;
  Network net(tape, params, cfg);
  return parts_of(joint_loss_graph(net, pointers(batch), opts, noise));
}

LossParts joint_loss_with_grad(std::span<const SequenceSample> batch, PredictorParams& params,
                               const PredictorConfig& cfg, const LossOptions& opts,
                               std::mt19937_64* noise) {
  nn::Tape tape;
  Network net(tape, params, cfg);
  JointGraph g = joint_loss_graph(net, pointers(batch), opts, noise);
  tape.backward(g.total);
  return parts_of(g);
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::kVae: return "vae";
    case Phase::kRecurrent: return "recurrent";
    case Phase::kJoint: return "joint";
  }
  return "?";
}

TrainResult train_predictor(const Dataset& data, const PredictorConfig& cfg,
                            const TrainSchedule& schedule, const PredictorParams* init) {
  if (data.empty()) throw std::invalid_argument("train_predictor: empty dataset");
  if (schedule.batch_size == 0) throw std::invalid_argument("train_predictor: batch_size must be > 0");
  combine_losses(0.0, 0.0, schedule.lambda);

  std::mt19937_64 rng(schedule.seed);
  TrainResult result;
  result.params = init != nullptr ? *init : make_params(cfg, rng);
  PredictorParams& params = result.params;
  std::mt19937_64 noise(schedule.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t epoch = 0;

  auto run_phase = [&](Phase phase, std::size_t epochs) {
    nn::AdamState adam(params.size());
    nn::SegmentFilter filter;
    if (phase == Phase::kVae) filter = is_vae_segment;
    if (phase == Phase::kRecurrent) filter = [](const nn::Segment& s) { return !is_vae_segment(s); };

    for (std::size_t e = 0; e < epochs; ++e) {
      ++epoch;
      double beta = schedule.beta_kl;
      if (phase == Phase::kJoint && schedule.beta_warmup_epochs > 0) {
        beta *= std::min(1.0, static_cast<double>(e + 1) /
                                  static_cast<double>(schedule.beta_warmup_epochs));
      }
      std::shuffle(order.begin(), order.end(), rng);
      LossParts sum;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
        const std::size_t end = std::min(order.size(), start + schedule.batch_size);
        std::vector<const SequenceSample*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);

        params.zero_grads();
        nn::Tape tape;
        Network net(tape, params, cfg);
        JointGraph g = joint_loss_graph(net, batch, {schedule.lambda, beta}, &noise);
        Var objective = phase == Phase::kVae         ? g.vae
                        : phase == Phase::kRecurrent ? g.gru
                                                     : g.total;
        tape.backward(objective);
        adam.step(params, schedule.lr, filter);

        const double vae_full = g.recon.value().item() + schedule.beta_kl * g.kl.value().item();
        const double gru = g.gru.value().item();
        sum.vae += vae_full;
        sum.gru += gru;
        sum.total += combine_losses(vae_full, gru, schedule.lambda);
        ++batches;
      }
      const double n = static_cast<double>(batches);
      result.history.push_back({phase, epoch, {sum.vae / n, sum.gru / n, sum.total / n}});
    }
  };

  run_phase(Phase::kVae, schedule.vae_epochs);
  run_phase(Phase::kRecurrent, schedule.gru_epochs);
  run_phase(Phase::kJoint, schedule.joint_epochs);
  params.zero_grads();
  return result;
}

double min_sigma(const Dataset& data, const PredictorParams& params, const PredictorConfig& cfg) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& s : data) {
    nn::Tape tape;
    Network net(tape, params, cfg);
    std::vector<const FeatureFrame*> frames;
    for (const auto& f : s.frames) frames.push_back(&f);
    auto [mu, sigma] = net.encode(net.build_input(frames));
    for (double v : sigma.value().values()) lo = std::min(lo, v);
  }
  return lo;
}

std::size_t synthetic_top_item(const SyntheticSpec& spec, std::size_t slot) {
  if (spec.rotate_every == 0) return 0;
  return (slot / spec.rotate_every) % spec.catalog_size;
}

Dataset synthetic_zipf_dataset(const SyntheticSpec& spec) {
  if (spec.catalog_size == 0 || spec.window == 0 || spec.requests_per_slot == 0) {
    throw std::invalid_argument("synthetic dataset needs catalog, window and requests > 0");
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<double> weights(spec.catalog_size);
  for (std::size_t k = 0; k < spec.catalog_size; ++k) {
    weights[k] = 1.0 / std::pow(static_cast<double>(k + 1), spec.zipf_s);
  }
  std::discrete_distribution<std::size_t> rank(weights.begin(), weights.end());

  const std::size_t slots = spec.samples + spec.window;
  std::vector<FeatureFrame> frames(slots);
  const double n = static_cast<double>(spec.requests_per_slot);
  for (std::size_t t = 0; t < slots; ++t) {
    const std::size_t shift = synthetic_top_item(spec, t);
    frames[t].requests.assign(spec.catalog_size, 0.0);
    for (std::size_t r = 0; r < spec.requests_per_slot; ++r) {
      frames[t].requests[(rank(rng) + shift) % spec.catalog_size] += 1.0 / n;
    }
    frames[t].time_bucket = t % spec.num_time_buckets;
  }

  Dataset data(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    data[i].frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(i),
                          frames.begin() + static_cast<std::ptrdiff_t>(i + spec.window));
    data[i].target = frames[i + spec.window].requests;
  }
  return data;
}

}  // namespace dapr::predictor
