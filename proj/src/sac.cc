#include "dapr/sac.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dapr/nn/ops.h"

namespace dapr::rl {

using nn::Shape;
using nn::Tensor;
using nn::Var;

void SacConfig::validate() const {
  if (state_dim == 0 || action_dim == 0) throw std::invalid_argument("sac: state/action dims must be > 0");
  if (!(alpha_ent >= 0.0)) throw std::invalid_argument("sac: alpha_ent must be >= 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("sac: gamma outside [0,1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("sac: tau outside [0,1]");
  if (batch_size == 0 || buffer_capacity == 0) throw std::invalid_argument("sac: batch and buffer must be > 0");
  if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw std::invalid_argument("sac: learning rates must be > 0");
  if (!(reward_centering >= 0.0 && reward_centering <= 1.0)) {
    throw std::invalid_argument("sac: reward_centering outside [0,1]");
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be > 0");
}

void ReplayBuffer::push(Transition t) {
  if (!std::isfinite(t.reward)) throw std::invalid_argument("transition reward is not finite");
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t batch, std::mt19937_64& rng) const {
  if (batch > items_.size()) throw std::invalid_argument("replay buffer smaller than batch");
  // Partial Fisher-Yates over indices.
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<const Transition*> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.push_back(&items_[idx[i]]);
  }
  return out;
}

nn::MlpSpec policy_spec(const SacConfig& cfg) {
  return {cfg.state_dim, cfg.hidden, cfg.action_dim, nn::Activation::kTanh};
}

nn::MlpSpec value_spec(const SacConfig& cfg) {
  return {cfg.state_dim, cfg.hidden, 1, nn::Activation::kTanh};
}

nn::MlpSpec q_spec(const SacConfig& cfg) {
  return {cfg.state_dim + cfg.action_dim, cfg.hidden, 1, nn::Activation::kTanh};
}

namespace {

nn::ParamVector make_mlp(const nn::MlpSpec& spec, std::mt19937_64& rng) {
  nn::ParamVector p;
  nn::add_mlp(p, "net", spec);
  p.init_uniform(rng);
  return p;
}

Tensor mlp_forward(const nn::ParamVector& p, const nn::MlpSpec& spec, const Tensor& x) {
  nn::Tape tape;
  auto mlp = nn::Mlp::bind_constant(tape, p, "net", spec);
  return mlp(tape.constant(x)).value();
}

Tensor column(const Tensor& t) {
  // [B, 1] -> [B]
  return Tensor(Shape{t.rows()}, t.values());
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw nn::ShapeError("concat_cols: row counts differ");
  Tensor out(Shape{a.rows(), a.cols() + b.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t i = 0; i < a.cols(); ++i) out.at(r, i) = a.at(r, i);
    for (std::size_t i = 0; i < b.cols(); ++i) out.at(r, a.cols() + i) = b.at(r, i);
  }
  return out;
}

void check_rows(const Tensor& t, std::size_t cols, const char* what) {
  if (t.rank() != 2 || t.cols() != cols) {
    throw nn::ShapeError(std::string(what) + ": expected [B, " + std::to_string(cols) + "], got " +
                         nn::shape_string(t.shape()));
  }
}

}  // namespace

SacNets make_sac_nets(const SacConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  SacNets n;
  n.policy = make_mlp(policy_spec(cfg), rng);
  n.value = make_mlp(value_spec(cfg), rng);
  n.value_target = n.value;
  n.q1 = make_mlp(q_spec(cfg), rng);
  n.q2 = make_mlp(q_spec(cfg), rng);
  if (cfg.twin_value_targets) {
    n.value2 = make_mlp(value_spec(cfg), rng);
    n.value_target2 = n.value2;
  }
  return n;
}

Tensor policy_logits(const nn::ParamVector& policy, const SacConfig& cfg, const Tensor& states) {
  check_rows(states, cfg.state_dim, "policy_logits");
  return mlp_forward(policy, policy_spec(cfg), states);
}

Tensor value_forward(const nn::ParamVector& value, const SacConfig& cfg, const Tensor& states) {
  check_rows(states, cfg.state_dim, "value_forward");
  return column(mlp_forward(value, value_spec(cfg), states));
}

Tensor q_forward(const nn::ParamVector& q, const SacConfig& cfg, const Tensor& states,
                 const Tensor& actions) {
  check_rows(states, cfg.state_dim, "q_forward");
  check_rows(actions, cfg.action_dim, "q_forward");
  return column(mlp_forward(q, q_spec(cfg), concat_cols(states, actions)));
}

CacheAction sample_action(std::span<const double> logits, ActionMode mode, std::mt19937_64* rng) {
  CacheAction a(logits.size(), 0);
  if (mode == ActionMode::kGreedy) {
    for (std::size_t i = 0; i < logits.size(); ++i) a[i] = logits[i] > 0.0 ? 1 : 0;
    return a;
  }
  if (rng == nullptr) throw std::invalid_argument("stochastic action sampling needs a random stream");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < logits.size(); ++i) a[i] = u(*rng) < nn::sigmoid(logits[i]) ? 1 : 0;
  return a;
}

CacheAction sample_action(const nn::ParamVector& policy, const SacConfig& cfg,
                          std::span<const double> state, ActionMode mode, std::mt19937_64* rng) {
  Tensor s(Shape{1, state.size()}, std::vector<double>(state.begin(), state.end()));
  Tensor logits = policy_logits(policy, cfg, s);
  return sample_action(logits.values(), mode, rng);
}

double log_prob(std::span<const double> logits, const CacheAction& action) {
  if (logits.size() != action.size()) throw nn::ShapeError("log_prob: action width mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    lp += nn::log_sigmoid(action[i] ? logits[i] : -logits[i]);
  }
  return lp;
}

Batch make_batch(std::span<const Transition* const> transitions, const SacConfig& cfg) {
  if (transitions.empty()) throw std::invalid_argument("empty SAC batch");
  const std::size_t b = transitions.size();
  Batch out{Tensor(Shape{b, cfg.state_dim}), Tensor(Shape{b, cfg.action_dim}), Tensor(Shape{b}),
            Tensor(Shape{b, cfg.state_dim})};
  for (std::size_t r = 0; r < b; ++r) {
    const Transition& t = *transitions[r];
    if (t.state.size() != cfg.state_dim || t.next_state.size() != cfg.state_dim ||
        t.action.size() != cfg.action_dim) {
      throw nn::ShapeError("transition dimensions do not match the agent");
    }
    for (std::size_t i = 0; i < cfg.state_dim; ++i) {
      out.states.at(r, i) = t.state[i];
      out.next_states.at(r, i) = t.next_state[i];
    }
    for (std::size_t i = 0; i < cfg.action_dim; ++i) out.actions.at(r, i) = t.action[i] ? 1.0 : 0.0;
    out.rewards[r] = t.reward;
  }
  return out;
}

Tensor value_target(const SacNets& nets, const SacConfig& cfg, const Tensor& states,
                    const Tensor& sampled_actions) {
  const Tensor logits = policy_logits(nets.policy, cfg, states);
  const Tensor q1 = q_forward(nets.q1, cfg, states, sampled_actions);
  const Tensor q2 = q_forward(nets.q2, cfg, states, sampled_actions);
  Tensor v(Shape{states.rows()});
  const std::size_t m = cfg.action_dim;
  for (std::size_t r = 0; r < states.rows(); ++r) {
    CacheAction a(m);
    for (std::size_t i = 0; i < m; ++i) a[i] = sampled_actions.at(r, i) > 0.5 ? 1 : 0;
    std::span<const double> row(logits.values().data() + r * m, m);
    v[r] = std::min(q1[r], q2[r]) - cfg.alpha_ent * log_prob(row, a);
  }
  return v;
}

Tensor q_target(const SacNets& nets, const SacConfig& cfg, const Batch& batch) {
  Tensor next = value_forward(nets.value_target, cfg, batch.next_states);
  if (cfg.twin_value_targets) {
    const Tensor next2 = value_forward(nets.value_target2, cfg, batch.next_states);
    for (std::size_t r = 0; r < next.size(); ++r) next[r] = std::min(next[r], next2[r]);
  }
  Tensor y(Shape{batch.size()});
  for (std::size_t r = 0; r < y.size(); ++r) y[r] = batch.rewards[r] + cfg.gamma * next[r];
  return y;
}

Var value_loss(nn::Tape& tape, nn::ParamVector& value, const SacConfig& cfg, const Tensor& states,
               const Tensor& targets) {
  auto net = nn::Mlp::bind(tape, value, "net", value_spec(cfg));
  Var v = nn::flatten(net(tape.constant(states)));
  return nn::scale(nn::mean(nn::square(nn::sub(v, tape.constant(targets)))), 0.5);
}

Var q_loss(nn::Tape& tape, nn::ParamVector& q, const SacConfig& cfg, const Batch& batch,
           const Tensor& targets) {
  auto net = nn::Mlp::bind(tape, q, "net", q_spec(cfg));
  Var qs = nn::flatten(net(tape.constant(concat_cols(batch.states, batch.actions))));
  return nn::mean(nn::square(nn::sub(qs, tape.constant(targets))));
}

namespace {

// Row 0 of each block is the sampled action; row 1 + i flips coordinate i.
struct CriticProbe {
  Tensor min_q;  // [B] at the sampled actions
  Tensor gaps;   // [B, m]
};

// Q at every probe row. Probe rows share the state with their base row, so the
// first-layer preactivation only moves by one weight column.
Tensor probe_forward(const nn::ParamVector& q, const SacConfig& cfg, const Tensor& states,
                     const Tensor& actions) {
  const nn::MlpSpec spec = q_spec(cfg);
  const std::size_t b = states.rows(), m = cfg.action_dim, block = m + 1;
  const std::size_t sd = cfg.state_dim;
  const bool deep = !spec.hidden.empty();
  const std::string first = deep ? "net.l0" : "net.out";
  const Tensor w0 = q.tensor(first + ".W");
  const Tensor base = nn::affine(concat_cols(states, actions), w0, q.tensor(first + ".b"));
  const std::size_t width = base.cols();
  Tensor pre(Shape{b * block, width});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < block; ++j) {
      const std::size_t row = r * block + j;
      for (std::size_t o = 0; o < width; ++o) pre.at(row, o) = base.at(r, o);
      if (j == 0) continue;
      const double sign = actions.at(r, j - 1) > 0.5 ? -1.0 : 1.0;
      for (std::size_t o = 0; o < width; ++o) pre.at(row, o) += sign * w0.at(o, sd + j - 1);
    }
  }
  if (!deep) return column(pre);
  Tensor h = nn::activate(pre, spec.hidden_act);
  for (std::size_t l = 1; l < spec.hidden.size(); ++l) {
    const std::string name = "net.l" + std::to_string(l);
    h = nn::activate(nn::affine(h, q.tensor(name + ".W"), q.tensor(name + ".b")), spec.hidden_act);
  }
  return column(nn::affine(h, q.tensor("net.out.W"), q.tensor("net.out.b")));
}

CriticProbe probe_critics(const SacNets& nets, const SacConfig& cfg, const Tensor& states,
                          const Tensor& actions) {
  check_rows(states, cfg.state_dim, "coordinate_gaps");
  check_rows(actions, cfg.action_dim, "coordinate_gaps");
  const std::size_t b = states.rows(), m = cfg.action_dim, block = m + 1;
  const Tensor q1 = probe_forward(nets.q1, cfg, states, actions);
  const Tensor q2 = probe_forward(nets.q2, cfg, states, actions);
  CriticProbe out{Tensor(Shape{b}), Tensor(Shape{b, m})};
  for (std::size_t r = 0; r < b; ++r) {
    const double base = std::min(q1[r * block], q2[r * block]);
    out.min_q[r] = base;
    for (std::size_t i = 0; i < m; ++i) {
      const double flipped = std::min(q1[r * block + 1 + i], q2[r * block + 1 + i]);
      out.gaps.at(r, i) = actions.at(r, i) > 0.5 ? base - flipped : flipped - base;
    }
  }
  return out;
}

}  // namespace

Tensor coordinate_gaps(const SacNets& nets, const SacConfig& cfg, const Tensor& states,
                       const Tensor& actions) {
  return probe_critics(nets, cfg, states, actions).gaps;
}

Var policy_loss(nn::Tape& tape, nn::ParamVector& policy, const SacNets& nets, const SacConfig& cfg,
                const Tensor& states, const Tensor& actions) {
  check_rows(states, cfg.state_dim, "policy_loss");
  check_rows(actions, cfg.action_dim, "policy_loss");
  auto pi = nn::Mlp::bind(tape, policy, "net", policy_spec(cfg));
  Var logits = pi(tape.constant(states));
  Var p = nn::sigmoid(logits);
  Var neg_entropy = nn::sum_last(nn::add(nn::mul(p, nn::log_sigmoid(logits)),
                                         nn::mul(nn::one_minus(p),
                                                 nn::log_sigmoid(nn::scale(logits, -1.0)))));
  const CriticProbe probe = probe_critics(nets, cfg, states, actions);
  // Zero in value; its gradient w.r.t. p_i is the exact critic gap for coordinate i.
  Var surrogate = nn::sum_last(
      nn::mul(nn::sub(p, tape.constant(p.value())), tape.constant(probe.gaps)));
  Var per_row = nn::sub(nn::scale(neg_entropy, cfg.alpha_ent),
                        nn::add(tape.constant(probe.min_q), surrogate));
  return nn::mean(per_row);
}

void soft_update(nn::ParamVector& target, const nn::ParamVector& source, double tau) {
  if (!target.same_layout(source)) throw std::invalid_argument("soft_update: layout mismatch");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau outside [0,1]");
  auto t = target.values();
  auto s = source.values();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = tau * s[i] + (1.0 - tau) * t[i];
}

SacAgent::SacAgent(SacConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      rng_(seed),
      nets_(make_sac_nets(cfg_, rng_)),
      buffer_(cfg_.buffer_capacity),
      policy_opt_(nets_.policy.size()),
      value_opt_(nets_.value.size()),
      value2_opt_(nets_.value2.size()),
      q1_opt_(nets_.q1.size()),
      q2_opt_(nets_.q2.size()) {}

CacheAction SacAgent::act(std::span<const double> state, ActionMode mode) {
  return sample_action(nets_.policy, cfg_, state, mode, &rng_);
}

void SacAgent::observe(Transition t) {
  const double r = t.reward;
  buffer_.push(std::move(t));
  if (cfg_.reward_centering > 0.0) {
    ++observed_;
    const double step = std::max(cfg_.reward_centering, 1.0 / static_cast<double>(observed_));
    avg_reward_ += step * (r - avg_reward_);
  }
}

namespace {

template <typename Build>
double descend(nn::ParamVector& p, nn::AdamState& opt, double lr, Build build) {
  p.zero_grads();
  nn::Tape tape;
  Var loss = build(tape);
  tape.backward(loss);
  opt.step(p, lr);
  p.zero_grads();
  return loss.value().item();
}

}  // namespace

TrainReport SacAgent::train_step() {
  TrainReport rep;
  if (buffer_.size() <= cfg_.batch_size) return rep;
  rep.trained = true;
  const auto picked = buffer_.sample(cfg_.batch_size, rng_);
  Batch batch = make_batch(picked, cfg_);
  for (std::size_t r = 0; r < batch.size(); ++r) batch.rewards[r] -= avg_reward_;

  // Value nets regress onto min Q - alpha log pi at freshly sampled actions.
  const Tensor logits = policy_logits(nets_.policy, cfg_, batch.states);
  Tensor fresh(Shape{batch.size(), cfg_.action_dim});
  for (std::size_t r = 0; r < batch.size(); ++r) {
    std::span<const double> row(logits.values().data() + r * cfg_.action_dim, cfg_.action_dim);
    const CacheAction a = sample_action(row, ActionMode::kStochastic, &rng_);
    for (std::size_t i = 0; i < a.size(); ++i) fresh.at(r, i) = a[i];
  }
  const Tensor v_target = value_target(nets_, cfg_, batch.states, fresh);
  rep.value_loss = descend(nets_.value, value_opt_, cfg_.critic_lr, [&](nn::Tape& t) {
    return value_loss(t, nets_.value, cfg_, batch.states, v_target);
  });
  if (cfg_.twin_value_targets) {
    descend(nets_.value2, value2_opt_, cfg_.critic_lr, [&](nn::Tape& t) {
      return value_loss(t, nets_.value2, cfg_, batch.states, v_target);
    });
  }

  const Tensor y = q_target(nets_, cfg_, batch);
  rep.q1_loss = descend(nets_.q1, q1_opt_, cfg_.critic_lr,
                        [&](nn::Tape& t) { return q_loss(t, nets_.q1, cfg_, batch, y); });
  rep.q2_loss = descend(nets_.q2, q2_opt_, cfg_.critic_lr,
                        [&](nn::Tape& t) { return q_loss(t, nets_.q2, cfg_, batch, y); });

  rep.policy_loss = descend(nets_.policy, policy_opt_, cfg_.actor_lr, [&](nn::Tape& t) {
    return policy_loss(t, nets_.policy, nets_, cfg_, batch.states, fresh);
  });

  soft_update(nets_.value_target, nets_.value, cfg_.tau);
  if (cfg_.twin_value_targets) soft_update(nets_.value_target2, nets_.value2, cfg_.tau);
  return rep;
}

}  // namespace dapr::rl
