#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <vector>

#include "dapr/cache_rl.h"
#include "dapr/nn/adam.h"
#include "dapr/nn/layers.h"
#include "dapr/nn/param_vector.h"
#include "dapr/nn/tape.h"

// Soft actor-critic over binary cache actions. The policy is a product of
// independent Bernoullis, one per candidate; critics take the action as a
// float vector.
namespace dapr::rl {

struct SacConfig {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  double alpha_ent = 0.2;
  double gamma = 0.99;
  double tau = 0.1;
  std::size_t batch_size = 64;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  std::size_t buffer_capacity = 100000;
  bool twin_value_targets = false;  // two value nets and two targets, min over targets
  // Step size of the running average reward subtracted from rewards before
  // bootstrapping; the first n observations use 1/n. 0 disables centering.
  double reward_centering = 1e-3;

  void validate() const;
};

struct Transition {
  std::vector<double> state;
  CacheAction action;
  double reward = 0.0;
  std::vector<double> next_state;
};

// FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_.at(i); }  // 0 is the oldest
  // Uniform, without replacement within the batch.
  std::vector<const Transition*> sample(std::size_t batch, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

// Each net lives in its own ParamVector under the prefix "net".
struct SacNets {
  nn::ParamVector policy;
  nn::ParamVector value;
  nn::ParamVector value_target;
  nn::ParamVector q1;
  nn::ParamVector q2;
  nn::ParamVector value2;  // only with twin_value_targets
  nn::ParamVector value_target2;
};

nn::MlpSpec policy_spec(const SacConfig& cfg);
nn::MlpSpec value_spec(const SacConfig& cfg);
nn::MlpSpec q_spec(const SacConfig& cfg);

SacNets make_sac_nets(const SacConfig& cfg, std::mt19937_64& rng);

// Plain forward passes. `states` is [B, state_dim]; `actions` is [B, action_dim].
nn::Tensor policy_logits(const nn::ParamVector& policy, const SacConfig& cfg,
                         const nn::Tensor& states);
nn::Tensor value_forward(const nn::ParamVector& value, const SacConfig& cfg,
                         const nn::Tensor& states);
nn::Tensor q_forward(const nn::ParamVector& q, const SacConfig& cfg, const nn::Tensor& states,
                     const nn::Tensor& actions);

enum class ActionMode { kStochastic, kGreedy };

// Greedy picks a_i = 1 iff logit_i > 0; p = 0.5 goes to 0.
CacheAction sample_action(std::span<const double> logits, ActionMode mode, std::mt19937_64* rng);
CacheAction sample_action(const nn::ParamVector& policy, const SacConfig& cfg,
                          std::span<const double> state, ActionMode mode, std::mt19937_64* rng);

// log pi(a|s) = sum_i log sigma(+-logit_i).
double log_prob(std::span<const double> logits, const CacheAction& action);

struct Batch {
  nn::Tensor states;       // [B, S]
  nn::Tensor actions;      // [B, m]
  nn::Tensor rewards;      // [B]
  nn::Tensor next_states;  // [B, S]

  std::size_t size() const { return rewards.size(); }
};

Batch make_batch(std::span<const Transition* const> transitions, const SacConfig& cfg);

// V(s) = min_i Q_i(s, a) - alpha log pi(a|s) for the given (freshly sampled)
// actions, one entry per row.
nn::Tensor value_target(const SacNets& nets, const SacConfig& cfg, const nn::Tensor& states,
                        const nn::Tensor& sampled_actions);

// R + gamma * min_j target_j(s'), one entry per row.
nn::Tensor q_target(const SacNets& nets, const SacConfig& cfg, const Batch& batch);

// Loss graphs. The net being trained is bound as parameters; the others enter
// as constants.
nn::Var value_loss(nn::Tape& tape, nn::ParamVector& value, const SacConfig& cfg,
                   const nn::Tensor& states, const nn::Tensor& targets);
nn::Var q_loss(nn::Tape& tape, nn::ParamVector& q, const SacConfig& cfg, const Batch& batch,
               const nn::Tensor& targets);
// Per row and coordinate i: min_j Q_j(s, a with a_i = 1) - min_j Q_j(s, a with a_i = 0).
nn::Tensor coordinate_gaps(const SacNets& nets, const SacConfig& cfg, const nn::Tensor& states,
                           const nn::Tensor& actions);
// alpha * E_pi[log pi] - min_j Q_j(s, a) at sampled actions a, with the
// entropy term in closed form. The gradient w.r.t. each probability p_i is the
// critic gap for coordinate i with the other coordinates held at a, so the
// critics are only ever queried at binary actions.
nn::Var policy_loss(nn::Tape& tape, nn::ParamVector& policy, const SacNets& nets,
                    const SacConfig& cfg, const nn::Tensor& states, const nn::Tensor& actions);

// target <- tau * source + (1 - tau) * target
void soft_update(nn::ParamVector& target, const nn::ParamVector& source, double tau);

struct TrainReport {
  bool trained = false;
  double value_loss = 0.0;
  double q1_loss = 0.0;
  double q2_loss = 0.0;
  double policy_loss = 0.0;
};

class SacAgent {
 public:
  SacAgent(SacConfig cfg, std::uint64_t seed);

  CacheAction act(std::span<const double> state, ActionMode mode);
  void observe(Transition t);
  // No-op until the buffer holds more than one batch.
  TrainReport train_step();

  const SacConfig& config() const { return cfg_; }
  const SacNets& nets() const { return nets_; }
  SacNets& nets() { return nets_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  double average_reward() const { return avg_reward_; }
  // Restarts action and minibatch sampling; weights and buffer are kept.
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  SacConfig cfg_;
  std::mt19937_64 rng_;
  SacNets nets_;
  ReplayBuffer buffer_;
  double avg_reward_ = 0.0;
  std::size_t observed_ = 0;
  nn::AdamState policy_opt_, value_opt_, value2_opt_, q1_opt_, q2_opt_;
};

}  // namespace dapr::rl
