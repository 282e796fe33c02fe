#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dapr/afl.h"
#include "dapr/metrics.h"
#include "dapr/predictor.h"
#include "dapr/sac.h"
#include "dapr/scenario.h"

// The slot loop tying mobility, the twin, serving, prediction, federated
// training and cache decisions together.
namespace dapr::sim {

enum class Policy {
  kDapr,
  kEpsGreedy,
  kRandom,
  kLfu,
  kLru,
  kNoDrl,     // random admission instead of the learned policy
  kNoAfl,     // synchronous equal-weight averaging over the same clients
  kNoGruVae,  // windowed request frequency as the forecast
  kNoDt,      // previous-slot state, no heatmap, selection on stale dwell
};

const char* to_string(Policy p);
// Throws ConfigError for an unknown name.
Policy parse_policy(const std::string& name);
std::vector<Policy> all_policies();
bool uses_predictor(Policy p);
bool uses_learner(Policy p);

struct CurvePoint {
  std::size_t episode = 0;
  std::uint64_t slot = 0;
  double reward = 0.0;  // summed over regions
  bool trained = false;
  double value_loss = 0.0;  // means over the slot's training steps
  double q_loss = 0.0;
  double policy_loss = 0.0;
};

struct EpisodeOptions {
  // Starting predictor weights; when null they come from the config's
  // checkpoint or from in-process pretraining.
  const predictor::PredictorParams* pretrained = nullptr;
  // Starting learner for learned policies, copied and trained further; when
  // null a fresh agent is seeded from the run seed.
  const rl::SacAgent* agent = nullptr;
};

struct EpisodeResult {
  std::vector<MetricsRow> rows;  // measured episode only: slot rows, then summary rows
  std::vector<CurvePoint> curve;  // every episode, learned policies only
  std::vector<afl::RoundLog> afl_rounds;
  std::vector<std::string> twin_log;
  std::uint64_t final_digest = 0;  // twin snapshot digest of the last slot
  std::optional<rl::SacAgent> agent;  // learner after the last episode, learned policies only
};

EpisodeResult run_episode(const ScenarioConfig& cfg, Policy policy, std::uint64_t seed,
                          const EpisodeOptions& opts = {});

// Request frames per region and round from a workload run that shares no
// random stream with any evaluation seed, cut into forecasting windows.
predictor::Dataset pretrain_dataset(const ScenarioConfig& cfg);
predictor::TrainResult pretrain_predictor(const ScenarioConfig& cfg);
// Loads cfg.predictor_checkpoint when set, otherwise pretrains.
predictor::PredictorParams initial_predictor(const ScenarioConfig& cfg);

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);

}  // namespace dapr::sim
