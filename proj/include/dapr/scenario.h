#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dapr/afl.h"
#include "dapr/cache_rl.h"
#include "dapr/comms.h"
#include "dapr/predictor.h"
#include "dapr/sac.h"

namespace dapr::sim {

// Bad or unknown configuration. The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every knob of one simulated scenario. JSON keys match the field names; see
// docs/formats.md for units and defaults.
struct ScenarioConfig {
  std::uint64_t seed = 1;
  std::size_t slots = 300;
  double slot_s = 1.0;
  double round_s = 10.0;  // T(r)
  std::size_t warmup_episodes = 0;  // learning-only episodes before the measured one

  // Road and traffic.
  std::size_t grid_rows = 3;
  std::size_t grid_cols = 3;
  double segment_length_m = 1000.0;
  double vehicles_per_region = 10.0;
  double mean_trip_s = 120.0;
  double free_flow_kmh = 60.0;
  double max_density_per_km = 100.0;

  // Workload.
  double request_probability = 0.5;
  std::size_t catalog_size = 500;
  double zipf_s = 1.0;
  std::size_t regional_shift = 0;       // rank offset between consecutive regions
  std::size_t rotate_every_slots = 0;   // 0 keeps popularity static
  double min_content_mb = 1.0;
  double max_content_mb = 50.0;
  std::uint64_t catalog_seed = 0;       // content sizes and popularity order
  std::string trace_path;               // replaces the synthetic workload when set

  // Caches and radio.
  double cache_capacity = 200.0;  // MB per RSU
  double bandwidth_hz = 540e3;
  double noise_dbm = -114.0;
  double vehicle_tx_dbm = 3.0;
  double rsu_tx_dbm = 30.0;
  double bs_tx_dbm = 43.0;
  double path_loss_exponent = 2.0;
  double bs_path_loss_exponent = 3.5;
  double rsu_offset_m = 50.0;
  double bs_distance_m = 2000.0;
  double neighbor_distance_m = 1000.0;
  bool rayleigh_fading = false;
  comms::PathSelection path_selection = comms::PathSelection::kPriority;

  // Reward and decision making.
  rl::RewardConfig reward;
  std::size_t candidates = 8;
  std::size_t cached_slots = 8;
  std::size_t forecast_top_k = 8;
  std::vector<std::size_t> sac_hidden{64, 64};
  double alpha_ent = 0.2;
  double gamma = 0.99;
  double tau = 0.1;
  std::size_t batch_size = 64;
  double actor_lr = 1e-4;
  double critic_lr = 1e-4;
  std::size_t buffer_capacity = 100000;
  double reward_centering = 1e-3;
  bool twin_value_targets = false;
  std::size_t train_steps_per_slot = 2;
  bool greedy_eval = false;  // measured episode: most likely action, learning paused
  double epsilon = 0.1;

  // Digital twin.
  std::size_t heat_window = 20;
  double heat_decay = 0.1;
  std::size_t twin_history = 100;
  bool zero_delay = false;

  // Popularity predictor.
  std::size_t window = 5;  // frames per forecast; one frame per round
  std::size_t latent_dim = 8;
  std::size_t hidden_dim = 32;
  std::size_t vae_hidden = 32;
  std::size_t embed_dim = 4;
  predictor::RecurrentCell predictor_cell = predictor::RecurrentCell::kGru;
  double lambda_joint = 0.5;
  double beta_kl = 1.0;
  std::uint64_t pretrain_seed = 0;
  std::size_t pretrain_rounds = 60;
  std::size_t pretrain_vae_epochs = 20;
  std::size_t pretrain_gru_epochs = 20;
  std::size_t pretrain_joint_epochs = 30;
  std::size_t pretrain_batch = 8;
  double pretrain_lr = 1e-3;
  std::string predictor_checkpoint;

  // Federated fine-tuning.
  double afl_eta = 1e-3;
  double kappa = 0.1;
  double alpha1 = 0.7;
  double alpha2 = 0.3;
  std::size_t local_iters = 5;
  std::size_t max_clients = 4;
  std::size_t local_batch = 8;
  double seconds_per_sample = 0.2;
  afl::AggregationMode aggregation = afl::AggregationMode::kConvex;
  afl::LocationWeightMode location_weight = afl::LocationWeightMode::kAsWritten;

  std::size_t regions() const { return grid_rows * grid_cols; }
  std::size_t round_slots() const;
  std::uint64_t capacity_bytes() const;

  void validate() const;  // throws ConfigError

  rl::SacConfig sac_config(std::size_t state_dim) const;
  rl::StateSpec state_spec() const;
  predictor::PredictorConfig predictor_config() const;
  afl::AflConfig afl_config() const;
};

// Parses a JSON object. Unknown keys and out-of-range values throw ConfigError.
ScenarioConfig parse_config(const std::string& json_text);
ScenarioConfig load_config(const std::filesystem::path& path);

// Reads the file as JSON, sets `key` to `value` (parsed as JSON, falling back
// to a string) and validates the result.
ScenarioConfig load_config_with_override(const std::filesystem::path& path,
                                         const std::string& key, const std::string& value);

}  // namespace dapr::sim
