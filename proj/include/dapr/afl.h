#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dapr/mobility.h"
#include "dapr/nn/param_vector.h"

// Asynchronous federated learning over vehicles: dwell-based client
// selection, proximal local SGD, and arrival-order weighted aggregation.
namespace dapr::afl {

enum class AggregationMode {
  kConvex,   // w <- (1 - rho) w + rho w_client
  kLiteral,  // w <- w + rho w_client
};

enum class LocationWeightMode {
  kAsWritten,  // L_i / L_s
  kRemaining,  // 1 - L_i / L_s
};

struct AflConfig {
  double eta = 1e-3;
  double kappa = 0.1;
  double alpha1 = 0.7;
  double alpha2 = 0.3;
  std::size_t local_iters = 5;
  std::size_t rounds = 100;
  AggregationMode aggregation = AggregationMode::kConvex;
  LocationWeightMode location_mode = LocationWeightMode::kAsWritten;

  void validate() const;
};

struct ClientRecord {
  mobility::VehicleId id = 0;
  std::uint64_t data_volume = 0;  // n_i
  double position_m = 0.0;        // L_i within the serving segment
  double segment_length_m = 1000.0;
  double dwell_s = 0.0;
  double train_time_s = 0.0;
  double upload_time_s = 0.0;
  std::uint64_t last_round = 0;

  double completion_time() const { return train_time_s + upload_time_s; }
};

// Stable clients only (dwell > train + upload), sorted by id.
std::vector<ClientRecord> select_clients(std::span<const ClientRecord> candidates);

// Sets params.grads() to the gradient of the client's mean local loss at the
// current values and returns that loss. Grads arrive zeroed.
using LocalObjective = std::function<double(nn::ParamVector&)>;

struct LocalResult {
  nn::ParamVector params;
  double mean_loss = 0.0;  // mean over the J iterations
};

// J proximal SGD steps starting from the global model.
LocalResult local_update(const nn::ParamVector& global, const ClientRecord& client,
                         const LocalObjective& objective, const AflConfig& cfg);

double aggregation_weight(double n_k, double sum_n, double position_m, double segment_length_m,
                          double alpha1, double alpha2,
                          LocationWeightMode mode = LocationWeightMode::kAsWritten);

nn::ParamVector async_aggregate(const nn::ParamVector& global, const nn::ParamVector& client,
                                double rho, AggregationMode mode = AggregationMode::kConvex);

// Equal-weight mean of the client models (synchronous FedAvg baseline).
nn::ParamVector sync_average(std::span<const nn::ParamVector> clients);

struct Participant {
  ClientRecord record;
  LocalObjective objective;
};

struct RoundLog {
  std::uint64_t round = 0;
  std::vector<mobility::VehicleId> client_ids;  // in fold order
  std::vector<double> rho_values;
  double mean_local_loss = 0.0;
  double wall_ms = 0.0;  // simulated: completion time of the last client

  std::string to_json() const;
};

struct RoundResult {
  nn::ParamVector params;
  RoundLog log;
};

// Selects stable participants, trains each from the round's global model and
// folds the updates into the running global in completion-time order (ties by
// id). With `synchronous` set, the same clients are averaged with equal
// weights instead.
RoundResult run_round(const nn::ParamVector& global, std::span<const Participant> participants,
                      const AflConfig& cfg, std::uint64_t round, bool synchronous = false);

}  // namespace dapr::afl
