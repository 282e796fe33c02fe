#include "dapr/afl.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace dapr::afl {

void AflConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("afl: eta must be > 0");
  if (!(kappa >= 0.0)) throw std::invalid_argument("afl: kappa must be >= 0");
  if (alpha1 < 0.0 || alpha1 > 1.0 || alpha2 < 0.0 || alpha2 > 1.0 ||
      std::abs(alpha1 + alpha2 - 1.0) > 1e-12) {
    throw std::invalid_argument("afl: alpha1, alpha2 must lie in [0,1] and sum to 1");
  }
  if (local_iters == 0) throw std::invalid_argument("afl: local_iters must be > 0");
}

std::vector<ClientRecord> select_clients(std::span<const ClientRecord> candidates) {
  std::vector<ClientRecord> out;
  for (const auto& c : candidates) {
    if (mobility::is_stable_client(c.dwell_s, c.train_time_s, c.upload_time_s)) out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const ClientRecord& a, const ClientRecord& b) { return a.id < b.id; });
  return out;
}

LocalResult local_update(const nn::ParamVector& global, const ClientRecord& client,
                         const LocalObjective& objective, const AflConfig& cfg) {
  cfg.validate();
  if (client.data_volume == 0 || !objective) {
    throw std::invalid_argument("afl: client " + std::to_string(client.id) +
                                " has no local data");
  }
  LocalResult res{global, 0.0};
  nn::ParamVector& w = res.params;
  auto anchor = global.values();
  for (std::size_t j = 0; j < cfg.local_iters; ++j) {
    w.zero_grads();
    res.mean_loss += objective(w);
    auto v = w.values();
    auto g = w.grads();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] -= cfg.eta * (g[i] + cfg.kappa * (v[i] - anchor[i]));
    }
  }
  w.zero_grads();
  res.mean_loss /= static_cast<double>(cfg.local_iters);
  return res;
}

double aggregation_weight(double n_k, double sum_n, double position_m, double segment_length_m,
                          double alpha1, double alpha2, LocationWeightMode mode) {
  if (!(sum_n > 0.0)) throw std::invalid_argument("aggregation_weight: total data volume is 0");
  if (n_k < 0.0 || n_k > sum_n) throw std::invalid_argument("aggregation_weight: n_k outside [0, sum]");
  if (!(segment_length_m > 0.0) || position_m < 0.0 || position_m > segment_length_m) {
    throw std::invalid_argument("aggregation_weight: position outside segment");
  }
  double loc = position_m / segment_length_m;
  if (mode == LocationWeightMode::kRemaining) loc = 1.0 - loc;
  return alpha1 * (n_k / sum_n) + alpha2 * loc;
}

nn::ParamVector async_aggregate(const nn::ParamVector& global, const nn::ParamVector& client,
                                double rho, AggregationMode mode) {
  if (!global.same_layout(client)) throw std::invalid_argument("async_aggregate: layout mismatch");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("async_aggregate: rho outside [0,1]");
  nn::ParamVector out = global;
  auto v = out.values();
  auto c = client.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = mode == AggregationMode::kConvex ? (1.0 - rho) * v[i] + rho * c[i] : v[i] + rho * c[i];
  }
  return out;
}

nn::ParamVector sync_average(std::span<const nn::ParamVector> clients) {
  if (clients.empty()) throw std::invalid_argument("sync_average: no clients");
  nn::ParamVector out = clients.front();
  auto v = out.values();
  for (std::size_t k = 1; k < clients.size(); ++k) {
    if (!out.same_layout(clients[k])) throw std::invalid_argument("sync_average: layout mismatch");
    auto c = clients[k].values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += c[i];
  }
  const double n = static_cast<double>(clients.size());
  for (auto& x : v) x /= n;
  return out;
}

std::string RoundLog::to_json() const {
  nlohmann::ordered_json j;
  j["round"] = round;
  j["client_ids"] = client_ids;
  j["rho_values"] = rho_values;
  j["mean_local_loss"] = mean_local_loss;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

RoundResult run_round(const nn::ParamVector& global, std::span<const Participant> participants,
                      const AflConfig& cfg, std::uint64_t round, bool synchronous) {
  cfg.validate();
  std::vector<const Participant*> chosen;
  for (const auto& p : participants) {
    const auto& c = p.record;
    if (mobility::is_stable_client(c.dwell_s, c.train_time_s, c.upload_time_s)) {
      chosen.push_back(&p);
    }
  }
  std::sort(chosen.begin(), chosen.end(), [](const Participant* a, const Participant* b) {
    const double ta = a->record.completion_time(), tb = b->record.completion_time();
    return ta != tb ? ta < tb : a->record.id < b->record.id;
  });

  RoundResult res{global, {}};
  res.log.round = round;
  if (chosen.empty()) return res;

  double sum_n = 0.0;
  for (const auto* p : chosen) sum_n += static_cast<double>(p->record.data_volume);

  std::vector<nn::ParamVector> updates;
  double loss = 0.0;
  for (const auto* p : chosen) {
    const auto& c = p->record;
    LocalResult local = local_update(global, c, p->objective, cfg);
    loss += local.mean_loss;
    res.log.client_ids.push_back(c.id);
    res.log.wall_ms = std::max(res.log.wall_ms, c.completion_time() * 1000.0);
    if (synchronous) {
      updates.push_back(std::move(local.params));
      continue;
    }
    const double rho = aggregation_weight(static_cast<double>(c.data_volume), sum_n, c.position_m,
                                          c.segment_length_m, cfg.alpha1, cfg.alpha2,
                                          cfg.location_mode);
    res.log.rho_values.push_back(rho);
    res.params = async_aggregate(res.params, local.params, rho, cfg.aggregation);
  }
  if (synchronous) {
    res.params = sync_average(updates);
    res.log.rho_values.assign(updates.size(), 1.0 / static_cast<double>(updates.size()));
  }
  res.log.mean_local_loss = loss / static_cast<double>(chosen.size());
  return res;
}

}  // namespace dapr::afl
