#include "dapr/scenario.h"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace dapr::sim {

using nlohmann::json;

namespace {

template <typename T>
T get_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("config: '" + key + "' must be a non-negative integer");
    }
    return static_cast<T>(v.get<unsigned long long>());
  } else {
    return v.get<T>();
  }
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config: '" + key + "' must be a string");
  return v.get<std::string>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config: '" + key + "' must be true or false");
  return v.get<bool>();
}

template <typename E>
E get_enum(const json& v, const std::string& key, const std::map<std::string, E>& names) {
  const std::string s = get_string(v, key);
  auto it = names.find(s);
  if (it == names.end()) {
    std::string allowed;
    for (const auto& [name, e] : names) allowed += (allowed.empty() ? "" : ", ") + name;
    throw ConfigError("config: '" + key + "' must be one of " + allowed + ", got '" + s + "'");
  }
  return it->second;
}

using Setter = std::function<void(ScenarioConfig&, const json&, const std::string&)>;

template <typename T>
Setter num(T ScenarioConfig::*field) {
  return [field](ScenarioConfig& c, const json& v, const std::string& k) {
    c.*field = get_number<T>(v, k);
  };
}

Setter flag(bool ScenarioConfig::*field) {
  return [field](ScenarioConfig& c, const json& v, const std::string& k) { c.*field = get_bool(v, k); };
}

Setter text(std::string ScenarioConfig::*field) {
  return [field](ScenarioConfig& c, const json& v, const std::string& k) { c.*field = get_string(v, k); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    using C = ScenarioConfig;
    std::map<std::string, Setter> t{
        {"seed", num(&C::seed)},
        {"slots", num(&C::slots)},
        {"slot_s", num(&C::slot_s)},
        {"round_s", num(&C::round_s)},
        {"warmup_episodes", num(&C::warmup_episodes)},
        {"grid_rows", num(&C::grid_rows)},
        {"grid_cols", num(&C::grid_cols)},
        {"segment_length_m", num(&C::segment_length_m)},
        {"vehicles_per_region", num(&C::vehicles_per_region)},
        {"mean_trip_s", num(&C::mean_trip_s)},
        {"free_flow_kmh", num(&C::free_flow_kmh)},
        {"max_density_per_km", num(&C::max_density_per_km)},
        {"request_probability", num(&C::request_probability)},
        {"catalog_size", num(&C::catalog_size)},
        {"zipf_s", num(&C::zipf_s)},
        {"regional_shift", num(&C::regional_shift)},
        {"rotate_every_slots", num(&C::rotate_every_slots)},
        {"min_content_mb", num(&C::min_content_mb)},
        {"max_content_mb", num(&C::max_content_mb)},
        {"catalog_seed", num(&C::catalog_seed)},
        {"trace_path", text(&C::trace_path)},
        {"cache_capacity", num(&C::cache_capacity)},
        {"bandwidth_hz", num(&C::bandwidth_hz)},
        {"noise_dbm", num(&C::noise_dbm)},
        {"vehicle_tx_dbm", num(&C::vehicle_tx_dbm)},
        {"rsu_tx_dbm", num(&C::rsu_tx_dbm)},
        {"bs_tx_dbm", num(&C::bs_tx_dbm)},
        {"path_loss_exponent", num(&C::path_loss_exponent)},
        {"bs_path_loss_exponent", num(&C::bs_path_loss_exponent)},
        {"rsu_offset_m", num(&C::rsu_offset_m)},
        {"bs_distance_m", num(&C::bs_distance_m)},
        {"neighbor_distance_m", num(&C::neighbor_distance_m)},
        {"rayleigh_fading", flag(&C::rayleigh_fading)},
        {"candidates", num(&C::candidates)},
        {"cached_slots", num(&C::cached_slots)},
        {"forecast_top_k", num(&C::forecast_top_k)},
        {"alpha_ent", num(&C::alpha_ent)},
        {"gamma", num(&C::gamma)},
        {"tau", num(&C::tau)},
        {"batch_size", num(&C::batch_size)},
        {"actor_lr", num(&C::actor_lr)},
        {"critic_lr", num(&C::critic_lr)},
        {"buffer_capacity", num(&C::buffer_capacity)},
        {"reward_centering", num(&C::reward_centering)},
        {"twin_value_targets", flag(&C::twin_value_targets)},
        {"train_steps_per_slot", num(&C::train_steps_per_slot)},
        {"greedy_eval", flag(&C::greedy_eval)},
        {"epsilon", num(&C::epsilon)},
        {"heat_window", num(&C::heat_window)},
        {"heat_decay", num(&C::heat_decay)},
        {"twin_history", num(&C::twin_history)},
        {"zero_delay", flag(&C::zero_delay)},
        {"window", num(&C::window)},
        {"latent_dim", num(&C::latent_dim)},
        {"hidden_dim", num(&C::hidden_dim)},
        {"vae_hidden", num(&C::vae_hidden)},
        {"embed_dim", num(&C::embed_dim)},
        {"lambda_joint", num(&C::lambda_joint)},
        {"beta_kl", num(&C::beta_kl)},
        {"pretrain_seed", num(&C::pretrain_seed)},
        {"pretrain_rounds", num(&C::pretrain_rounds)},
        {"pretrain_vae_epochs", num(&C::pretrain_vae_epochs)},
        {"pretrain_gru_epochs", num(&C::pretrain_gru_epochs)},
        {"pretrain_joint_epochs", num(&C::pretrain_joint_epochs)},
        {"pretrain_batch", num(&C::pretrain_batch)},
        {"pretrain_lr", num(&C::pretrain_lr)},
        {"predictor_checkpoint", text(&C::predictor_checkpoint)},
        {"afl_eta", num(&C::afl_eta)},
        {"kappa", num(&C::kappa)},
        {"alpha1", num(&C::alpha1)},
        {"alpha2", num(&C::alpha2)},
        {"local_iters", num(&C::local_iters)},
        {"max_clients", num(&C::max_clients)},
        {"local_batch", num(&C::local_batch)},
        {"seconds_per_sample", num(&C::seconds_per_sample)},
    };
    t["path_selection"] = [](C& c, const json& v, const std::string& k) {
      c.path_selection = get_enum<comms::PathSelection>(
          v, k, {{"priority", comms::PathSelection::kPriority}, {"max_rate", comms::PathSelection::kMaxRate}});
    };
    t["sac_hidden"] = [](C& c, const json& v, const std::string& k) {
      if (!v.is_array()) throw ConfigError("config: '" + k + "' must be an array of layer widths");
      c.sac_hidden.clear();
      for (const auto& w : v) c.sac_hidden.push_back(get_number<std::size_t>(w, k));
    };
    t["lambda_local"] = [](C& c, const json& v, const std::string& k) { c.reward.lambda[0] = get_number<double>(v, k); };
    t["lambda_neighbor"] = [](C& c, const json& v, const std::string& k) { c.reward.lambda[1] = get_number<double>(v, k); };
    t["lambda_bs"] = [](C& c, const json& v, const std::string& k) { c.reward.lambda[2] = get_number<double>(v, k); };
    t["xi"] = [](C& c, const json& v, const std::string& k) { c.reward.xi = get_number<double>(v, k); };
    t["zeta"] = [](C& c, const json& v, const std::string& k) { c.reward.zeta = get_number<double>(v, k); };
    t["inner_lambda"] = [](C& c, const json& v, const std::string& k) {
      c.reward.inner = get_enum<rl::InnerLambda>(
          v, k, {{"as_written", rl::InnerLambda::kAsWritten}, {"omit", rl::InnerLambda::kOmit}});
    };
    t["predictor_cell"] = [](C& c, const json& v, const std::string& k) {
      c.predictor_cell = get_enum<predictor::RecurrentCell>(
          v, k,
          {{"gru", predictor::RecurrentCell::kGru},
           {"rnn", predictor::RecurrentCell::kRnn},
           {"lstm", predictor::RecurrentCell::kLstm}});
    };
    t["aggregation"] = [](C& c, const json& v, const std::string& k) {
      c.aggregation = get_enum<afl::AggregationMode>(
          v, k, {{"convex", afl::AggregationMode::kConvex}, {"literal", afl::AggregationMode::kLiteral}});
    };
    t["location_weight"] = [](C& c, const json& v, const std::string& k) {
      c.location_weight = get_enum<afl::LocationWeightMode>(
          v, k,
          {{"as_written", afl::LocationWeightMode::kAsWritten},
           {"remaining", afl::LocationWeightMode::kRemaining}});
    };
    return t;
  }();
  return table;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

ScenarioConfig from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  ScenarioConfig c;
  for (const auto& [key, value] : j.items()) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(c, value, key);
  }
  c.validate();
  return c;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t ScenarioConfig::round_slots() const {
  return static_cast<std::size_t>(std::llround(round_s / slot_s));
}

std::uint64_t ScenarioConfig::capacity_bytes() const {
  return static_cast<std::uint64_t>(std::llround(cache_capacity * 1e6));
}

void ScenarioConfig::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  require(slots >= 1, "slots must be >= 1");
  require(positive(slot_s), "slot_s must be > 0");
  require(positive(round_s) && round_slots() >= 1 &&
              std::abs(static_cast<double>(round_slots()) * slot_s - round_s) < 1e-9 * round_s,
          "round_s must be a positive multiple of slot_s");
  require(grid_rows >= 1 && grid_cols >= 1, "grid_rows and grid_cols must be >= 1");
  require(positive(segment_length_m), "segment_length_m must be > 0");
  require(std::isfinite(vehicles_per_region) && vehicles_per_region >= 0.0,
          "vehicles_per_region must be >= 0");
  require(positive(mean_trip_s), "mean_trip_s must be > 0");
  require(positive(free_flow_kmh), "free_flow_kmh must be > 0");
  require(positive(max_density_per_km), "max_density_per_km must be > 0");
  require(unit(request_probability), "request_probability must lie in [0, 1]");
  require(catalog_size >= 1, "catalog_size must be >= 1");
  require(std::isfinite(zipf_s) && zipf_s >= 0.0, "zipf_s must be >= 0");
  require(positive(min_content_mb) && max_content_mb >= min_content_mb && std::isfinite(max_content_mb),
          "content sizes need 0 < min_content_mb <= max_content_mb");
  require(std::isfinite(cache_capacity) && cache_capacity >= 0.0, "cache_capacity must be >= 0");
  require(positive(bandwidth_hz), "bandwidth_hz must be > 0");
  require(std::isfinite(noise_dbm) && std::isfinite(vehicle_tx_dbm) && std::isfinite(rsu_tx_dbm) &&
              std::isfinite(bs_tx_dbm),
          "powers must be finite");
  require(positive(path_loss_exponent) && positive(bs_path_loss_exponent),
          "path loss exponents must be > 0");
  require(positive(rsu_offset_m), "rsu_offset_m must be > 0");
  require(positive(bs_distance_m), "bs_distance_m must be > 0");
  require(positive(neighbor_distance_m), "neighbor_distance_m must be > 0");
  require(candidates >= 1, "candidates must be >= 1");
  require(forecast_top_k <= catalog_size || !trace_path.empty(), "forecast_top_k must not exceed catalog_size");
  require(train_steps_per_slot <= 64, "train_steps_per_slot must be <= 64");
  require(unit(epsilon), "epsilon must lie in [0, 1]");
  require(heat_window >= 1, "heat_window must be >= 1");
  require(std::isfinite(heat_decay) && heat_decay >= 0.0, "heat_decay must be >= 0");
  require(twin_history >= heat_window, "twin_history must be >= heat_window");
  require(window >= 1, "window must be >= 1");
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(pretrain_rounds > window, "pretrain_rounds must exceed window");
  require(pretrain_batch >= 1, "pretrain_batch must be >= 1");
  require(positive(pretrain_lr), "pretrain_lr must be > 0");
  require(max_clients >= 1, "max_clients must be >= 1");
  require(local_batch >= 1, "local_batch must be >= 1");
  require(std::isfinite(seconds_per_sample) && seconds_per_sample >= 0.0,
          "seconds_per_sample must be >= 0");
  try {
    reward.validate();
    sac_config(state_spec().dim()).validate();
    predictor_config().validate();
    afl_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

rl::SacConfig ScenarioConfig::sac_config(std::size_t state_dim) const {
  rl::SacConfig c;
  c.state_dim = state_dim;
  c.action_dim = candidates;
  c.hidden = sac_hidden;
  c.alpha_ent = alpha_ent;
  c.gamma = gamma;
  c.tau = tau;
  c.batch_size = batch_size;
  c.actor_lr = actor_lr;
  c.critic_lr = critic_lr;
  c.buffer_capacity = buffer_capacity;
  c.twin_value_targets = twin_value_targets;
  c.reward_centering = reward_centering;
  return c;
}

rl::StateSpec ScenarioConfig::state_spec() const {
  rl::StateSpec s;
  s.cached_slots = cached_slots;
  s.candidates = candidates;
  s.forecast_top_k = forecast_top_k;
  s.catalog_size = catalog_size;
  s.capacity_bytes = std::max<std::uint64_t>(1, capacity_bytes());
  return s;
}

predictor::PredictorConfig ScenarioConfig::predictor_config() const {
  predictor::PredictorConfig c;
  c.catalog_size = catalog_size;
  c.num_locations = regions();
  c.num_time_buckets = 24;
  c.context_dim = 1;
  c.latent_dim = latent_dim;
  c.hidden_dim = hidden_dim;
  c.vae_hidden = vae_hidden;
  c.location_embed_dim = embed_dim;
  c.time_embed_dim = embed_dim;
  c.cell = predictor_cell;
  return c;
}

afl::AflConfig ScenarioConfig::afl_config() const {
  afl::AflConfig c;
  c.eta = afl_eta;
  c.kappa = kappa;
  c.alpha1 = alpha1;
  c.alpha2 = alpha2;
  c.local_iters = local_iters;
  c.aggregation = aggregation;
  c.location_mode = location_weight;
  return c;
}

ScenarioConfig parse_config(const std::string& json_text) { return from_json(parse_json(json_text)); }

ScenarioConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

ScenarioConfig load_config_with_override(const std::filesystem::path& path, const std::string& key,
                                         const std::string& value) {
  json j = parse_json(read_file(path));
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  j[key] = v;
  return from_json(j);
}

}  // namespace dapr::sim
