#include "dapr/simulation.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>

#include "dapr/baselines.h"
#include "dapr/cache_rl.h"
#include "dapr/comms.h"
#include "dapr/csv.h"
#include "dapr/mobility.h"
#include "dapr/sac.h"
#include "dapr/twin.h"
#include "dapr/workload.h"

namespace dapr::sim {

namespace {

using cache::ContentId;
using FramePtr = std::shared_ptr<const predictor::FeatureFrame>;
using SamplePtr = std::shared_ptr<const predictor::SequenceSample>;

// Random streams. Workload and mobility streams do not depend on the policy,
// so every policy sees the same vehicles and requests for a given seed.
enum Stream : std::uint64_t {
  kMobility = 1,
  kRequests = 2,
  kFading = 3,
  kPolicy = 4,
  kBaseline = 5,
  kPredictorNoise = 6,
  kCatalog = 7,
  kPretrain = 8,
};

constexpr std::uint64_t kEpisodeStride = 100;

enum class Evict { kForecast, kFrequency, kCount, kRecency };

struct Traits {
  bool learned = false;
  bool random_admit = false;
  bool eps_greedy = false;
  bool admit_requested = false;
  bool predictor = false;  // GRU-VAE forecast; windowed frequency otherwise
  bool federated = false;
  bool synchronous = false;
  bool stale = false;
  Evict evict = Evict::kFrequency;
};

Traits traits(Policy p) {
  Traits t;
  switch (p) {
    case Policy::kDapr:
      t.learned = t.predictor = t.federated = true;
      t.evict = Evict::kForecast;
      break;
    case Policy::kNoDrl:
      t.random_admit = t.predictor = t.federated = true;
      t.evict = Evict::kForecast;
      break;
    case Policy::kNoAfl:
      t.learned = t.predictor = t.federated = t.synchronous = true;
      t.evict = Evict::kForecast;
      break;
    case Policy::kNoGruVae:
      t.learned = true;
      t.evict = Evict::kFrequency;
      break;
    case Policy::kNoDt:
      t.learned = t.predictor = t.federated = t.stale = true;
      t.evict = Evict::kForecast;
      break;
    case Policy::kEpsGreedy:
      t.eps_greedy = true;
      break;
    case Policy::kRandom:
      t.random_admit = true;
      break;
    case Policy::kLfu:
      t.admit_requested = true;
      t.evict = Evict::kCount;
      break;
    case Policy::kLru:
      t.admit_requested = true;
      t.evict = Evict::kRecency;
      break;
  }
  return t;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Catalog {
  std::vector<std::uint64_t> sizes;      // by content id - 1
  std::vector<ContentId> by_rank;        // popularity rank - 1 -> content id
};

Catalog make_catalog(const ScenarioConfig& cfg, const Trace* trace) {
  Catalog c;
  if (trace != nullptr) {
    c.sizes = trace->content_sizes;
    for (auto& s : c.sizes) s = std::max<std::uint64_t>(s, 1);
    c.by_rank.resize(c.sizes.size());
    std::iota(c.by_rank.begin(), c.by_rank.end(), 1);
    return c;
  }
  std::mt19937_64 rng = stream_rng(cfg.catalog_seed, kCatalog);
  c.sizes = log_uniform_sizes(cfg.catalog_size, cfg.min_content_mb, cfg.max_content_mb, rng);
  c.by_rank.resize(cfg.catalog_size);
  std::iota(c.by_rank.begin(), c.by_rank.end(), 1);
  std::shuffle(c.by_rank.begin(), c.by_rank.end(), rng);
  return c;
}

// Regional Zipf demand: region r's ranking is the global one rotated by
// (r - 1) * regional_shift, plus one step every rotate_every_slots slots.
class Workload {
 public:
  Workload(const ScenarioConfig& cfg, const Catalog& catalog)
      : cfg_(cfg), catalog_(catalog), zipf_(catalog.by_rank.size(), cfg.zipf_s) {}

  ContentId draw(std::uint32_t region, std::uint64_t slot, std::mt19937_64& rng) const {
    const std::size_t n = catalog_.by_rank.size();
    std::size_t shift = (region - 1) * cfg_.regional_shift;
    if (cfg_.rotate_every_slots > 0) shift += slot / cfg_.rotate_every_slots;
    return catalog_.by_rank[(zipf_.sample(rng) - 1 + shift) % n];
  }

 private:
  const ScenarioConfig& cfg_;
  const Catalog& catalog_;
  ZipfSampler zipf_;
};

std::vector<std::vector<std::uint32_t>> grid_neighbors(const ScenarioConfig& cfg) {
  std::vector<std::vector<std::uint32_t>> out(cfg.regions() + 1);
  for (std::size_t r = 0; r < cfg.regions(); ++r) {
    const std::size_t row = r / cfg.grid_cols, col = r % cfg.grid_cols;
    auto add = [&](std::size_t rr, std::size_t cc) {
      out[r + 1].push_back(static_cast<std::uint32_t>(rr * cfg.grid_cols + cc + 1));
    };
    if (row > 0) add(row - 1, col);
    if (col > 0) add(row, col - 1);
    if (col + 1 < cfg.grid_cols) add(row, col + 1);
    if (row + 1 < cfg.grid_rows) add(row + 1, col);
    std::sort(out[r + 1].begin(), out[r + 1].end());
  }
  return out;
}

comms::LinkParams link(const ScenarioConfig& cfg, double tx_dbm, double distance_m, double beta,
                       double fading) {
  comms::LinkParams lp;
  lp.bandwidth_hz = cfg.bandwidth_hz;
  lp.tx_power_dbm = tx_dbm;
  lp.distance_m = distance_m;
  lp.path_loss_exponent = beta;
  lp.fading = fading;
  lp.noise_dbm = cfg.noise_dbm;
  return lp;
}

double rsu_distance(const ScenarioConfig& cfg, double position_m) {
  return std::hypot(cfg.rsu_offset_m, position_m - 0.5 * cfg.segment_length_m);
}

double congestion(std::size_t vehicles, const ScenarioConfig& cfg) {
  return std::min(1.0, mobility::density(vehicles, cfg.segment_length_m) / cfg.max_density_per_km);
}

FramePtr make_frame(const std::vector<std::uint32_t>& counts, std::uint32_t region,
                    std::size_t round, double context) {
  auto f = std::make_shared<predictor::FeatureFrame>();
  double total = 0.0;
  for (auto c : counts) total += c;
  f->requests.assign(counts.size(), 0.0);
  if (total > 0.0) {
    for (std::size_t i = 0; i < counts.size(); ++i) f->requests[i] = counts[i] / total;
  }
  f->location = region - 1;
  f->time_bucket = round % 24;
  f->context = {context};
  return f;
}

// Consecutive windows of `window` frames, each with the next frame as target.
template <typename Frames>
std::vector<predictor::SequenceSample> windows_of(const Frames& frames, std::size_t window,
                                                  std::size_t max_samples) {
  std::vector<predictor::SequenceSample> out;
  if (frames.size() <= window) return out;
  const std::size_t count = frames.size() - window;
  const std::size_t first = count > max_samples ? count - max_samples : 0;
  for (std::size_t k = first; k < count; ++k) {
    predictor::SequenceSample s;
    for (std::size_t j = 0; j < window; ++j) s.frames.push_back(*frames[k + j]);
    s.target = frames[k + window]->requests;
    out.push_back(std::move(s));
  }
  return out;
}

struct SlotCounts {
  std::map<ContentId, std::uint64_t> counts;
  std::uint64_t total = 0;
};

// What a region's decision is based on: the cache and the slot's requests.
struct View {
  cache::CacheState cache;
  SlotCounts requests;
};

struct Learner {
  std::optional<rl::SacAgent> agent;
  predictor::PredictorParams global;
  std::mt19937_64 noise;
  std::uint64_t afl_round = 0;
};

struct Pending {
  std::vector<double> state;
  rl::CacheAction action;
};

class Simulator {
 public:
  Simulator(const ScenarioConfig& cfg, Policy policy, std::uint64_t seed, const Trace* trace,
            const EpisodeOptions& opts)
      : cfg_(cfg),
        policy_(policy),
        traits_(traits(policy)),
        seed_(seed),
        trace_(trace),
        catalog_(make_catalog(cfg, trace)),
        workload_(cfg_, catalog_),
        neighbors_(grid_neighbors(cfg)),
        spec_(cfg.state_spec()),
        pcfg_(cfg.predictor_config()),
        run_id_(std::string(to_string(policy)) + "_s" + std::to_string(seed)) {
    if (traits_.learned) {
      if (opts.agent != nullptr) {
        if (opts.agent->config().state_dim != spec_.dim() || opts.agent->config().action_dim != cfg.candidates) {
          throw ConfigError("starting agent does not match the scenario's state and action sizes");
        }
        learner_.agent.emplace(*opts.agent);
        learner_.agent->reseed(stream_rng(seed, kPolicy)());
      } else {
        learner_.agent.emplace(cfg.sac_config(spec_.dim()), stream_rng(seed, kPolicy)());
      }
    }
    if (traits_.predictor) {
      learner_.global = opts.pretrained != nullptr ? *opts.pretrained : initial_predictor(cfg);
      if (!learner_.global.same_layout(predictor::make_zero_params(pcfg_))) {
        throw ConfigError("predictor checkpoint does not match the scenario's predictor layout");
      }
      learner_.noise = stream_rng(seed, kPredictorNoise);
    }
  }

  EpisodeResult run() {
    for (std::size_t e = 0; e <= cfg_.warmup_episodes; ++e) episode(e, e == cfg_.warmup_episodes);
    if (learner_.agent) result_.agent = std::move(learner_.agent);
    return std::move(result_);
  }

 private:
  std::size_t catalog_size() const { return catalog_.sizes.size(); }

  void reset(std::size_t e) {
    const std::uint64_t off = kEpisodeStride * e;
    mobility_rng_ = stream_rng(seed_, kMobility + off);
    request_rng_ = stream_rng(seed_, kRequests + off);
    fading_rng_ = stream_rng(seed_, kFading + off);
    baseline_rng_ = stream_rng(seed_, kBaseline + off);

    std::vector<mobility::RsuSegment> segs;
    twin::TwinConfig tc;
    tc.history = cfg_.twin_history;
    tc.zero_delay = cfg_.zero_delay;
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      segs.push_back({r, cfg_.segment_length_m, static_cast<std::uint32_t>(r % cfg_.regions() + 1)});
      tc.segment_length_m[r] = cfg_.segment_length_m;
    }
    road_ = mobility::Road(segs);
    twin_.emplace(tc);
    trip_left_.clear();
    next_vehicle_ = 1;
    caches_.clear();
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) caches_.emplace(r, cache::CacheState(cfg_.capacity_bytes()));

    const std::size_t n = catalog_size(), R = cfg_.regions();
    round_counts_.assign(R + 1, std::vector<std::uint32_t>(n, 0));
    region_frames_.assign(R + 1, {});
    vehicle_samples_.clear();
    forecast_.assign(R + 1, std::vector<double>(n, 0.0));
    window_counts_.assign(R + 1, std::vector<double>(n, 0.0));
    window_slots_.clear();
    lfu_.assign(R + 1, std::vector<double>(n, 0.0));
    lru_.assign(R + 1, std::vector<double>(n, 0.0));
    pending_.assign(R + 1, std::nullopt);
    stale_view_.assign(R + 1, View{cache::CacheState(cfg_.capacity_bytes()), {}});
    cumulative_.assign(R + 1, 0.0);
    round_index_ = 0;
    if (trace_ != nullptr) trace_pos_ = 0;

    std::poisson_distribution<std::size_t> initial(cfg_.vehicles_per_region);
    for (std::uint32_t r = 1; r <= R; ++r) {
      const std::size_t k = cfg_.vehicles_per_region > 0.0 ? initial(mobility_rng_) : 0;
      for (std::size_t i = 0; i < k; ++i) spawn(r);
    }
    road_.update_speeds(cfg_.free_flow_kmh, cfg_.max_density_per_km);
  }

  void spawn(std::uint32_t region) {
    mobility::VehicleState v;
    v.id = next_vehicle_++;
    v.segment = region;
    v.position_m = uniform01(mobility_rng_) * cfg_.segment_length_m;
    road_.add_vehicle(v);
    std::exponential_distribution<double> trip(1.0 / cfg_.mean_trip_s);
    trip_left_[v.id] = trip(mobility_rng_);
  }

  void move_vehicles() {
    road_.advance(cfg_.slot_s);
    std::vector<mobility::VehicleId> done;
    for (auto& [id, left] : trip_left_) {
      left -= cfg_.slot_s;
      if (left <= 0.0) done.push_back(id);
    }
    for (auto id : done) {
      road_.remove_vehicle(id);
      trip_left_.erase(id);
      vehicle_samples_.erase(id);
    }
    if (cfg_.vehicles_per_region > 0.0) {
      std::poisson_distribution<std::size_t> arrivals(cfg_.vehicles_per_region * cfg_.slot_s / cfg_.mean_trip_s);
      for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
        const std::size_t k = arrivals(mobility_rng_);
        for (std::size_t i = 0; i < k; ++i) spawn(r);
      }
    }
    road_.update_speeds(cfg_.free_flow_kmh, cfg_.max_density_per_km);
  }

  double uplink_rate(const mobility::VehicleState& v) const {
    return comms::link_rate(link(cfg_, cfg_.vehicle_tx_dbm, rsu_distance(cfg_, v.position_m),
                                 cfg_.path_loss_exponent, 1.0));
  }

  // Training estimates the twin mirrors for client selection.
  void refresh_training_estimates() {
    if (!traits_.federated) return;
    const std::size_t payload = learner_.global.serialized_size();
    for (auto& [id, v] : road_.vehicles()) {
      auto it = vehicle_samples_.find(id);
      v.data_volume = it == vehicle_samples_.end() ? 0 : it->second.size();
      const std::uint64_t used = std::min<std::uint64_t>(v.data_volume, cfg_.local_batch);
      v.train_time_s = mobility::estimate_train_time(used, cfg_.seconds_per_sample,
                                                     static_cast<std::uint32_t>(cfg_.local_iters));
      v.upload_time_s = mobility::estimate_upload_time(payload, uplink_rate(v));
    }
  }

  struct Request {
    mobility::VehicleId vehicle = 0;  // 0: no simulated vehicle behind it
    ContentId content = 0;
  };

  std::vector<std::vector<Request>> generate_requests(std::uint64_t slot) {
    std::vector<std::vector<Request>> out(cfg_.regions() + 1);
    if (trace_ != nullptr) {
      std::vector<std::vector<mobility::VehicleId>> present(cfg_.regions() + 1);
      for (const auto& [id, v] : road_.vehicles()) present[v.segment].push_back(id);
      const auto& ev = trace_->events;
      while (trace_pos_ < ev.size() && ev[trace_pos_].slot < slot) ++trace_pos_;
      for (; trace_pos_ < ev.size() && ev[trace_pos_].slot == slot; ++trace_pos_) {
        const RequestEvent& e = ev[trace_pos_];
        if (e.region_id > cfg_.regions()) {
          throw std::runtime_error("trace region " + std::to_string(e.region_id) +
                                   " outside the scenario's " + std::to_string(cfg_.regions()) +
                                   " regions");
        }
        const auto& here = present[e.region_id];
        const mobility::VehicleId v = here.empty() ? 0 : here[(e.vehicle_id - 1) % here.size()];
        out[e.region_id].push_back({v, e.content_id});
      }
      return out;
    }
    for (const auto& [id, v] : road_.vehicles()) {
      if (uniform01(request_rng_) >= cfg_.request_probability) continue;
      out[v.segment].push_back({id, workload_.draw(v.segment, slot, request_rng_)});
    }
    return out;
  }

  void sync_twin(std::uint64_t slot, const std::vector<std::vector<Request>>& requests) {
    twin::Observation obs;
    obs.slot = slot;
    std::vector<double> rate_sum(cfg_.regions() + 1, 0.0);
    std::vector<std::size_t> rate_n(cfg_.regions() + 1, 0);
    for (const auto& [id, v] : road_.vehicles()) {
      obs.vehicles.push_back(v);
      rate_sum[v.segment] += comms::link_rate(
          link(cfg_, cfg_.rsu_tx_dbm, rsu_distance(cfg_, v.position_m), cfg_.path_loss_exponent, 1.0));
      ++rate_n[v.segment];
    }
    obs.rsu_caches = caches_;
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      obs.link_rate_bps[r] = rate_n[r] == 0 ? 0.0 : rate_sum[r] / static_cast<double>(rate_n[r]);
      std::map<ContentId, std::uint32_t> agg;
      for (const auto& q : requests[r]) ++agg[q.content];
      for (const auto& [c, k] : agg) obs.requests.push_back({r, c, k});
    }
    twin_->sync_state(obs);
  }

  double fading() {
    if (!cfg_.rayleigh_fading) return 1.0;
    return comms::sample_rayleigh_fading(fading_rng_);
  }

  struct Served {
    std::vector<rl::ServedRequest> served;
    std::uint64_t local = 0, neighbor = 0, bs = 0;
    double delay_s = 0.0;
  };

  std::vector<Served> serve(const std::vector<std::vector<Request>>& requests) {
    std::vector<Served> out(cfg_.regions() + 1);
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      std::map<comms::RsuId, const cache::CacheState*> nb;
      for (auto k : neighbors_[r]) nb[k] = &caches_.at(k);
      for (const auto& q : requests[r]) {
        double pos = 0.5 * cfg_.segment_length_m;
        if (q.vehicle != 0) pos = road_.vehicles().at(q.vehicle).position_m;
        comms::FetchOptions fo;
        fo.local = link(cfg_, cfg_.rsu_tx_dbm, rsu_distance(cfg_, pos), cfg_.path_loss_exponent, fading());
        for (auto k : neighbors_[r]) {
          fo.neighbor_hop[k] =
              link(cfg_, cfg_.rsu_tx_dbm, cfg_.neighbor_distance_m, cfg_.path_loss_exponent, fading());
        }
        fo.base_station = link(cfg_, cfg_.bs_tx_dbm, cfg_.bs_distance_m, cfg_.bs_path_loss_exponent, fading());
        const comms::FetchPath path =
            comms::resolve_fetch_path(q.content, caches_.at(r), nb, fo, cfg_.path_selection);
        const double bits = 8.0 * static_cast<double>(catalog_.sizes[q.content - 1]);
        const double delay = comms::delivery_delay(bits, path);
        Served& s = out[r];
        s.served.push_back({path.kind, delay});
        s.delay_s += delay;
        switch (path.kind) {
          case comms::PathKind::kLocal:
            ++s.local;
            caches_.at(r).touch(q.content);
            break;
          case comms::PathKind::kNeighborRsu:
            ++s.neighbor;
            caches_.at(*path.neighbor).touch(q.content);
            break;
          case comms::PathKind::kBaseStation:
            ++s.bs;
            break;
        }
      }
    }
    return out;
  }

  MetricsRow row(std::uint64_t slot, std::uint32_t region, std::uint64_t local, std::uint64_t neighbor,
                 std::uint64_t bs, double delay_s, double reward, double cumulative, RowKind kind) const {
    MetricsRow m;
    m.run_id = run_id_;
    m.policy = to_string(policy_);
    m.seed = seed_;
    m.kind = kind;
    m.slot = slot;
    m.region = region;
    m.local_hits = local;
    m.neighbor_hits = neighbor;
    m.bs_fetches = bs;
    m.requests = local + neighbor + bs;
    if (m.requests > 0) {
      m.hit_ratio = static_cast<double>(local) / static_cast<double>(m.requests);
      m.mean_delay_ms = delay_s / static_cast<double>(m.requests) * 1000.0;
    }
    m.reward = reward;
    m.cumulative_reward = cumulative;
    return m;
  }

  void record_slot(std::uint64_t slot, const std::vector<Served>& served, std::vector<double>& rewards,
                   bool measured) {
    rewards.assign(cfg_.regions() + 1, 0.0);
    Served all;
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      rewards[r] = served[r].served.empty() ? 0.0 : rl::reward(served[r].served, cfg_.reward);
      rewards[0] += rewards[r];
      all.local += served[r].local;
      all.neighbor += served[r].neighbor;
      all.bs += served[r].bs;
      all.delay_s += served[r].delay_s;
    }
    for (std::uint32_t r = 0; r <= cfg_.regions(); ++r) {
      cumulative_[r] += rewards[r];
      totals_[r].local += r == 0 ? all.local : served[r].local;
      totals_[r].neighbor += r == 0 ? all.neighbor : served[r].neighbor;
      totals_[r].bs += r == 0 ? all.bs : served[r].bs;
      totals_[r].delay_s += r == 0 ? all.delay_s : served[r].delay_s;
    }
    if (!measured) return;
    const Served& a = all;
    result_.rows.push_back(row(slot, 0, a.local, a.neighbor, a.bs, a.delay_s, rewards[0], cumulative_[0], RowKind::kSlot));
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      const Served& s = served[r];
      result_.rows.push_back(row(slot, r, s.local, s.neighbor, s.bs, s.delay_s, rewards[r], cumulative_[r], RowKind::kSlot));
    }
  }

  // Request statistics used by the heuristics and the frequency forecast.
  void update_statistics(std::uint64_t slot, const std::vector<std::vector<Request>>& requests) {
    const std::size_t horizon = cfg_.window * cfg_.round_slots();
    std::vector<std::vector<ContentId>> now(cfg_.regions() + 1);
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      for (const auto& q : requests[r]) {
        now[r].push_back(q.content);
        window_counts_[r][q.content - 1] += 1.0;
        lfu_[r][q.content - 1] += 1.0;
        lru_[r][q.content - 1] = static_cast<double>(slot + 1);
        ++round_counts_[r][q.content - 1];
      }
    }
    window_slots_.push_back(std::move(now));
    if (window_slots_.size() > horizon) {
      const auto& old = window_slots_.front();
      for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
        for (auto c : old[r]) window_counts_[r][c - 1] -= 1.0;
      }
      window_slots_.pop_front();
    }
  }

  std::vector<double> frequency_forecast(std::uint32_t r) const {
    std::vector<double> f = window_counts_[r];
    const double total = std::accumulate(f.begin(), f.end(), 0.0);
    if (total > 0.0) {
      for (double& x : f) x /= total;
    }
    return f;
  }

  void end_of_round() {
    // A full window followed by the new frame is a training sample for every
    // vehicle that witnessed the region's round.
    std::vector<SamplePtr> samples(cfg_.regions() + 1);
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      FramePtr frame = make_frame(round_counts_[r], r, round_index_, congestion(road_.count_in(r), cfg_));
      std::fill(round_counts_[r].begin(), round_counts_[r].end(), 0u);
      auto& hist = region_frames_[r];
      if (hist.size() == cfg_.window) {
        predictor::SequenceSample s;
        for (const auto& f : hist) s.frames.push_back(*f);
        s.target = frame->requests;
        samples[r] = std::make_shared<const predictor::SequenceSample>(std::move(s));
      }
      hist.push_back(std::move(frame));
      if (hist.size() > cfg_.window) hist.pop_front();
    }
    ++round_index_;
    if (!traits_.predictor) return;
    for (const auto& [id, v] : road_.vehicles()) {
      if (!samples[v.segment]) continue;
      auto& mine = vehicle_samples_[id];
      mine.push_back(samples[v.segment]);
      if (mine.size() > cfg_.local_batch) mine.pop_front();
    }
    if (traits_.federated) federated_round();
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      std::vector<predictor::FeatureFrame> seq;
      for (const auto& f : region_frames_[r]) seq.push_back(*f);
      forecast_[r] = predictor::predict_popularity(seq, learner_.global, pcfg_).probabilities;
    }
  }

  void federated_round() {
    refresh_training_estimates();
    const auto latest = twin_->latest();
    std::shared_ptr<const twin::TwinSnapshot> previous;
    if (twin_->history().size() >= 2) previous = twin_->history()[twin_->history().size() - 2];

    struct Choice {
      afl::ClientRecord record;
      bool truly_stable = true;
    };
    std::vector<Choice> stable;
    for (const auto& [id, v] : road_.vehicles()) {
      if (v.data_volume == 0) continue;
      afl::ClientRecord rec;
      rec.id = id;
      rec.data_volume = v.data_volume;
      rec.position_m = v.position_m;
      rec.segment_length_m = cfg_.segment_length_m;
      rec.train_time_s = v.train_time_s;
      rec.upload_time_s = v.upload_time_s;
      rec.last_round = learner_.afl_round;
      const mobility::VehicleState* seen = nullptr;
      if (traits_.stale) {
        seen = previous ? previous->vehicle(id) : nullptr;
      } else {
        seen = latest->vehicle(id);
      }
      if (seen == nullptr) continue;
      const twin::DwellEstimate now = twin_->predicted_dwell(id);
      if (traits_.stale) {
        rec.dwell_s = mobility::dwell_time(cfg_.segment_length_m, seen->position_m, seen->speed_mps);
        rec.train_time_s = seen->train_time_s;
        rec.upload_time_s = seen->upload_time_s;
      } else {
        rec.dwell_s = now.stay_s;
      }
      if (!mobility::is_stable_client(rec.dwell_s, rec.train_time_s, rec.upload_time_s)) continue;
      const bool truly = mobility::is_stable_client(now.stay_s, v.train_time_s, v.upload_time_s);
      stable.push_back({rec, truly});
    }
    std::sort(stable.begin(), stable.end(), [](const Choice& a, const Choice& b) {
      if (a.record.data_volume != b.record.data_volume) return a.record.data_volume > b.record.data_volume;
      return a.record.id < b.record.id;
    });
    if (stable.size() > cfg_.max_clients) stable.resize(cfg_.max_clients);

    predictor::LossOptions lo;
    lo.lambda = cfg_.lambda_joint;
    lo.beta_kl = cfg_.beta_kl;
    std::vector<afl::Participant> parts;
    for (const auto& c : stable) {
      // A client that leaves coverage before finishing never delivers its update.
      if (!c.truly_stable) continue;
      const auto& mine = vehicle_samples_.at(c.record.id);
      auto samples = std::make_shared<std::vector<predictor::SequenceSample>>();
      for (const auto& sp : mine) samples->push_back(*sp);
      if (samples->empty()) continue;
      afl::LocalObjective obj = [samples, pcfg = pcfg_, lo, noise = &learner_.noise](nn::ParamVector& p) {
        return predictor::joint_loss_with_grad(*samples, p, pcfg, lo, noise).total;
      };
      parts.push_back({c.record, std::move(obj)});
    }
    ++learner_.afl_round;
    if (parts.empty()) return;
    afl::RoundResult rr =
        afl::run_round(learner_.global, parts, cfg_.afl_config(), learner_.afl_round, traits_.synchronous);
    learner_.global = std::move(rr.params);
    result_.afl_rounds.push_back(std::move(rr.log));
  }

  // Candidate contents for one region: the slot's requested items (most
  // requested first, ties by estimate then id), then the highest-estimate
  // uncached items, padded with id 0 to the configured width.
  std::vector<CandidateStats> candidates(const View& view, const std::vector<double>& estimate) const {
    std::vector<CandidateStats> out;
    std::vector<std::pair<ContentId, std::uint64_t>> req(view.requests.counts.begin(), view.requests.counts.end());
    std::sort(req.begin(), req.end(), [&](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      const double ea = estimate[a.first - 1], eb = estimate[b.first - 1];
      if (ea != eb) return ea > eb;
      return a.first < b.first;
    });
    for (const auto& [id, n] : req) {
      if (out.size() == cfg_.candidates) break;
      out.push_back({id, catalog_.sizes[id - 1], n});
    }
    if (out.size() < cfg_.candidates) {
      std::vector<ContentId> pool;
      for (ContentId id = 1; id <= catalog_size(); ++id) {
        if (estimate[id - 1] <= 0.0 || view.cache.contains(id) || view.requests.counts.count(id)) continue;
        pool.push_back(id);
      }
      const std::size_t need = std::min(pool.size(), cfg_.candidates - out.size());
      std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(need), pool.end(),
                        [&](ContentId a, ContentId b) {
                          if (estimate[a - 1] != estimate[b - 1]) return estimate[a - 1] > estimate[b - 1];
                          return a < b;
                        });
      for (std::size_t i = 0; i < need; ++i) out.push_back({pool[i], catalog_.sizes[pool[i] - 1], 0});
    }
    while (out.size() < cfg_.candidates) out.push_back({0, 0, 0});
    return out;
  }

  const std::vector<double>& eviction_scores(std::uint32_t r, const std::vector<double>& freq) const {
    switch (traits_.evict) {
      case Evict::kForecast:
        return forecast_[r];
      case Evict::kCount:
        return lfu_[r];
      case Evict::kRecency:
        return lru_[r];
      case Evict::kFrequency:
        break;
    }
    return freq;
  }

  CurvePoint decide(std::uint64_t slot, const std::vector<std::vector<Request>>& requests,
                    const std::vector<double>& rewards) {
    std::map<std::pair<std::uint32_t, ContentId>, double> heat;
    if (traits_.learned && !traits_.stale) {
      for (const auto& c : twin_->heatmap(cfg_.heat_window, cfg_.heat_decay)) heat[{c.region, c.content}] = c.decay_score;
    }
    std::vector<View> views(cfg_.regions() + 1);
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      views[r].cache = caches_.at(r);
      for (const auto& q : requests[r]) ++views[r].requests.counts[q.content];
      views[r].requests.total = requests[r].size();
    }

    struct Prepared {
      std::vector<CandidateStats> cands;
      std::vector<double> freq;
      std::vector<double> state;
    };
    std::vector<Prepared> prep(cfg_.regions() + 1);
    CurvePoint point;
    point.slot = slot;
    point.reward = rewards[0];
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      const View& view = traits_.stale ? stale_view_[r] : views[r];
      Prepared& p = prep[r];
      p.freq = frequency_forecast(r);
      const std::vector<double>& estimate = eviction_scores(r, p.freq);
      p.cands = candidates(view, estimate);
      if (!traits_.learned) continue;
      const std::vector<double>& forecast = traits_.predictor ? forecast_[r] : p.freq;
      std::vector<rl::CandidateFeatures> feats;
      for (const auto& c : p.cands) {
        rl::CandidateFeatures f;
        f.id = c.id;
        if (c.id != 0) {
          f.request_share = view.requests.total == 0 ? 0.0
                                                     : static_cast<double>(c.slot_count) /
                                                           static_cast<double>(view.requests.total);
          f.size_bytes = c.size_bytes;
          f.predicted_popularity = forecast[c.id - 1];
          auto h = heat.find({r, c.id});
          f.heat = h == heat.end() ? 0.0 : h->second;
        }
        feats.push_back(f);
      }
      p.state = rl::build_state(view.cache, feats, forecast, spec_);
      if (pending_[r] && !greedy_now_) {
        learner_.agent->observe({pending_[r]->state, pending_[r]->action, rewards[r], p.state});
      }
    }
    if (traits_.learned && !greedy_now_) {
      std::size_t n = 0;
      for (std::size_t k = 0; k < cfg_.train_steps_per_slot; ++k) {
        const rl::TrainReport rep = learner_.agent->train_step();
        if (!rep.trained) continue;
        ++n;
        point.value_loss += rep.value_loss;
        point.q_loss += 0.5 * (rep.q1_loss + rep.q2_loss);
        point.policy_loss += rep.policy_loss;
      }
      if (n > 0) {
        point.trained = true;
        point.value_loss /= static_cast<double>(n);
        point.q_loss /= static_cast<double>(n);
        point.policy_loss /= static_cast<double>(n);
      }
    }

    std::vector<twin::Directive> directives;
    for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) {
      Prepared& p = prep[r];
      rl::CacheAction action;
      if (traits_.learned) {
        action = learner_.agent->act(p.state, greedy_now_ ? rl::ActionMode::kGreedy : rl::ActionMode::kStochastic);
        pending_[r] = Pending{p.state, action};
      } else if (traits_.random_admit) {
        action = random_admission(p.cands.size(), baseline_rng_);
      } else if (traits_.eps_greedy) {
        action = baseline_epsilon_greedy(p.cands, cfg_.capacity_bytes(), cfg_.epsilon, baseline_rng_).action;
      } else {
        action = admit_requested(p.cands);
      }
      std::vector<rl::Candidate> real;
      rl::CacheAction bits;
      for (std::size_t i = 0; i < p.cands.size(); ++i) {
        if (p.cands[i].id == 0) continue;
        real.push_back({p.cands[i].id, p.cands[i].size_bytes});
        bits.push_back(action[i]);
      }
      const std::vector<double>& score = eviction_scores(r, p.freq);
      auto applied = rl::apply_action(caches_.at(r), bits, real,
                                      [&score](ContentId id) { return score[id - 1]; });
      if (applied.admitted.empty()) continue;
      directives.push_back({twin::NodeKind::kRsu, r, std::move(applied.cache)});
    }
    twin_->emit_commands(directives);
    if (traits_.stale) {
      for (std::uint32_t r = 1; r <= cfg_.regions(); ++r) stale_view_[r] = std::move(views[r]);
    }
    return point;
  }

  void episode(std::size_t e, bool measured) {
    greedy_now_ = measured && cfg_.greedy_eval;
    reset(e);
    totals_.assign(cfg_.regions() + 1, {});
    std::map<mobility::VehicleId, cache::CacheState> vehicle_caches;
    std::vector<double> rewards;
    const std::size_t round = cfg_.round_slots();
    for (std::uint64_t t = 0; t < cfg_.slots; ++t) {
      if (t > 0) move_vehicles();
      refresh_training_estimates();
      twin_->apply_due(t, caches_, vehicle_caches);
      const auto requests = generate_requests(t);
      sync_twin(t, requests);
      const auto served = serve(requests);
      record_slot(t, served, rewards, measured);
      update_statistics(t, requests);
      if ((t + 1) % round == 0) end_of_round();
      CurvePoint point = decide(t, requests, rewards);
      if (traits_.learned) {
        point.episode = e;
        result_.curve.push_back(point);
      }
    }
    if (!measured) return;
    for (std::uint32_t r = 0; r <= cfg_.regions(); ++r) {
      const Served& s = totals_[r];
      result_.rows.push_back(row(cfg_.slots, r, s.local, s.neighbor, s.bs, s.delay_s,
                                 cumulative_[r] / static_cast<double>(cfg_.slots), cumulative_[r],
                                 RowKind::kSummary));
    }
    result_.twin_log = twin_->log();
    result_.final_digest = twin_->latest()->digest();
  }

  const ScenarioConfig& cfg_;
  Policy policy_;
  Traits traits_;
  std::uint64_t seed_;
  const Trace* trace_;
  Catalog catalog_;
  Workload workload_;
  std::vector<std::vector<std::uint32_t>> neighbors_;
  rl::StateSpec spec_;
  predictor::PredictorConfig pcfg_;
  std::string run_id_;
  Learner learner_;
  EpisodeResult result_;

  std::mt19937_64 mobility_rng_, request_rng_, fading_rng_, baseline_rng_;
  mobility::Road road_;
  std::optional<twin::DigitalTwin> twin_;
  std::map<mobility::VehicleId, double> trip_left_;
  mobility::VehicleId next_vehicle_ = 1;
  std::map<comms::RsuId, cache::CacheState> caches_;
  std::vector<std::vector<std::uint32_t>> round_counts_;
  std::vector<std::deque<FramePtr>> region_frames_;
  std::map<mobility::VehicleId, std::deque<SamplePtr>> vehicle_samples_;
  std::vector<std::vector<double>> forecast_;
  std::vector<std::vector<double>> window_counts_;
  std::deque<std::vector<std::vector<ContentId>>> window_slots_;
  std::vector<std::vector<double>> lfu_, lru_;
  std::vector<std::optional<Pending>> pending_;
  std::vector<View> stale_view_;
  std::vector<double> cumulative_;
  std::vector<Served> totals_;
  std::size_t round_index_ = 0;
  bool greedy_now_ = false;
  std::size_t trace_pos_ = 0;
};

ScenarioConfig effective_config(const ScenarioConfig& cfg, const Trace* trace) {
  ScenarioConfig c = cfg;
  if (trace != nullptr) {
    if (trace->content_sizes.empty()) throw ConfigError("trace holds no requests");
    c.catalog_size = trace->content_sizes.size();
    c.forecast_top_k = std::min(c.forecast_top_k, c.catalog_size);
    c.validate();
  }
  return c;
}

}  // namespace

const char* to_string(Policy p) {
  switch (p) {
    case Policy::kDapr: return "dapr";
    case Policy::kEpsGreedy: return "eps_greedy";
    case Policy::kRandom: return "random";
    case Policy::kLfu: return "lfu";
    case Policy::kLru: return "lru";
    case Policy::kNoDrl: return "no_drl";
    case Policy::kNoAfl: return "no_afl";
    case Policy::kNoGruVae: return "no_gruvae";
    case Policy::kNoDt: return "no_dt";
  }
  return "?";
}

std::vector<Policy> all_policies() {
  return {Policy::kDapr, Policy::kEpsGreedy, Policy::kRandom, Policy::kLfu, Policy::kLru,
          Policy::kNoDrl, Policy::kNoAfl, Policy::kNoGruVae, Policy::kNoDt};
}

bool uses_predictor(Policy p) { return traits(p).predictor; }
bool uses_learner(Policy p) { return traits(p).learned; }

Policy parse_policy(const std::string& name) {
  for (Policy p : all_policies()) {
    if (name == to_string(p)) return p;
  }
  std::string allowed;
  for (Policy p : all_policies()) allowed += (allowed.empty() ? "" : ", ") + std::string(to_string(p));
  throw ConfigError("unknown policy '" + name + "' (expected one of " + allowed + ")");
}

EpisodeResult run_episode(const ScenarioConfig& cfg, Policy policy, std::uint64_t seed,
                          const EpisodeOptions& opts) {
  cfg.validate();
  std::optional<Trace> trace;
  if (!cfg.trace_path.empty()) trace = load_trace(cfg.trace_path);
  const ScenarioConfig eff = effective_config(cfg, trace ? &*trace : nullptr);
  Simulator sim(eff, policy, seed, trace ? &*trace : nullptr, opts);
  return sim.run();
}

predictor::Dataset pretrain_dataset(const ScenarioConfig& cfg) {
  cfg.validate();
  std::optional<Trace> trace;
  if (!cfg.trace_path.empty()) trace = load_trace(cfg.trace_path);
  const ScenarioConfig eff = effective_config(cfg, trace ? &*trace : nullptr);
  const Catalog catalog = make_catalog(eff, trace ? &*trace : nullptr);
  const std::size_t n = catalog.sizes.size(), R = eff.regions(), round = eff.round_slots();
  const double context = congestion(static_cast<std::size_t>(std::llround(eff.vehicles_per_region)), eff);

  std::vector<std::vector<FramePtr>> frames(R + 1);
  if (trace) {
    std::uint64_t last = trace->events.empty() ? 0 : trace->events.back().slot;
    const std::size_t rounds = static_cast<std::size_t>(last / round + 1);
    std::vector<std::vector<std::vector<std::uint32_t>>> counts(
        rounds, std::vector<std::vector<std::uint32_t>>(R + 1, std::vector<std::uint32_t>(n, 0)));
    for (const auto& e : trace->events) {
      if (e.region_id > R) throw std::runtime_error("trace region outside the scenario");
      ++counts[e.slot / round][e.region_id][e.content_id - 1];
    }
    for (std::size_t k = 0; k < rounds; ++k) {
      for (std::uint32_t r = 1; r <= R; ++r) frames[r].push_back(make_frame(counts[k][r], r, k, context));
    }
  } else {
    Workload workload(eff, catalog);
    std::mt19937_64 rng = stream_rng(eff.pretrain_seed, kPretrain);
    std::poisson_distribution<std::size_t> volume(
        std::max(1e-9, eff.vehicles_per_region * eff.request_probability * static_cast<double>(round)));
    for (std::size_t k = 0; k < eff.pretrain_rounds; ++k) {
      for (std::uint32_t r = 1; r <= R; ++r) {
        std::vector<std::uint32_t> counts(n, 0);
        const std::size_t m = volume(rng);
        for (std::size_t i = 0; i < m; ++i) {
          const std::uint64_t slot = k * round + i % round;
          ++counts[workload.draw(r, slot, rng) - 1];
        }
        frames[r].push_back(make_frame(counts, r, k, context));
      }
    }
  }
  predictor::Dataset data;
  for (std::uint32_t r = 1; r <= R; ++r) {
    auto w = windows_of(frames[r], eff.window, frames[r].size());
    for (auto& s : w) data.push_back(std::move(s));
  }
  return data;
}

predictor::TrainResult pretrain_predictor(const ScenarioConfig& cfg) {
  const predictor::Dataset data = pretrain_dataset(cfg);
  if (data.empty()) throw std::runtime_error("pretraining produced no forecasting windows");
  ScenarioConfig eff = cfg;
  eff.catalog_size = data.front().target.size();
  predictor::TrainSchedule s;
  s.vae_epochs = cfg.pretrain_vae_epochs;
  s.gru_epochs = cfg.pretrain_gru_epochs;
  s.joint_epochs = cfg.pretrain_joint_epochs;
  s.batch_size = cfg.pretrain_batch;
  s.lr = cfg.pretrain_lr;
  s.lambda = cfg.lambda_joint;
  s.beta_kl = cfg.beta_kl;
  s.seed = cfg.pretrain_seed;
  return predictor::train_predictor(data, eff.predictor_config(), s);
}

predictor::PredictorParams initial_predictor(const ScenarioConfig& cfg) {
  if (!cfg.predictor_checkpoint.empty()) return nn::ParamVector::load(cfg.predictor_checkpoint);
  return pretrain_predictor(cfg).params;
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "episode,slot,reward,trained,value_loss,q_loss,policy_loss\n";
  for (const auto& p : curve) {
    out << p.episode << ',' << p.slot << ',' << csv::format_double(p.reward) << ','
        << (p.trained ? 1 : 0) << ',' << csv::format_double(p.value_loss) << ','
        << csv::format_double(p.q_loss) << ',' << csv::format_double(p.policy_loss) << '\n';
  }
}

}  // namespace dapr::sim
