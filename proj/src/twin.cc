#include "dapr/twin.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dapr/csv.h"

namespace dapr::twin {

namespace {

class Fnv1a {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      const unsigned char c = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
      bytes(&c, 1);
    }
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

void hash_cache(Fnv1a& h, std::uint32_t id, const cache::CacheState& c) {
  h.le(id);
  h.le(c.capacity());
  h.le(static_cast<std::uint64_t>(c.items().size()));
  for (const auto& it : c.items()) {
    h.le(it.id);
    h.le(it.access_count);
    h.le(it.size_bytes);
  }
}

}  // namespace

TwinSnapshot::TwinSnapshot(const Observation& obs)
    : slot_(obs.slot),
      rsu_caches_(obs.rsu_caches),
      vehicle_caches_(obs.vehicle_caches),
      link_rate_bps_(obs.link_rate_bps) {
  for (const auto& v : obs.vehicles) {
    if (!vehicles_.emplace(v.id, v).second) {
      throw std::invalid_argument("twin: duplicate vehicle id " + std::to_string(v.id));
    }
  }
  for (const auto& r : obs.requests) {
    if (r.count > 0) requests_[{r.region, r.content}] += r.count;
  }
}

const mobility::VehicleState* TwinSnapshot::vehicle(VehicleId id) const {
  auto it = vehicles_.find(id);
  return it == vehicles_.end() ? nullptr : &it->second;
}

namespace {

bool same_vehicle(const mobility::VehicleState& a, const mobility::VehicleState& b) {
  return a.id == b.id && a.segment == b.segment && a.position_m == b.position_m &&
         a.speed_mps == b.speed_mps && a.data_volume == b.data_volume &&
         a.train_time_s == b.train_time_s && a.upload_time_s == b.upload_time_s;
}

}  // namespace

bool TwinSnapshot::same_state(const TwinSnapshot& o) const {
  if (vehicles_.size() != o.vehicles_.size()) return false;
  for (auto a = vehicles_.begin(), b = o.vehicles_.begin(); a != vehicles_.end(); ++a, ++b) {
    if (!same_vehicle(a->second, b->second)) return false;
  }
  return rsu_caches_ == o.rsu_caches_ && vehicle_caches_ == o.vehicle_caches_ &&
         link_rate_bps_ == o.link_rate_bps_ && requests_ == o.requests_;
}

std::uint64_t TwinSnapshot::digest() const {
  Fnv1a h;
  h.le(slot_);
  h.le(static_cast<std::uint64_t>(vehicles_.size()));
  for (const auto& [id, v] : vehicles_) {
    h.le(v.id);
    h.le(v.segment);
    h.f64(v.position_m);
    h.f64(v.speed_mps);
    h.le(v.data_volume);
    h.f64(v.train_time_s);
    h.f64(v.upload_time_s);
  }
  h.le(static_cast<std::uint64_t>(rsu_caches_.size()));
  for (const auto& [id, c] : rsu_caches_) hash_cache(h, id, c);
  h.le(static_cast<std::uint64_t>(vehicle_caches_.size()));
  for (const auto& [id, c] : vehicle_caches_) hash_cache(h, id, c);
  h.le(static_cast<std::uint64_t>(link_rate_bps_.size()));
  for (const auto& [id, r] : link_rate_bps_) {
    h.le(id);
    h.f64(r);
  }
  h.le(static_cast<std::uint64_t>(requests_.size()));
  for (const auto& [key, n] : requests_) {
    h.le(key.first);
    h.le(key.second);
    h.le(n);
  }
  return h.value();
}

DigitalTwin::DigitalTwin(TwinConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.history == 0) throw std::invalid_argument("twin: history must be >= 1");
}

std::shared_ptr<const TwinSnapshot> DigitalTwin::sync_state(const Observation& obs) {
  if (!history_.empty() && obs.slot <= history_.back()->slot()) {
    throw std::invalid_argument("twin: slot " + std::to_string(obs.slot) +
                                " is not after the latest snapshot " +
                                std::to_string(history_.back()->slot()));
  }
  auto snap = std::make_shared<const TwinSnapshot>(obs);
  history_.push_back(snap);
  while (history_.size() > cfg_.history) history_.pop_front();
  return snap;
}

std::shared_ptr<const TwinSnapshot> DigitalTwin::latest() const {
  if (history_.empty()) throw std::logic_error("twin: no snapshot published yet");
  return history_.back();
}

std::vector<HeatmapCell> DigitalTwin::heatmap(std::size_t window, double decay) const {
  if (window == 0) throw std::invalid_argument("heatmap: window must be >= 1");
  if (!(decay >= 0.0)) throw std::invalid_argument("heatmap: decay must be >= 0");
  std::map<std::pair<RegionId, ContentId>, HeatmapCell> cells;
  if (history_.empty()) return {};
  const std::uint64_t now = history_.back()->slot();
  for (auto it = history_.rbegin(); it != history_.rend(); ++it) {
    const std::uint64_t age = now - (*it)->slot();
    if (age >= window) break;
    const double w = std::exp(-decay * static_cast<double>(age));
    for (const auto& [key, n] : (*it)->requests()) {
      auto& c = cells[key];
      c.region = key.first;
      c.content = key.second;
      c.count += n;
      c.decay_score += static_cast<double>(n) * w;
    }
  }
  std::vector<HeatmapCell> out;
  out.reserve(cells.size());
  for (auto& [key, c] : cells) out.push_back(c);
  return out;
}

DwellEstimate DigitalTwin::predicted_dwell(VehicleId id) const {
  const auto snap = latest();
  const mobility::VehicleState* v = snap->vehicle(id);
  if (v == nullptr) throw std::out_of_range("twin: unknown vehicle " + std::to_string(id));
  auto seg = cfg_.segment_length_m.find(v->segment);
  if (seg == cfg_.segment_length_m.end()) {
    throw std::out_of_range("twin: unknown segment " + std::to_string(v->segment));
  }
  return {mobility::dwell_time(seg->second, v->position_m, v->speed_mps), v->train_time_s,
          v->upload_time_s};
}

namespace {

std::string describe(const Directive& d) {
  return std::string(d.kind == NodeKind::kRsu ? "rsu " : "vehicle ") + std::to_string(d.node);
}

}  // namespace

std::size_t DigitalTwin::emit_commands(std::span<const Directive> directives) {
  const auto snap = latest();
  const std::uint64_t due = snap->slot() + (cfg_.zero_delay ? 0 : 1);
  std::size_t queued = 0;
  for (const auto& d : directives) {
    const bool live = d.kind == NodeKind::kRsu ? snap->rsu_caches().count(d.node) > 0
                                               : snap->vehicle(d.node) != nullptr;
    if (!live) {
      log_.push_back("slot " + std::to_string(snap->slot()) + ": dropped directive for stale " +
                     describe(d));
      continue;
    }
    pending_.emplace_back(due, d);
    ++queued;
  }
  return queued;
}

std::size_t DigitalTwin::apply_due(std::uint64_t slot, std::map<RsuId, cache::CacheState>& rsus,
                                   std::map<VehicleId, cache::CacheState>& vehicles) {
  std::size_t applied = 0;
  std::vector<std::pair<std::uint64_t, Directive>> keep;
  for (auto& [due, d] : pending_) {
    if (due > slot) {
      keep.emplace_back(due, std::move(d));
      continue;
    }
    auto& target = d.kind == NodeKind::kRsu ? rsus : vehicles;
    auto it = target.find(d.node);
    if (it == target.end()) {
      log_.push_back("slot " + std::to_string(slot) + ": dropped directive for departed " +
                     describe(d));
      continue;
    }
    cache::CacheState next(it->second.capacity());
    for (auto item : d.cache.items()) {
      if (const cache::CacheItem* live = it->second.find(item.id)) item.access_count = live->access_count;
      if (!next.insert(item)) {
        throw std::invalid_argument("twin: directive for " + describe(d) + " exceeds capacity");
      }
    }
    it->second = std::move(next);
    ++applied;
  }
  pending_ = std::move(keep);
  return applied;
}

void write_heatmap_csv(std::ostream& out, std::uint64_t slot, std::span<const HeatmapCell> cells) {
  out << "slot,region,content,count,decay_score\n";
  for (const auto& c : cells) {
    out << slot << ',' << c.region << ',' << c.content << ',' << c.count << ','
        << csv::format_double(c.decay_score) << '\n';
  }
}

}  // namespace dapr::twin
