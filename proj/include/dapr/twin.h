#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dapr/cache_state.h"
#include "dapr/comms.h"
#include "dapr/mobility.h"

// The digital twin: per-slot mirrors of the physical layer, the regional
// request heatmap, dwell estimates for client selection, and the command
// channel back to the caches.
namespace dapr::twin {

using RegionId = std::uint32_t;
using cache::ContentId;
using comms::RsuId;
using mobility::VehicleId;

struct RegionRequests {
  RegionId region = 0;
  ContentId content = 0;
  std::uint32_t count = 0;
};

// What the physical layer reports for one slot.
struct Observation {
  std::uint64_t slot = 0;
  std::vector<mobility::VehicleState> vehicles;
  std::map<RsuId, cache::CacheState> rsu_caches;
  std::map<VehicleId, cache::CacheState> vehicle_caches;
  std::map<RsuId, double> link_rate_bps;  // mean V2R rate seen at each RSU
  std::vector<RegionRequests> requests;
};

// Immutable once built. Vehicles are keyed by id; requests are summed per
// (region, content).
class TwinSnapshot {
 public:
  explicit TwinSnapshot(const Observation& obs);

  std::uint64_t slot() const { return slot_; }
  const std::map<VehicleId, mobility::VehicleState>& vehicles() const { return vehicles_; }
  const mobility::VehicleState* vehicle(VehicleId id) const;
  const std::map<RsuId, cache::CacheState>& rsu_caches() const { return rsu_caches_; }
  const std::map<VehicleId, cache::CacheState>& vehicle_caches() const { return vehicle_caches_; }
  const std::map<RsuId, double>& link_rate_bps() const { return link_rate_bps_; }
  const std::map<std::pair<RegionId, ContentId>, std::uint64_t>& requests() const { return requests_; }

  // Everything except the slot index.
  bool same_state(const TwinSnapshot& other) const;
  // FNV-1a 64 over a canonical little-endian encoding of the whole snapshot.
  std::uint64_t digest() const;

 private:
  std::uint64_t slot_;
  std::map<VehicleId, mobility::VehicleState> vehicles_;
  std::map<RsuId, cache::CacheState> rsu_caches_;
  std::map<VehicleId, cache::CacheState> vehicle_caches_;
  std::map<RsuId, double> link_rate_bps_;
  std::map<std::pair<RegionId, ContentId>, std::uint64_t> requests_;
};

struct HeatmapCell {
  RegionId region = 0;
  ContentId content = 0;
  std::uint64_t count = 0;  // requests inside the window
  double decay_score = 0.0;  // sum of count * exp(-decay * age)
};

struct DwellEstimate {
  double stay_s = 0.0;
  double train_s = 0.0;
  double upload_s = 0.0;
};

enum class NodeKind { kRsu, kVehicle };

// Replace the target node's cache contents with the items of `cache`. Items
// that stay keep their live access counts.
struct Directive {
  NodeKind kind = NodeKind::kRsu;
  std::uint32_t node = 0;
  cache::CacheState cache;
};

struct TwinConfig {
  std::size_t history = 100;
  bool zero_delay = false;  // apply directives in the slot they were issued
  std::map<mobility::SegmentId, double> segment_length_m;
};

class DigitalTwin {
 public:
  explicit DigitalTwin(TwinConfig cfg);

  // Publishes the slot's snapshot. Slots must strictly increase.
  std::shared_ptr<const TwinSnapshot> sync_state(const Observation& obs);

  std::shared_ptr<const TwinSnapshot> latest() const;
  const std::deque<std::shared_ptr<const TwinSnapshot>>& history() const { return history_; }

  // Decay-weighted request counts over snapshots with age < window slots,
  // sorted by (region, content). Age is measured from the latest snapshot.
  std::vector<HeatmapCell> heatmap(std::size_t window, double decay) const;

  // Stay time from the mirrored position and speed; train and upload times are
  // the vehicle's own estimates.
  DwellEstimate predicted_dwell(VehicleId id) const;

  // Queues directives for the next slot (or this one in zero-delay mode).
  // Directives naming nodes absent from the latest snapshot are dropped and
  // logged. Returns the number queued.
  std::size_t emit_commands(std::span<const Directive> directives);

  // Applies every queued directive due at or before `slot`. Targets missing
  // from the physical maps are dropped and logged. Returns the number applied.
  std::size_t apply_due(std::uint64_t slot, std::map<RsuId, cache::CacheState>& rsus,
                        std::map<VehicleId, cache::CacheState>& vehicles);

  std::size_t pending() const { return pending_.size(); }
  const std::vector<std::string>& log() const { return log_; }

 private:
  TwinConfig cfg_;
  std::deque<std::shared_ptr<const TwinSnapshot>> history_;
  std::vector<std::pair<std::uint64_t, Directive>> pending_;
  std::vector<std::string> log_;
};

// CSV with header slot,region,content,count,decay_score.
void write_heatmap_csv(std::ostream& out, std::uint64_t slot, std::span<const HeatmapCell> cells);

}  // namespace dapr::twin
