#include "dapr/mobility.h"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace dapr::mobility {

double density(std::size_t n_vehicles, double length_m) {
  if (!(length_m > 0.0)) throw std::invalid_argument("density: segment length must be positive");
  return static_cast<double>(n_vehicles) / (length_m / 1000.0);
}

double speed(double density_per_km, double free_flow_kmh, double max_density_per_km) {
  const double v = free_flow_kmh * (1.0 - density_per_km / max_density_per_km);
  return std::max(0.0, v);
}

double dwell_time(double length_m, double position_m, double speed_mps) {
  if (position_m > length_m) {
    throw std::invalid_argument("dwell_time: position " + std::to_string(position_m) +
                                " beyond segment length " + std::to_string(length_m));
  }
  if (speed_mps <= 0.0) return kInfiniteDwell;
  return (length_m - position_m) / speed_mps;
}

bool is_stable_client(double stay_s, double train_s, double upload_s) {
  return stay_s > train_s + upload_s;
}

Advance advance_position(double position_m, double speed_mps, double duration_s,
                         double length_m) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("advance_position: duration must be positive");
  Advance out{position_m + speed_mps * duration_s, false};
  while (out.position_m > length_m) {
    out.position_m -= length_m;
    out.handover = true;
  }
  return out;
}

double estimate_train_time(std::uint64_t samples, double seconds_per_sample,
                           std::uint32_t local_iterations) {
  return static_cast<double>(samples) * seconds_per_sample * static_cast<double>(local_iterations);
}

double estimate_upload_time(std::size_t payload_bytes, double uplink_bps) {
  if (uplink_bps <= 0.0) return kInfiniteDwell;
  return 8.0 * static_cast<double>(payload_bytes) / uplink_bps;
}

Road::Road(std::vector<RsuSegment> segments) : segments_(std::move(segments)) {
  for (const auto& s : segments_) {
    if (!(s.length_m > 0.0)) throw std::invalid_argument("segment length must be positive");
  }
}

const RsuSegment& Road::segment(SegmentId id) const {
  for (const auto& s : segments_) {
    if (s.id == id) return s;
  }
  throw std::out_of_range("unknown segment " + std::to_string(id));
}

void Road::add_vehicle(const VehicleState& v) {
  const auto& seg = segment(v.segment);
  if (v.position_m < 0.0 || v.position_m > seg.length_m) {
    throw std::invalid_argument("vehicle position outside its segment");
  }
  vehicles_[v.id] = v;
}

void Road::remove_vehicle(VehicleId id) { vehicles_.erase(id); }

std::size_t Road::count_in(SegmentId id) const {
  return static_cast<std::size_t>(std::count_if(
      vehicles_.begin(), vehicles_.end(), [id](const auto& kv) { return kv.second.segment == id; }));
}

double Road::density_in(SegmentId id) const { return density(count_in(id), segment(id).length_m); }

void Road::update_speeds(double free_flow_kmh, double max_density_per_km) {
  std::map<SegmentId, double> speed_by_segment;
  for (const auto& s : segments_) {
    speed_by_segment[s.id] =
        kmh_to_mps(speed(density_in(s.id), free_flow_kmh, max_density_per_km));
  }
  for (auto& [id, v] : vehicles_) v.speed_mps = speed_by_segment.at(v.segment);
}

std::vector<VehicleId> Road::advance(double duration_s) {
  std::vector<VehicleId> handed_over;
  for (auto& [id, v] : vehicles_) {
    double pos = v.position_m + v.speed_mps * duration_s;
    SegmentId at = v.segment;
    bool moved = false;
    // Successor segments may have different lengths, so wrap one at a time.
    while (pos > segment(at).length_m) {
      pos -= segment(at).length_m;
      at = segment(at).successor;
      moved = true;
    }
    v.position_m = pos;
    v.segment = at;
    if (moved) handed_over.push_back(id);
  }
  return handed_over;
}

}  // namespace dapr::mobility
