#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <vector>

// Greenshields traffic flow for a single-lane road split into RSU coverage
// segments. Internal speed unit is m/s; km/h appears only at the edges.
namespace dapr::mobility {

using VehicleId = std::uint32_t;
using SegmentId = std::uint32_t;

inline constexpr double kInfiniteDwell = std::numeric_limits<double>::infinity();

inline double kmh_to_mps(double kmh) { return kmh / 3.6; }
inline double mps_to_kmh(double mps) { return mps * 3.6; }

struct RsuSegment {
  SegmentId id = 0;
  double length_m = 1000.0;
  SegmentId successor = 0;
};

struct VehicleState {
  VehicleId id = 0;
  SegmentId segment = 0;
  double position_m = 0.0;  // distance travelled inside the current segment
  double speed_mps = 0.0;
  std::uint64_t data_volume = 0;  // local training samples
  double train_time_s = 0.0;
  double upload_time_s = 0.0;
};

// Vehicles per kilometre for `n_vehicles` spread over `length_m` metres.
double density(std::size_t n_vehicles, double length_m);

// v = v_f (1 - rho / rho_max), clamped at zero past jam density. km/h in, km/h out.
double speed(double density_per_km, double free_flow_kmh, double max_density_per_km);

// Remaining time inside coverage. kInfiniteDwell for a stopped vehicle.
double dwell_time(double length_m, double position_m, double speed_mps);

// A vehicle may join a training round only if it stays long enough to train
// and upload: T_stay > T_train + T_trans (strict).
bool is_stable_client(double stay_s, double train_s, double upload_s);

struct Advance {
  double position_m = 0.0;
  bool handover = false;
};

// L' = L + v T. Past the segment end the vehicle hands over and its position
// wraps onto the successor segment.
Advance advance_position(double position_m, double speed_mps, double duration_s,
                         double length_m);

// T_train = samples * per-sample step cost * local iterations.
double estimate_train_time(std::uint64_t samples, double seconds_per_sample,
                           std::uint32_t local_iterations);

// T_trans = payload bits / uplink rate. Infinite when the rate is zero.
double estimate_upload_time(std::size_t payload_bytes, double uplink_bps);

// Vehicles grouped by segment. Only the simulation loop writes to it.
class Road {
 public:
  Road() = default;
  explicit Road(std::vector<RsuSegment> segments);

  const std::vector<RsuSegment>& segments() const { return segments_; }
  const RsuSegment& segment(SegmentId id) const;

  std::map<VehicleId, VehicleState>& vehicles() { return vehicles_; }
  const std::map<VehicleId, VehicleState>& vehicles() const { return vehicles_; }
  void add_vehicle(const VehicleState& v);
  void remove_vehicle(VehicleId id);

  std::size_t count_in(SegmentId id) const;
  double density_in(SegmentId id) const;

  // Recomputes each vehicle's speed from its segment's density.
  void update_speeds(double free_flow_kmh, double max_density_per_km);

  // Moves every vehicle for `duration_s`; returns the ids that handed over.
  // Training state (data volume, estimates) travels with the vehicle.
  std::vector<VehicleId> advance(double duration_s);

 private:
  std::vector<RsuSegment> segments_;
  std::map<VehicleId, VehicleState> vehicles_;
};

}  // namespace dapr::mobility
