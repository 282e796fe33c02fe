#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dapr/mobility.h"
#include "dapr/twin.h"

namespace dapr::twin {
namespace {

TwinConfig config() {
  TwinConfig c;
  c.segment_length_m = {{1, 1000.0}, {2, 1000.0}};
  return c;
}

mobility::VehicleState vehicle(VehicleId id, mobility::SegmentId seg, double pos, double speed) {
  mobility::VehicleState v;
  v.id = id;
  v.segment = seg;
  v.position_m = pos;
  v.speed_mps = speed;
  return v;
}

Observation fixture(std::uint64_t slot) {
  Observation o;
  o.slot = slot;
  auto v2 = vehicle(2, 1, 250.5, 12.5);
  v2.data_volume = 40;
  v2.train_time_s = 3.0;
  v2.upload_time_s = 0.25;
  o.vehicles = {v2, vehicle(1, 2, 0.0, 0.0)};
  cache::CacheState c1(100);
  c1.insert({3, 4, 30});
  c1.insert({7, 2, 50});
  o.rsu_caches = {{1, c1}, {2, cache::CacheState(50)}};
  o.link_rate_bps = {{1, 1.866e7}, {2, 1.5e7}};
  o.requests = {{1, 3, 2}, {2, 5, 1}, {1, 3, 1}};
  return o;
}

Observation requests_only(std::uint64_t slot, std::vector<RegionRequests> r) {
  Observation o;
  o.slot = slot;
  o.requests = std::move(r);
  return o;
}

TEST(Snapshot, GoldenDigest) {
  // FNV-1a 64 of the canonical encoding, computed independently of this code.
  EXPECT_EQ(TwinSnapshot(fixture(7)).digest(), 0x4b13f0a231b1fb46ULL);
}

TEST(Snapshot, DigestStableAcrossReplays) {
  DigitalTwin a(config()), b(config());
  for (std::uint64_t s = 1; s <= 5; ++s) {
    EXPECT_EQ(a.sync_state(fixture(s))->digest(), b.sync_state(fixture(s))->digest());
  }
}

TEST(Snapshot, IdenticalStateDiffersOnlyInSlot) {
  DigitalTwin t(config());
  auto s1 = t.sync_state(fixture(1));
  auto s2 = t.sync_state(fixture(2));
  EXPECT_TRUE(s1->same_state(*s2));
  EXPECT_NE(s1->slot(), s2->slot());
  EXPECT_NE(s1->digest(), s2->digest());
}

TEST(Snapshot, DepartedVehicleIsAbsent) {
  DigitalTwin t(config());
  auto obs = fixture(1);
  t.sync_state(obs);
  obs.slot = 2;
  obs.vehicles.pop_back();
  auto s = t.sync_state(obs);
  EXPECT_EQ(s->vehicle(1), nullptr);
  EXPECT_NE(s->vehicle(2), nullptr);
}

TEST(Snapshot, PublishedSnapshotsAreImmutable) {
  DigitalTwin t(config());
  Observation obs = fixture(1);
  auto snap = t.sync_state(obs);
  const std::uint64_t before = snap->digest();
  obs.vehicles[0].position_m = 999.0;
  obs.rsu_caches.at(1).clear();
  obs.requests.clear();
  EXPECT_EQ(snap->digest(), before);
  EXPECT_EQ(snap->vehicle(2)->position_m, 250.5);
}

TEST(Snapshot, RejectsOutOfOrderSlots) {
  DigitalTwin t(config());
  t.sync_state(fixture(5));
  EXPECT_THROW(t.sync_state(fixture(5)), std::invalid_argument);
  EXPECT_THROW(t.sync_state(fixture(4)), std::invalid_argument);
}

TEST(Snapshot, RejectsDuplicateVehicles) {
  auto obs = fixture(1);
  obs.vehicles.push_back(obs.vehicles.front());
  EXPECT_THROW(TwinSnapshot{obs}, std::invalid_argument);
}

TEST(Snapshot, HistoryIsBounded) {
  DigitalTwin t(config());
  for (std::uint64_t s = 1; s <= 130; ++s) t.sync_state(requests_only(s, {}));
  ASSERT_EQ(t.history().size(), 100u);
  EXPECT_EQ(t.history().front()->slot(), 31u);
}

TEST(Heatmap, ZeroDecayIsWindowedCount) {
  DigitalTwin t(config());
  t.sync_state(requests_only(1, {{1, 4, 5}}));
  t.sync_state(requests_only(2, {{1, 4, 2}, {2, 9, 1}}));
  t.sync_state(requests_only(3, {{1, 4, 1}}));
  auto cells = t.heatmap(2, 0.0);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].region, 1u);
  EXPECT_EQ(cells[0].count, 3u);
  EXPECT_EQ(cells[0].decay_score, 3.0);
  EXPECT_EQ(cells[1].region, 2u);
  EXPECT_EQ(cells[1].content, 9u);
  EXPECT_EQ(cells[1].decay_score, 1.0);
}

TEST(Heatmap, SingleFreshRequestScoresOne) {
  DigitalTwin t(config());
  t.sync_state(requests_only(1, {{3, 2, 1}}));
  auto cells = t.heatmap(10, 0.7);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].decay_score, 1.0);
}

TEST(Heatmap, HalvingDecayOverTwoSlots) {
  DigitalTwin t(config());
  t.sync_state(requests_only(1, {{1, 1, 1}}));
  t.sync_state(requests_only(2, {{1, 1, 1}}));
  auto cells = t.heatmap(5, std::log(2.0));
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_NEAR(cells[0].decay_score, 1.5, 1e-15);
}

TEST(Heatmap, ScoreNonincreasingInAge) {
  for (double decay : {0.1, 0.5, 2.0}) {
    double prev = INFINITY;
    for (std::uint64_t age = 0; age < 8; ++age) {
      DigitalTwin t(config());
      t.sync_state(requests_only(1, {{1, 1, 3}}));
      if (age > 0) t.sync_state(requests_only(1 + age, {}));
      auto cells = t.heatmap(20, decay);
      ASSERT_EQ(cells.size(), 1u);
      EXPECT_LE(cells[0].decay_score, prev);
      prev = cells[0].decay_score;
    }
  }
}

TEST(Heatmap, RejectsBadArguments) {
  DigitalTwin t(config());
  EXPECT_THROW(t.heatmap(0, 0.1), std::invalid_argument);
  EXPECT_THROW(t.heatmap(3, -0.1), std::invalid_argument);
  EXPECT_TRUE(t.heatmap(3, 0.1).empty());
}

TEST(Heatmap, CsvExport) {
  std::vector<HeatmapCell> cells{{1, 4, 3, 1.5}, {2, 9, 1, 0.25}};
  std::ostringstream out;
  write_heatmap_csv(out, 12, cells);
  EXPECT_EQ(out.str(), "slot,region,content,count,decay_score\n12,1,4,3,1.5\n12,2,9,1,0.25\n");
}

TEST(Dwell, PassesThroughMobilityExactly) {
  DigitalTwin t(config());
  Observation o;
  o.slot = 1;
  auto v = vehicle(5, 1, 280.0, 10.0);
  v.train_time_s = 4.0;
  v.upload_time_s = 0.5;
  o.vehicles = {v, vehicle(6, 2, 1000.0, 8.0), vehicle(7, 2, 10.0, 0.0)};
  for (double pos : {0.0, 123.25, 999.0}) o.vehicles.push_back(vehicle(10 + static_cast<VehicleId>(pos), 1, pos, 7.3));
  t.sync_state(o);
  const auto d = t.predicted_dwell(5);
  EXPECT_EQ(d.stay_s, 72.0);
  EXPECT_EQ(d.train_s, 4.0);
  EXPECT_EQ(d.upload_s, 0.5);
  EXPECT_EQ(t.predicted_dwell(6).stay_s, 0.0);
  EXPECT_EQ(t.predicted_dwell(7).stay_s, mobility::kInfiniteDwell);
  for (const auto& veh : o.vehicles) {
    EXPECT_EQ(t.predicted_dwell(veh.id).stay_s,
              mobility::dwell_time(1000.0, veh.position_m, veh.speed_mps));
  }
  EXPECT_THROW(t.predicted_dwell(99), std::out_of_range);
}

TEST(Commands, EmptyDirectiveSetChangesNothing) {
  DigitalTwin t(config());
  auto obs = fixture(1);
  t.sync_state(obs);
  EXPECT_EQ(t.emit_commands({}), 0u);
  auto rsus = obs.rsu_caches;
  std::map<VehicleId, cache::CacheState> vehicles;
  EXPECT_EQ(t.apply_due(2, rsus, vehicles), 0u);
  EXPECT_EQ(rsus, obs.rsu_caches);
}

TEST(Commands, RsuDirectiveLandsOneSlotLater) {
  DigitalTwin t(config());
  auto obs = fixture(1);
  t.sync_state(obs);
  auto rsus = obs.rsu_caches;
  std::map<VehicleId, cache::CacheState> vehicles;
  cache::CacheState want(50);
  want.insert({9, 0, 20});
  Directive d{NodeKind::kRsu, 2, want};
  ASSERT_EQ(t.emit_commands(std::span<const Directive>(&d, 1)), 1u);
  EXPECT_EQ(t.apply_due(1, rsus, vehicles), 0u);
  EXPECT_FALSE(rsus.at(2).contains(9));
  EXPECT_EQ(t.apply_due(2, rsus, vehicles), 1u);
  EXPECT_TRUE(rsus.at(2).contains(9));
  EXPECT_EQ(t.pending(), 0u);
}

TEST(Commands, ZeroDelayAppliesInTheSameSlot) {
  TwinConfig c = config();
  c.zero_delay = true;
  DigitalTwin t(c);
  auto obs = fixture(1);
  t.sync_state(obs);
  auto rsus = obs.rsu_caches;
  std::map<VehicleId, cache::CacheState> vehicles;
  cache::CacheState want(50);
  want.insert({9, 0, 20});
  Directive d{NodeKind::kRsu, 2, want};
  t.emit_commands(std::span<const Directive>(&d, 1));
  EXPECT_EQ(t.apply_due(1, rsus, vehicles), 1u);
  EXPECT_TRUE(rsus.at(2).contains(9));
}

TEST(Commands, RetainedItemsKeepLiveAccessCounts) {
  DigitalTwin t(config());
  auto obs = fixture(1);
  t.sync_state(obs);
  auto rsus = obs.rsu_caches;
  std::map<VehicleId, cache::CacheState> vehicles;
  cache::CacheState want(100);
  want.insert({3, 0, 30});
  want.insert({8, 0, 10});
  Directive d{NodeKind::kRsu, 1, want};
  t.emit_commands(std::span<const Directive>(&d, 1));
  rsus.at(1).touch(3);
  t.apply_due(2, rsus, vehicles);
  EXPECT_EQ(rsus.at(1).find(3)->access_count, 5u);
  EXPECT_EQ(rsus.at(1).find(8)->access_count, 0u);
  EXPECT_FALSE(rsus.at(1).contains(7));
}

TEST(Commands, StaleAndDepartedTargetsAreDroppedAndLogged) {
  DigitalTwin t(config());
  auto obs = fixture(1);
  t.sync_state(obs);
  std::vector<Directive> ds{{NodeKind::kVehicle, 42, cache::CacheState(10)},
                            {NodeKind::kRsu, 77, cache::CacheState(10)},
                            {NodeKind::kVehicle, 2, cache::CacheState(10)}};
  EXPECT_EQ(t.emit_commands(ds), 1u);
  EXPECT_EQ(t.log().size(), 2u);
  std::map<RsuId, cache::CacheState> rsus;
  std::map<VehicleId, cache::CacheState> vehicles;  // vehicle 2 left before actuation
  EXPECT_EQ(t.apply_due(2, rsus, vehicles), 0u);
  ASSERT_EQ(t.log().size(), 3u);
  EXPECT_NE(t.log().back().find("vehicle 2"), std::string::npos);
}

}  // namespace
}  // namespace dapr::twin
