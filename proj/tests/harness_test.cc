#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dapr/baselines.h"
#include "dapr/metrics.h"
#include "dapr/scenario.h"
#include "dapr/simulation.h"
#include "dapr/workload.h"
#include "json.hpp"

namespace dapr::sim {
namespace {

constexpr const char* kTraceHeader = "slot,vehicle_id,content_id,size_bytes,region_id\n";

TEST(Trace, HeaderOnlyIsEmpty) {
  std::istringstream in(kTraceHeader);
  const Trace t = parse_trace(in);
  EXPECT_TRUE(t.events.empty());
  EXPECT_TRUE(t.content_sizes.empty());
}

TEST(Trace, SortsBySlotAndInternsIds) {
  std::istringstream in(std::string(kTraceHeader) +
                        "3,70,500,1000,2\n"
                        "1,70,501,2000,1\n"
                        "1,71,500,1000,1\n"
                        "0,72,502,3000,3\n"
                        "2,70,501,2000,2\n"
                        "0,71,503,4000,1\n"
                        "3,72,500,1000,3\n"
                        "2,73,504,5000,2\n"
                        "1,72,502,3000,3\n"
                        "0,70,501,2000,1\n");
  const Trace t = parse_trace(in);
  const std::vector<RequestEvent> want{
      {0, 1, 1, 3000, 3}, {0, 2, 2, 4000, 1}, {0, 3, 3, 2000, 1}, {1, 3, 3, 2000, 1},
      {1, 2, 4, 1000, 1}, {1, 1, 1, 3000, 3}, {2, 3, 3, 2000, 2}, {2, 4, 5, 5000, 2},
      {3, 3, 4, 1000, 2}, {3, 1, 4, 1000, 3}};
  EXPECT_EQ(t.events, want);
  EXPECT_EQ(t.raw_content_ids, (std::vector<std::uint64_t>{502, 503, 501, 500, 504}));
  EXPECT_EQ(t.raw_vehicle_ids, (std::vector<std::uint64_t>{72, 71, 70, 73}));
  EXPECT_EQ(t.content_sizes, (std::vector<std::uint64_t>{3000, 4000, 2000, 1000, 5000}));
}

TEST(Trace, MalformedRowNamesItsLine) {
  std::istringstream in(std::string(kTraceHeader) + "0,1,1,10,1\n0,1,x,10,1\n");
  try {
    parse_trace(in);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Trace, WrongHeaderThrows) {
  std::istringstream in("slot,vehicle,content\n0,1,1\n");
  EXPECT_THROW(parse_trace(in), std::runtime_error);
}

TEST(Zipf, ProbabilitiesSumToOne) {
  const ZipfSampler z(50, 1.0);
  double sum = 0.0;
  for (std::size_t i = 1; i <= 50; ++i) sum += z.probability(i);
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_NEAR(ZipfSampler(2, 1.0).probability(1), 2.0 / 3.0, 1e-12);
}

std::vector<std::size_t> counts(const std::vector<RequestEvent>& ev, std::size_t n) {
  std::vector<std::size_t> c(n + 1, 0);
  for (const auto& e : ev) ++c.at(e.content_id);
  return c;
}

TEST(Zipf, ExponentZeroIsUniform) {
  const std::size_t n = 10, k = 100000;
  const auto c = counts(synth_zipf(n, 0.0, k, 3), n);
  const double mean = static_cast<double>(k) / n;
  const double sd = std::sqrt(k * 0.1 * 0.9);
  for (std::size_t i = 1; i <= n; ++i) EXPECT_NEAR(static_cast<double>(c[i]), mean, 3.0 * sd) << i;
}

TEST(Zipf, SingleItemCatalog) {
  for (const auto& e : synth_zipf(1, 1.0, 100, 4)) EXPECT_EQ(e.content_id, 1u);
}

TEST(Zipf, TwoItemsRatioTwo) {
  const std::size_t k = 30000;
  const auto c = counts(synth_zipf(2, 1.0, k, 5), 2);
  const double sd = std::sqrt(k * (2.0 / 3.0) * (1.0 / 3.0));
  EXPECT_NEAR(static_cast<double>(c[1]), 2.0 * k / 3.0, 3.0 * sd);
  EXPECT_EQ(c[1] + c[2], k);
}

TEST(Zipf, EventsAreOnePerSlot) {
  const auto ev = synth_zipf(5, 1.0, 20, 6);
  ASSERT_EQ(ev.size(), 20u);
  for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_EQ(ev[i].slot, i);
  EXPECT_EQ(ev, synth_zipf(5, 1.0, 20, 6));
}

TEST(Sizes, LogUniformWithinBounds) {
  std::mt19937_64 rng(7);
  for (auto s : log_uniform_sizes(1000, 1.0, 50.0, rng)) {
    EXPECT_GE(s, 1'000'000u);
    EXPECT_LE(s, 50'000'000u);
  }
}

std::vector<CandidateStats> eps_fixture() {
  return {{1, 50, 1}, {2, 60, 3}, {3, 40, 3}, {4, 10, 0}};
}

TEST(EpsGreedy, ZeroEpsilonAdmitsMostRequestedThatFit) {
  std::mt19937_64 rng(1);
  const auto d = baseline_epsilon_greedy(eps_fixture(), 100, 0.0, rng);
  EXPECT_FALSE(d.explored);
  EXPECT_EQ(d.action, (rl::CacheAction{0, 1, 1, 0}));
}

TEST(EpsGreedy, OneAlwaysExplores) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) EXPECT_TRUE(baseline_epsilon_greedy(eps_fixture(), 100, 1.0, rng).explored);
}

TEST(EpsGreedy, ExplorationRateMatchesEpsilon) {
  std::mt19937_64 rng(3);
  const int n = 10000;
  int explored = 0;
  for (int i = 0; i < n; ++i) explored += baseline_epsilon_greedy(eps_fixture(), 100, 0.1, rng).explored;
  EXPECT_NEAR(explored, 1000.0, 3.0 * std::sqrt(n * 0.1 * 0.9));
}

TEST(EpsGreedy, RejectsBadEpsilon) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(baseline_epsilon_greedy(eps_fixture(), 100, 1.5, rng), std::invalid_argument);
}

TEST(RandomAdmission, BitsAreFair) {
  std::mt19937_64 rng(5);
  const int n = 20000;
  int ones = 0;
  for (int i = 0; i < n; ++i) {
    for (auto b : random_admission(3, rng)) ones += b;
  }
  EXPECT_NEAR(ones, 1.5 * n, 3.0 * std::sqrt(3.0 * n * 0.25));
}

TEST(AdmitRequested, FollowsSlotCounts) {
  EXPECT_EQ(admit_requested(eps_fixture()), (rl::CacheAction{1, 1, 1, 0}));
}

MetricsRow slot_row(std::uint64_t slot, std::uint32_t region, std::uint64_t local, std::uint64_t nb,
                    std::uint64_t bs, double delay_ms, double reward) {
  MetricsRow r;
  r.run_id = "lfu_s1";
  r.policy = "lfu";
  r.seed = 1;
  r.slot = slot;
  r.region = region;
  r.local_hits = local;
  r.neighbor_hits = nb;
  r.bs_fetches = bs;
  r.requests = local + nb + bs;
  r.hit_ratio = r.requests == 0 ? 0.0 : static_cast<double>(local) / static_cast<double>(r.requests);
  r.mean_delay_ms = delay_ms;
  r.reward = reward;
  return r;
}

TEST(Report, HitRatioIsLocalShare) {
  const std::vector<MetricsRow> rows{slot_row(0, 0, 3, 1, 0, 10.0, -1.0), slot_row(1, 0, 0, 0, 0, 0.0, 0.5)};
  const Report rep = metrics_report(rows);
  ASSERT_EQ(rep.runs.size(), 1u);
  EXPECT_DOUBLE_EQ(rep.runs[0].overall.hit_ratio, 0.75);
  EXPECT_DOUBLE_EQ(rep.runs[0].overall.mean_delay_ms, 10.0);
  EXPECT_DOUBLE_EQ(rep.runs[0].overall.mean_reward, -0.25);
}

TEST(Report, AllBaseStationMeansZeroHits) {
  const std::vector<MetricsRow> rows{slot_row(0, 0, 0, 0, 5, 40.0, -3.0)};
  EXPECT_EQ(metrics_report(rows).runs[0].overall.hit_ratio, 0.0);
}

TEST(Report, NoSlotRowsThrows) {
  EXPECT_THROW(metrics_report(std::vector<MetricsRow>{}), std::invalid_argument);
  MetricsRow s = slot_row(2, 0, 1, 0, 0, 1.0, 1.0);
  s.kind = RowKind::kSummary;
  EXPECT_THROW(metrics_report(std::vector<MetricsRow>{s}), std::invalid_argument);
}

TEST(Report, GoldenSummary) {
  std::vector<MetricsRow> rows{slot_row(0, 0, 3, 1, 0, 10.0, -1.0), slot_row(0, 1, 3, 1, 0, 10.0, -1.0),
                               slot_row(1, 0, 0, 0, 0, 0.0, 0.5), slot_row(1, 1, 0, 0, 0, 0.0, 0.5)};
  MetricsRow summary = slot_row(2, 0, 99, 0, 0, 0.0, 7.0);
  summary.kind = RowKind::kSummary;
  rows.push_back(summary);
  const nlohmann::json region = {{"region", 1},         {"slots", 2},           {"requests", 4},
                                 {"local_hits", 3},     {"neighbor_hits", 1},   {"bs_fetches", 0},
                                 {"hit_ratio", 0.75},   {"mean_delay_ms", 10.0}, {"mean_reward", -0.25},
                                 {"cumulative_reward", -0.5}};
  nlohmann::json overall = region;
  overall["region"] = 0;
  const nlohmann::json want = {
      {"runs",
       {{{"run_id", "lfu_s1"}, {"policy", "lfu"}, {"seed", 1}, {"overall", overall}, {"regions", {region}}}}}};
  EXPECT_EQ(nlohmann::json::parse(report_json(metrics_report(rows))), want);
}

TEST(Report, RegionRowsAloneSumToOverall) {
  const std::vector<MetricsRow> rows{slot_row(0, 1, 1, 0, 1, 10.0, -1.0), slot_row(0, 2, 0, 0, 2, 20.0, -2.0)};
  const RegionSummary o = metrics_report(rows).runs[0].overall;
  EXPECT_EQ(o.requests, 4u);
  EXPECT_DOUBLE_EQ(o.hit_ratio, 0.25);
  EXPECT_DOUBLE_EQ(o.mean_delay_ms, 15.0);
  EXPECT_DOUBLE_EQ(o.cumulative_reward, -3.0);
}

TEST(MetricsCsv, RoundTrips) {
  std::vector<MetricsRow> rows{slot_row(0, 0, 3, 1, 0, 10.25, -1.5), slot_row(0, 1, 0, 0, 2, 0.1, 1e-9)};
  rows[1].kind = RowKind::kSummary;
  rows[1].cumulative_reward = -123.456789;
  std::stringstream s;
  write_metrics_csv(s, rows);
  EXPECT_EQ(read_metrics_csv(s), rows);
}

TEST(MetricsCsv, InconsistentCountsNameTheLine) {
  std::stringstream s;
  write_metrics_header(s);
  s << "a,lfu,1,slot,0,0,5,1,1,1,0.2,1,0,0\n";
  try {
    read_metrics_csv(s);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, DefaultsValidate) {
  const ScenarioConfig c = parse_config("{}");
  EXPECT_EQ(c.regions(), 9u);
  EXPECT_EQ(c.round_slots(), 10u);
  EXPECT_EQ(c.capacity_bytes(), 200'000'000u);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_config(R"({"slotz": 10})"), ConfigError);
}

TEST(Config, OutOfRangeRejected) {
  EXPECT_THROW(parse_config(R"({"slots": 0})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"epsilon": 2})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"round_s": 2.5})"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
}

TEST(Config, ValuesAreRead) {
  const ScenarioConfig c =
      parse_config(R"({"seed": 9, "cache_capacity": 50, "sac_hidden": [16], "predictor_cell": "rnn"})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.capacity_bytes(), 50'000'000u);
  EXPECT_EQ(c.sac_hidden, (std::vector<std::size_t>{16}));
  EXPECT_EQ(c.predictor_cell, predictor::RecurrentCell::kRnn);
}

TEST(Policy, NamesRoundTrip) {
  for (Policy p : all_policies()) EXPECT_EQ(parse_policy(to_string(p)), p);
  EXPECT_THROW(parse_policy("optimal"), ConfigError);
}

ScenarioConfig small(std::size_t slots) {
  ScenarioConfig c;
  c.slots = slots;
  c.grid_rows = 2;
  c.grid_cols = 2;
  c.catalog_size = 20;
  return c;
}

TEST(Episode, NoVehiclesMeansNoTraffic) {
  ScenarioConfig c = small(30);
  c.vehicles_per_region = 0.0;
  const EpisodeResult r = run_episode(c, Policy::kLfu, 1);
  ASSERT_FALSE(r.rows.empty());
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.requests, 0u);
    EXPECT_EQ(row.hit_ratio, 0.0);
    EXPECT_EQ(row.reward, 0.0);
  }
}

TEST(Episode, RowsAreConsistent) {
  const EpisodeResult r = run_episode(small(40), Policy::kEpsGreedy, 2);
  const std::size_t regions = 4;
  ASSERT_EQ(r.rows.size(), 40 * (regions + 1) + regions + 1);
  for (std::size_t t = 0; t < 40; ++t) {
    std::uint64_t sum = 0;
    for (std::size_t g = 1; g <= regions; ++g) sum += r.rows[t * (regions + 1) + g].requests;
    EXPECT_EQ(r.rows[t * (regions + 1)].requests, sum) << t;
  }
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.local_hits + row.neighbor_hits + row.bs_fetches, row.requests);
    EXPECT_GE(row.hit_ratio, 0.0);
    EXPECT_LE(row.hit_ratio, 1.0);
  }
  EXPECT_EQ(r.rows.back().kind, RowKind::kSummary);
}

TEST(Episode, LfuWithRoomForTheCatalogReachesFullHits) {
  ScenarioConfig c = small(200);
  c.cache_capacity = 20 * c.max_content_mb;
  const EpisodeResult r = run_episode(c, Policy::kLfu, 3);
  std::uint64_t req = 0, local = 0;
  for (const auto& row : r.rows) {
    if (row.kind == RowKind::kSlot && row.region == 0 && row.slot >= 150) {
      req += row.requests;
      local += row.local_hits;
    }
  }
  ASSERT_GT(req, 100u);
  EXPECT_EQ(local, req);
}

TEST(Episode, SameSeedSameRows) {
  const ScenarioConfig c = small(30);
  EXPECT_EQ(run_episode(c, Policy::kRandom, 4).rows, run_episode(c, Policy::kRandom, 4).rows);
  EXPECT_NE(run_episode(c, Policy::kRandom, 4).rows, run_episode(c, Policy::kRandom, 5).rows);
}

TEST(Episode, PoliciesShareTheWorkload) {
  const ScenarioConfig c = small(30);
  const auto a = run_episode(c, Policy::kLfu, 6).rows;
  const auto b = run_episode(c, Policy::kRandom, 6).rows;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].requests, b[i].requests) << i;
}

TEST(Episode, LearnedPolicyIsDeterministic) {
  ScenarioConfig c = small(25);
  c.pretrain_rounds = 8;
  c.pretrain_vae_epochs = 1;
  c.pretrain_gru_epochs = 1;
  c.pretrain_joint_epochs = 1;
  c.sac_hidden = {8};
  c.batch_size = 8;
  const EpisodeResult a = run_episode(c, Policy::kDapr, 7);
  const EpisodeResult b = run_episode(c, Policy::kDapr, 7);
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.final_digest, b.final_digest);
  ASSERT_TRUE(a.agent.has_value());
  ASSERT_EQ(a.curve.size(), 25u);
  EXPECT_TRUE(a.curve.back().trained);
}

TEST(Episode, GreedyEvaluationPausesLearning) {
  ScenarioConfig c = small(25);
  c.pretrain_rounds = 8;
  c.pretrain_vae_epochs = 1;
  c.pretrain_gru_epochs = 1;
  c.pretrain_joint_epochs = 1;
  c.sac_hidden = {8};
  c.batch_size = 8;
  c.warmup_episodes = 1;
  const EpisodeResult trained = run_episode(c, Policy::kDapr, 3);
  c.warmup_episodes = 0;
  c.greedy_eval = true;
  EpisodeOptions o;
  o.agent = &*trained.agent;
  const EpisodeResult frozen = run_episode(c, Policy::kDapr, 4, o);
  ASSERT_EQ(frozen.curve.size(), 25u);
  for (const auto& p : frozen.curve) EXPECT_FALSE(p.trained);
  EXPECT_EQ(frozen.agent->nets().policy.serialize(), trained.agent->nets().policy.serialize());
  EXPECT_EQ(frozen.agent->buffer().size(), trained.agent->buffer().size());
  EXPECT_EQ(run_episode(c, Policy::kDapr, 4, o).rows, frozen.rows);
}

TEST(Episode, StartingAgentMustMatchTheScenario) {
  rl::SacConfig sc;
  sc.state_dim = 3;
  sc.action_dim = 2;
  const rl::SacAgent agent(sc, 1);
  EpisodeOptions o;
  o.agent = &agent;
  ScenarioConfig c = small(5);
  c.pretrain_rounds = 8;
  c.pretrain_vae_epochs = 1;
  c.pretrain_gru_epochs = 1;
  c.pretrain_joint_epochs = 1;
  EXPECT_THROW(run_episode(c, Policy::kDapr, 1, o), ConfigError);
}

}  // namespace
}  // namespace dapr::sim
