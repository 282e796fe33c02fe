#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dapr/afl.h"
#include "json.hpp"
#include "test_util.h"

namespace dapr::afl {
namespace {

nn::ParamVector scalar_params(std::vector<double> v) {
  nn::ParamVector p;
  p.add_segment("w", {v.size()});
  std::copy(v.begin(), v.end(), p.values().begin());
  return p;
}

// f(w) = 0.5 * sum (w_i - target_i)^2
LocalObjective quadratic(std::vector<double> target) {
  return [target](nn::ParamVector& p) {
    auto v = p.values();
    auto g = p.grads();
    double loss = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      g[i] = v[i] - target[i];
      loss += 0.5 * g[i] * g[i];
    }
    return loss;
  };
}

ClientRecord client(mobility::VehicleId id, std::uint64_t n, double pos, double dwell,
                    double train, double upload) {
  ClientRecord c;
  c.id = id;
  c.data_volume = n;
  c.position_m = pos;
  c.dwell_s = dwell;
  c.train_time_s = train;
  c.upload_time_s = upload;
  return c;
}

TEST(SelectClients, JammedVehiclesAreAllSelected) {
  std::vector<ClientRecord> fleet{client(3, 1, 0, mobility::kInfiniteDwell, 100, 100),
                                  client(1, 1, 0, mobility::kInfiniteDwell, 5, 5)};
  auto s = select_clients(fleet);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].id, 1u);
  EXPECT_EQ(s[1].id, 3u);
}

TEST(SelectClients, BoundaryVehicleExcluded) {
  const double dwell = mobility::dwell_time(1000, 1000, 8.0);
  std::vector<ClientRecord> fleet{client(1, 1, 1000, dwell, 0.0, 0.0)};
  EXPECT_TRUE(select_clients(fleet).empty());
}

TEST(SelectClients, MixedFleetKeepsOnlyLongDwell) {
  const double long_dwell = mobility::dwell_time(1000, 400, mobility::kmh_to_mps(30));
  std::vector<ClientRecord> fleet{client(1, 1, 400, long_dwell, 30, 10),
                                  client(2, 1, 400, 40.0, 30, 10)};
  auto s = select_clients(fleet);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].id, 1u);
}

TEST(LocalUpdate, SingleStepWithoutProximalTermIsPlainSgd) {
  AflConfig cfg;
  cfg.kappa = 0.0;
  cfg.local_iters = 1;
  cfg.eta = 0.1;
  auto w = scalar_params({1.0, -2.0});
  auto r = local_update(w, client(1, 1, 0, 0, 0, 0), quadratic({3.0, 0.0}), cfg);
  // grad = (w - target) = (-2, -2); w - 0.1 * grad = (1.2, -1.8)
  EXPECT_NEAR(r.params.values()[0], 1.2, 1e-15);
  EXPECT_NEAR(r.params.values()[1], -1.8, 1e-15);
  EXPECT_DOUBLE_EQ(r.mean_loss, 4.0);
}

TEST(LocalUpdate, ProximalTermMatchesHandComputation) {
  AflConfig cfg;
  cfg.kappa = 0.5;
  cfg.local_iters = 2;
  cfg.eta = 0.1;
  auto w = scalar_params({0.0});
  auto r = local_update(w, client(1, 1, 0, 0, 0, 0), quadratic({1.0}), cfg);
  // step 1: g = -1, prox 0 -> 0.1; step 2: g = -0.9, prox 0.05 -> 0.1 - 0.1 * (-0.85) = 0.185
  EXPECT_NEAR(r.params.values()[0], 0.185, 1e-15);
}

TEST(LocalUpdate, FixedPointStaysPut) {
  AflConfig cfg;
  auto w = scalar_params({2.0, 5.0});
  auto r = local_update(w, client(1, 1, 0, 0, 0, 0), quadratic({2.0, 5.0}), cfg);
  EXPECT_EQ(r.params.values()[0], 2.0);
  EXPECT_EQ(r.params.values()[1], 5.0);
}

TEST(LocalUpdate, RejectsEmptyLocalData) {
  AflConfig cfg;
  auto w = scalar_params({0.0});
  EXPECT_THROW(local_update(w, client(1, 0, 0, 0, 0, 0), quadratic({1.0}), cfg),
               std::invalid_argument);
}

TEST(LocalUpdate, LargeKappaLimitsDrift) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto target = testing::random_vector(rng, 6, -5, 5);
    auto w = scalar_params(testing::random_vector(rng, 6));
    AflConfig loose, tight;
    loose.kappa = 0.0;
    tight.kappa = 1e6;
    loose.local_iters = tight.local_iters = 10;
    loose.eta = tight.eta = 1e-7;  // keeps eta * kappa < 1
    auto a = local_update(w, client(1, 1, 0, 0, 0, 0), quadratic(target), loose);
    auto b = local_update(w, client(1, 1, 0, 0, 0, 0), quadratic(target), tight);
    EXPECT_LT(nn::l2_distance(b.params, w), nn::l2_distance(a.params, w));
  }
}

TEST(AggregationWeight, Examples) {
  EXPECT_DOUBLE_EQ(aggregation_weight(10, 10, 1000, 1000, 0.7, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(aggregation_weight(0, 10, 0, 1000, 0.7, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(aggregation_weight(4, 10, 600, 1000, 0.5, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(aggregation_weight(4, 10, 600, 1000, 0.5, 0.5, LocationWeightMode::kRemaining),
                   0.4);
  EXPECT_THROW(aggregation_weight(0, 0, 0, 1000, 0.5, 0.5), std::invalid_argument);
}

TEST(AggregationWeight, InUnitIntervalAndMonotone) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100000; ++i) {
    const double sum = 1.0 + 1000.0 * u(rng);
    const double n = sum * u(rng);
    const double pos = 1000.0 * u(rng);
    const double a1 = u(rng);
    const double rho = aggregation_weight(n, sum, pos, 1000, a1, 1.0 - a1);
    ASSERT_GE(rho, 0.0);
    ASSERT_LE(rho, 1.0);
    EXPECT_GE(aggregation_weight(std::min(sum, n + 1), sum, pos, 1000, a1, 1 - a1), rho);
    EXPECT_GE(aggregation_weight(n, sum, std::min(1000.0, pos + 1), 1000, a1, 1 - a1), rho);
  }
}

TEST(AsyncAggregate, Examples) {
  auto g = scalar_params({4.0});
  auto c = scalar_params({8.0});
  EXPECT_EQ(async_aggregate(g, c, 0.0).values()[0], 4.0);
  EXPECT_EQ(async_aggregate(g, c, 1.0).values()[0], 8.0);
  EXPECT_EQ(async_aggregate(g, c, 0.25).values()[0], 5.0);
  EXPECT_EQ(async_aggregate(g, c, 0.25, AggregationMode::kLiteral).values()[0], 6.0);
  nn::ParamVector other;
  other.add_segment("v", {1});
  EXPECT_THROW(async_aggregate(g, other, 0.5), std::invalid_argument);
}

TEST(AsyncAggregate, ConvexModeContractsTowardClient) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    auto g = scalar_params(testing::random_vector(rng, 5));
    auto c = scalar_params(testing::random_vector(rng, 5));
    const double rho = u(rng);
    auto out = async_aggregate(g, c, rho);
    EXPECT_NEAR(nn::l2_distance(out, c), (1 - rho) * nn::l2_distance(g, c), 1e-12);
  }
}

TEST(RunRound, NoStableClientsKeepsGlobal) {
  AflConfig cfg;
  auto g = scalar_params({1.0, 2.0});
  std::vector<Participant> ps{{client(1, 5, 100, 1.0, 10, 10), quadratic({0, 0})}};
  auto r = run_round(g, ps, cfg, 3);
  EXPECT_EQ(r.params.values()[0], 1.0);
  EXPECT_TRUE(r.log.client_ids.empty());
  EXPECT_EQ(r.log.round, 3u);
}

TEST(RunRound, OneClientIsOneAggregateOfItsUpdate) {
  AflConfig cfg;
  cfg.eta = 0.05;
  auto g = scalar_params({1.0, 2.0});
  Participant p{client(1, 5, 300, 100.0, 10, 10), quadratic({-1, 4})};
  auto r = run_round(g, std::vector{p}, cfg, 0);
  auto local = local_update(g, p.record, p.objective, cfg);
  const double rho = aggregation_weight(5, 5, 300, 1000, cfg.alpha1, cfg.alpha2);
  auto expected = async_aggregate(g, local.params, rho);
  EXPECT_EQ(r.params.serialize(), expected.serialize());
  ASSERT_EQ(r.log.rho_values.size(), 1u);
  EXPECT_DOUBLE_EQ(r.log.rho_values[0], rho);
}

TEST(RunRound, FoldsInCompletionOrderAndOrderMatters) {
  AflConfig cfg;
  cfg.eta = 0.1;
  auto g = scalar_params({0.0, 0.0});
  Participant a{client(7, 3, 200, 500, 1.0, 1.0), quadratic({2, 0})};
  Participant b{client(2, 9, 800, 500, 4.0, 1.0), quadratic({0, 3})};
  auto r = run_round(g, std::vector{b, a}, cfg, 1);
  ASSERT_EQ(r.log.client_ids, (std::vector<mobility::VehicleId>{7, 2}));

  auto la = local_update(g, a.record, a.objective, cfg);
  auto lb = local_update(g, b.record, b.objective, cfg);
  const double ra = aggregation_weight(3, 12, 200, 1000, cfg.alpha1, cfg.alpha2);
  const double rb = aggregation_weight(9, 12, 800, 1000, cfg.alpha1, cfg.alpha2);
  auto expected = async_aggregate(async_aggregate(g, la.params, ra), lb.params, rb);
  EXPECT_EQ(r.params.serialize(), expected.serialize());

  auto swapped = async_aggregate(async_aggregate(g, lb.params, rb), la.params, ra);
  EXPECT_GT(nn::l2_distance(swapped, expected), 1e-6);
  EXPECT_DOUBLE_EQ(r.log.wall_ms, 5000.0);
}

TEST(RunRound, TiesBrokenById) {
  AflConfig cfg;
  auto g = scalar_params({0.0});
  Participant a{client(9, 1, 0, 500, 1.0, 1.0), quadratic({1})};
  Participant b{client(4, 1, 0, 500, 1.5, 0.5), quadratic({1})};
  auto r = run_round(g, std::vector{a, b}, cfg, 0);
  EXPECT_EQ(r.log.client_ids, (std::vector<mobility::VehicleId>{4, 9}));
}

TEST(RunRound, SynchronousModeAveragesEqually) {
  AflConfig cfg;
  cfg.eta = 0.1;
  auto g = scalar_params({0.0});
  Participant a{client(1, 1, 0, 500, 1.0, 1.0), quadratic({2})};
  Participant b{client(2, 100, 900, 500, 2.0, 1.0), quadratic({-4})};
  auto r = run_round(g, std::vector{a, b}, cfg, 0, true);
  auto la = local_update(g, a.record, a.objective, cfg);
  auto lb = local_update(g, b.record, b.objective, cfg);
  EXPECT_DOUBLE_EQ(r.params.values()[0], 0.5 * (la.params.values()[0] + lb.params.values()[0]));
}

TEST(RunRound, ReplayReproducesLog) {
  AflConfig cfg;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Participant> ps;
  for (mobility::VehicleId id = 0; id < 20; ++id) {
    ps.push_back({client(id, 1 + id % 4, 1000 * u(rng), 100 * u(rng), 10 * u(rng), 10 * u(rng)),
                  quadratic({u(rng)})});
  }
  auto g = scalar_params({0.3});
  auto a = run_round(g, ps, cfg, 5);
  auto b = run_round(g, ps, cfg, 5);
  EXPECT_EQ(a.log.to_json(), b.log.to_json());
  double prev = -1;
  for (auto id : a.log.client_ids) {
    const double t = ps[id].record.completion_time();
    EXPECT_GE(t, prev);
    prev = t;
    EXPECT_GT(ps[id].record.dwell_s, t);
  }
  auto j = nlohmann::json::parse(a.log.to_json());
  for (const char* k : {"round", "client_ids", "rho_values", "mean_local_loss", "wall_ms"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
}

TEST(AflConfig, Validation) {
  AflConfig c;
  c.alpha1 = 0.6;
  c.alpha2 = 0.6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AflConfig{};
  c.eta = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = AflConfig{};
  c.kappa = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace dapr::afl
