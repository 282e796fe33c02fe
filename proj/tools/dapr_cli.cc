#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dapr/csv.h"
#include "dapr/metrics.h"
#include "dapr/scenario.h"
#include "dapr/simulation.h"

namespace {

using namespace dapr::sim;

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

void print_summary(const std::vector<MetricsRow>& rows) {
  for (const auto& run : metrics_report(rows).runs) {
    const RegionSummary& o = run.overall;
    std::printf("%s: requests %llu hit %.4f delay %.2f ms mean reward %.4f\n", run.run_id.c_str(),
                static_cast<unsigned long long>(o.requests), o.hit_ratio, o.mean_delay_ms, o.mean_reward);
  }
}

struct SimulateArgs {
  std::string config, policy = "dapr", out, curve, predictor;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void simulate(const SimulateArgs& a) {
  ScenarioConfig cfg = load_config(a.config);
  if (!a.predictor.empty()) cfg.predictor_checkpoint = a.predictor;
  const Policy policy = parse_policy(a.policy);
  const std::uint64_t seed = a.seed_set ? a.seed : cfg.seed;
  const EpisodeResult r = run_episode(cfg, policy, seed);
  auto out = open_out(a.out);
  write_metrics_csv(out, r.rows);
  if (!a.curve.empty()) {
    auto curve = open_out(a.curve);
    write_curve_csv(curve, r.curve);
  }
  print_summary(r.rows);
}

struct TrainArgs {
  std::string config, out, losses;
};

void train_predictor_cmd(const TrainArgs& a) {
  const ScenarioConfig cfg = load_config(a.config);
  const auto result = pretrain_predictor(cfg);
  result.params.save(a.out);
  if (!a.losses.empty()) {
    auto f = open_out(a.losses);
    f << "epoch,phase,vae_loss,gru_loss,total_loss\n";
    for (const auto& e : result.history) {
      f << e.epoch << ',' << dapr::predictor::to_string(e.phase) << ','
        << dapr::csv::format_double(e.loss.vae) << ',' << dapr::csv::format_double(e.loss.gru) << ','
        << dapr::csv::format_double(e.loss.total) << '\n';
    }
  }
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::printf("epoch %zu: vae %.6g gru %.6g total %.6g\n", last.epoch, last.loss.vae, last.loss.gru,
                last.loss.total);
  }
}

struct SweepArgs {
  std::string config, param, out, policy = "dapr";
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
};

void sweep(const SweepArgs& a) {
  const Policy policy = parse_policy(a.policy);
  std::vector<ScenarioConfig> configs;
  for (const auto& v : a.values) configs.push_back(load_config_with_override(a.config, a.param, v));
  auto out = open_out(a.out);
  write_metrics_header(out);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::optional<dapr::predictor::PredictorParams> pre;
    EpisodeOptions opts;
    if (uses_predictor(policy)) {
      pre = initial_predictor(configs[i]);
      opts.pretrained = &*pre;
    }
    for (std::uint64_t seed : a.seeds) {
      EpisodeResult r = run_episode(configs[i], policy, seed, opts);
      const std::string prefix = a.param + "=" + a.values[i] + "/";
      for (auto& row : r.rows) {
        row.run_id = prefix + row.run_id;
        write_metrics_row(out, row);
      }
      print_summary(r.rows);
    }
  }
}

struct ReportArgs {
  std::vector<std::string> in;
  std::string out;
};

void report(const ReportArgs& a) {
  std::vector<MetricsRow> rows;
  for (const auto& path : a.in) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    auto part = read_metrics_csv(f);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string json = report_json(metrics_report(rows));
  if (a.out.empty()) {
    std::cout << json;
  } else {
    auto f = open_out(a.out);
    f << json;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vehicular edge caching simulator"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run one episode and write per-slot metrics");
  s->add_option("--config", sim.config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  s->add_option("--policy", sim.policy, "dapr, eps_greedy, random, lfu, lru, no_drl, no_afl, no_gruvae, no_dt");
  s->add_option("--seed", sim.seed, "Run seed (default: the config's seed)")->each([&](const std::string&) {
    sim.seed_set = true;
  });
  s->add_option("--out", sim.out, "Metrics CSV")->required();
  s->add_option("--curve", sim.curve, "Training-curve CSV for learned policies");
  s->add_option("--predictor", sim.predictor, "Predictor checkpoint from train-predictor");

  TrainArgs train;
  auto* t = app.add_subcommand("train-predictor", "Pretrain the popularity predictor");
  t->add_option("--config", train.config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Checkpoint file")->required();
  t->add_option("--losses", train.losses, "Per-epoch loss CSV");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Run one policy over values of a config key and several seeds");
  w->add_option("--config", sw.config, "Base scenario JSON")->required()->check(CLI::ExistingFile);
  w->add_option("--param", sw.param, "Config key to vary")->required();
  w->add_option("--values", sw.values, "Values for the key")->required()->delimiter(',');
  w->add_option("--seeds", sw.seeds, "Run seeds")->required()->delimiter(',');
  w->add_option("--policy", sw.policy, "Policy name");
  w->add_option("--out", sw.out, "Metrics CSV for every run")->required();

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Summarize metrics CSVs as JSON");
  r->add_option("--in", rep.in, "Metrics CSV files")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rep.out, "Summary JSON (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (s->parsed()) simulate(sim);
    if (t->parsed()) train_predictor_cmd(train);
    if (w->parsed()) sweep(sw);
    if (r->parsed()) report(rep);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeExit;
  }
  return 0;
}
