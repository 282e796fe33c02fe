#include "dapr/metrics.h"

#include <charconv>
#include <map>
#include <stdexcept>

#include "dapr/csv.h"
#include "json.hpp"

namespace dapr::sim {

namespace {

constexpr const char* kHeader =
    "run_id,policy,seed,kind,slot,region,requests,local_hits,neighbor_hits,bs_fetches,hit_ratio,"
    "mean_delay_ms,reward,cumulative_reward";

[[noreturn]] void bad(std::size_t line, const std::string& what) {
  throw std::runtime_error("metrics line " + std::to_string(line) + ": " + what);
}

template <typename T>
T parse_field(const std::string& s, std::size_t line, const char* name) {
  T v{};
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || p != end) bad(line, std::string("bad ") + name + " '" + s + "'");
  return v;
}

struct Acc {
  std::uint64_t slots = 0, requests = 0, local = 0, neighbor = 0, bs = 0;
  double delay_ms_total = 0.0, reward = 0.0;

  void add(const MetricsRow& r) {
    ++slots;
    requests += r.requests;
    local += r.local_hits;
    neighbor += r.neighbor_hits;
    bs += r.bs_fetches;
    delay_ms_total += r.mean_delay_ms * static_cast<double>(r.requests);
    reward += r.reward;
  }

  RegionSummary summary(std::uint32_t region) const {
    RegionSummary s;
    s.region = region;
    s.slots = slots;
    s.requests = requests;
    s.local_hits = local;
    s.neighbor_hits = neighbor;
    s.bs_fetches = bs;
    s.hit_ratio = requests == 0 ? 0.0 : static_cast<double>(local) / static_cast<double>(requests);
    s.mean_delay_ms = requests == 0 ? 0.0 : delay_ms_total / static_cast<double>(requests);
    s.mean_reward = slots == 0 ? 0.0 : reward / static_cast<double>(slots);
    s.cumulative_reward = reward;
    return s;
  }
};

nlohmann::json to_json(const RegionSummary& s) {
  return {{"region", s.region},
          {"slots", s.slots},
          {"requests", s.requests},
          {"local_hits", s.local_hits},
          {"neighbor_hits", s.neighbor_hits},
          {"bs_fetches", s.bs_fetches},
          {"hit_ratio", s.hit_ratio},
          {"mean_delay_ms", s.mean_delay_ms},
          {"mean_reward", s.mean_reward},
          {"cumulative_reward", s.cumulative_reward}};
}

}  // namespace

const char* to_string(RowKind kind) { return kind == RowKind::kSlot ? "slot" : "summary"; }

void write_metrics_header(std::ostream& out) { out << kHeader << '\n'; }

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.run_id << ',' << r.policy << ',' << r.seed << ',' << to_string(r.kind) << ',' << r.slot
      << ',' << r.region << ',' << r.requests << ',' << r.local_hits << ',' << r.neighbor_hits << ','
      << r.bs_fetches << ',' << csv::format_double(r.hit_ratio) << ','
      << csv::format_double(r.mean_delay_ms) << ',' << csv::format_double(r.reward) << ','
      << csv::format_double(r.cumulative_reward) << '\n';
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows) {
  write_metrics_header(out);
  for (const auto& r : rows) write_metrics_row(out, r);
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) bad(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) bad(1, std::string("expected header ") + kHeader);
  std::vector<MetricsRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 14) bad(n, "expected 14 fields, got " + std::to_string(f.size()));
    MetricsRow r;
    r.run_id = f[0];
    r.policy = f[1];
    r.seed = parse_field<std::uint64_t>(f[2], n, "seed");
    if (f[3] == "slot") {
      r.kind = RowKind::kSlot;
    } else if (f[3] == "summary") {
      r.kind = RowKind::kSummary;
    } else {
      bad(n, "bad kind '" + f[3] + "'");
    }
    r.slot = parse_field<std::uint64_t>(f[4], n, "slot");
    r.region = parse_field<std::uint32_t>(f[5], n, "region");
    r.requests = parse_field<std::uint64_t>(f[6], n, "requests");
    r.local_hits = parse_field<std::uint64_t>(f[7], n, "local_hits");
    r.neighbor_hits = parse_field<std::uint64_t>(f[8], n, "neighbor_hits");
    r.bs_fetches = parse_field<std::uint64_t>(f[9], n, "bs_fetches");
    r.hit_ratio = parse_field<double>(f[10], n, "hit_ratio");
    r.mean_delay_ms = parse_field<double>(f[11], n, "mean_delay_ms");
    r.reward = parse_field<double>(f[12], n, "reward");
    r.cumulative_reward = parse_field<double>(f[13], n, "cumulative_reward");
    if (r.local_hits + r.neighbor_hits + r.bs_fetches != r.requests) {
      bad(n, "path counts do not add up to requests");
    }
    if (!(r.hit_ratio >= 0.0 && r.hit_ratio <= 1.0)) bad(n, "hit_ratio outside [0, 1]");
    if (!(r.mean_delay_ms >= 0.0)) bad(n, "negative mean_delay_ms");
    rows.push_back(std::move(r));
  }
  return rows;
}

Report metrics_report(std::span<const MetricsRow> rows) {
  struct RunAcc {
    std::string policy;
    std::uint64_t seed = 0;
    Acc overall;
    std::map<std::uint32_t, Acc> regions;
  };
  std::vector<std::string> order;
  std::map<std::string, RunAcc> runs;
  for (const auto& r : rows) {
    if (r.kind != RowKind::kSlot) continue;
    auto [it, fresh] = runs.try_emplace(r.run_id);
    if (fresh) {
      order.push_back(r.run_id);
      it->second.policy = r.policy;
      it->second.seed = r.seed;
    }
    if (r.region == 0) {
      it->second.overall.add(r);
    } else {
      it->second.regions[r.region].add(r);
    }
  }
  if (order.empty()) throw std::invalid_argument("metrics_report: no slot rows");
  Report report;
  for (const auto& id : order) {
    const RunAcc& acc = runs.at(id);
    RunSummary s;
    s.run_id = id;
    s.policy = acc.policy;
    s.seed = acc.seed;
    if (acc.overall.slots > 0) {
      s.overall = acc.overall.summary(0);
    } else {
      // Only regional rows: the whole map is their sum, slot by slot.
      Acc all;
      for (const auto& [region, a] : acc.regions) {
        all.requests += a.requests;
        all.local += a.local;
        all.neighbor += a.neighbor;
        all.bs += a.bs;
        all.delay_ms_total += a.delay_ms_total;
        all.reward += a.reward;
        all.slots = std::max(all.slots, a.slots);
      }
      s.overall = all.summary(0);
    }
    for (const auto& [region, a] : acc.regions) s.regions.push_back(a.summary(region));
    report.runs.push_back(std::move(s));
  }
  return report;
}

std::string report_json(const Report& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : report.runs) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& g : r.regions) regions.push_back(to_json(g));
    runs.push_back({{"run_id", r.run_id},
                    {"policy", r.policy},
                    {"seed", r.seed},
                    {"overall", to_json(r.overall)},
                    {"regions", regions}});
  }
  return nlohmann::json{{"runs", runs}}.dump(2) + "\n";
}

}  // namespace dapr::sim
