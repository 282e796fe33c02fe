#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

// Per-slot metrics rows, their CSV form, and run summaries.
namespace dapr::sim {

enum class RowKind { kSlot, kSummary };

// One region (1..R) or the whole map (region 0) for one slot, or for the whole
// run when kind is kSummary.
struct MetricsRow {
  std::string run_id;
  std::string policy;
  std::uint64_t seed = 0;
  RowKind kind = RowKind::kSlot;
  std::uint64_t slot = 0;  // slots covered for summary rows
  std::uint32_t region = 0;
  std::uint64_t requests = 0;
  std::uint64_t local_hits = 0;
  std::uint64_t neighbor_hits = 0;
  std::uint64_t bs_fetches = 0;
  double hit_ratio = 0.0;  // local_hits / requests, 0 without requests
  double mean_delay_ms = 0.0;
  double reward = 0.0;
  double cumulative_reward = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

const char* to_string(RowKind kind);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows);
// Throws std::runtime_error naming the line of a malformed row.
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

struct RegionSummary {
  std::uint32_t region = 0;
  std::uint64_t slots = 0;
  std::uint64_t requests = 0;
  std::uint64_t local_hits = 0;
  std::uint64_t neighbor_hits = 0;
  std::uint64_t bs_fetches = 0;
  double hit_ratio = 0.0;
  double mean_delay_ms = 0.0;  // request-weighted
  double mean_reward = 0.0;    // per slot
  double cumulative_reward = 0.0;
};

struct RunSummary {
  std::string run_id;
  std::string policy;
  std::uint64_t seed = 0;
  RegionSummary overall;
  std::vector<RegionSummary> regions;  // ascending region id
};

struct Report {
  std::vector<RunSummary> runs;  // in order of first appearance
};

// Aggregates slot rows; summary rows are ignored. Throws std::invalid_argument
// when there are no slot rows.
Report metrics_report(std::span<const MetricsRow> rows);
std::string report_json(const Report& report);

}  // namespace dapr::sim
