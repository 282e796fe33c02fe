#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <random>
#include <vector>

// Request workloads: trace files and synthetic Zipf streams.
namespace dapr::sim {

struct RequestEvent {
  std::uint64_t slot = 0;
  std::uint32_t vehicle_id = 0;
  std::uint32_t content_id = 0;  // 1-based
  std::uint64_t size_bytes = 0;
  std::uint32_t region_id = 0;

  friend bool operator==(const RequestEvent&, const RequestEvent&) = default;
};

// A parsed trace. Vehicle and content ids are interned to 1..N in order of
// first appearance after sorting by slot; the raw ids are kept for reference.
struct Trace {
  std::vector<RequestEvent> events;
  std::vector<std::uint64_t> raw_content_ids;  // index = interned id - 1
  std::vector<std::uint64_t> raw_vehicle_ids;
  std::vector<std::uint64_t> content_sizes;  // first size seen per interned content
};

// CSV with header slot,vehicle_id,content_id,size_bytes,region_id. Rows are
// stably sorted by slot. Malformed rows throw std::runtime_error naming the
// line number.
Trace parse_trace(std::istream& in);
Trace load_trace(const std::filesystem::path& path);

// Inverse-CDF sampler for P(rank i) proportional to i^-s, i = 1..n.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double s);
  std::size_t size() const { return cdf_.size(); }
  double probability(std::size_t rank) const;  // rank is 1-based
  std::size_t sample(std::mt19937_64& rng) const;

 private:
  std::vector<double> cdf_;
};

// k events over a catalog of n, one per slot (slot = event index), vehicle 0,
// region 1, size 0 (sizes come from the scenario catalog).
std::vector<RequestEvent> synth_zipf(std::size_t n, double s, std::size_t k, std::uint64_t seed);

// Content sizes drawn log-uniformly in [min_mb, max_mb] megabytes (1 MB = 1e6 bytes).
std::vector<std::uint64_t> log_uniform_sizes(std::size_t n, double min_mb, double max_mb,
                                             std::mt19937_64& rng);

// Independent generator for (seed, stream) pairs, so each consumer of
// randomness in a run has its own sequence.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

}  // namespace dapr::sim
