#include "dapr/workload.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include "dapr/csv.h"

namespace dapr::sim {

namespace {

constexpr const char* kTraceHeader = "slot,vehicle_id,content_id,size_bytes,region_id";

std::uint64_t parse_u64(const std::string& field, std::size_t line, const char* name) {
  std::uint64_t v = 0;
  const char* end = field.data() + field.size();
  auto [p, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || p != end) {
    throw std::runtime_error("trace line " + std::to_string(line) + ": bad " + name + " '" +
                             field + "'");
  }
  return v;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Trace parse_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trace line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) {
    throw std::runtime_error(std::string("trace line 1: expected header ") + kTraceHeader);
  }
  struct Raw {
    std::uint64_t slot, vehicle, content, size, region;
  };
  std::vector<Raw> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 5) {
      throw std::runtime_error("trace line " + std::to_string(n) + ": expected 5 fields, got " +
                               std::to_string(f.size()));
    }
    Raw r{parse_u64(f[0], n, "slot"), parse_u64(f[1], n, "vehicle_id"),
          parse_u64(f[2], n, "content_id"), parse_u64(f[3], n, "size_bytes"),
          parse_u64(f[4], n, "region_id")};
    if (r.region == 0 || r.region > 0xffffffffULL) {
      throw std::runtime_error("trace line " + std::to_string(n) + ": region_id must be >= 1");
    }
    rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Raw& a, const Raw& b) { return a.slot < b.slot; });

  Trace t;
  std::map<std::uint64_t, std::uint32_t> contents, vehicles;
  for (const Raw& r : rows) {
    auto c = contents.try_emplace(r.content, static_cast<std::uint32_t>(contents.size() + 1));
    if (c.second) {
      t.raw_content_ids.push_back(r.content);
      t.content_sizes.push_back(r.size);
    }
    auto v = vehicles.try_emplace(r.vehicle, static_cast<std::uint32_t>(vehicles.size() + 1));
    if (v.second) t.raw_vehicle_ids.push_back(r.vehicle);
    t.events.push_back({r.slot, v.first->second, c.first->second, r.size,
                        static_cast<std::uint32_t>(r.region)});
  }
  return t;
}

Trace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace " + path.string());
  return parse_trace(in);
}

ZipfSampler::ZipfSampler(std::size_t n, double s) {
  if (n == 0) throw std::invalid_argument("zipf: catalog must hold at least one item");
  if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("zipf: exponent must be >= 0");
  cdf_.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::pow(static_cast<double>(i + 1), -s);
    cdf_[i] = total;
  }
  for (double& c : cdf_) c /= total;
  cdf_.back() = 1.0;
}

double ZipfSampler::probability(std::size_t rank) const {
  if (rank == 0 || rank > cdf_.size()) throw std::out_of_range("zipf: rank outside catalog");
  return cdf_[rank - 1] - (rank > 1 ? cdf_[rank - 2] : 0.0);
}

std::size_t ZipfSampler::sample(std::mt19937_64& rng) const {
  const double u = uniform01(rng);
  return static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()) + 1;
}

std::vector<RequestEvent> synth_zipf(std::size_t n, double s, std::size_t k, std::uint64_t seed) {
  ZipfSampler zipf(n, s);
  std::mt19937_64 rng = stream_rng(seed, 0);
  std::vector<RequestEvent> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({i, 0, static_cast<std::uint32_t>(zipf.sample(rng)), 0, 1});
  }
  return out;
}

std::vector<std::uint64_t> log_uniform_sizes(std::size_t n, double min_mb, double max_mb,
                                             std::mt19937_64& rng) {
  if (!(min_mb > 0.0) || !(max_mb >= min_mb)) throw std::invalid_argument("sizes: need 0 < min <= max");
  std::vector<std::uint64_t> out(n);
  const double lo = std::log(min_mb), hi = std::log(max_mb);
  for (auto& s : out) s = static_cast<std::uint64_t>(std::llround(std::exp(lo + (hi - lo) * uniform01(rng)) * 1e6));
  return out;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace dapr::sim
