#include "dapr/nn/param_vector.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace dapr::nn {

namespace {

using nlohmann::json;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + 8 > bytes.size()) throw std::runtime_error("param vector: truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
  return v;
}

json layout_json(const std::vector<Segment>& segments, std::size_t length) {
  json segs = json::array();
  for (const auto& s : segments) {
    segs.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
  }
  return {{"format", "dapr.paramvector"}, {"version", 1}, {"length", length},
          {"segments", segs}};
}

}  // namespace

std::size_t ParamVector::add_segment(std::string name, Shape shape) {
  if (find(name)) throw std::invalid_argument("duplicate segment '" + name + "'");
  const std::size_t n = shape_size(shape);
  if (n == 0) throw ShapeError("segment '" + name + "' has empty shape");
  segments_.push_back({std::move(name), values_.size(), std::move(shape)});
  values_.resize(values_.size() + n, 0.0);
  grads_.resize(values_.size(), 0.0);
  return segments_.size() - 1;
}

std::optional<std::size_t> ParamVector::find(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  return std::nullopt;
}

const Segment& ParamVector::segment(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw std::out_of_range("no segment named '" + std::string(name) + "'");
  return segments_[*idx];
}

std::span<double> ParamVector::values(std::string_view name) {
  const auto& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::values(std::string_view name) const {
  const auto& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

std::span<double> ParamVector::grads(std::string_view name) {
  const auto& s = segment(name);
  return std::span<double>(grads_).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::grads(std::string_view name) const {
  const auto& s = segment(name);
  return std::span<const double>(grads_).subspan(s.offset, s.size());
}

Tensor ParamVector::tensor(std::string_view name) const {
  const auto& s = segment(name);
  auto v = values(name);
  return Tensor(s.shape, std::vector<double>(v.begin(), v.end()));
}

void ParamVector::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool ParamVector::same_layout(const ParamVector& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.name != b.name || a.offset != b.offset || a.shape != b.shape) return false;
  }
  return values_.size() == other.values_.size();
}

void ParamVector::init_uniform(std::mt19937_64& rng) {
  for (const auto& s : segments_) {
    auto v = std::span<double>(values_).subspan(s.offset, s.size());
    if (s.shape.size() < 2) {
      std::fill(v.begin(), v.end(), 0.0);
      continue;
    }
    const double fan_out = static_cast<double>(s.shape[0]);
    const double fan_in = static_cast<double>(s.size() / s.shape[0]);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& x : v) x = dist(rng);
  }
}

std::vector<std::uint8_t> ParamVector::serialize() const {
  const std::string header = layout_json(segments_, values_.size()).dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + header.size() + 8 * values_.size());
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  for (double v : values_) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

std::size_t ParamVector::serialized_size() const {
  return 8 + layout_json(segments_, values_.size()).dump().size() + 8 * values_.size();
}

ParamVector ParamVector::deserialize(std::span<const std::uint8_t> bytes) {
  const std::uint64_t header_len = get_u64(bytes, 0);
  if (8 + header_len > bytes.size()) throw std::runtime_error("param vector: truncated header");
  const std::string header(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  json j;
  try {
    j = json::parse(header);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("param vector: bad header: ") + e.what());
  }
  if (j.value("format", "") != "dapr.paramvector") {
    throw std::runtime_error("param vector: unexpected format tag");
  }
  ParamVector p;
  for (const auto& s : j.at("segments")) {
    p.add_segment(s.at("name").get<std::string>(), s.at("shape").get<Shape>());
    if (p.segments_.back().offset != s.at("offset").get<std::size_t>()) {
      throw std::runtime_error("param vector: segment offsets are not contiguous");
    }
  }
  const std::size_t length = j.at("length").get<std::size_t>();
  if (length != p.size()) throw std::runtime_error("param vector: length mismatch");
  const std::size_t base = 8 + header_len;
  if (bytes.size() != base + 8 * length) {
    throw std::runtime_error("param vector: payload size mismatch");
  }
  for (std::size_t i = 0; i < length; ++i) {
    p.values_[i] = std::bit_cast<double>(get_u64(bytes, base + 8 * i));
  }
  return p;
}

void ParamVector::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

ParamVector ParamVector::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

double l2_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw ShapeError("l2_distance: size mismatch");
  double s = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  return std::sqrt(s);
}

}  // namespace dapr::nn
