#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dapr/nn/tensor.h"

namespace dapr::nn {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  Shape shape;

  std::size_t size() const { return shape_size(shape); }
};

// Flat parameter storage for one model. Every network in the project (VAE,
// GRU, SAC critics and actor) lives in one of these so it can be serialized,
// averaged and shipped between FL clients as a single array.
class ParamVector {
 public:
  ParamVector() = default;

  // Appends a segment; returns its index. Names must be unique.
  std::size_t add_segment(std::string name, Shape shape);

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::string_view name) const;
  const Segment& segment(std::size_t index) const { return segments_.at(index); }
  std::optional<std::size_t> find(std::string_view name) const;

  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values(std::string_view name);
  std::span<const double> values(std::string_view name) const;

  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }
  std::span<double> grads(std::string_view name);
  std::span<const double> grads(std::string_view name) const;

  Tensor tensor(std::string_view name) const;
  void zero_grads();

  // Same segment names, offsets and shapes.
  bool same_layout(const ParamVector& other) const;

  // Rank-2 segments get U(-a, a), a = sqrt(6 / (fan_in + fan_out)); rank-1
  // segments (biases) are zeroed.
  void init_uniform(std::mt19937_64& rng);

  // Wire format: u64 LE header length, JSON layout header, then the values as
  // little-endian IEEE-754 doubles.
  std::vector<std::uint8_t> serialize() const;
  static ParamVector deserialize(std::span<const std::uint8_t> bytes);
  std::size_t serialized_size() const;

  void save(const std::filesystem::path& path) const;
  static ParamVector load(const std::filesystem::path& path);

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

double l2_distance(const ParamVector& a, const ParamVector& b);

}  // namespace dapr::nn
