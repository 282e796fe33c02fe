#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace dapr::cache {

using ContentId = std::uint32_t;

// One cached object: q_i = {i, n_i, d_i}.
struct CacheItem {
  ContentId id = 0;
  std::uint64_t access_count = 0;
  std::uint64_t size_bytes = 0;

  friend bool operator==(const CacheItem&, const CacheItem&) = default;
};

// Contents of one node's cache. Items are kept sorted by id; total size never
// exceeds capacity.
class CacheState {
 public:
  CacheState() = default;
  explicit CacheState(std::uint64_t capacity_bytes) : capacity_(capacity_bytes) {}

  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t used_bytes() const { return used_; }
  std::uint64_t free_bytes() const { return capacity_ - used_; }
  double utilization() const;

  const std::vector<CacheItem>& items() const { return items_; }
  bool contains(ContentId id) const;
  const CacheItem* find(ContentId id) const;

  // False (and no change) when the item is already present or does not fit.
  bool insert(const CacheItem& item);
  bool erase(ContentId id);
  void clear();
  // Bumps n_i for a cached item; no-op otherwise.
  void touch(ContentId id);

  friend bool operator==(const CacheState&, const CacheState&) = default;

 private:
  std::uint64_t capacity_ = 0;
  std::uint64_t used_ = 0;
  std::vector<CacheItem> items_;
};

}  // namespace dapr::cache
