#include "dapr/cache_state.h"

#include <algorithm>

namespace dapr::cache {

namespace {

auto lower(std::vector<CacheItem>& items, ContentId id) {
  return std::lower_bound(items.begin(), items.end(), id,
                          [](const CacheItem& it, ContentId v) { return it.id < v; });
}

auto lower(const std::vector<CacheItem>& items, ContentId id) {
  return std::lower_bound(items.begin(), items.end(), id,
                          [](const CacheItem& it, ContentId v) { return it.id < v; });
}

}  // namespace

double CacheState::utilization() const {
  return capacity_ == 0 ? 0.0 : static_cast<double>(used_) / static_cast<double>(capacity_);
}

bool CacheState::contains(ContentId id) const { return find(id) != nullptr; }

const CacheItem* CacheState::find(ContentId id) const {
  auto it = lower(items_, id);
  return it != items_.end() && it->id == id ? &*it : nullptr;
}

bool CacheState::insert(const CacheItem& item) {
  if (item.size_bytes > free_bytes()) return false;
  auto it = lower(items_, item.id);
  if (it != items_.end() && it->id == item.id) return false;
  items_.insert(it, item);
  used_ += item.size_bytes;
  return true;
}

bool CacheState::erase(ContentId id) {
  auto it = lower(items_, id);
  if (it == items_.end() || it->id != id) return false;
  used_ -= it->size_bytes;
  items_.erase(it);
  return true;
}

void CacheState::clear() {
  items_.clear();
  used_ = 0;
}

void CacheState::touch(ContentId id) {
  auto it = lower(items_, id);
  if (it != items_.end() && it->id == id) ++it->access_count;
}

}  // namespace dapr::cache
