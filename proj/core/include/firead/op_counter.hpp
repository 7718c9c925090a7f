#pragma once

#include <cstdint>
#include <unordered_map>

namespace firead {

/// Collects multiply-accumulate counts from conv2d/linear while installed on
/// the current thread. Counts are keyed by the weight tensor's identity so
/// callers can attribute them to named parameters. With `skip_compute` the
/// kernels produce correctly shaped zero outputs and only count.
class OpCounter {
 public:
  explicit OpCounter(bool skip_compute = false) : skip_compute_(skip_compute) {}

  void add(const void* weight_id, std::int64_t macs) {
    by_weight_[weight_id] += macs;
    total_ += macs;
  }
  std::int64_t total() const noexcept { return total_; }
  std::int64_t macs_for(const void* weight_id) const {
    auto it = by_weight_.find(weight_id);
    return it == by_weight_.end() ? 0 : it->second;
  }
  bool skip_compute() const noexcept { return skip_compute_; }

  static OpCounter* active() noexcept;

 private:
  friend class OpCounterScope;
  bool skip_compute_;
  std::int64_t total_ = 0;
  std::unordered_map<const void*, std::int64_t> by_weight_;
};

class OpCounterScope {
 public:
  explicit OpCounterScope(OpCounter& counter);
  ~OpCounterScope();
  OpCounterScope(const OpCounterScope&) = delete;
  OpCounterScope& operator=(const OpCounterScope&) = delete;

 private:
  OpCounter* previous_;
};

}  // namespace firead
