#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <random>
#include <vector>

#include "gddpg/env.hpp"
#include "gddpg/errors.hpp"

namespace gddpg {

/// One semi-supervisor sample: a visited state, the executed action and the
/// discounted return from that step on (reward units, i.e. negative cost).
struct SupervisionSample {
  Vec6 state = Vec6::Zero();
  Vec2 action = Vec2::Zero();
  double q_to = 0.0;

  bool operator==(const SupervisionSample&) const = default;
};

/// Bounded FIFO with uniform sampling with replacement.
template <typename Item>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
    // Grows on demand; large capacities are never preallocated.
    items_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  void push(Item item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
    ++total_pushed_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  std::size_t total_pushed() const { return total_pushed_; }

  /// Oldest item is index 0.
  const Item& operator[](std::size_t i) const {
    if (items_.size() < capacity_) return items_[i];
    return items_[(head_ + i) % capacity_];
  }

  std::vector<Item> items() const {
    std::vector<Item> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back((*this)[i]);
    return out;
  }

  template <typename Rng>
  std::vector<Item> sample(std::size_t n, Rng& rng) const {
    if (items_.empty()) throw PreconditionError("cannot sample from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<Item> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(items_[pick(rng)]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::size_t total_pushed_ = 0;
  std::vector<Item> items_;
};

}  // namespace gddpg
