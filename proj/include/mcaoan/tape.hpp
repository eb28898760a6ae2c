#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcaoan/errors.hpp"
#include "mcaoan/tensor.hpp"

namespace mcaoan {

// Reverse-mode gradient tape. Operations append nodes in execution order, so
// the node list is already topologically sorted; backward() replays it once
// in reverse. Gradients accumulate additively, which handles fan-out.
//
// A tape and the tensors recorded on it belong to one thread of execution.
template <typename T>
class Tape {
 public:
  // Receives this tape and the node's output gradient; adds into the
  // gradients of the node's inputs via grad_buf().
  using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  std::size_t node_count() const { return nodes_.size(); }

  int push(std::int64_t out_size, BackwardFn fn) {
    nodes_.push_back(Node{out_size, std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Registers a leaf (parameter or input). Idempotent per storage: watching
  // the same tensor twice yields the same node, so its gradient accumulates
  // in one place.
  Tensor<T> watch(const Tensor<T>& t) {
    auto it = leaves_.find(t.data.get());
    if (it != leaves_.end()) return Tensor<T>(t.shape, t.data, it->second);
    int id = push(t.size(), BackwardFn{});
    leaves_.emplace(t.data.get(), id);
    return Tensor<T>(t.shape, t.data, id);
  }

  // Gradient buffer for a node, zero-initialized on first touch.
  std::vector<T>& grad_buf(int node, std::int64_t size) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(size, T(0));
    return g;
  }

  // Total derivative of `loss` w.r.t. every recorded node.
  void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
      throw ContractError("backward: loss must be scalar, got " +
                          shape_str(loss.shape));
    if (loss.node < 0)
      throw ContractError("backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    grad_buf(loss.node, 1)[0] = T(1);
    for (int i = loss.node; i >= 0; --i) {
      if (grads_[i].empty() || !nodes_[i].backward) continue;
      nodes_[i].backward(*this, grads_[i]);
    }
  }

  // Gradient of a watched leaf or recorded value. Values the loss never
  // touched get a zero gradient of the right shape.
  std::vector<T> grad_of(const Tensor<T>& t) const {
    int id = t.node;
    if (id < 0) {
      auto it = leaves_.find(t.data.get());
      if (it != leaves_.end()) id = it->second;
    }
    if (id >= 0 && id < static_cast<int>(grads_.size()) &&
        !grads_[id].empty())
      return grads_[id];
    return std::vector<T>(t.size(), T(0));
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
    leaves_.clear();
  }

 private:
  struct Node {
    std::int64_t size;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::unordered_map<const std::vector<T>*, int> leaves_;
  bool recording_ = true;
};

}  // namespace mcaoan
