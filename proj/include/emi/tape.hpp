#pragma once

#include <functional>
#include <vector>

#include "emi/errors.hpp"
#include "emi/tensor.hpp"

namespace emi {

// Ordered record of executed differentiable operations. Each node is a
// closure that maps its output's grad into its inputs' grads. Replaying
// the nodes in reverse execution order yields the full backward pass.
// One tape belongs to one worker; it is not thread safe.
template <class S>
class TapeT {
 public:
  explicit TapeT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void record(TensorT<S>& out, std::function<void()> backprop) {
    out.set_node(int(nodes_.size()), this);
    nodes_.push_back(std::move(backprop));
  }

  // Seeds d(loss)/d(loss) = 1 and replays the recorded ops backwards.
  // A tape can be consumed once; a second backward is an error, never a
  // silent accumulation.
  void backward(const TensorT<S>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ContractError("backward: loss must be a scalar tensor");
    if (loss.tape() != this || loss.node() < 0)
      throw ContractError("backward: loss is not recorded on this tape");
    if (consumed_)
      throw ContractError("backward: tape already consumed");
    consumed_ = true;
    TensorT<S> l = loss;
    l.ensure_grad();
    l.grad()[0] = S(1);
    for (int i = l.node(); i >= 0; --i) nodes_[size_t(i)]();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

using Tape = TapeT<Real>;

}  // namespace emi
