#pragma once

#include <functional>
#include <vector>

#include "eventlm/tensor.hpp"

// Reverse-mode autodiff tape. Constructing a Tape makes it the active tape
// for the current thread (restored on destruction), ops append backward
// closures in execution order, backward() replays them in exact reverse.
// One tape is single-threaded; independent tapes may live on other threads.
namespace eventlm {

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Active tape for this thread; nullptr outside any Tape/inside NoGrad.
  static Tape* active();

  void record(std::function<void()> backward_fn);
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and accumulates grads into every needs_grad
  // tensor reachable backward from it. Single use per tape.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

// Suspends recording: ops inside behave as pure forward computation.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape* previous_;
};

}  // namespace eventlm
