#include "eventlm/tape.hpp"

#include <stdexcept>

namespace eventlm {
namespace {

thread_local Tape* g_active = nullptr;

}  // namespace

Tape::Tape() : previous_(g_active) { g_active = this; }

Tape::~Tape() { g_active = previous_; }

Tape* Tape::active() { return g_active; }

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + loss.shape_str());
  if (!loss.needs_grad())
    throw std::logic_error("backward: loss is not connected to this tape");
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  consumed_ = true;
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

NoGrad::NoGrad() : previous_(g_active) { g_active = nullptr; }

NoGrad::~NoGrad() { g_active = previous_; }

}  // namespace eventlm
