#include "scd/tensor/tape.hpp"

#include <algorithm>

namespace scd {

namespace {

template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename T>
void Tape<T>::record(std::string_view op, std::vector<ImplPtr> inputs,
                     ImplPtr output, std::function<void()> backward) {
  entries_.push_back(
      Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_slot<T>()) {
  active_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape())
                                        : std::string("undefined tensor")));
  }
  const auto& entries = tape.entries();
  const bool on_tape =
      std::any_of(entries.begin(), entries.end(),
                  [&](const auto& e) { return e.output == loss.impl(); });
  if (!on_tape) {
    throw ContractError("backward(): loss was not produced on this tape");
  }

  // Intermediates restart from zero so repeated passes only accumulate into
  // leaves.
  for (const auto& e : entries) {
    auto& g = e.output->ensure_grad();
    std::fill(g.begin(), g.end(), T{0});
  }
  loss.impl()->grad[0] = T{1};

  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    it->backward();
  }
}

template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template void backward<float>(const Tensor<float>&, Tape<float>&);
template void backward<double>(const Tensor<double>&, Tape<double>&);

}  // namespace scd
