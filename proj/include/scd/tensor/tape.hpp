#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "scd/tensor/tensor.hpp"

namespace scd {

// Ordered record of the differentiable ops executed while the tape is active.
// Entries are appended in execution order, so the record is topologically
// sorted by construction and backward() walks it in reverse.
template <typename T>
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

  struct Entry {
    std::string_view op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, std::vector<ImplPtr> inputs, ImplPtr output,
              std::function<void()> backward);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  // Drops every entry together with the intermediate tensors it keeps alive.
  void clear() { entries_.clear(); }

  // The tape ops on this thread record into, or nullptr when none is active.
  static Tape* active();

 private:
  template <typename>
  friend class TapeScope;

  std::vector<Entry> entries_;
};

// Makes `tape` the recording target for the current thread for the lifetime of
// the scope. Scopes nest; the previous target is restored on exit.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Reverse pass from a scalar loss. Leaf gradients accumulate across calls;
// intermediate gradients are recomputed from scratch each time.
template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape);

}  // namespace scd
