#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scd/models/config.hpp"
#include "scd/tensor/tensor.hpp"

namespace scd::models {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

// Parameter store plus architecture config. Parameters keep their insertion
// order, which is also their checkpoint order.
template <typename T>
class StudentModel {
 public:
  explicit StudentModel(ModelConfig config) : config_(std::move(config)) {}

  Architecture architecture() const { return config_.architecture(); }
  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  // Throws ConfigError on a duplicate name.
  void add_parameter(std::string name, Tensor<T> tensor);

  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  bool has_parameter(std::string_view name) const;
  // Throws LookupError for unknown names.
  const Tensor<T>& parameter(std::string_view name) const;

  // Handles share storage with the model.
  std::vector<Tensor<T>> tensors() const;

 private:
  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Exact number of scalar parameters.
template <typename T>
std::size_t param_count(const StudentModel<T>& model);

// Toggles requires_grad on every parameter whose name starts with `prefix`.
// Throws LookupError when nothing matches.
template <typename T>
void set_frozen(StudentModel<T>& model, std::string_view prefix, bool frozen);

}  // namespace scd::models
