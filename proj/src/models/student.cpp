#include "scd/models/student.hpp"

#include <string>

namespace scd::models {

template <typename T>
void StudentModel<T>::add_parameter(std::string name, Tensor<T> tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(tensor)});
}

template <typename T>
bool StudentModel<T>::has_parameter(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
const Tensor<T>& StudentModel<T>::parameter(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw LookupError("model has no parameter named '" + std::string(name) + "'");
  }
  return params_[it->second].tensor;
}

template <typename T>
std::vector<Tensor<T>> StudentModel<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
std::size_t param_count(const StudentModel<T>& model) {
  std::size_t total = 0;
  for (const auto& p : model.parameters()) total += p.tensor.numel();
  return total;
}

template <typename T>
void set_frozen(StudentModel<T>& model, std::string_view prefix, bool frozen) {
  bool matched = false;
  for (const auto& p : model.parameters()) {
    if (p.name.starts_with(prefix)) {
      Tensor<T> handle = p.tensor;
      handle.set_requires_grad(!frozen);
      matched = true;
    }
  }
  if (!matched) {
    throw LookupError("no parameter matches prefix '" + std::string(prefix) + "'");
  }
}

template class StudentModel<float>;
template class StudentModel<double>;
template std::size_t param_count(const StudentModel<float>&);
template std::size_t param_count(const StudentModel<double>&);
template void set_frozen(StudentModel<float>&, std::string_view, bool);
template void set_frozen(StudentModel<double>&, std::string_view, bool);

}  // namespace scd::models
