#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mhal/tensor.hpp"

namespace mhal {

// Ordered, named collection of parameter tensors. Copies share tensors;
// clone() makes an independent deep copy.
template <class T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> tensor);

  std::size_t size() const { return tensors_.size(); }
  const Tensor<T>& at(std::string_view name) const;
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  std::int64_t element_count() const;
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;

  ParamSet clone() const;
  void set_requires_grad(bool on);
  void clear_grads();
  // Gradient of every tensor, zeros where nothing flowed.
  std::vector<std::vector<T>> gradients() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Checkpoint file: "MHCK", u16 version, u8 element bytes, u8 reserved,
// u32 tensor count, then per tensor {u16 name length, name, u8 rank,
// rank x u32 extents}, then all payloads little-endian in table order.
template <class T>
void save_params(const ParamSet<T>& params, const std::filesystem::path& path);
// Accepts either element width and converts to T.
template <class T>
ParamSet<T> load_params(const std::filesystem::path& path);

}  // namespace mhal
