#include "mhal/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "../io/binary.hpp"

namespace mhal {

template <class T>
void ParamSet<T>::add(std::string name, Tensor<T> tensor) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name " + name);
  index_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(tensor));
}

template <class T>
const Tensor<T>& ParamSet<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named " + std::string(name));
  return tensors_[it->second];
}

template <class T>
std::int64_t ParamSet<T>::element_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <class T>
bool ParamSet<T>::same_layout(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i].shape() != other.tensors_[i].shape()) return false;
  }
  return true;
}

template <class T>
bool ParamSet<T>::all_finite() const {
  for (const auto& t : tensors_)
    for (T v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
ParamSet<T> ParamSet<T>::clone() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) {
    auto t = tensors_[i].detach();
    t.set_requires_grad(tensors_[i].requires_grad());
    out.add(names_[i], std::move(t));
  }
  return out;
}

template <class T>
void ParamSet<T>::set_requires_grad(bool on) {
  for (auto& t : tensors_) t.set_requires_grad(on);
}

template <class T>
void ParamSet<T>::clear_grads() {
  for (auto& t : tensors_) t.clear_grad();
}

template <class T>
std::vector<std::vector<T>> ParamSet<T>::gradients() const {
  std::vector<std::vector<T>> out;
  out.reserve(size());
  for (const auto& t : tensors_) {
    if (t.has_grad()) {
      out.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      out.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
    }
  }
  return out;
}

namespace {
constexpr char kMagic[4] = {'M', 'H', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

template <class T>
void save_params(const ParamSet<T>& params, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u8(sizeof(T));
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    const auto& shape = params[i].shape();
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto e : shape) w.u32(static_cast<std::uint32_t>(e));
  }
  for (std::size_t i = 0; i < params.size(); ++i) w.values<T>(params[i].data());
  w.write_file(path);
}

template <class T>
ParamSet<T> load_params(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path), path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  if (const auto v = r.u16(); v != kVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  const auto width = r.u8();
  if (width != 4 && width != 8) throw FormatError(path.string() + ": bad element width " + std::to_string(width));
  r.u8();
  const auto count = r.u32();
  std::vector<std::pair<std::string, Shape>> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.u16(), '\0');
    r.bytes(name.data(), name.size());
    const auto rank = r.u8();
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto e = r.u32();
      if (e == 0) throw FormatError(path.string() + ": zero extent in " + name);
      shape.push_back(e);
    }
    table.emplace_back(std::move(name), std::move(shape));
  }
  ParamSet<T> out;
  for (auto& [name, shape] : table) {
    const auto n = static_cast<std::size_t>(numel(shape));
    std::vector<T> values = width == 4 ? r.values_as<float, T>(n) : r.values_as<double, T>(n);
    out.add(name, Tensor<T>::from(shape, std::move(values)));
  }
  r.expect_end();
  return out;
}

template class ParamSet<float>;
template class ParamSet<double>;
template void save_params(const ParamSet<float>&, const std::filesystem::path&);
template void save_params(const ParamSet<double>&, const std::filesystem::path&);
template ParamSet<float> load_params(const std::filesystem::path&);
template ParamSet<double> load_params(const std::filesystem::path&);

}  // namespace mhal
