#pragma once
// Binary tensor container used for checkpoints and dataset blobs.
//
// Layout (all integers little-endian):
//   magic   8 bytes  "PSTNSR01"
//   u32     version (currently 1)
//   u32     tensor count
//   per tensor:
//     u16   name length, then name bytes
//     u8    dtype: 1 = f32, 2 = f64, 3 = i32
//     u8    ndim
//     i64   dims[ndim]
//     raw   payload, numel * sizeof(dtype) bytes
#include "poseshift/numcore/paramset.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace poseshift::num {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2, i32 = 3 };

struct StoredTensor {
  Shape shape;
  Dtype dtype = Dtype::f32;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<std::int32_t> i32;

  std::int64_t size() const { return numel(shape); }

  template <class S>
  ArrX<S> as_array() const {
    ArrX<S> out(size());
    switch (dtype) {
      case Dtype::f32:
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(f32[i]);
        break;
      case Dtype::f64:
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(f64[i]);
        break;
      case Dtype::i32:
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(i32[i]);
        break;
    }
    return out;
  }
};

using TensorFile = std::map<std::string, StoredTensor>;

template <class S>
StoredTensor stored_from(const Shape& shape, const ArrX<S>& v) {
  StoredTensor t;
  t.shape = shape;
  if constexpr (std::is_same_v<S, double>) {
    t.dtype = Dtype::f64;
    t.f64.assign(v.data(), v.data() + v.size());
  } else {
    t.dtype = Dtype::f32;
    t.f32.resize(v.size());
    for (std::int64_t i = 0; i < v.size(); ++i) t.f32[i] = static_cast<float>(v[i]);
  }
  return t;
}

inline StoredTensor stored_from_ints(const Shape& shape, const std::vector<std::int32_t>& v) {
  StoredTensor t;
  t.shape = shape;
  t.dtype = Dtype::i32;
  t.i32 = v;
  return t;
}

namespace detail {
template <class T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("tensor file truncated");
  return v;
}
}  // namespace detail

inline void save_tensors(const std::string& path, const TensorFile& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open for writing: " + path);
  os.write("PSTNSR01", 8);
  detail::write_raw<std::uint32_t>(os, 1);
  detail::write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (t.size() != static_cast<std::int64_t>(t.dtype == Dtype::f32   ? t.f32.size()
                                              : t.dtype == Dtype::f64 ? t.f64.size()
                                                                      : t.i32.size()))
      throw CheckpointError("tensor '" + name + "' shape/payload mismatch");
    detail::write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_raw<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    detail::write_raw<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) detail::write_raw<std::int64_t>(os, d);
    switch (t.dtype) {
      case Dtype::f32:
        os.write(reinterpret_cast<const char*>(t.f32.data()), static_cast<std::streamsize>(t.f32.size() * 4));
        break;
      case Dtype::f64:
        os.write(reinterpret_cast<const char*>(t.f64.data()), static_cast<std::streamsize>(t.f64.size() * 8));
        break;
      case Dtype::i32:
        os.write(reinterpret_cast<const char*>(t.i32.data()), static_cast<std::streamsize>(t.i32.size() * 4));
        break;
    }
  }
  if (!os) throw CheckpointError("write failed: " + path);
}

inline TensorFile load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "PSTNSR01", 8) != 0) throw CheckpointError("bad magic in " + path);
  auto version = detail::read_raw<std::uint32_t>(is);
  if (version != 1) throw CheckpointError("unsupported tensor file version in " + path);
  auto count = detail::read_raw<std::uint32_t>(is);
  TensorFile out;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = detail::read_raw<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    StoredTensor t;
    t.dtype = static_cast<Dtype>(detail::read_raw<std::uint8_t>(is));
    auto ndim = detail::read_raw<std::uint8_t>(is);
    t.shape.resize(ndim);
    for (int d = 0; d < ndim; ++d) t.shape[d] = static_cast<int>(detail::read_raw<std::int64_t>(is));
    const std::int64_t n = numel(t.shape);
    switch (t.dtype) {
      case Dtype::f32:
        t.f32.resize(n);
        is.read(reinterpret_cast<char*>(t.f32.data()), n * 4);
        break;
      case Dtype::f64:
        t.f64.resize(n);
        is.read(reinterpret_cast<char*>(t.f64.data()), n * 8);
        break;
      case Dtype::i32:
        t.i32.resize(n);
        is.read(reinterpret_cast<char*>(t.i32.data()), n * 4);
        break;
      default:
        throw CheckpointError("unknown dtype in " + path);
    }
    if (!is) throw CheckpointError("tensor file truncated: " + path);
    out[name] = std::move(t);
  }
  return out;
}

template <class S>
void save_params(const std::string& path, const ParamSet<S>& params, bool include_optimizer_state = false) {
  TensorFile tf;
  for (const auto& [name, p] : params.items) {
    tf[name] = stored_from<S>(p.value->shape, p.value->value);
    if (include_optimizer_state) {
      Shape flat{static_cast<int>(p.m.size())};
      tf[name + ".adam_m"] = stored_from<S>(flat, p.m);
      tf[name + ".adam_v"] = stored_from<S>(flat, p.v);
      tf[name + ".adam_step"] = stored_from_ints(Shape{1}, {static_cast<std::int32_t>(p.step)});
    }
  }
  save_tensors(path, tf);
}

// Fills an already-constructed ParamSet; every parameter must be present with
// a matching shape. Optimizer state is restored when found.
template <class S>
void load_params(const std::string& path, ParamSet<S>& params) {
  TensorFile tf = load_tensors(path);
  for (auto& [name, p] : params.items) {
    auto it = tf.find(name);
    if (it == tf.end()) throw CheckpointError("checkpoint missing parameter '" + name + "': " + path);
    if (it->second.shape != p.value->shape)
      throw CheckpointError("checkpoint shape mismatch for '" + name + "': " + path);
    p.value->value = it->second.template as_array<S>();
    auto m = tf.find(name + ".adam_m");
    auto v = tf.find(name + ".adam_v");
    auto st = tf.find(name + ".adam_step");
    if (m != tf.end() && v != tf.end()) {
      p.m = m->second.template as_array<S>();
      p.v = v->second.template as_array<S>();
      p.step = st != tf.end() ? st->second.i32.at(0) : 0;
    }
  }
}

}  // namespace poseshift::num
