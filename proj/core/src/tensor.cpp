// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "tiletrain/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "tiletrain/error.hpp"

namespace tiletrain {

namespace {

constexpr char kMagic[4] = {'T', 'T', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// Calls fn(tile_offset, dense_offset, run) for each contiguous innermost run
// of the tile at `coord`.
void for_each_run(const TiledTensor& t, std::span<const std::size_t> coord,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const std::size_t nd = t.ndim();
  const Shape dims = t.tile_dims(coord);
  Shape stride(nd, 1);
  for (std::size_t a = nd - 1; a-- > 0;) stride[a] = stride[a + 1] * t.shape()[a + 1];
  std::size_t base = 0;
  for (std::size_t a = 0; a < nd; ++a) base += t.tile_offset(a, coord[a]) * stride[a];

  const std::size_t run = dims[nd - 1];
  const std::size_t rows = t.tile_numel(coord) / run;
  Shape idx(nd, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = base;
    for (std::size_t a = 0; a + 1 < nd; ++a) off += idx[a] * stride[a];
    fn(r * run, off, run);
    for (std::size_t a = nd - 1; a-- > 0;) {
      if (++idx[a] < dims[a]) break;
      idx[a] = 0;
    }
  }
}

template <class T>
std::vector<T> gather_dense(Runtime& rt, const TiledTensor& t) {
  rt.wait_all();
  std::vector<T> out(t.numel());
  std::vector<std::byte> buf;
  for (std::size_t i = 0; i < t.num_tiles(); ++i) {
    buf = rt.read_tile(t.tile(i));
    const T* src = reinterpret_cast<const T*>(buf.data());
    for_each_run(t, t.coord_of(i), [&](std::size_t to, std::size_t dense, std::size_t n) {
      std::memcpy(out.data() + dense, src + to, n * sizeof(T));
    });
  }
  return out;
}

template <class T>
void scatter_dense(Runtime& rt, const TiledTensor& t, std::span<const T> data) {
  if (data.size() != t.numel()) {
    throw Error("dense data has " + std::to_string(data.size()) + " elements, tensor " + shape_str(t.shape()) +
                " needs " + std::to_string(t.numel()));
  }
  rt.wait_all();
  std::vector<std::byte> buf;
  for (std::size_t i = 0; i < t.num_tiles(); ++i) {
    buf.assign(t.tile(i).nbytes, std::byte{0});
    T* dst = reinterpret_cast<T*>(buf.data());
    for_each_run(t, t.coord_of(i), [&](std::size_t to, std::size_t dense, std::size_t n) {
      std::memcpy(dst + to, data.data() + dense, n * sizeof(T));
    });
    rt.write_tile(t.tile(i), buf);
  }
}

template <class U>
void put_le(std::ostream& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, sizeof(U));
}

template <class U>
U get_le(std::istream& in) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char b[sizeof(U)];
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!in) throw CheckpointError("truncated checkpoint");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

struct Header {
  DType dtype = DType::F32;
  Shape shape;
  Shape tile_shape;
};

Header read_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kMagic)) throw CheckpointError("not a tensor record (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kFormatVersion) throw CheckpointError("unsupported tensor format version " + std::to_string(version));
  Header h;
  const auto tag = get_le<std::uint8_t>(in);
  if (tag != static_cast<std::uint8_t>(DType::F32) && tag != static_cast<std::uint8_t>(DType::I32)) {
    throw CheckpointError("unknown dtype tag " + std::to_string(tag));
  }
  h.dtype = static_cast<DType>(tag);
  const auto nd = get_le<std::uint32_t>(in);
  if (nd == 0 || nd > 16) throw CheckpointError("bad tensor rank " + std::to_string(nd));
  for (std::uint32_t i = 0; i < nd; ++i) h.shape.push_back(get_le<std::uint64_t>(in));
  for (std::uint32_t i = 0; i < nd; ++i) h.tile_shape.push_back(get_le<std::uint64_t>(in));
  return h;
}

void read_tiles(std::istream& in, Runtime& rt, const TiledTensor& t) {
  std::vector<std::byte> buf;
  for (const TileHandle& h : t.tiles()) {
    buf.resize(h.nbytes);
    for (std::size_t off = 0; off < h.nbytes; off += 4) {
      const std::uint32_t v = get_le<std::uint32_t>(in);
      std::memcpy(buf.data() + off, &v, 4);
    }
    rt.write_tile(h, buf);
  }
}

}  // namespace

std::size_t dtype_size(DType) noexcept { return 4; }

TiledTensor::TiledTensor(Runtime& rt, Shape shape, Shape tile_shape, DType dtype)
    : shape_(std::move(shape)), tile_shape_(std::move(tile_shape)), dtype_(dtype) {
  if (shape_.empty()) throw Error("tensor needs at least one dimension");
  if (shape_.size() != tile_shape_.size()) {
    throw Error("shape " + shape_str(shape_) + " and tile shape " + shape_str(tile_shape_) + " differ in rank");
  }
  for (std::size_t a = 0; a < shape_.size(); ++a) {
    if (shape_[a] == 0 || tile_shape_[a] == 0) {
      throw Error("zero dimension in shape " + shape_str(shape_) + " / tile " + shape_str(tile_shape_));
    }
    tile_shape_[a] = std::min(tile_shape_[a], shape_[a]);
    grid_.push_back((shape_[a] + tile_shape_[a] - 1) / tile_shape_[a]);
  }
  const std::size_t n = std::accumulate(grid_.begin(), grid_.end(), std::size_t{1}, std::multiplies<>());
  tiles_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Shape c = coord_of(i);
    tiles_.push_back(rt.register_tile(tile_numel(c) * dtype_size(dtype_)));
  }
}

std::size_t TiledTensor::numel() const noexcept {
  if (shape_.empty()) return 0;
  return std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t TiledTensor::linear_index(std::span<const std::size_t> coord) const {
  if (coord.size() != ndim()) throw Error("tile coordinate rank mismatch");
  std::size_t li = 0;
  for (std::size_t a = 0; a < ndim(); ++a) {
    if (coord[a] >= grid_[a]) throw Error("tile coordinate out of range");
    li = li * grid_[a] + coord[a];
  }
  return li;
}

Shape TiledTensor::coord_of(std::size_t linear) const {
  Shape c(ndim());
  for (std::size_t a = ndim(); a-- > 0;) {
    c[a] = linear % grid_[a];
    linear /= grid_[a];
  }
  return c;
}

std::size_t TiledTensor::tile_extent(std::size_t axis, std::size_t index) const {
  const std::size_t off = tile_offset(axis, index);
  return std::min(tile_shape_.at(axis), shape_.at(axis) - off);
}

Shape TiledTensor::tile_dims(std::span<const std::size_t> coord) const {
  Shape d(ndim());
  for (std::size_t a = 0; a < ndim(); ++a) d[a] = tile_extent(a, coord[a]);
  return d;
}

std::size_t TiledTensor::tile_numel(std::span<const std::size_t> coord) const {
  std::size_t n = 1;
  for (std::size_t a = 0; a < ndim(); ++a) n *= tile_extent(a, coord[a]);
  return n;
}

TiledTensor make_tiled(Runtime& rt, const Shape& shape, const Shape& tile_shape, const Fill& fill, DType dtype) {
  TiledTensor t(rt, shape, tile_shape, dtype);
  switch (fill.kind) {
    case Fill::Kind::Zeros:
      break;
    case Fill::Kind::Constant:
      if (dtype == DType::I32) {
        std::vector<std::int32_t> v(t.numel(), static_cast<std::int32_t>(fill.value));
        assign_dense_i32(rt, t, v);
      } else {
        std::vector<float> v(t.numel(), fill.value);
        assign_dense(rt, t, v);
      }
      break;
    case Fill::Kind::Normal: {
      if (dtype != DType::F32) throw Error("normal fill requires an F32 tensor");
      std::mt19937_64 gen(fill.seed);
      std::normal_distribution<float> dist(fill.mean, fill.stddev);
      std::vector<float> v(t.numel());
      for (float& x : v) x = dist(gen);
      assign_dense(rt, t, v);
      break;
    }
  }
  return t;
}

std::vector<float> to_dense(Runtime& rt, const TiledTensor& t) {
  if (t.dtype() != DType::F32) throw Error("to_dense on a non-F32 tensor");
  return gather_dense<float>(rt, t);
}

std::vector<std::int32_t> to_dense_i32(Runtime& rt, const TiledTensor& t) {
  if (t.dtype() != DType::I32) throw Error("to_dense_i32 on a non-I32 tensor");
  return gather_dense<std::int32_t>(rt, t);
}

TiledTensor from_dense(Runtime& rt, std::span<const float> data, const Shape& shape, const Shape& tile_shape) {
  TiledTensor t(rt, shape, tile_shape, DType::F32);
  assign_dense(rt, t, data);
  return t;
}

TiledTensor from_dense_i32(Runtime& rt, std::span<const std::int32_t> data, const Shape& shape,
                           const Shape& tile_shape) {
  TiledTensor t(rt, shape, tile_shape, DType::I32);
  assign_dense_i32(rt, t, data);
  return t;
}

void assign_dense(Runtime& rt, const TiledTensor& t, std::span<const float> data) {
  if (t.dtype() != DType::F32) throw Error("assign_dense on a non-F32 tensor");
  scatter_dense<float>(rt, t, data);
}

void assign_dense_i32(Runtime& rt, const TiledTensor& t, std::span<const std::int32_t> data) {
  if (t.dtype() != DType::I32) throw Error("assign_dense_i32 on a non-I32 tensor");
  scatter_dense<std::int32_t>(rt, t, data);
}

void save_tensor(std::ostream& out, Runtime& rt, const TiledTensor& t) {
  rt.wait_all();
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (std::size_t d : t.tile_shape()) put_le<std::uint64_t>(out, d);
  for (const TileHandle& h : t.tiles()) {
    const auto buf = rt.read_tile(h);
    for (std::size_t off = 0; off < buf.size(); off += 4) {
      std::uint32_t v;
      std::memcpy(&v, buf.data() + off, 4);
      put_le<std::uint32_t>(out, v);
    }
  }
  if (!out) throw CheckpointError("failed writing tensor record");
}

TiledTensor load_tensor(std::istream& in, Runtime& rt) {
  const Header h = read_header(in);
  rt.wait_all();
  TiledTensor t(rt, h.shape, h.tile_shape, h.dtype);
  read_tiles(in, rt, t);
  return t;
}

void load_tensor_into(std::istream& in, Runtime& rt, const TiledTensor& t) {
  const Header h = read_header(in);
  if (h.dtype != t.dtype() || h.shape != t.shape() || h.tile_shape != t.tile_shape()) {
    throw CheckpointError("stored tensor " + shape_str(h.shape) + " tiles " + shape_str(h.tile_shape) +
                          " does not match " + shape_str(t.shape()) + " tiles " + shape_str(t.tile_shape()));
  }
  rt.wait_all();
  read_tiles(in, rt, t);
}

}  // namespace tiletrain
