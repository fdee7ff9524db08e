// Copyright 2026 The TileTrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tiletrain/runtime.hpp"

namespace tiletrain {

// F32 carries all values; I32 carries token ids and labels.
enum class DType : std::uint8_t { F32 = 1, I32 = 2 };

std::size_t dtype_size(DType dtype) noexcept;

using Shape = std::vector<std::size_t>;

struct Fill {
  enum class Kind : std::uint8_t { Zeros, Constant, Normal };
  Kind kind = Kind::Zeros;
  float value = 0.0f;
  float mean = 0.0f;
  float stddev = 1.0f;
  std::uint64_t seed = 0;

  static Fill zeros() { return {}; }
  static Fill constant(float c) { return {Kind::Constant, c}; }
  static Fill normal(float mean, float stddev, std::uint64_t seed) { return {Kind::Normal, 0.0f, mean, stddev, seed}; }
};

// A row-major grid of row-major tiles. Metadata is immutable; data lives in
// the runtime and changes only through tasks or host writes.
class TiledTensor {
 public:
  TiledTensor() = default;
  TiledTensor(Runtime& rt, Shape shape, Shape tile_shape, DType dtype = DType::F32);

  bool empty() const noexcept { return tiles_.empty(); }
  std::size_t ndim() const noexcept { return shape_.size(); }
  const Shape& shape() const noexcept { return shape_; }
  const Shape& tile_shape() const noexcept { return tile_shape_; }
  const Shape& grid() const noexcept { return grid_; }
  DType dtype() const noexcept { return dtype_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept;
  std::size_t nbytes() const noexcept { return numel() * dtype_size(dtype_); }

  std::size_t num_tiles() const noexcept { return tiles_.size(); }
  const std::vector<TileHandle>& tiles() const noexcept { return tiles_; }
  TileHandle tile(std::size_t linear) const { return tiles_.at(linear); }
  TileHandle tile(std::span<const std::size_t> coord) const { return tiles_.at(linear_index(coord)); }
  TileHandle tile(std::initializer_list<std::size_t> coord) const {
    return tile(std::span<const std::size_t>(coord.begin(), coord.size()));
  }

  std::size_t linear_index(std::span<const std::size_t> coord) const;
  Shape coord_of(std::size_t linear) const;

  // Extent and first element of the tile at `coord` along `axis`.
  std::size_t tile_extent(std::size_t axis, std::size_t index) const;
  std::size_t tile_offset(std::size_t axis, std::size_t index) const { return index * tile_shape_.at(axis); }
  Shape tile_dims(std::span<const std::size_t> coord) const;
  std::size_t tile_numel(std::span<const std::size_t> coord) const;

  bool same_layout(const TiledTensor& other) const noexcept {
    return shape_ == other.shape_ && tile_shape_ == other.tile_shape_ && dtype_ == other.dtype_;
  }

 private:
  Shape shape_;
  Shape tile_shape_;
  Shape grid_;
  DType dtype_ = DType::F32;
  std::vector<TileHandle> tiles_;
};

// Value and gradient with identical layout.
struct TensorGradPair {
  std::string name;
  TiledTensor value;
  TiledTensor grad;
};

// Tile dims larger than the shape are clamped. Normal fills are generated
// densely in row-major order, so the values do not depend on the tiling.
TiledTensor make_tiled(Runtime& rt, const Shape& shape, const Shape& tile_shape, const Fill& fill = Fill::zeros(),
                       DType dtype = DType::F32);

// Dense row-major copies. Reading waits for pending tasks first.
std::vector<float> to_dense(Runtime& rt, const TiledTensor& t);
std::vector<std::int32_t> to_dense_i32(Runtime& rt, const TiledTensor& t);
TiledTensor from_dense(Runtime& rt, std::span<const float> data, const Shape& shape, const Shape& tile_shape);
TiledTensor from_dense_i32(Runtime& rt, std::span<const std::int32_t> data, const Shape& shape,
                           const Shape& tile_shape);
void assign_dense(Runtime& rt, const TiledTensor& t, std::span<const float> data);
void assign_dense_i32(Runtime& rt, const TiledTensor& t, std::span<const std::int32_t> data);

// Binary checkpoint record, little-endian:
//   "TTCK" u32 version, u8 dtype, u32 ndim, u64 dims[ndim], u64 tile[ndim],
//   then every tile's elements in grid order.
void save_tensor(std::ostream& out, Runtime& rt, const TiledTensor& t);
TiledTensor load_tensor(std::istream& in, Runtime& rt);
// Loads into an existing tensor; the stored layout must match.
void load_tensor_into(std::istream& in, Runtime& rt, const TiledTensor& t);

}  // namespace tiletrain
