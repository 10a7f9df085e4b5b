#pragma once

#include "pam/autodiff.hpp"
#include "pam/error.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace pam {

template <typename Scalar>
using Image2D = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Image = Image2D<float>;
using Mask2D = Image2D<std::uint8_t>;

enum class Axis : int { kX = 0, kY = 1, kZ = 2 };

Axis parse_axis(std::string_view name);
const char* axis_name(Axis axis);

/// 3D scalar field, voxel (x, y, z) at (z * Y + y) * X + x. Spacing in mm.
template <typename Scalar>
struct Volume {
  using Voxels = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  std::array<Index, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Voxels voxels;

  Volume() : voxels(Voxels::Zero(1)) {}
  Volume(std::array<Index, 3> d, std::array<double, 3> s, Scalar fill = Scalar(0));

  Index size() const { return dims[0] * dims[1] * dims[2]; }
  Index index(Index x, Index y, Index z) const { return (z * dims[1] + y) * dims[0] + x; }
  Scalar& operator()(Index x, Index y, Index z) { return voxels[index(x, y, z)]; }
  Scalar operator()(Index x, Index y, Index z) const { return voxels[index(x, y, z)]; }

  Index slice_count(Axis axis) const { return dims[static_cast<int>(axis)]; }
  /// In-plane extent (rows, cols) of slices along `axis`.
  std::array<Index, 2> slice_extent(Axis axis) const;
  /// z slices: rows = y, cols = x. y slices: rows = z, cols = x. x slices: rows = z, cols = y.
  Image2D<Scalar> slice(Axis axis, Index i) const;
  void set_slice(Axis axis, Index i, const Image2D<Scalar>& plane);

  /// Throws Error("invalid_volume") when dims/spacing/voxel count are inconsistent.
  void validate() const;
  bool operator==(const Volume& o) const {
    return dims == o.dims && spacing == o.spacing && (voxels == o.voxels).all();
  }
};

using VolumeF = Volume<float>;
using Mask3D = Volume<std::uint8_t>;

template <typename Scalar>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<std::uint8_t>() { return "u8"; }

// PVOL1: "PVOL1\n", one JSON header line, a 0x00 byte, little-endian voxels.
template <typename Scalar>
std::string encode_volume(const Volume<Scalar>& v);
template <typename Scalar>
Volume<Scalar> decode_volume(std::string_view bytes);
/// dtype declared in a PVOL1 header ("f32" or "u8").
std::string peek_dtype(std::string_view bytes);

template <typename Scalar>
void write_volume(const Volume<Scalar>& v, const std::string& path);
template <typename Scalar>
Volume<Scalar> read_volume(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

struct Fingerprint {
  double size_anisotropy = 1.0;
  double spacing_anisotropy = 1.0;
};

template <typename Scalar>
Fingerprint fingerprint(const Volume<Scalar>& v);

/// Foreground pixel count per slice along `axis`.
std::vector<Index> slice_areas(const Mask3D& m, Axis axis);
/// Slice with the most foreground pixels; ties go to the smallest index.
Index largest_foreground_slice(const Mask3D& m, Axis axis);

inline Index count(const Mask2D& m) { return (m != 0).count(); }

}  // namespace pam
