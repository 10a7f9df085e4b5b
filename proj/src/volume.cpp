#include "pam/volume.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pam {

namespace {

constexpr std::string_view kMagic = "PVOL1\n";

template <typename Scalar>
void append_le(std::string& out, const Scalar* data, Index n) {
  static_assert(std::endian::native == std::endian::little || sizeof(Scalar) == 1,
                "PVOL1 payload assumes a little-endian host");
  out.append(reinterpret_cast<const char*>(data), sizeof(Scalar) * static_cast<std::size_t>(n));
}

struct Header {
  std::array<Index, 3> dims;
  std::array<double, 3> spacing;
  std::string dtype;
  std::size_t payload_offset;
};

Header parse_header(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw Error("bad_magic", "not a PVOL1 file");
  const auto eol = bytes.find('\n', kMagic.size());
  if (eol == std::string_view::npos) throw Error("truncated", "PVOL1 header line is incomplete");
  Header h{};
  try {
    const auto j = nlohmann::json::parse(bytes.substr(kMagic.size(), eol - kMagic.size()));
    h.dims = j.at("dims").get<std::array<Index, 3>>();
    h.spacing = j.at("spacing_mm").get<std::array<double, 3>>();
    h.dtype = j.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_header", std::string("PVOL1 header: ") + e.what());
  }
  if (eol + 1 >= bytes.size()) throw Error("truncated", "PVOL1 separator missing");
  if (bytes[eol + 1] != '\0') throw Error("bad_header", "PVOL1 header not followed by 0x00");
  h.payload_offset = eol + 2;
  return h;
}

}  // namespace

Axis parse_axis(std::string_view name) {
  if (name == "x") return Axis::kX;
  if (name == "y") return Axis::kY;
  if (name == "z") return Axis::kZ;
  throw Error("bad_axis", "axis must be x, y or z, got '" + std::string(name) + "'");
}

const char* axis_name(Axis axis) {
  switch (axis) {
    case Axis::kX: return "x";
    case Axis::kY: return "y";
    case Axis::kZ: return "z";
  }
  return "?";
}

template <typename Scalar>
Volume<Scalar>::Volume(std::array<Index, 3> d, std::array<double, 3> s, Scalar fill)
    : dims(d), spacing(s) {
  for (Index e : dims)
    if (e < 1) throw Error("invalid_volume", "dims must all be >= 1");
  voxels = Voxels::Constant(size(), fill);
  validate();
}

template <typename Scalar>
void Volume<Scalar>::validate() const {
  for (Index e : dims)
    if (e < 1) throw Error("invalid_volume", "dims must all be >= 1");
  for (double s : spacing)
    if (!(s > 0)) throw Error("invalid_volume", "spacing must be positive");
  if (voxels.size() != size()) throw Error("invalid_volume", "voxel count does not match dims");
}

template <typename Scalar>
std::array<Index, 2> Volume<Scalar>::slice_extent(Axis axis) const {
  switch (axis) {
    case Axis::kZ: return {dims[1], dims[0]};
    case Axis::kY: return {dims[2], dims[0]};
    case Axis::kX: return {dims[2], dims[1]};
  }
  return {0, 0};
}

template <typename Scalar>
Image2D<Scalar> Volume<Scalar>::slice(Axis axis, Index i) const {
  if (i < 0 || i >= slice_count(axis))
    throw Error("out_of_range", std::string("slice ") + std::to_string(i) + " outside axis " +
                                    axis_name(axis));
  const auto [rows, cols] = slice_extent(axis);
  Image2D<Scalar> out(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      switch (axis) {
        case Axis::kZ: out(r, c) = (*this)(c, r, i); break;
        case Axis::kY: out(r, c) = (*this)(c, i, r); break;
        case Axis::kX: out(r, c) = (*this)(i, c, r); break;
      }
    }
  return out;
}

template <typename Scalar>
void Volume<Scalar>::set_slice(Axis axis, Index i, const Image2D<Scalar>& plane) {
  if (i < 0 || i >= slice_count(axis)) throw Error("out_of_range", "slice index out of range");
  const auto [rows, cols] = slice_extent(axis);
  if (plane.rows() != rows || plane.cols() != cols)
    throw Error("shape_mismatch", "slice plane has wrong extent");
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      switch (axis) {
        case Axis::kZ: (*this)(c, r, i) = plane(r, c); break;
        case Axis::kY: (*this)(c, i, r) = plane(r, c); break;
        case Axis::kX: (*this)(i, c, r) = plane(r, c); break;
      }
    }
}

template <typename Scalar>
std::string encode_volume(const Volume<Scalar>& v) {
  v.validate();
  nlohmann::ordered_json header;
  header["dims"] = v.dims;
  header["spacing_mm"] = v.spacing;
  header["dtype"] = dtype_name<Scalar>();
  std::string out(kMagic);
  out += header.dump();
  out += '\n';
  out += '\0';
  append_le(out, v.voxels.data(), v.size());
  return out;
}

std::string peek_dtype(std::string_view bytes) { return parse_header(bytes).dtype; }

template <typename Scalar>
Volume<Scalar> decode_volume(std::string_view bytes) {
  const Header h = parse_header(bytes);
  if (h.dtype != dtype_name<Scalar>())
    throw Error("dtype_mismatch", "file dtype " + h.dtype + ", expected " + dtype_name<Scalar>());
  Volume<Scalar> v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  for (Index e : v.dims)
    if (e < 1) throw Error("bad_header", "dims must all be >= 1");
  for (double s : v.spacing)
    if (!(s > 0)) throw Error("bad_header", "spacing must be positive");
  const std::size_t need = sizeof(Scalar) * static_cast<std::size_t>(v.size());
  const std::size_t have = bytes.size() - h.payload_offset;
  if (have < need)
    throw Error("truncated", "payload has " + std::to_string(have) + " bytes, expected " +
                                 std::to_string(need));
  if (have > need) throw Error("bad_header", "payload longer than dims declare");
  v.voxels.resize(v.size());
  std::memcpy(v.voxels.data(), bytes.data() + h.payload_offset, need);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io", "short write to " + path);
}

template <typename Scalar>
void write_volume(const Volume<Scalar>& v, const std::string& path) {
  write_file(path, encode_volume(v));
}

template <typename Scalar>
Volume<Scalar> read_volume(const std::string& path) {
  return decode_volume<Scalar>(read_file(path));
}

template <typename Scalar>
Fingerprint fingerprint(const Volume<Scalar>& v) {
  const auto [dmin, dmax] = std::minmax_element(v.dims.begin(), v.dims.end());
  const auto [smin, smax] = std::minmax_element(v.spacing.begin(), v.spacing.end());
  return {static_cast<double>(*dmin) / static_cast<double>(*dmax), *smin / *smax};
}

std::vector<Index> slice_areas(const Mask3D& m, Axis axis) {
  std::vector<Index> areas(m.slice_count(axis), 0);
  for (Index z = 0; z < m.dims[2]; ++z)
    for (Index y = 0; y < m.dims[1]; ++y)
      for (Index x = 0; x < m.dims[0]; ++x) {
        if (!m(x, y, z)) continue;
        const Index k = axis == Axis::kZ ? z : axis == Axis::kY ? y : x;
        ++areas[k];
      }
  return areas;
}

Index largest_foreground_slice(const Mask3D& m, Axis axis) {
  const auto areas = slice_areas(m, axis);
  const auto best = std::max_element(areas.begin(), areas.end());
  if (best == areas.end() || *best == 0) throw Error("empty_mask", "mask has no foreground");
  return best - areas.begin();  // max_element returns the first maximum
}

template struct Volume<float>;
template struct Volume<std::uint8_t>;
template std::string encode_volume(const Volume<float>&);
template std::string encode_volume(const Volume<std::uint8_t>&);
template Volume<float> decode_volume(std::string_view);
template Volume<std::uint8_t> decode_volume(std::string_view);
template void write_volume(const Volume<float>&, const std::string&);
template void write_volume(const Volume<std::uint8_t>&, const std::string&);
template Volume<float> read_volume(const std::string&);
template Volume<std::uint8_t> read_volume(const std::string&);
template Fingerprint fingerprint(const Volume<float>&);
template Fingerprint fingerprint(const Volume<std::uint8_t>&);

}  // namespace pam
