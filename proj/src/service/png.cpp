#include "pam/png.hpp"

#include "pam/error.hpp"
#include "pam/preprocess.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <vector>

namespace pam {

std::string encode_png(const Gray8& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.cols());
  img.height = static_cast<png_uint_32>(image.rows());
  img.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.data(), 0, nullptr))
    throw Error("png", img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.data(), 0, nullptr))
    throw Error("png", img.message);
  out.resize(size);
  return out;
}

Gray8 decode_png(std::string_view bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw Error("bad_png", img.message);
  img.format = PNG_FORMAT_GRAY;
  Gray8 out(img.height, img.width);
  if (!png_image_finish_read(&img, nullptr, out.data(), 0, nullptr))
    throw Error("bad_png", img.message);
  return out;
}

namespace {

double parse_double(std::string_view s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v))
    throw Error("bad_window", "not a number: " + std::string(s));
  return v;
}

}  // namespace

Gray8 window_slice(const Image& slice, std::string_view window) {
  NormParams p;
  if (window.empty() || window == "auto") {
    p = norm_params(slice, Mask2D::Ones(slice.rows(), slice.cols()));
  } else {
    const auto comma = window.find(',');
    if (comma == std::string_view::npos)
      throw Error("bad_window", "expected \"auto\" or \"lo,hi\"");
    p.v_min = parse_double(window.substr(0, comma));
    p.v_max = parse_double(window.substr(comma + 1));
    if (!(p.v_max >= p.v_min)) throw Error("bad_window", "window upper bound below lower bound");
    p.degenerate = p.v_max == p.v_min;
  }
  const Image unit = apply_normalization(slice, p);
  Gray8 out(slice.rows(), slice.cols());
  for (Index i = 0; i < unit.size(); ++i)
    out.data()[i] = static_cast<std::uint8_t>(std::lround(unit.data()[i] * 255.0f));
  return out;
}

}  // namespace pam
