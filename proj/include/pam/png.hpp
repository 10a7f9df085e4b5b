#pragma once

#include "pam/volume.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace pam {

using Gray8 = Image2D<std::uint8_t>;

/// 8-bit grayscale PNG.
std::string encode_png(const Gray8& image);
/// Errors: bad_png.
Gray8 decode_png(std::string_view bytes);

/// "auto" = 0.5/99.5 percentile window of the slice, or "lo,hi" in
/// intensity units; linear map to 0..255. Errors: bad_window.
Gray8 window_slice(const Image& slice, std::string_view window = "auto");

}  // namespace pam
