#pragma once

#include "pam/volume.hpp"

#include <json.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace pam {

/// Row-major run lengths alternating background/foreground, starting with
/// background (a leading 0 when the first pixel is foreground).
struct RleMask {
  Index width = 0;
  Index height = 0;
  std::vector<Index> runs;

  bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const Mask2D& m);
/// Errors: bad_rle (negative run, run sum != width * height).
Mask2D rle_decode(const RleMask& r);

/// Space-separated run lengths.
std::string rle_to_string(const std::vector<Index>& runs);
std::vector<Index> rle_from_string(std::string_view text);

nlohmann::ordered_json rle_to_json(const RleMask& r);
RleMask rle_from_json(const nlohmann::json& j);

}  // namespace pam
