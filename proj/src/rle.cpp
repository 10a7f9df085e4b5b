#include "pam/rle.hpp"

#include <charconv>

namespace pam {

RleMask rle_encode(const Mask2D& m) {
  RleMask r{m.cols(), m.rows(), {}};
  bool value = false;
  Index run = 0;
  for (Index i = 0; i < m.size(); ++i) {
    const bool v = m.data()[i] != 0;
    if (v != value) {
      r.runs.push_back(run);
      run = 0;
      value = v;
    }
    ++run;
  }
  r.runs.push_back(run);
  return r;
}

Mask2D rle_decode(const RleMask& r) {
  if (r.width < 0 || r.height < 0) throw Error("bad_rle", "negative mask extent");
  Index total = 0;
  for (Index n : r.runs) {
    if (n < 0) throw Error("bad_rle", "negative run length");
    total += n;
  }
  if (total != r.width * r.height)
    throw Error("bad_rle", "runs cover " + std::to_string(total) + " pixels, mask has " +
                               std::to_string(r.width * r.height));
  Mask2D m(r.height, r.width);
  Index pos = 0;
  std::uint8_t value = 0;
  for (Index n : r.runs) {
    std::fill_n(m.data() + pos, n, value);
    pos += n;
    value ^= 1;
  }
  return m;
}

std::string rle_to_string(const std::vector<Index>& runs) {
  std::string out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(runs[i]);
  }
  return out;
}

std::vector<Index> rle_from_string(std::string_view text) {
  std::vector<Index> runs;
  const char* p = text.data();
  const char* end = p + text.size();
  while (p < end) {
    if (*p == ' ' || *p == ',' || *p == '\n' || *p == '\t') {
      ++p;
      continue;
    }
    Index v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) throw Error("bad_rle", "malformed run list");
    runs.push_back(v);
    p = next;
  }
  return runs;
}

nlohmann::ordered_json rle_to_json(const RleMask& r) {
  nlohmann::ordered_json j;
  j["width"] = r.width;
  j["height"] = r.height;
  j["runs"] = r.runs;
  return j;
}

RleMask rle_from_json(const nlohmann::json& j) {
  try {
    RleMask r;
    r.width = j.at("width").get<Index>();
    r.height = j.at("height").get<Index>();
    const auto& runs = j.at("runs");
    r.runs = runs.is_string() ? rle_from_string(runs.get<std::string>())
                              : runs.get<std::vector<Index>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_rle", e.what());
  }
}

}  // namespace pam
