#include "pam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace pam {

namespace {

double dsc_counts(Index inter, Index a, Index b) {
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

template <typename A>
double dsc_arrays(const A& a, const A& b) {
  Index inter = 0, na = 0, nb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i] != 0, y = b.data()[i] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  return dsc_counts(inter, na, nb);
}

struct Point {
  std::int64_t x, y;
  bool operator<(const Point& o) const { return x < o.x || (x == o.x && y < o.y); }
  bool operator==(const Point& o) const = default;
};

std::int64_t cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Counter-clockwise hull without collinear points.
std::vector<Point> monotone_chain(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace

double dsc(const Mask2D& a, const Mask2D& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("shape_mismatch", "dsc: masks differ in shape");
  return dsc_arrays(a, b);
}

double dsc(const Mask3D& a, const Mask3D& b) {
  if (a.dims != b.dims) throw Error("shape_mismatch", "dsc: volumes differ in shape");
  return dsc_arrays(a.voxels, b.voxels);
}

double box_ratio(const Mask2D& m) {
  Index n = 0, x0 = m.cols(), y0 = m.rows(), x1 = -1, y1 = -1;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      if (!m(r, c)) continue;
      ++n;
      x0 = std::min(x0, c);
      x1 = std::max(x1, c);
      y0 = std::min(y0, r);
      y1 = std::max(y1, r);
    }
  if (n == 0) throw Error("empty_mask", "box_ratio of an empty mask");
  return static_cast<double>(n) / static_cast<double>((x1 - x0 + 1) * (y1 - y0 + 1));
}

double convex_ratio(const Mask2D& m) {
  std::vector<Point> pts;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (m(r, c)) pts.push_back({c, r});
  if (pts.empty()) throw Error("empty_mask", "convex_ratio of an empty mask");
  const auto hull = monotone_chain(pts);
  if (hull.size() < 3) return 1.0;

  std::int64_t x0 = hull[0].x, x1 = x0, y0 = hull[0].y, y1 = y0;
  for (const auto& p : hull) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  Index inside = 0;
  for (std::int64_t y = y0; y <= y1; ++y)
    for (std::int64_t x = x0; x <= x1; ++x) {
      const Point q{x, y};
      bool in = true;
      for (std::size_t i = 0; i < hull.size() && in; ++i)
        in = cross(hull[i], hull[(i + 1) % hull.size()], q) >= 0;
      inside += in;
    }
  return static_cast<double>(pts.size()) / static_cast<double>(inside);
}

std::optional<double> iri(const Mask2D& m) {
  double n = 0, sx = 0, sy = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (m(r, c)) {
        n += 1;
        sx += static_cast<double>(c) + 0.5;
        sy += static_cast<double>(r) + 0.5;
      }
  if (n <= 1) return std::nullopt;
  const double cx = sx / n, cy = sy / n;
  double ri = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      if (m(r, c)) {
        const double dx = static_cast<double>(c) + 0.5 - cx;
        const double dy = static_cast<double>(r) + 0.5 - cy;
        ri += dx * dx + dy * dy;
      }
  return 0.75 * n / std::pow(0.8 * std::numbers::pi * ri, 5.0 / 3.0);
}

IrregularityReport irregularity(const Mask2D& m, Index slice) {
  IrregularityReport rep;
  rep.slice = slice;
  rep.n_pixels = count(m);
  rep.box_ratio = box_ratio(m);
  rep.convex_ratio = convex_ratio(m);
  rep.iri = iri(m);
  return rep;
}

IrregularityReport irregularity(const Mask3D& m, Axis axis) {
  const Index k = largest_foreground_slice(m, axis);
  return irregularity(m.slice(axis, k), k);
}

std::vector<DatasetSummary> aggregate(const std::vector<ObjectRecord>& records) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : records) groups[r.dataset].push_back(r.dsc);
  std::vector<DatasetSummary> out;
  for (auto& [name, values] : groups) {
    // sorted so the sum is order independent
    std::sort(values.begin(), values.end());
    double s = 0;
    for (double v : values) s += v;
    out.push_back({name, values.size(), s / static_cast<double>(values.size())});
  }
  return out;
}

std::string report_csv(const std::vector<ObjectRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  os << "dataset,object_id,dsc,box_ratio,convex_ratio,iri,n_pixels\n";
  for (const auto& r : records) {
    os << r.dataset << ',' << r.object_id << ',' << r.dsc << ',' << r.shape.box_ratio << ','
       << r.shape.convex_ratio << ',';
    if (r.shape.iri) os << *r.shape.iri;
    os << ',' << r.shape.n_pixels << '\n';
  }
  return os.str();
}

}  // namespace pam
