#pragma once

#include "pam/volume.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pam {

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dsc(const Mask2D& a, const Mask2D& b);
double dsc(const Mask3D& a, const Mask3D& b);

/// |M| / |tight box|. Throws Error("empty_mask").
double box_ratio(const Mask2D& m);

/// |M| / number of pixels whose centres lie inside or on the convex hull of
/// the mask's pixel centres. Collinear masks score 1.
double convex_ratio(const Mask2D& m);

/// 0.75 |M| / (0.8 pi RI)^(5/3), RI the centroid-relative second moment of
/// pixel centres. nullopt when |M| <= 1 (RI = 0). Not scale invariant.
std::optional<double> iri(const Mask2D& m);

struct IrregularityReport {
  double box_ratio = 0;
  double convex_ratio = 0;
  std::optional<double> iri;  ///< nullopt: singular
  Index slice = 0;
  Index n_pixels = 0;
};

IrregularityReport irregularity(const Mask2D& m, Index slice = 0);
/// Evaluated on the largest foreground slice along `axis`.
IrregularityReport irregularity(const Mask3D& m, Axis axis = Axis::kZ);

struct ObjectRecord {
  std::string dataset;
  std::string object_id;
  double dsc = 0;
  IrregularityReport shape;
};

struct DatasetSummary {
  std::string dataset;
  std::size_t objects = 0;
  double mean_dsc = 0;
};

/// Unweighted mean DSC per dataset, sorted by dataset name. Throws
/// std::invalid_argument on an empty input.
std::vector<DatasetSummary> aggregate(const std::vector<ObjectRecord>& records);

/// Columns: dataset,object_id,dsc,box_ratio,convex_ratio,iri,n_pixels.
/// Singular IRI is written as an empty field.
std::string report_csv(const std::vector<ObjectRecord>& records);

}  // namespace pam
