#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mcswin/volume.hpp"

namespace mcswin {

/// Boundary voxels of one class: members with at least one 6-neighbour outside
/// the class or outside the grid.
struct SurfaceSet {
  std::vector<std::array<std::int64_t, 3>> voxels;  // (z, y, x), z-major order
  Spacing spacing;
};

/// 2|P∩G| / (|P|+|G|). Both empty -> 1, exactly one empty -> 0.
double dice(const LabelMap& pred, const LabelMap& gt, int label);

SurfaceSet extract_surface(const LabelMap& labels, int label);

/// Symmetric nearest-rank percentile of surface-to-surface distances in mm:
/// max(P_q over pred surface of distance to gt surface, and vice versa).
/// std::nullopt when either surface is empty. `spacing` overrides the grids'.
std::optional<double> surface_distance_percentile(const LabelMap& pred, const LabelMap& gt, int label,
                                                  const Spacing& spacing, double percentile);

inline std::optional<double> hd95(const LabelMap& pred, const LabelMap& gt, int label,
                                  const Spacing& spacing) {
  return surface_distance_percentile(pred, gt, label, spacing, 95.0);
}

/// Smallest value whose rank is >= ceil(q/100 * n). Sorts `values`.
double nearest_rank_percentile(std::vector<double>& values, double q);

inline constexpr int kNumForeground = kNumClasses - 1;

struct CaseMetrics {
  std::string id;
  std::array<double, kNumForeground> dice{};
  std::array<std::optional<double>, kNumForeground> hd95{};
};

struct ClassSummary {
  double dice = 0.0;                  // mean over cases
  std::optional<double> hd95;         // mean over cases where defined
  int hd95_defined_cases = 0;
  int cases = 0;
};

/// Per-class means plus an Overall row: the unweighted mean over the five
/// foreground classes. Classes with no defined HD95 are left out of the
/// overall HD95 and listed in hd95_excluded.
struct MetricsReport {
  std::vector<CaseMetrics> cases;
  std::array<ClassSummary, kNumForeground> per_class{};
  double overall_dice = 0.0;
  std::optional<double> overall_hd95;
  std::vector<int> hd95_excluded;  // foreground labels 1..5

  /// `case,class,dice,hd95_mm,hd95_defined` rows, one per case and class.
  std::string to_csv() const;
  /// Aligned text table: Lung R, Lung L, Spinal Cord, Esophagus, GTV, Overall.
  std::string to_table() const;
};

CaseMetrics evaluate_case(const std::string& id, const LabelMap& pred, const LabelMap& gt,
                          const Spacing& spacing);

/// ValidationError on an empty set or mismatched pairs.
MetricsReport evaluate(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                       const std::vector<LabelMap>& gts, const std::optional<Spacing>& spacing_override);

MetricsReport summarize(std::vector<CaseMetrics> cases);

}  // namespace mcswin
