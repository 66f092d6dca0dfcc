#include "mcswin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "mcswin/error.hpp"

namespace mcswin {
namespace {

void require_same_shape(const LabelMap& a, const LabelMap& b) {
  if (!(a.shape == b.shape)) throw ValidationError("label maps differ in shape");
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact squared distance transform along one line (lower envelope of
// parabolas), sample positions i * step.
void edt_line(std::vector<double>& f, double step, std::vector<double>& out, std::vector<int>& v,
              std::vector<double>& zbuf) {
  const int n = static_cast<int>(f.size());
  out.assign(n, kInf);
  v.assign(n, 0);
  zbuf.assign(n + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double xq = q * step;
    while (k >= 0) {
      const double xv = v[k] * step;
      const double s = ((f[q] + xq * xq) - (f[v[k]] + xv * xv)) / (2.0 * (xq - xv));
      if (s <= zbuf[k]) {
        --k;
      } else {
        ++k;
        v[k] = q;
        zbuf[k] = s;
        zbuf[k + 1] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      zbuf[0] = -kInf;
      zbuf[1] = kInf;
    }
  }
  if (k < 0) return;
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double x = q * step;
    while (zbuf[j + 1] < x) ++j;
    const double d = x - v[j] * step;
    out[q] = d * d + f[v[j]];
  }
}

// Squared distance (mm^2) from every voxel to the nearest voxel of `surface`.
std::vector<double> squared_distance_field(Shape3 s, const SurfaceSet& surface, const Spacing& sp) {
  const auto n = static_cast<std::size_t>(s.voxels());
  std::vector<double> g(n, kInf);
  for (const auto& p : surface.voxels)
    g[static_cast<std::size_t>((p[0] * s.h + p[1]) * s.w + p[2])] = 0.0;

  std::vector<double> line, out, zbuf;
  std::vector<int> v;
  auto pass = [&](std::int64_t len, double step, auto index_of, std::int64_t outer1, std::int64_t outer2) {
    line.resize(static_cast<std::size_t>(len));
    for (std::int64_t a = 0; a < outer1; ++a)
      for (std::int64_t b = 0; b < outer2; ++b) {
        for (std::int64_t i = 0; i < len; ++i) line[i] = g[index_of(a, b, i)];
        edt_line(line, step, out, v, zbuf);
        for (std::int64_t i = 0; i < len; ++i) g[index_of(a, b, i)] = out[i];
      }
  };
  pass(s.w, sp.x, [&](auto z, auto y, auto x) { return std::size_t((z * s.h + y) * s.w + x); }, s.d, s.h);
  pass(s.h, sp.y, [&](auto z, auto x, auto y) { return std::size_t((z * s.h + y) * s.w + x); }, s.d, s.w);
  pass(s.d, sp.z, [&](auto y, auto x, auto z) { return std::size_t((z * s.h + y) * s.w + x); }, s.h, s.w);
  return g;
}

std::vector<double> directed_distances(Shape3 s, const SurfaceSet& from, const SurfaceSet& to,
                                       const Spacing& sp) {
  const auto field = squared_distance_field(s, to, sp);
  std::vector<double> d;
  d.reserve(from.voxels.size());
  for (const auto& p : from.voxels)
    d.push_back(std::sqrt(field[static_cast<std::size_t>((p[0] * s.h + p[1]) * s.w + p[2])]));
  return d;
}

std::string format_optional(const std::optional<double>& v, int precision) {
  if (!v) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << *v;
  return os.str();
}

}  // namespace

double dice(const LabelMap& pred, const LabelMap& gt, int label) {
  require_same_shape(pred, gt);
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool in_p = pred.data[i] == label, in_g = gt.data[i] == label;
    p += in_p;
    g += in_g;
    both += in_p && in_g;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * double(both) / double(p + g);
}

SurfaceSet extract_surface(const LabelMap& m, int label) {
  SurfaceSet out;
  out.spacing = m.spacing;
  const Shape3 s = m.shape;
  for (std::int64_t z = 0; z < s.d; ++z)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        if (m.at(z, y, x) != label) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z == s.d - 1 || y == s.h - 1 || x == s.w - 1;
        if (edge || m.at(z - 1, y, x) != label || m.at(z + 1, y, x) != label ||
            m.at(z, y - 1, x) != label || m.at(z, y + 1, x) != label ||
            m.at(z, y, x - 1) != label || m.at(z, y, x + 1) != label)
          out.voxels.push_back({z, y, x});
      }
  return out;
}

double nearest_rank_percentile(std::vector<double>& values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * double(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

std::optional<double> surface_distance_percentile(const LabelMap& pred, const LabelMap& gt, int label,
                                                  const Spacing& spacing, double percentile) {
  require_same_shape(pred, gt);
  if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0))
    throw ValidationError("spacing must be positive");
  const auto sp = extract_surface(pred, label);
  const auto sg = extract_surface(gt, label);
  if (sp.voxels.empty() || sg.voxels.empty()) return std::nullopt;
  auto d_pg = directed_distances(pred.shape, sp, sg, spacing);
  auto d_gp = directed_distances(pred.shape, sg, sp, spacing);
  return std::max(nearest_rank_percentile(d_pg, percentile), nearest_rank_percentile(d_gp, percentile));
}

CaseMetrics evaluate_case(const std::string& id, const LabelMap& pred, const LabelMap& gt,
                          const Spacing& spacing) {
  if (!(pred.shape == gt.shape))
    throw ValidationError("case " + id + ": prediction and ground truth shapes differ");
  CaseMetrics c;
  c.id = id;
  for (int k = 1; k < kNumClasses; ++k) {
    c.dice[k - 1] = dice(pred, gt, k);
    c.hd95[k - 1] = hd95(pred, gt, k, spacing);
  }
  return c;
}

MetricsReport summarize(std::vector<CaseMetrics> cases) {
  if (cases.empty()) throw ValidationError("cannot evaluate an empty test set");
  MetricsReport r;
  r.cases = std::move(cases);
  for (int k = 0; k < kNumForeground; ++k) {
    ClassSummary& s = r.per_class[k];
    double hd_sum = 0.0;
    for (const auto& c : r.cases) {
      s.dice += c.dice[k];
      ++s.cases;
      if (c.hd95[k]) {
        hd_sum += *c.hd95[k];
        ++s.hd95_defined_cases;
      }
    }
    s.dice /= double(s.cases);
    if (s.hd95_defined_cases > 0) s.hd95 = hd_sum / double(s.hd95_defined_cases);
  }
  double dice_sum = 0.0, hd_sum = 0.0;
  int hd_n = 0;
  for (int k = 0; k < kNumForeground; ++k) {
    dice_sum += r.per_class[k].dice;
    if (r.per_class[k].hd95) {
      hd_sum += *r.per_class[k].hd95;
      ++hd_n;
    } else {
      r.hd95_excluded.push_back(k + 1);
    }
  }
  r.overall_dice = dice_sum / kNumForeground;
  if (hd_n > 0) r.overall_hd95 = hd_sum / hd_n;
  return r;
}

MetricsReport evaluate(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                       const std::vector<LabelMap>& gts, const std::optional<Spacing>& spacing_override) {
  if (ids.empty()) throw ValidationError("cannot evaluate an empty test set");
  if (ids.size() != preds.size() || ids.size() != gts.size())
    throw ValidationError("evaluate: ids, predictions and ground truths differ in count");
  std::vector<CaseMetrics> cases;
  for (std::size_t i = 0; i < ids.size(); ++i)
    cases.push_back(evaluate_case(ids[i], preds[i], gts[i], spacing_override.value_or(gts[i].spacing)));
  return summarize(std::move(cases));
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "case,class,dice,hd95_mm,hd95_defined\n";
  char buf[64];
  for (const auto& c : cases)
    for (int k = 0; k < kNumForeground; ++k) {
      os << c.id << ',' << structure_name(k + 1) << ',';
      std::snprintf(buf, sizeof buf, "%.17g", c.dice[k]);
      os << buf << ',';
      if (c.hd95[k]) {
        std::snprintf(buf, sizeof buf, "%.17g", *c.hd95[k]);
        os << buf << ",1\n";
      } else {
        os << "nan,0\n";
      }
    }
  return os.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %8s %11s\n", "Structure", "Dice", "HD95 (mm)");
  os << line << std::string(33, '-') << '\n';
  for (int k = 0; k < kNumForeground; ++k) {
    const auto& s = per_class[k];
    std::snprintf(line, sizeof line, "%-12s %8.3f %11s\n", std::string(structure_name(k + 1)).c_str(),
                  s.dice, format_optional(s.hd95, 2).c_str());
    os << line;
  }
  std::snprintf(line, sizeof line, "%-12s %8.3f %11s\n", "Overall", overall_dice,
                format_optional(overall_hd95, 2).c_str());
  os << line;
  for (int k = 0; k < kNumForeground; ++k) {
    const auto& s = per_class[k];
    if (s.hd95_defined_cases < s.cases)
      os << "note: " << structure_name(k + 1) << " HD95 undefined in " << (s.cases - s.hd95_defined_cases)
         << " of " << s.cases << " case(s)\n";
  }
  return os.str();
}

}  // namespace mcswin
