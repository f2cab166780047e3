#include "usnav/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>

#include "usnav/detail/numtext.hpp"
#include "usnav/error.hpp"
#include "usnav/segment.hpp"

namespace usnav {

namespace fs = std::filesystem;
using json = nlohmann::json;

void SpecimenStudy::validate() const {
  if (!(tumor.geom == clips.geom)) throw Error(Errc::InvalidArgument, "specimen tumor and clip masks differ in grid");
  if (volume && !(volume->geom == tumor.geom)) {
    throw Error(Errc::InvalidArgument, "specimen volume and masks differ in grid");
  }
}

double ClipModel::nominal_volume_mm3() const { return M_PI * radius_mm * radius_mm * length_mm; }

void stamp_clip(LabelMask& m, const Vec3& center, const Vec3& axis, const ClipModel& model) {
  if (!center.allFinite() || !(axis.norm() > 0.0)) throw Error(Errc::InvalidPoint, "bad clip placement");
  const Vec3 a = axis.normalized();
  const double half = 0.5 * model.length_mm;
  const double reach = std::hypot(half, model.radius_mm);
  const Vec3 lo = m.geom.to_voxel(center - Vec3::Constant(reach));
  const Vec3 hi = m.geom.to_voxel(center + Vec3::Constant(reach));
  for (int k = std::max(0, static_cast<int>(std::floor(lo.z()))); k <= std::min(m.geom.dims[2] - 1, static_cast<int>(std::ceil(hi.z()))); ++k) {
    for (int j = std::max(0, static_cast<int>(std::floor(lo.y()))); j <= std::min(m.geom.dims[1] - 1, static_cast<int>(std::ceil(hi.y()))); ++j) {
      for (int i = std::max(0, static_cast<int>(std::floor(lo.x()))); i <= std::min(m.geom.dims[0] - 1, static_cast<int>(std::ceil(hi.x()))); ++i) {
        const Vec3 d = m.geom.center(i, j, k) - center;
        const double s = d.dot(a);
        if (std::abs(s) > half) continue;
        if ((d - s * a).squaredNorm() <= model.radius_mm * model.radius_mm) m.data[m.geom.index(i, j, k)] = 1;
      }
    }
  }
}

std::vector<DetectedClip> detect_clips(const LabelMask& clips, const ClipModel& model) {
  if (clips.empty()) throw Error(Errc::NoClips, "clip mask is empty");
  const double nominal = model.nominal_volume_mm3();
  std::vector<DetectedClip> out;
  for (const auto& c : connected_components(clips, 26)) {
    DetectedClip d;
    d.center = c.centroid;
    d.voxels = c.voxels;
    d.volume_mm3 = c.volume_mm3;
    d.plausible = c.volume_mm3 >= model.min_factor * nominal && c.volume_mm3 <= model.max_factor * nominal;
    out.push_back(d);
  }
  return out;
}

std::vector<double> clip_to_tumor_distances(const LabelMask& tumor, const std::vector<Vec3>& centers) {
  if (tumor.empty()) throw Error(Errc::EmptySegment, "specimen tumor mask is empty");
  if (centers.empty()) throw Error(Errc::NoClips, "no clip centres");
  const DistanceField sdf = distance_field(tumor);
  std::vector<double> out;
  out.reserve(centers.size());
  for (const auto& c : centers) {
    const Vec3 v = tumor.geom.to_voxel(c);
    for (int a = 0; a < 3; ++a) {
      if (!(v[a] >= 0.0 && v[a] <= tumor.geom.dims[a] - 1)) {
        throw Error(Errc::InvalidPoint, "clip centre lies outside the specimen grid");
      }
    }
    out.push_back(std::abs(sdf.sample(c)));
  }
  return out;
}

std::vector<double> clip_to_tumor_distances(const SpecimenStudy& study, const ClipModel& model) {
  study.validate();
  std::vector<Vec3> centers;
  for (const auto& c : detect_clips(study.clips, model)) centers.push_back(c.center);
  return clip_to_tumor_distances(study.tumor, centers);
}

// ---- matching -----------------------------------------------------------------

namespace {

// Rectangular assignment, rows <= cols; returns the column for each row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n ? static_cast<int>(cost[0].size()) : 0;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j]) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

}  // namespace

ClipPairing match_clips(const std::vector<double>& a, const std::vector<double>& b) {
  ClipPairing out;
  if (a.empty() || b.empty()) {
    for (int i = 0; i < static_cast<int>(a.size()); ++i) out.unmatched_intraop.push_back(i);
    for (int j = 0; j < static_cast<int>(b.size()); ++j) out.unmatched_postop.push_back(j);
    return out;
  }
  const bool transpose = a.size() > b.size();
  const auto& rows = transpose ? b : a;
  const auto& cols = transpose ? a : b;
  std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) cost[i][j] = std::abs(rows[i] - cols[j]);
  }
  const std::vector<int> assign = hungarian(cost);
  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  for (std::size_t r = 0; r < assign.size(); ++r) {
    const int ia = transpose ? assign[r] : static_cast<int>(r);
    const int ib = transpose ? static_cast<int>(r) : assign[r];
    out.pairs.emplace_back(ia, ib);
    used_a[ia] = used_b[ib] = 1;
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [ia, ib] : out.pairs) out.cost += std::abs(a[ia] - b[ib]);
  for (int i = 0; i < static_cast<int>(a.size()); ++i) {
    if (!used_a[i]) out.unmatched_intraop.push_back(i);
  }
  for (int j = 0; j < static_cast<int>(b.size()); ++j) {
    if (!used_b[j]) out.unmatched_postop.push_back(j);
  }
  return out;
}

ClipPairing match_clips(const std::vector<ClipRecord>& intraop, const std::vector<double>& postop) {
  std::vector<double> a;
  a.reserve(intraop.size());
  for (const auto& c : intraop) a.push_back(c.intraop_distance);
  return match_clips(a, postop);
}

// ---- statistics -------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(Errc::InvalidArgument, "quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(Errc::InvalidArgument, "quantile level must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - lo) * (values[lo + 1] - values[lo]);
}

SummaryStats summarize(const std::vector<double>& values) {
  SummaryStats s;
  s.n = values.size();
  if (values.empty()) return s;
  s.median = quantile(values, 0.5);
  s.q1 = quantile(values, 0.25);
  s.q3 = quantile(values, 0.75);
  s.iqr = s.q3 - s.q1;
  return s;
}

BoxplotData boxplot(const std::vector<double>& values) {
  BoxplotData b;
  b.stats = summarize(values);
  b.points = values;
  std::sort(b.points.begin(), b.points.end());
  if (b.points.empty()) return b;
  const double lo = b.stats.q1 - 1.5 * b.stats.iqr;
  const double hi = b.stats.q3 + 1.5 * b.stats.iqr;
  b.whisker_low = b.stats.q1;
  b.whisker_high = b.stats.q3;
  for (double v : b.points) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
    } else {
      b.whisker_low = std::min(b.whisker_low, v);
      b.whisker_high = std::max(b.whisker_high, v);
    }
  }
  return b;
}

AccuracyReport accuracy_report(const std::vector<PatientInput>& cohort) {
  if (cohort.empty()) throw Error(Errc::EmptyCohort, "cohort has no patients");
  std::vector<const PatientInput*> order;
  for (const auto& p : cohort) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(),
                   [](const PatientInput* a, const PatientInput* b) { return a->patient_id < b->patient_id; });

  AccuracyReport r;
  std::vector<double> clip_values, patient_values;
  for (const PatientInput* p : order) {
    const ClipPairing pairing = match_clips(p->intraop, p->postop);
    PatientRow row;
    row.patient_id = p->patient_id;
    row.unmatched_intraop = pairing.unmatched_intraop.size();
    row.unmatched_postop = pairing.unmatched_postop.size();
    std::vector<ClipRow> rows;
    for (const auto& [ia, ib] : pairing.pairs) {
      ClipRow c;
      c.patient_id = p->patient_id;
      c.clip_id = p->intraop[ia].id;
      c.intraop_mm = p->intraop[ia].intraop_distance;
      c.postop_mm = p->postop[ib];
      c.abs_delta_mm = std::abs(c.intraop_mm - c.postop_mm);
      rows.push_back(c);
    }
    std::sort(rows.begin(), rows.end(), [](const ClipRow& a, const ClipRow& b) { return a.clip_id < b.clip_id; });
    std::vector<double> deltas;
    for (const auto& c : rows) deltas.push_back(c.abs_delta_mm);
    row.matched = deltas.size();
    if (!deltas.empty()) {
      // Summed in sorted order so the mean does not depend on clip order.
      std::sort(deltas.begin(), deltas.end());
      row.mean_abs_delta_mm = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(deltas.size());
      patient_values.push_back(row.mean_abs_delta_mm);
    }
    clip_values.insert(clip_values.end(), deltas.begin(), deltas.end());
    r.clips.insert(r.clips.end(), rows.begin(), rows.end());
    r.patients.push_back(row);
    r.detached += row.unmatched_intraop;
    r.unmatched_postop += row.unmatched_postop;
    r.implausible_clips += p->implausible_clips;
  }
  if (clip_values.empty()) throw Error(Errc::EmptyCohort, "cohort has no matched clips");
  r.per_clip = boxplot(clip_values);
  r.per_patient = boxplot(patient_values);
  return r;
}

AccuracyReport accuracy_report(const std::vector<CohortPatient>& cohort, const ClipModel& model) {
  std::vector<PatientInput> inputs;
  for (const auto& p : cohort) {
    p.specimen.validate();
    PatientInput in;
    in.patient_id = p.specimen.patient_id;
    in.intraop = p.intraop;
    if (!p.specimen.clips.empty()) {
      std::vector<Vec3> centers;
      for (const auto& c : detect_clips(p.specimen.clips, model)) {
        centers.push_back(c.center);
        if (!c.plausible) ++in.implausible_clips;
      }
      in.postop = clip_to_tumor_distances(p.specimen.tumor, centers);
    }
    inputs.push_back(std::move(in));
  }
  return accuracy_report(inputs);
}

// ---- export ---------------------------------------------------------------------

namespace {

std::string num(double v) { return detail::format_double(v); }

json stats_json(const BoxplotData& b) {
  return json{{"n", b.stats.n},           {"median", b.stats.median},   {"q1", b.stats.q1},
              {"q3", b.stats.q3},         {"iqr", b.stats.iqr},         {"whisker_low", b.whisker_low},
              {"whisker_high", b.whisker_high}, {"outliers", b.outliers}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write '" + p.string() + "'");
  out << text;
}

}  // namespace

std::string format_clip_csv(const AccuracyReport& r) {
  std::ostringstream out;
  out << "patient_id,clip_id,intraop_mm,postop_mm,abs_delta_mm\n";
  for (const auto& c : r.clips) {
    out << c.patient_id << ',' << c.clip_id << ',' << num(c.intraop_mm) << ',' << num(c.postop_mm) << ','
        << num(c.abs_delta_mm) << '\n';
  }
  return out.str();
}

std::string format_patient_csv(const AccuracyReport& r) {
  std::ostringstream out;
  out << "patient_id,matched,mean_abs_delta_mm,detached,unmatched_postop\n";
  for (const auto& p : r.patients) {
    out << p.patient_id << ',' << p.matched << ',' << (p.matched ? num(p.mean_abs_delta_mm) : "") << ','
        << p.unmatched_intraop << ',' << p.unmatched_postop << '\n';
  }
  return out.str();
}

std::string format_boxplot_csv(const AccuracyReport& r) {
  std::ostringstream out;
  out << "level,kind,value\n";
  auto emit = [&](const char* level, const BoxplotData& b) {
    out << level << ",median," << num(b.stats.median) << '\n';
    out << level << ",q1," << num(b.stats.q1) << '\n';
    out << level << ",q3," << num(b.stats.q3) << '\n';
    out << level << ",whisker_low," << num(b.whisker_low) << '\n';
    out << level << ",whisker_high," << num(b.whisker_high) << '\n';
    for (double v : b.outliers) out << level << ",outlier," << num(v) << '\n';
    for (double v : b.points) out << level << ",point," << num(v) << '\n';
  };
  emit("clip", r.per_clip);
  emit("patient", r.per_patient);
  return out.str();
}

std::string format_summary_json(const AccuracyReport& r) {
  json j;
  j["quantile_method"] = "linear interpolation between order statistics";
  j["per_clip"] = stats_json(r.per_clip);
  j["per_patient"] = stats_json(r.per_patient);
  j["patients"] = r.patients.size();
  j["matched_clips"] = r.clips.size();
  j["detached_clips"] = r.detached;
  j["unmatched_postop_clips"] = r.unmatched_postop;
  j["implausible_clips"] = r.implausible_clips;
  return j.dump(2) + "\n";
}

std::string format_report_table(const AccuracyReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "patients " << r.patients.size() << ", matched clips " << r.clips.size() << ", detached " << r.detached
      << ", unmatched in specimen " << r.unmatched_postop << "\n";
  out << "level     n    median   q1       q3       iqr\n";
  auto line = [&](const char* level, const SummaryStats& s) {
    out << std::left << std::setw(10) << level << std::setw(5) << s.n << std::setw(9) << s.median << std::setw(9)
        << s.q1 << std::setw(9) << s.q3 << s.iqr << '\n';
  };
  line("clip", r.per_clip.stats);
  line("patient", r.per_patient.stats);
  return out.str();
}

void write_report(const AccuracyReport& r, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create report directory '" + dir + "'");
  write_text(fs::path(dir) / "clips.csv", format_clip_csv(r));
  write_text(fs::path(dir) / "patients.csv", format_patient_csv(r));
  write_text(fs::path(dir) / "boxplot.csv", format_boxplot_csv(r));
  write_text(fs::path(dir) / "summary.json", format_summary_json(r));
}

// ---- cohort directory ---------------------------------------------------------

void save_cohort_patient(const CohortPatient& p, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::Io, "cannot create '" + dir + "'");
  save_clips(p.intraop, (fs::path(dir) / "clips.json").string());
  save_mask(p.specimen.tumor, (fs::path(dir) / "specimen_tumor.json").string());
  save_mask(p.specimen.clips, (fs::path(dir) / "specimen_clips.json").string());
  if (p.specimen.volume) save_volume(*p.specimen.volume, (fs::path(dir) / "specimen.json").string());
}

std::vector<CohortPatient> load_cohort(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::Io, "cohort directory '" + dir + "' does not exist");
  std::vector<fs::path> patients;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "clips.json")) patients.push_back(e.path());
  }
  std::sort(patients.begin(), patients.end());
  if (patients.empty()) throw Error(Errc::EmptyCohort, "no patient directories with clips.json under '" + dir + "'");
  std::vector<CohortPatient> out;
  for (const auto& p : patients) {
    for (const char* f : {"specimen_tumor.json", "specimen_clips.json"}) {
      if (!fs::exists(p / f)) throw Error(Errc::Io, "missing '" + (p / f).string() + "'");
    }
    CohortPatient c;
    c.intraop = load_clips((p / "clips.json").string());
    c.specimen.patient_id = p.filename().string();
    c.specimen.tumor = load_mask((p / "specimen_tumor.json").string());
    c.specimen.clips = load_mask((p / "specimen_clips.json").string());
    if (fs::exists(p / "specimen.json")) c.specimen.volume = load_volume((p / "specimen.json").string());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace usnav
