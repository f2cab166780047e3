#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "usnav/navengine.hpp"
#include "usnav/volume.hpp"

namespace usnav {

/// Postoperative specimen scan with manual tumor and clip segmentations.
struct SpecimenStudy {
  std::string patient_id;
  std::optional<VoxelVolume> volume;
  LabelMask tumor;
  LabelMask clips;

  /// Throws INVALID_ARGUMENT if the grids differ.
  void validate() const;
};

/// Nominal clip: a solid cylinder of the clip's length. Detected components
/// whose volume falls outside [min_factor, max_factor] x nominal are flagged.
struct ClipModel {
  double length_mm = 3.8;
  double radius_mm = 0.75;
  double min_factor = 0.25;
  double max_factor = 4.0;

  double nominal_volume_mm3() const;
};

/// Sets every voxel whose centre lies inside the clip cylinder centred at
/// `center` along `axis`.
void stamp_clip(LabelMask& m, const Vec3& center, const Vec3& axis, const ClipModel& model = {});

struct DetectedClip {
  Vec3 center = Vec3::Zero();
  std::size_t voxels = 0;
  double volume_mm3 = 0.0;
  bool plausible = true;
};

/// 26-connected components of the clip mask, ordered by lowest voxel index.
/// Throws NO_CLIPS for an empty mask.
std::vector<DetectedClip> detect_clips(const LabelMask& clips, const ClipModel& model = {});

/// Unsigned distance (mm) from each point to the tumor boundary, read from
/// the tumor's distance field with trilinear interpolation.
std::vector<double> clip_to_tumor_distances(const LabelMask& tumor, const std::vector<Vec3>& centers);
/// Detects clips and measures each. Throws NO_CLIPS, EMPTY_SEGMENT.
std::vector<double> clip_to_tumor_distances(const SpecimenStudy& study, const ClipModel& model = {});

struct ClipPairing {
  std::vector<std::pair<int, int>> pairs;  // (intraop index, postop index), ascending intraop
  std::vector<int> unmatched_intraop;
  std::vector<int> unmatched_postop;
  double cost = 0.0;  // sum of |intraop - postop| over pairs
};

/// Minimum-cost assignment on |a_i - b_j| (Hungarian algorithm). The smaller
/// side is matched completely; leftovers are reported unmatched.
ClipPairing match_clips(const std::vector<double>& intraop, const std::vector<double>& postop);
ClipPairing match_clips(const std::vector<ClipRecord>& intraop, const std::vector<double>& postop);

/// Quantile with linear interpolation between order statistics:
/// h = (n-1)q, x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
double quantile(std::vector<double> values, double q);

struct SummaryStats {
  std::size_t n = 0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
};
SummaryStats summarize(const std::vector<double>& values);

/// Tukey boxplot: whiskers reach the most extreme values within 1.5 IQR of
/// the box; anything beyond is an outlier.
struct BoxplotData {
  SummaryStats stats;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;
  std::vector<double> points;  // sorted
};
BoxplotData boxplot(const std::vector<double>& values);

struct PatientInput {
  std::string patient_id;
  std::vector<ClipRecord> intraop;
  std::vector<double> postop;  // one per clip found in the specimen
  std::size_t implausible_clips = 0;
};

struct ClipRow {
  std::string patient_id;
  int clip_id = 0;
  double intraop_mm = 0.0;
  double postop_mm = 0.0;
  double abs_delta_mm = 0.0;
};

struct PatientRow {
  std::string patient_id;
  std::size_t matched = 0;
  double mean_abs_delta_mm = 0.0;
  std::size_t unmatched_intraop = 0;  // placed but not found in the specimen (detached)
  std::size_t unmatched_postop = 0;
};

struct AccuracyReport {
  std::vector<ClipRow> clips;        // sorted by patient id, then clip id
  std::vector<PatientRow> patients;  // sorted by patient id
  BoxplotData per_clip;
  BoxplotData per_patient;           // patients with at least one matched clip
  std::size_t detached = 0;          // total unmatched intraop clips
  std::size_t unmatched_postop = 0;
  std::size_t implausible_clips = 0;
};

/// Throws EMPTY_COHORT for no patients or no matched clip at all.
AccuracyReport accuracy_report(const std::vector<PatientInput>& cohort);

struct CohortPatient {
  std::vector<ClipRecord> intraop;
  SpecimenStudy specimen;
};
AccuracyReport accuracy_report(const std::vector<CohortPatient>& cohort, const ClipModel& model = {});

// ---- export ----------------------------------------------------------------

std::string format_clip_csv(const AccuracyReport& r);
std::string format_patient_csv(const AccuracyReport& r);
std::string format_boxplot_csv(const AccuracyReport& r);
std::string format_summary_json(const AccuracyReport& r);
std::string format_report_table(const AccuracyReport& r);
/// Writes clips.csv, patients.csv, boxplot.csv and summary.json.
void write_report(const AccuracyReport& r, const std::string& dir);

// ---- cohort directory --------------------------------------------------------
//
//   <dir>/<patient>/clips.json             intraop ClipRecords
//   <dir>/<patient>/specimen_tumor.json    tumor mask (+ .raw)
//   <dir>/<patient>/specimen_clips.json    clip mask (+ .raw)
//   <dir>/<patient>/specimen.json          optional intensity volume
//
// Patients are the subdirectories holding clips.json, in name order.

void save_cohort_patient(const CohortPatient& p, const std::string& dir);
std::vector<CohortPatient> load_cohort(const std::string& dir);

}  // namespace usnav
