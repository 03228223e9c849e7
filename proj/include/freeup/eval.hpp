#pragma once

// Detection metrics, score reports and reconstruction dumps.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "freeup/ingest.hpp"
#include "freeup/training.hpp"

namespace freeup::eval {

using training::ScoreRow;

/// Anomaly is the positive class.
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  double accuracy() const;
  double f1() const;
  bool operator==(const Confusion&) const = default;
};

/// P(anomalous score > normal score) with ties counted 1/2. Rows whose label
/// is unknown are not allowed. Throws std::invalid_argument unless both
/// classes are present.
double auroc(std::span<const double> scores, std::span<const Label> labels);

/// score >= threshold => anomaly.
Confusion confusion_at(std::span<const double> scores, std::span<const Label> labels, double threshold);

struct ThresholdMetrics {
  double acc = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  Confusion counts;
};

inline constexpr const char* kThresholdPolicy =
    "best-F1 sweep over midpoints of consecutive distinct scores; ties to the larger threshold; score >= t is anomalous";

/// Best-F1 threshold sweep. With a single distinct score the threshold is that
/// score, i.e. everything is predicted anomalous.
ThresholdMetrics acc_f1_at_best_threshold(std::span<const double> scores, std::span<const Label> labels);

struct Metrics {
  double auc = 0.0;
  double acc = 0.0;
  double f1 = 0.0;
  double threshold = 0.0;
  Confusion counts;
};

/// Metrics over the rows with a known label, using ScoreRow::scores.score.
Metrics compute_metrics(std::span<const ScoreRow> rows);

struct AnomalyReport {
  std::vector<ScoreRow> rows;
  std::optional<Metrics> metrics;  // absent when only one class is labelled
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string ablation;
};

AnomalyReport make_report(std::vector<ScoreRow> rows, std::uint64_t seed, std::uint64_t config_hash,
                          std::string ablation = "");

/// Columns: source_id,label,score_fused,score_low,score_high. score_fused holds
/// the model's detection score; missing branch scores are empty fields.
void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

nlohmann::json summary_json(const AnomalyReport& report);
void write_summary(const std::filesystem::path& path, const AnomalyReport& report);

// --- score densities -------------------------------------------------------------

enum class ScoreKind { low, high, fused };
inline constexpr std::array<ScoreKind, 3> kScoreKinds{ScoreKind::low, ScoreKind::high, ScoreKind::fused};
const char* to_string(ScoreKind k);
double score_of(const ScoreRow& row, ScoreKind k);

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> counts;
  std::vector<double> density;  // counts / (total * bin width); zero when empty
  std::size_t total() const;
};

/// Per kind: [0] normals, [1] anomalies, sharing the min-max range of that kind.
struct DensityReport {
  int n_bins = 0;
  std::array<std::array<Histogram, 2>, 3> hist;
  /// Shared probability mass sum_b min(p_normal, p_anomalous); NaN if either class is empty.
  double overlap(ScoreKind k) const;
};

DensityReport score_density_report(const AnomalyReport& report, int n_bins);
/// Columns: kind,label,bin_index,bin_lo,bin_hi,count,density.
void write_density_csv(const std::filesystem::path& path, const DensityReport& d);

// --- reconstructions -------------------------------------------------------------

inline constexpr std::size_t kMaxReportSamples = 64;

/// Planes tiled left to right, values clipped to [0,1], 8-bit binary PGM.
void write_pgm(const std::filesystem::path& path, const Volume& v);

struct ReconstructionSummary {
  std::size_t files_written = 0;
  std::vector<std::string> kinds;                // column order of the profile tables
  std::vector<spectral::RadialProfile> profiles;  // mean over the samples, per kind
  /// L2 distance over bins between the final reconstruction's mean profile and the original's.
  double final_profile_distance = 0.0;
};

/// Per sample: original, lpf, hpf, recon_low, recon_high and recon_fused images
/// (branch images only for branches the model has; recon_fused is the model's
/// final reconstruction) and one profile table.
ReconstructionSummary reconstruction_report(const training::Detector& detector, std::span<const TrafficSample> samples,
                                            const std::filesystem::path& out_dir, int n_bins = 16);

/// Sum of squared differences over bins where both profiles are finite, square-rooted.
double profile_distance(const spectral::RadialProfile& a, const spectral::RadialProfile& b);

// --- aggregation -----------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

MeanStd aggregate(std::span<const double> values);

}  // namespace freeup::eval
