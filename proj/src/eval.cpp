#include "freeup/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace freeup::eval {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_inputs(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw std::invalid_argument("non-finite score at row " + std::to_string(i));
    if (labels[i] == Label::anomalous) {
      ++pos;
    } else if (labels[i] == Label::normal) {
      ++neg;
    } else {
      throw std::invalid_argument("unlabelled row " + std::to_string(i));
    }
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("metrics need both normal and anomalous samples");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_score(const std::string& s, std::size_t line) {
  if (s.empty()) return kNaN;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("scores file line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

}  // namespace

double Confusion::accuracy() const {
  const std::size_t n = tp + fp + tn + fn;
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}

double Confusion::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double auroc(std::span<const double> scores, std::span<const Label> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks for ties; twice the rank keeps everything integral.
  double twice_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double twice_rank = static_cast<double>(i + 1 + j);  // (i+1 + j) = 2 * mean rank
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == Label::anomalous) {
        twice_rank_sum += twice_rank;
        ++pos;
      }
    }
    i = j;
  }
  const double np = static_cast<double>(pos), nn = static_cast<double>(n - pos);
  const double twice_u = twice_rank_sum - np * (np + 1.0);
  return (twice_u / 2.0) / (np * nn);
}

Confusion confusion_at(std::span<const double> scores, std::span<const Label> labels, double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool anom = labels[i] == Label::anomalous;
    if (pred && anom) ++c.tp;
    if (pred && !anom) ++c.fp;
    if (!pred && anom) ++c.fn;
    if (!pred && !anom) ++c.tn;
  }
  return c;
}

ThresholdMetrics acc_f1_at_best_threshold(std::span<const double> scores, std::span<const Label> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> sorted(n);
  // anomalies_from[k] = anomalies among sorted[k..n)
  std::vector<std::size_t> anomalies_from(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) sorted[k] = scores[idx[k]];
  for (std::size_t k = n; k-- > 0;) anomalies_from[k] = anomalies_from[k + 1] + (labels[idx[k]] == Label::anomalous);
  const std::size_t positives = anomalies_from[0];

  auto counts_for = [&](double t) {
    const std::size_t first = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin());
    Confusion c;
    c.tp = anomalies_from[first];
    c.fp = (n - first) - c.tp;
    c.fn = positives - c.tp;
    c.tn = first - c.fn;
    return c;
  };

  std::vector<double> candidates;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (sorted[k + 1] != sorted[k]) candidates.push_back(sorted[k] + (sorted[k + 1] - sorted[k]) / 2.0);
  }
  if (candidates.empty()) candidates.push_back(sorted.front());

  ThresholdMetrics best;
  bool have = false;
  for (double t : candidates) {  // ascending, so >= keeps the larger threshold on ties
    const Confusion c = counts_for(t);
    if (!have || c.f1() >= best.f1) {
      best = ThresholdMetrics{c.accuracy(), c.f1(), t, c};
      have = true;
    }
  }
  return best;
}

Metrics compute_metrics(std::span<const ScoreRow> rows) {
  std::vector<double> s;
  std::vector<Label> l;
  for (const auto& r : rows) {
    if (r.label == Label::unknown) continue;
    s.push_back(r.scores.score);
    l.push_back(r.label);
  }
  Metrics m;
  m.auc = auroc(s, l);
  const auto t = acc_f1_at_best_threshold(s, l);
  m.acc = t.acc;
  m.f1 = t.f1;
  m.threshold = t.threshold;
  m.counts = t.counts;
  return m;
}

AnomalyReport make_report(std::vector<ScoreRow> rows, std::uint64_t seed, std::uint64_t config_hash,
                          std::string ablation) {
  AnomalyReport r;
  r.rows = std::move(rows);
  r.seed = seed;
  r.config_hash = config_hash;
  r.ablation = std::move(ablation);
  bool has_normal = false, has_anom = false;
  for (const auto& row : r.rows) {
    has_normal |= row.label == Label::normal;
    has_anom |= row.label == Label::anomalous;
  }
  if (has_normal && has_anom) r.metrics = compute_metrics(r.rows);
  return r;
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "source_id,label,score_fused,score_low,score_high\n";
  for (const auto& r : rows) {
    out << csv_field(r.source_id) << ',' << to_string(r.label) << ',' << fmt(r.scores.score) << ','
        << fmt(r.scores.score_low) << ',' << fmt(r.scores.score_high) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("scores file " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "source_id,label,score_fused,score_low,score_high") {
    throw DataError("scores file " + path.string() + " has an unexpected header");
  }
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 5) throw DataError("scores file line " + std::to_string(lineno) + ": expected 5 fields");
    ScoreRow r;
    r.source_id = f[0];
    try {
      r.label = parse_label(f[1]);
    } catch (const std::exception& e) {
      throw DataError("scores file line " + std::to_string(lineno) + ": " + e.what());
    }
    r.scores.score = parse_score(f[2], lineno);
    r.scores.score_low = parse_score(f[3], lineno);
    r.scores.score_high = parse_score(f[4], lineno);
    rows.push_back(std::move(r));
  }
  return rows;
}

json summary_json(const AnomalyReport& report) {
  json j;
  j["n_rows"] = report.rows.size();
  std::size_t normal = 0, anomalous = 0;
  for (const auto& r : report.rows) {
    normal += r.label == Label::normal;
    anomalous += r.label == Label::anomalous;
  }
  j["n_normal"] = normal;
  j["n_anomalous"] = anomalous;
  j["seed"] = report.seed;
  std::ostringstream hash;
  hash << std::hex << report.config_hash;
  j["config_hash"] = hash.str();
  j["ablation"] = report.ablation;
  j["threshold_policy"] = kThresholdPolicy;
  if (report.metrics) {
    const Metrics& m = *report.metrics;
    j["metrics"] = {{"auc", m.auc},
                    {"acc", m.acc},
                    {"f1", m.f1},
                    {"threshold", m.threshold},
                    {"tp", m.counts.tp},
                    {"fp", m.counts.fp},
                    {"tn", m.counts.tn},
                    {"fn", m.counts.fn}};
  } else {
    j["metrics"] = nullptr;
  }
  return j;
}

void write_summary(const std::filesystem::path& path, const AnomalyReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << summary_json(report).dump(2) << '\n';
}

// --- densities -------------------------------------------------------------------

const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::low:
      return "low";
    case ScoreKind::high:
      return "high";
    case ScoreKind::fused:
      return "fused";
  }
  return "?";
}

double score_of(const ScoreRow& row, ScoreKind k) {
  switch (k) {
    case ScoreKind::low:
      return row.scores.score_low;
    case ScoreKind::high:
      return row.scores.score_high;
    case ScoreKind::fused:
      return row.scores.score;
  }
  return kNaN;
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

double DensityReport::overlap(ScoreKind k) const {
  const auto& h = hist[static_cast<int>(k)];
  const double a = static_cast<double>(h[0].total()), b = static_cast<double>(h[1].total());
  if (a == 0.0 || b == 0.0) return kNaN;
  double shared = 0.0;
  for (int i = 0; i < n_bins; ++i) shared += std::min(h[0].counts[i] / a, h[1].counts[i] / b);
  return shared;
}

DensityReport score_density_report(const AnomalyReport& report, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("score_density_report: n_bins must be >= 1");
  DensityReport d;
  d.n_bins = n_bins;
  for (ScoreKind k : kScoreKinds) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& r : report.rows) {
      const double s = score_of(r, k);
      if (!std::isfinite(s) || r.label == Label::unknown) continue;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    if (!(lo <= hi)) lo = hi = 0.0;
    const double width = hi > lo ? (hi - lo) / n_bins : 1.0;
    for (int c = 0; c < 2; ++c) {
      Histogram& h = d.hist[static_cast<int>(k)][c];
      h.lo = lo;
      h.hi = hi;
      h.counts.assign(n_bins, 0);
      h.density.assign(n_bins, 0.0);
      const Label want = c == 0 ? Label::normal : Label::anomalous;
      for (const auto& r : report.rows) {
        const double s = score_of(r, k);
        if (r.label != want || !std::isfinite(s)) continue;
        const int bin = std::clamp(static_cast<int>((s - lo) / width), 0, n_bins - 1);
        ++h.counts[bin];
      }
      const double total = static_cast<double>(h.total());
      if (total > 0.0) {
        for (int b = 0; b < n_bins; ++b) h.density[b] = h.counts[b] / (total * width);
      }
    }
  }
  return d;
}

void write_density_csv(const std::filesystem::path& path, const DensityReport& d) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "kind,label,bin_index,bin_lo,bin_hi,count,density\n";
  for (ScoreKind k : kScoreKinds) {
    for (int c = 0; c < 2; ++c) {
      const Histogram& h = d.hist[static_cast<int>(k)][c];
      const double width = h.hi > h.lo ? (h.hi - h.lo) / d.n_bins : 0.0;
      for (int b = 0; b < d.n_bins; ++b) {
        out << to_string(k) << ',' << (c == 0 ? "normal" : "anomalous") << ',' << b << ',' << fmt(h.lo + b * width)
            << ',' << fmt(h.lo + (b + 1) * width) << ',' << h.counts[b] << ',' << fmt(h.density[b]) << '\n';
      }
    }
  }
}

// --- reconstructions -------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const Volume& v) {
  const int rows = v.shape.rows, cols = v.shape.cols * v.shape.planes;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  std::vector<unsigned char> line(cols);
  for (int h = 0; h < rows; ++h) {
    for (int p = 0; p < v.shape.planes; ++p) {
      for (int w = 0; w < v.shape.cols; ++w) {
        double x = v.at(p, h, w);
        x = std::isfinite(x) ? std::clamp(x, 0.0, 1.0) : 0.0;
        line[p * v.shape.cols + w] = static_cast<unsigned char>(std::lround(x * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(line.data()), cols);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

double profile_distance(const spectral::RadialProfile& a, const spectral::RadialProfile& b) {
  if (a.mean_log_power.size() != b.mean_log_power.size()) throw std::invalid_argument("profile bin counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.mean_log_power.size(); ++i) {
    const double d = a.mean_log_power[i] - b.mean_log_power[i];
    if (std::isfinite(d)) s += d * d;
  }
  return std::sqrt(s);
}

ReconstructionSummary reconstruction_report(const training::Detector& detector, std::span<const TrafficSample> samples,
                                            const std::filesystem::path& out_dir, int n_bins) {
  if (samples.size() > kMaxReportSamples) {
    throw std::invalid_argument("reconstruction_report: at most " + std::to_string(kMaxReportSamples) + " samples");
  }
  std::filesystem::create_directories(out_dir);
  ReconstructionSummary summary;
  std::vector<std::vector<Volume>> per_kind;  // kind -> samples

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = detector.reconstruct(samples[i]);
    const auto bands = spectral::decouple(r.x, detector.masks());
    std::vector<std::pair<std::string, const Volume*>> items{
        {"original", &r.x}, {"lpf", &bands.low}, {"hpf", &bands.high}};
    for (std::size_t b = 0; b < r.roles.size(); ++b) {
      if (r.roles[b] == training::Role::low) items.emplace_back("recon_low", &r.x_tilde[b]);
      if (r.roles[b] == training::Role::high) items.emplace_back("recon_high", &r.x_tilde[b]);
    }
    items.emplace_back("recon_fused", r.fused ? &r.fused->x_tilde : &r.x_tilde.front());

    if (i == 0) {
      for (const auto& it : items) summary.kinds.push_back(it.first);
      per_kind.resize(items.size());
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%03zu", i);
    std::vector<spectral::RadialProfile> profiles;
    for (std::size_t k = 0; k < items.size(); ++k) {
      write_pgm(out_dir / (std::string(stem) + "_" + items[k].first + ".pgm"), *items[k].second);
      ++summary.files_written;
      per_kind[k].push_back(*items[k].second);
      profiles.push_back(spectral::power_spectrum_profile(std::span<const Volume>(items[k].second, 1), n_bins));
    }
    const auto table = out_dir / (std::string(stem) + "_profile.csv");
    std::ofstream out(table);
    if (!out) throw DataError("cannot write " + table.string());
    out << "bin_index,radial_center";
    for (const auto& it : items) out << ',' << it.first;
    out << '\n';
    for (int b = 0; b < n_bins; ++b) {
      out << b << ',' << fmt(profiles[0].radial_center[b]);
      for (const auto& p : profiles) out << ',' << fmt(p.mean_log_power[b]);
      out << '\n';
    }
    if (!out) throw DataError("failed writing " + table.string());
    ++summary.files_written;
  }
  for (const auto& vols : per_kind) summary.profiles.push_back(spectral::power_spectrum_profile(vols, n_bins));
  if (!summary.profiles.empty()) {
    summary.final_profile_distance = profile_distance(summary.profiles.back(), summary.profiles.front());
  }
  return summary;
}

MeanStd aggregate(std::span<const double> values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.stddev = std::sqrt(ss / (values.size() - 1));
  }
  return m;
}

}  // namespace freeup::eval
