#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "freeup/eval.hpp"
#include "support.hpp"

using namespace freeup;
using namespace freeup::eval;
using freeup::testing::TempDir;

namespace {

constexpr Label A = Label::anomalous;
constexpr Label N = Label::normal;

double pair_count_auc(const std::vector<double>& s, const std::vector<Label>& l) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != A) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != N) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

ScoreRow row(std::string id, Label l, double fused, double lo, double hi) {
  ScoreRow r;
  r.source_id = std::move(id);
  r.label = l;
  r.scores.score = fused;
  r.scores.score_fused = fused;
  r.scores.score_low = lo;
  r.scores.score_high = hi;
  return r;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.1, 0.2}, std::vector<Label>{A, A, N, N}) == 1.0);
  CHECK(auroc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<Label>{A, N, N}) == 0.5);
  CHECK(auroc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<Label>{A, N, A}) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<Label>{N, N}), std::invalid_argument);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, NAN}, std::vector<Label>{N, A}), std::invalid_argument);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<Label>{N, Label::unknown}), std::invalid_argument);
}

TEST_CASE("auroc equals pair counting and ignores monotone transforms") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 100)(rng);
    std::vector<double> s(n);
    std::vector<Label> l(n);
    // Coarse grid so ties occur often.
    for (int i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, 20)(rng) / 4.0;
      l[i] = std::bernoulli_distribution(0.4)(rng) ? A : N;
    }
    l[0] = A;
    l[1] = N;
    const double a = auroc(s, l);
    CHECK(a == pair_count_auc(s, l));
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = std::exp(3 * s[i]) - 7.0;
    CHECK(auroc(t, l) == a);
  }
}

TEST_CASE("best threshold examples") {
  auto m = acc_f1_at_best_threshold(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<Label>{A, A, N, N});
  CHECK(m.acc == 1.0);
  CHECK(m.f1 == 1.0);
  CHECK(m.threshold > 0.3);
  CHECK(m.threshold < 0.8);

  auto d = acc_f1_at_best_threshold(std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5}, std::vector<Label>{A, N, N, A, N});
  const double p = 0.4;
  CHECK(d.f1 == doctest::Approx(2 * p / (p + 1)));
  CHECK(d.counts.tp == 2);
  CHECK(d.counts.fp == 3);
}

TEST_CASE("threshold reproduces its confusion counts") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 60)(rng);
    std::vector<double> s(n);
    std::vector<Label> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, 15)(rng) / 3.0;
      l[i] = std::bernoulli_distribution(0.5)(rng) ? A : N;
    }
    l[0] = A;
    l[1] = N;
    auto m = acc_f1_at_best_threshold(s, l);
    auto c = confusion_at(s, l, m.threshold);
    CHECK(c == m.counts);
    CHECK(c.accuracy() == m.acc);
    CHECK(c.f1() == m.f1);
    // No candidate midpoint does better.
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (std::size_t k = 1; k < sorted.size(); ++k) {
      CHECK(confusion_at(s, l, 0.5 * (sorted[k - 1] + sorted[k])).f1() <= m.f1);
    }
  }
}

TEST_CASE("metrics and report") {
  std::vector<ScoreRow> rows{row("a", N, 0.1, 0.2, 0.3), row("b", A, 0.9, 0.4, 0.5), row("c", N, 0.2, 0.1, 0.9),
                             row("d", A, 0.8, 0.3, 0.2), row("e", Label::unknown, 0.5, 0.5, 0.5)};
  auto m = compute_metrics(rows);
  CHECK(m.auc == 1.0);
  CHECK(m.f1 == 1.0);
  auto r = make_report(rows, 3, 0xabc, "no_freq_loss");
  REQUIRE(r.metrics);
  auto j = summary_json(r);
  CHECK(j.at("metrics").at("auc").get<double>() == 1.0);
  CHECK(j.at("seed").get<int>() == 3);
  CHECK(j.dump().find("abc") != std::string::npos);
  CHECK(j.dump().find("best-F1") != std::string::npos);

  auto single = make_report({row("a", N, 0.1, 0.2, 0.3)}, 0, 0);
  CHECK_FALSE(single.metrics);
}

TEST_CASE("scores csv round trip") {
  TempDir dir("eval_csv");
  std::vector<ScoreRow> rows{row("a,1", N, 0.125, 0.5, 1e-300), row("b\"q", A, 3.0, NAN, 2.0)};
  write_scores_csv(dir.path() / "s.csv", rows);
  std::ifstream in(dir.path() / "s.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "source_id,label,score_fused,score_low,score_high");
  auto back = read_scores_csv(dir.path() / "s.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].source_id == "a,1");
  CHECK(back[1].source_id == "b\"q");
  CHECK(back[0].scores.score == 0.125);
  CHECK(back[0].scores.score_high == 1e-300);
  CHECK(std::isnan(back[1].scores.score_low));
  CHECK(back[1].label == A);

  std::ofstream(dir.path() / "bad.csv") << "source_id,label,score_fused,score_low,score_high\nx,normal,abc,,\n";
  CHECK_THROWS(read_scores_csv(dir.path() / "bad.csv"));
}

TEST_CASE("density report") {
  std::vector<ScoreRow> rows;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  for (int i = 0; i < 50; ++i) rows.push_back(row("n" + std::to_string(i), N, std::abs(n(rng)), 1 + n(rng), 2 + n(rng)));
  for (int i = 0; i < 30; ++i) rows.push_back(row("a" + std::to_string(i), A, 3 + std::abs(n(rng)), 1 + n(rng), 3 + n(rng)));
  auto d = score_density_report(make_report(rows, 0, 0), 12);
  for (int k = 0; k < 3; ++k) {
    CHECK(d.hist[k][0].total() == 50);
    CHECK(d.hist[k][1].total() == 30);
    double mass = 0.0;
    const double width = (d.hist[k][0].hi - d.hist[k][0].lo) / 12;
    for (double v : d.hist[k][0].density) mass += v * width;
    CHECK(mass == doctest::Approx(1.0));
  }
  CHECK(d.overlap(ScoreKind::fused) < d.overlap(ScoreKind::low));
  CHECK(d.overlap(ScoreKind::low) <= 1.0 + 1e-12);

  std::vector<ScoreRow> normals(rows.begin(), rows.begin() + 50);
  auto dn = score_density_report(make_report(normals, 0, 0), 5);
  CHECK(dn.hist[2][1].total() == 0);
  CHECK(std::isnan(dn.overlap(ScoreKind::fused)));

  TempDir dir("eval_density");
  write_density_csv(dir.path() / "d.csv", d);
  std::ifstream in(dir.path() / "d.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "kind,label,bin_index,bin_lo,bin_hi,count,density");
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 3 * 2 * 12);
}

TEST_CASE("pgm output") {
  TempDir dir("eval_pgm");
  Volume v(Shape3{2, 3, 4});
  v.data[0] = 2.0;
  v.data[1] = -1.0;
  v.data[2] = 0.5;
  write_pgm(dir.path() / "x.pgm", v);
  std::ifstream in(dir.path() / "x.pgm", std::ios::binary);
  std::string magic;
  int w, h, maxv;
  in >> magic >> w >> h >> maxv;
  in.get();
  CHECK(magic == "P5");
  CHECK(w == 8);
  CHECK(h == 3);
  CHECK(maxv == 255);
  unsigned char px[3];
  in.read(reinterpret_cast<char*>(px), 3);
  CHECK(px[0] == 255);
  CHECK(px[1] == 0);
  CHECK((px[2] == 127 || px[2] == 128));
}

TEST_CASE("reconstruction report writes six images and a profile per sample") {
  model::AEConfig ae;
  ae.in_planes = 2;
  ae.widths = {4};
  ae.latent = 2;
  training::TrainConfig cfg;
  cfg.P = 2;
  SynthSpec spec;
  spec.shape = {2, 8, 8};
  spec.anomaly_patch = 4;
  auto corpus = synth_corpus(3, 2, 1, spec);
  TempDir dir("eval_recon");
  training::Detector det(ae, cfg, {}, spec.shape);
  auto s = reconstruction_report(det, corpus.samples, dir.path(), 4);
  CHECK(s.files_written == 5 * 7);
  std::size_t pgm = 0, csv = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    pgm += e.path().extension() == ".pgm";
    csv += e.path().extension() == ".csv";
  }
  CHECK(pgm == 30);
  CHECK(csv == 5);
  CHECK(s.kinds.size() == 6);
  CHECK(std::isfinite(s.final_profile_distance));

  training::Detector single(ae, cfg, training::Ablation::parse("no_decouple"), spec.shape);
  auto s1 = reconstruction_report(single, corpus.samples, dir.path() / "single", 4);
  CHECK(s1.files_written == 5 * 5);

  std::vector<TrafficSample> many(65, corpus.samples[0]);
  CHECK_THROWS_AS(reconstruction_report(det, many, dir.path() / "many"), std::invalid_argument);
}

TEST_CASE("aggregate") {
  auto m = aggregate(std::vector<double>{1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(m.n == 4);
  CHECK(aggregate(std::vector<double>{7.0}).stddev == 0.0);
}

}  // TEST_SUITE
