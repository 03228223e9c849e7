#include <doctest.h>

#include <fstream>
#include <functional>
#include <random>
#include <set>

#include "freeup/config.hpp"
#include "freeup/kernels.hpp"
#include "freeup/training.hpp"
#include "support.hpp"

using namespace freeup;
using namespace freeup::training;
using freeup::testing::random_volume;
using freeup::testing::rel_err;
using freeup::testing::TempDir;

namespace {

struct Tiny {
  AEConfig ae;
  TrainConfig cfg;
  Shape3 shape{2, 8, 8};
  Corpus corpus;
  std::vector<TrafficSample> normals, all;

  Tiny() {
    ae.in_planes = 2;
    ae.widths = {4, 4};
    ae.latent = 2;
    ae.attention_reduction = 2;
    cfg.P = 2;
    cfg.D = 2.0;
    cfg.batch_size = 4;
    cfg.max_epochs = 3;
    cfg.seed = 5;
    SynthSpec spec;
    spec.shape = shape;
    spec.anomaly_patch = 4;
    corpus = synth_corpus(12, 4, 3, spec);
    for (const auto& s : corpus.samples) {
      all.push_back(s);
      if (s.label() == Label::normal) normals.push_back(s);
    }
  }
};

std::vector<double> scores_of(const std::vector<ScoreRow>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.scores.score);
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("defaults and validation") {
  TrainConfig c;
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.batch_size == 128);
  CHECK(c.max_epochs == 60);
  CHECK(c.lambda_nll == 1e-2);
  CHECK(c.lambda_pen == 1e-4);
  CHECK(c.lambda_f == 1e-2);
  CHECK(c.P == 8);
  CHECK(c.D == 5.0);
  CHECK(c.patience == 10);
  CHECK(c.n_runs == 5);
  CHECK_NOTHROW(c.validate());
  for (auto bad : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.learning_rate = 0; }, [](TrainConfig& t) { t.batch_size = 0; },
           [](TrainConfig& t) { t.max_epochs = 0; }, [](TrainConfig& t) { t.lambda_pen = -1; },
           [](TrainConfig& t) { t.P = 0; }, [](TrainConfig& t) { t.D = 0; }}) {
    TrainConfig t;
    bad(t);
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  }
}

TEST_CASE("ablation flags") {
  CHECK(Ablation::parse("").tag().empty());
  CHECK(Ablation::parse("full").tag().empty());
  auto a = Ablation::parse("no_freq_loss, static_fusion=weighted_sum");
  CHECK(a.no_freq_loss);
  CHECK(a.static_fusion == fusion::StaticMode::weighted_sum);
  CHECK(a.tag() == "no_freq_loss+static_fusion=weighted_sum");
  CHECK(Ablation::parse("static_fusion").static_fusion == fusion::StaticMode::product);
  CHECK_THROWS_AS(Ablation::parse("no_low_branch,no_high_branch"), std::invalid_argument);
  CHECK_THROWS_AS(Ablation::parse("no_decouple,no_low_branch"), std::invalid_argument);
  CHECK_THROWS_AS(Ablation::parse("no_decouple,static_fusion"), std::invalid_argument);
  CHECK_THROWS_AS(Ablation::parse("bogus"), std::invalid_argument);
}

TEST_CASE("branch_loss examples") {
  std::mt19937_64 rng(1);
  auto x = random_volume(Shape3{2, 8, 8}, rng);
  auto xt = random_volume(Shape3{2, 8, 8}, rng);
  TrainConfig c;
  c.D = 2.0;
  const evidential::NIGParams p{0.9, 2.3, 0.4};

  TrainConfig z = c;
  z.lambda_nll = z.lambda_pen = 0.0;
  for (auto kind : {BranchKind::low, BranchKind::high, BranchKind::fused}) {
    CHECK(branch_loss(x, xt, p, kind, z) == model::rec_loss(x, xt, kind, c.D, c.lambda_f));
    const double want = model::rec_loss(x, xt, kind, c.D, c.lambda_f) + c.lambda_nll * evidential::nll_loss(x, xt, p) +
                        c.lambda_pen * evidential::pen_loss(x, xt, p);
    CHECK(branch_loss(x, xt, p, kind, c) == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK(branch_loss(x, x, {1, 2, 1}, BranchKind::low, c) == doctest::Approx(0.009808).epsilon(1e-4));
  CHECK(branch_loss(x, x, {1, 2, 1}, BranchKind::low, c) ==
        doctest::Approx(c.lambda_nll * evidential::nll_loss(x, x, {1, 2, 1})).epsilon(1e-12));
}

TEST_CASE("total_loss is the sum of the three branch losses") {
  std::mt19937_64 rng(2);
  TrainConfig c;
  auto x = random_volume(Shape3{2, 8, 8}, rng);
  BranchArtifacts l{random_volume(x.shape, rng), {0.5, 2.0, 0.3}};
  BranchArtifacts h{random_volume(x.shape, rng), {1.5, 1.5, 0.7}};
  auto f = fusion::fuse_nig(l.x_tilde, l.nig, h.x_tilde, h.nig);
  BranchArtifacts fa{f.x_tilde, f.params};
  const double want = branch_loss(x, l.x_tilde, l.nig, BranchKind::low, c) +
                      branch_loss(x, h.x_tilde, h.nig, BranchKind::high, c) +
                      branch_loss(x, f.x_tilde, f.params, BranchKind::fused, c);
  CHECK(total_loss(x, l, h, fa, c) == doctest::Approx(want).epsilon(1e-12));
  CHECK(branch_loss(x, l.x_tilde, l.nig, BranchKind::fused, c) == branch_loss(x, l.x_tilde, l.nig, BranchKind::fused, c));
}

TEST_CASE("detector topology per ablation") {
  Tiny t;
  Detector full(t.ae, t.cfg, {}, t.shape);
  CHECK(full.dual());
  REQUIRE(full.branches().size() == 2);
  CHECK(full.branches()[0].role == Role::low);
  CHECK(full.branches()[1].role == Role::high);

  Detector single(t.ae, t.cfg, Ablation::parse("no_decouple"), t.shape);
  REQUIRE(single.branches().size() == 1);
  CHECK(single.branches()[0].role == Role::full);
  CHECK(2 * single.parameter_count() == full.parameter_count());

  Detector lo(t.ae, t.cfg, Ablation::parse("no_high_branch"), t.shape);
  REQUIRE(lo.branches().size() == 1);
  CHECK(lo.branches()[0].role == Role::low);

  // Distinct weight storage and distinct initial values for the two branches.
  std::set<const float*> seen;
  for (const auto* p : full.parameters()) CHECK(seen.insert(p->value.data()).second);
  CHECK(full.branches()[0].ae.parameters()[0]->value != full.branches()[1].ae.parameters()[0]->value);

  TrainConfig wrong = t.cfg;
  wrong.P = 3;
  CHECK_THROWS_AS(Detector(t.ae, wrong, {}, t.shape), ShapeError);
  CHECK_THROWS_AS(Detector(t.ae, t.cfg, {}, Shape3{2, 6, 6}), ShapeError);
}

TEST_CASE("updating one branch leaves the other branch unchanged") {
  Tiny t;
  Detector det(t.ae, t.cfg, {}, t.shape);
  const auto before = det.reconstruct(t.normals[0]);
  for (auto* p : det.branches()[0].ae.parameters()) {
    for (auto& v : p->value) v += 0.05f;
  }
  const auto after = det.reconstruct(t.normals[0]);
  CHECK(after.ae_out[1].data == before.ae_out[1].data);
  CHECK(after.ae_out[0].data != before.ae_out[0].data);
}

TEST_CASE("reconstruct wires bands, integration and fusion together") {
  Tiny t;
  Detector det(t.ae, t.cfg, {}, t.shape);
  const auto& s = t.all[13];
  const auto r = det.reconstruct(s);
  const auto bands = spectral::decouple(s.to_volume(), det.masks());
  CHECK(freeup::testing::max_abs_diff(r.x_low, bands.low) < 1e-6);
  const auto low_tilde = model::integrate_complement(r.ae_out[0], r.x_high);
  const auto high_tilde = model::integrate_complement(r.ae_out[1], r.x_low);
  CHECK(freeup::testing::max_abs_diff(r.x_tilde[0], low_tilde) < 1e-6);
  CHECK(freeup::testing::max_abs_diff(r.x_tilde[1], high_tilde) < 1e-6);
  REQUIRE(r.fused);
  const auto f = fusion::fuse_nig(r.x_tilde[0], r.nig[0], r.x_tilde[1], r.nig[1]);
  CHECK(r.fused->params.beta == doctest::Approx(f.params.beta).epsilon(1e-12));

  const auto sc = det.score(s);
  CHECK(sc.score == sc.score_fused);
  CHECK(sc.score_fused == doctest::Approx(fusion::anomaly_score(f)).epsilon(1e-12));
  CHECK(sc.score_low == doctest::Approx(evidential::uncertainty(r.nig[0])).epsilon(1e-12));

  Detector stat(t.ae, t.cfg, Ablation::parse("static_fusion=product"), t.shape);
  const auto ss = stat.score(s);
  CHECK(ss.score == doctest::Approx(ss.score_low * ss.score_high).epsilon(1e-12));

  Detector single(t.ae, t.cfg, Ablation::parse("no_decouple"), t.shape);
  const auto rs = single.reconstruct(s);
  CHECK(freeup::testing::max_abs_diff(rs.x_tilde[0], rs.ae_out[0]) == 0.0);
  CHECK(single.score(s).score == doctest::Approx(evidential::uncertainty(rs.nig[0])).epsilon(1e-12));
}

TEST_CASE("end-to-end gradient through the fusion path") {
  // Miniature 4x4 model; the analytic gradient of the total loss with respect
  // to single weights of either autoencoder or head is compared with central
  // differences of the forward loss. The loss has kinks (L1 terms, max
  // pooling); draws too close to one are redrawn.
  AEConfig ae;
  ae.in_planes = 1;
  ae.widths = {3};
  ae.latent = 2;
  ae.attention_reduction = 1;
  ae.nonlinearity = nn::Nonlinearity::tanh;
  TrainConfig cfg;
  cfg.P = 1;
  cfg.D = 1.0;
  cfg.lambda_nll = 0.3;
  cfg.lambda_pen = 0.1;
  cfg.lambda_f = 0.2;
  std::mt19937_64 rng(3);
  int checked = 0;
  for (int attempt = 0; checked < 20 && attempt < 200; ++attempt) {
    ae.seed = 100 + attempt;
    Detector det(ae, cfg, {}, Shape3{1, 4, 4});
    auto x = random_volume(Shape3{1, 4, 4}, rng);
    Array3<float> xf(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) xf.data[i] = static_cast<float>(x.data[i]);
    TrafficSample s(xf, Label::normal, "p");
    const auto ps = det.prepare(s);
    const PreparedSample* batch[] = {&ps};
    det.loss_and_gradients(batch);

    auto params = det.parameters();
    auto* p = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, p->size() - 1)(rng);
    const float orig = p->value[i];
    const auto fd = freeup::testing::smooth_derivative([&](double& d) {
      p->value[i] = orig + static_cast<float>(d);
      d = double(p->value[i]) - double(orig);
      const double l = det.losses(batch)[0];
      p->value[i] = orig;
      return l;
    });
    if (!fd || (std::abs(*fd) < 1e-5 && std::abs(p->grad[i]) < 1e-5)) continue;
    CHECK_MESSAGE(rel_err(p->grad[i], *fd, 1e-4) <= 1e-2, p->name << "[" << i << "] " << p->grad[i] << " vs " << *fd);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("trainer rejects anomalies and empty sets") {
  Tiny t;
  Detector det(t.ae, t.cfg, {}, t.shape);
  CHECK_THROWS_AS(Trainer(det, t.all), DataError);
  CHECK_THROWS_AS(Trainer(det, std::span<const TrafficSample>{}), DataError);
  std::vector<TrafficSample> unknown{TrafficSample(t.normals[0].data(), Label::unknown, "u")};
  CHECK_THROWS_AS(Trainer(det, unknown), DataError);
}

TEST_CASE("fixed seed gives identical trajectories and scores") {
  Tiny t;
  kernels::set_thread_count(1);
  TrainResult a, b;
  auto da = train(t.normals, t.ae, t.cfg, {}, &a);
  auto db = train(t.normals, t.ae, t.cfg, {}, &b);
  kernels::set_thread_count(0);
  CHECK(a.epoch_losses == b.epoch_losses);
  CHECK(a.epochs_run == 3);
  CHECK(scores_of(da.score_dataset(t.all)) == scores_of(db.score_dataset(t.all)));

  TrainConfig other = t.cfg;
  other.seed = 6;
  TrainResult c;
  train(t.normals, t.ae, other, {}, &c);
  CHECK(c.epoch_losses != a.epoch_losses);
}

TEST_CASE("early stopping") {
  Tiny t;
  TrainConfig c = t.cfg;
  c.max_epochs = 60;
  c.patience = 2;
  c.min_rel_improvement = 1e6;  // no epoch can count as an improvement
  TrainResult r;
  train(t.normals, t.ae, c, {}, &r);
  CHECK(r.stopped_early);
  CHECK(r.epochs_run == 3);
}

TEST_CASE("loss decreases on the synthetic corpus") {
  Tiny t;
  TrainConfig c = t.cfg;
  c.max_epochs = 5;
  c.learning_rate = 3e-3;
  TrainResult r;
  train(t.normals, t.ae, c, {}, &r);
  REQUIRE(r.epoch_losses.size() == 5);
  CHECK(r.epoch_losses[4] < r.epoch_losses[0]);
}

TEST_CASE("score_dataset is order preserving and deterministic") {
  Tiny t;
  Detector det(t.ae, t.cfg, {}, t.shape);
  auto rows = det.score_dataset(t.all);
  REQUIRE(rows.size() == t.all.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].source_id == t.all[i].source_id());
    CHECK(rows[i].label == t.all[i].label());
    CHECK(rows[i].scores.score == det.score(t.all[i]).score);
  }
  CHECK(scores_of(det.score_dataset(t.all)) == scores_of(rows));
  CHECK_THROWS_AS(det.score(TrafficSample(Array3<float>(Shape3{2, 16, 16}), Label::normal, "x")), ShapeError);
}

TEST_CASE("checkpoint round trip and resume") {
  Tiny t;
  TempDir dir("ckpt");
  kernels::set_thread_count(1);
  TrainConfig c = t.cfg;
  c.max_epochs = 4;

  Detector det(t.ae, c, {}, t.shape);
  Trainer tr(det, t.normals);
  tr.run_epoch();
  tr.run_epoch();
  save_checkpoint(dir.path() / "mid.ckpt", det, &tr.state());
  tr.run_epoch();
  tr.run_epoch();
  const auto straight = tr.state().history;
  const auto straight_scores = scores_of(det.score_dataset(t.all));

  auto ck = load_checkpoint(dir.path() / "mid.ckpt");
  REQUIRE(ck.state);
  Trainer resumed(ck.detector, t.normals);
  resumed.restore(*ck.state);
  resumed.run_epoch();
  resumed.run_epoch();
  kernels::set_thread_count(0);
  CHECK(resumed.state().history == straight);
  CHECK(scores_of(ck.detector.score_dataset(t.all)) == straight_scores);

  save_checkpoint(dir.path() / "final.ckpt", det);
  auto fin = load_checkpoint(dir.path() / "final.ckpt");
  CHECK_FALSE(fin.state);
  CHECK(scores_of(fin.detector.score_dataset(t.all)) == straight_scores);
  CHECK(fin.detector.train_config().max_epochs == 4);
  CHECK(fin.detector.ae_config().widths == t.ae.widths);
}

TEST_CASE("corrupt and incompatible checkpoints are rejected") {
  Tiny t;
  TempDir dir("ckpt_bad");
  Detector det(t.ae, t.cfg, {}, t.shape);
  const auto good = dir.path() / "good.ckpt";
  save_checkpoint(good, det);

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir.path() / name, std::ios::binary) << content;
    return dir.path() / name;
  };
  CHECK_THROWS_AS(load_checkpoint(write("trunc.ckpt", bytes.substr(0, bytes.size() - 7))), DataError);
  CHECK_THROWS_AS(load_checkpoint(write("trail.ckpt", bytes + "x")), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(write("magic.ckpt", magic)), DataError);
  std::string version = bytes;
  version[8] = 9;
  CHECK_THROWS_AS(load_checkpoint(write("version.ckpt", version)), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.ckpt"), DataError);

  // A header edited to a wider model no longer matches the stored tensors.
  const auto pos = bytes.find("\"latent\":2");
  REQUIRE(pos != std::string::npos);
  std::string wider = bytes;
  wider[pos + 9] = '3';
  CHECK_THROWS_AS(load_checkpoint(write("wider.ckpt", wider)), ShapeError);
}

}  // TEST_SUITE
