#include "freeup/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "freeup/config.hpp"

namespace freeup::training {

using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t k) {
  return splitmix(splitmix(a) ^ splitmix(b + 0x51ed27ULL) ^ splitmix(k + 0x2545f491ULL));
}

// Runs fn(i) for i in [0, n) across threads and rethrows the first exception.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#pragma omp critical(freeup_parallel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

std::string role_name(Role r) {
  switch (r) {
    case Role::low:
      return "low";
    case Role::high:
      return "high";
    case Role::full:
      return "full";
  }
  return "?";
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw DataError("corrupt random generator state");
  return rng;
}

}  // namespace

// --- configuration ---------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (lambda_nll < 0.0 || lambda_pen < 0.0 || lambda_f < 0.0) fail("loss weights must be >= 0");
  if (P < 1) fail("P must be >= 1");
  if (!(D > 0.0) || !std::isfinite(D)) fail("D must be > 0");
  if (patience < 1) fail("patience must be >= 1");
  if (n_runs < 1) fail("n_runs must be >= 1");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) fail("Adam betas must lie in [0,1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (min_rel_improvement < 0.0) fail("min_rel_improvement must be >= 0");
}

Ablation Ablation::parse(const std::string& text) {
  Ablation a;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item == "full" || item == "none") continue;
    if (item == "no_low_branch") {
      a.no_low_branch = true;
    } else if (item == "no_high_branch") {
      a.no_high_branch = true;
    } else if (item == "no_decouple") {
      a.no_decouple = true;
    } else if (item == "no_freq_loss") {
      a.no_freq_loss = true;
    } else if (item.rfind("static_fusion", 0) == 0) {
      const auto eq = item.find('=');
      a.static_fusion = fusion::parse_static_mode(eq == std::string::npos ? "product" : item.substr(eq + 1));
    } else {
      throw std::invalid_argument("unknown ablation flag '" + item + "'");
    }
  }
  a.validate();
  return a;
}

std::string Ablation::tag() const {
  std::vector<std::string> parts;
  if (no_low_branch) parts.emplace_back("no_low_branch");
  if (no_high_branch) parts.emplace_back("no_high_branch");
  if (no_decouple) parts.emplace_back("no_decouple");
  if (no_freq_loss) parts.emplace_back("no_freq_loss");
  if (static_fusion) parts.push_back("static_fusion=" + std::string(fusion::to_string(*static_fusion)));
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : "+") + p;
  return out;
}

void Ablation::validate() const {
  if (no_low_branch && no_high_branch) throw std::invalid_argument("ablation: cannot drop both branches");
  if (no_decouple && (no_low_branch || no_high_branch)) {
    throw std::invalid_argument("ablation: no_decouple already uses a single autoencoder");
  }
  if (static_fusion && (no_low_branch || no_high_branch || no_decouple)) {
    throw std::invalid_argument("ablation: static_fusion needs both branches");
  }
}

// --- detector --------------------------------------------------------------------

struct Detector::Forward {
  std::vector<Tensor4> outputs;                   // per branch, N x P x H x W
  std::vector<model::Autoencoder::Cache> caches;  // per branch, training only
};

struct Detector::SamplePass {
  double loss = 0.0;
  Reconstruction rec;
  std::vector<evidential::RawOutputs> draw;  // d loss / d raw head outputs
  std::vector<std::vector<double>> grad;     // d loss / d x~ (= d loss / d AE output)
};

Detector::Detector(const AEConfig& ae_cfg, const TrainConfig& cfg, const Ablation& ablation,
                   const Shape3& sample_shape)
    : ae_cfg_(ae_cfg), cfg_(cfg), ablation_(ablation), shape_(sample_shape) {
  cfg_.validate();
  ablation_.validate();
  ae_cfg_.in_planes = shape_.planes;
  ae_cfg_.validate();
  if (shape_.planes != cfg_.P) {
    throw ShapeError("sample shape " + to_string(shape_) + " does not match P=" + std::to_string(cfg_.P));
  }
  const int mult = ae_cfg_.spatial_multiple();
  if (shape_.rows < mult || shape_.cols < mult || shape_.rows % mult || shape_.cols % mult) {
    throw ShapeError("sample shape " + to_string(shape_) + ": H and W must be multiples of " + std::to_string(mult));
  }
  masks_ = spectral::gaussian_masks(shape_.rows, shape_.cols, cfg_.D);
  mask_low_ = masks_.low_natural();
  mask_high_ = masks_.high_natural();

  std::vector<Role> roles;
  if (ablation_.no_decouple) {
    roles = {Role::full};
  } else {
    if (!ablation_.no_low_branch) roles.push_back(Role::low);
    if (!ablation_.no_high_branch) roles.push_back(Role::high);
  }
  for (std::size_t i = 0; i < roles.size(); ++i) {
    AEConfig c = ae_cfg_;
    c.seed = derive_seed(ae_cfg_.seed, cfg_.seed, 2 * i);
    const std::string name = "ae_" + role_name(roles[i]);
    branches_.push_back(Branch{roles[i], model::Autoencoder(c, name),
                               evidential::EvidentialHead(shape_.size(), derive_seed(ae_cfg_.seed, cfg_.seed, 2 * i + 1),
                                                          "head_" + role_name(roles[i]))});
  }
}

std::vector<nn::Parameter*> Detector::parameters() {
  std::vector<nn::Parameter*> out;
  for (auto& b : branches_) {
    for (auto* p : b.ae.parameters()) out.push_back(p);
    for (auto* p : b.head.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const nn::Parameter*> Detector::parameters() const {
  std::vector<const nn::Parameter*> out;
  for (const auto& b : branches_) {
    for (const auto* p : b.ae.parameters()) out.push_back(p);
    for (const auto* p : b.head.parameters()) out.push_back(p);
  }
  return out;
}

std::size_t Detector::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

void Detector::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::span<const double> Detector::mask_for(Role role) const {
  if (role == Role::low) return mask_low_;
  if (role == Role::high) return mask_high_;
  return {};
}

PreparedSample Detector::prepare(const TrafficSample& sample) const {
  if (!(sample.shape() == shape_)) {
    throw ShapeError("sample '" + sample.source_id() + "' has shape " + to_string(sample.shape()) + ", model expects " +
                     to_string(shape_));
  }
  PreparedSample ps;
  ps.sample = &sample;
  if (!ablation_.no_decouple) {
    const auto bands = spectral::decouple(sample.to_volume(), masks_);
    ps.low.assign(bands.low.data.begin(), bands.low.data.end());
    ps.high.assign(bands.high.data.begin(), bands.high.data.end());
  }
  return ps;
}

Detector::Forward Detector::forward_batch(std::span<const PreparedSample* const> batch, bool keep_cache) const {
  const int n = static_cast<int>(batch.size());
  Forward fw;
  fw.outputs.resize(branches_.size());
  if (keep_cache) fw.caches.resize(branches_.size());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor4 in(n, shape_.planes, shape_.rows, shape_.cols);
    for (int i = 0; i < n; ++i) {
      const PreparedSample& ps = *batch[i];
      const std::vector<float>& src = branches_[b].role == Role::low    ? ps.low
                                      : branches_[b].role == Role::high ? ps.high
                                                                        : ps.sample->data().data;
      if (src.size() != in.image_size()) throw ShapeError("prepared sample does not match the model topology");
      std::copy(src.begin(), src.end(), in.image(i));
    }
    fw.outputs[b] = branches_[b].ae.forward(in, keep_cache ? &fw.caches[b] : nullptr);
  }
  return fw;
}

Reconstruction Detector::reconstruct_from(const PreparedSample& ps, const Forward& fw, int index) const {
  Reconstruction r;
  r.x = ps.sample->to_volume();
  if (!ps.low.empty()) {
    r.x_low = Volume(shape_, std::vector<double>(ps.low.begin(), ps.low.end()));
    r.x_high = Volume(shape_, std::vector<double>(ps.high.begin(), ps.high.end()));
  }
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Role role = branches_[b].role;
    r.roles.push_back(role);
    r.ae_out.push_back(model::from_batch(fw.outputs[b], index));
    if (role == Role::low) {
      r.x_tilde.push_back(model::integrate_complement(r.ae_out.back(), r.x_high));
    } else if (role == Role::high) {
      r.x_tilde.push_back(model::integrate_complement(r.ae_out.back(), r.x_low));
    } else {
      r.x_tilde.push_back(r.ae_out.back());
    }
    r.nig.push_back(branches_[b].head.predict(r.x_tilde.back().data));
  }
  if (dual()) r.fused = fusion::fuse_nig(r.x_tilde[0], r.nig[0], r.x_tilde[1], r.nig[1]);
  return r;
}

Detector::SamplePass Detector::sample_pass(const PreparedSample& ps, const Forward& fw, int index,
                                           bool want_grad) const {
  SamplePass sp;
  sp.rec = reconstruct_from(ps, fw, index);
  const Reconstruction& r = sp.rec;
  const std::size_t nb = branches_.size();
  const spectral::Spectrum fx = spectral::dft2(r.x);
  const double lambda_f = ablation_.no_freq_loss ? 0.0 : cfg_.lambda_f;

  std::vector<Volume> grad(want_grad ? nb : 0, Volume(shape_));
  std::vector<evidential::NIGGrad> gp(nb);
  auto term = [&](const Volume& xt, const NIGParams& nig, std::span<const double> mask, Volume* g,
                  evidential::NIGGrad* gn) {
    std::span<double> gs = g ? std::span<double>(g->data) : std::span<double>();
    double l = model::rec_loss(r.x, fx, xt, mask, lambda_f, g).total;
    l += cfg_.lambda_nll * evidential::nll_loss(r.x, xt, nig, gs, gn, cfg_.lambda_nll);
    l += cfg_.lambda_pen * evidential::pen_loss(r.x, xt, nig, gs, gn, cfg_.lambda_pen);
    return l;
  };

  for (std::size_t b = 0; b < nb; ++b) {
    sp.loss += term(r.x_tilde[b], r.nig[b], mask_for(branches_[b].role), want_grad ? &grad[b] : nullptr,
                    want_grad ? &gp[b] : nullptr);
  }
  if (r.fused) {
    Volume gf(shape_);
    evidential::NIGGrad gpf;
    sp.loss += term(r.fused->x_tilde, r.fused->params, {}, want_grad ? &gf : nullptr, want_grad ? &gpf : nullptr);
    if (want_grad) {
      const auto bg = fusion::fuse_nig_backward(r.x_tilde[0], r.nig[0], r.x_tilde[1], r.nig[1],
                                                fusion::FusionGrad{gf.data, gpf}, grad[0].data, grad[1].data);
      gp[0] += bg.low;
      gp[1] += bg.high;
    }
  }
  if (!std::isfinite(sp.loss)) throw DivergenceError("non-finite loss for sample '" + ps.sample->source_id() + "'");
  if (want_grad) {
    sp.draw.resize(nb);
    sp.grad.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      sp.draw[b] = evidential::raw_gradient(branches_[b].head.raw(r.x_tilde[b].data), gp[b]);
      branches_[b].head.input_gradient(sp.draw[b], grad[b].data);
      sp.grad[b] = std::move(grad[b].data);
    }
  }
  return sp;
}

std::vector<double> Detector::loss_and_gradients(std::span<const PreparedSample* const> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradients: empty batch");
  zero_grad();
  const int n = static_cast<int>(batch.size());
  Forward fw = forward_batch(batch, true);
  std::vector<SamplePass> passes(n);
  parallel_for(n, [&](int i) { passes[i] = sample_pass(*batch[i], fw, i, true); });

  const double scale = 1.0 / n;
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    out[i] = passes[i].loss;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      branches_[b].head.accumulate_gradient(passes[i].rec.x_tilde[b].data, passes[i].draw[b], scale);
    }
  }
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor4 dy(n, shape_.planes, shape_.rows, shape_.cols);
    for (int i = 0; i < n; ++i) {
      float* dst = dy.image(i);
      const auto& g = passes[i].grad[b];
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] = static_cast<float>(g[k] * scale);
    }
    branches_[b].ae.backward(fw.caches[b], dy);
  }
  return out;
}

std::vector<double> Detector::losses(std::span<const PreparedSample* const> batch) const {
  const int n = static_cast<int>(batch.size());
  if (n == 0) return {};
  const Forward fw = forward_batch(batch, false);
  std::vector<double> out(n);
  parallel_for(n, [&](int i) { out[i] = sample_pass(*batch[i], fw, i, false).loss; });
  return out;
}

Reconstruction Detector::reconstruct(const TrafficSample& sample) const {
  const PreparedSample ps = prepare(sample);
  const PreparedSample* one = &ps;
  const Forward fw = forward_batch(std::span<const PreparedSample* const>(&one, 1), false);
  return reconstruct_from(ps, fw, 0);
}

SampleScores Detector::scores_of(const Reconstruction& r) const {
  SampleScores s;
  for (std::size_t b = 0; b < r.roles.size(); ++b) {
    const double u = evidential::uncertainty(r.nig[b]);
    if (r.roles[b] == Role::low) s.score_low = u;
    if (r.roles[b] == Role::high) s.score_high = u;
    if (r.roles[b] == Role::full) s.score = u;
  }
  if (r.fused) {
    s.score_fused = fusion::anomaly_score(*r.fused);
    s.score = ablation_.static_fusion ? fusion::static_fuse(s.score_low, s.score_high, *ablation_.static_fusion)
                                      : s.score_fused;
  } else if (ablation_.no_high_branch) {
    s.score = s.score_low;
  } else if (ablation_.no_low_branch) {
    s.score = s.score_high;
  }
  return s;
}

SampleScores Detector::score(const TrafficSample& sample) const { return scores_of(reconstruct(sample)); }

std::vector<ScoreRow> Detector::score_dataset(std::span<const TrafficSample> samples) const {
  std::vector<ScoreRow> rows(samples.size());
  const std::size_t bs = static_cast<std::size_t>(std::max(1, cfg_.batch_size));
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const std::size_t count = std::min(bs, samples.size() - start);
    std::vector<PreparedSample> prepared(count);
    parallel_for(static_cast<int>(count), [&](int i) { prepared[i] = prepare(samples[start + i]); });
    std::vector<const PreparedSample*> ptrs(count);
    for (std::size_t i = 0; i < count; ++i) ptrs[i] = &prepared[i];
    const Forward fw = forward_batch(ptrs, false);
    parallel_for(static_cast<int>(count), [&](int i) {
      const TrafficSample& s = samples[start + i];
      rows[start + i] = ScoreRow{s.source_id(), s.label(), scores_of(reconstruct_from(prepared[i], fw, i))};
    });
  }
  return rows;
}

double branch_loss(const Volume& x, const Volume& x_tilde, const NIGParams& nig, BranchKind kind,
                   const TrainConfig& cfg) {
  const auto masks = spectral::gaussian_masks(x.shape.rows, x.shape.cols, cfg.D);
  const auto mask = model::branch_mask(kind, masks);
  double l = model::rec_loss(x, spectral::dft2(x), x_tilde, mask, cfg.lambda_f).total;
  l += cfg.lambda_nll * evidential::nll_loss(x, x_tilde, nig);
  l += cfg.lambda_pen * evidential::pen_loss(x, x_tilde, nig);
  return l;
}

double total_loss(const Volume& x, const BranchArtifacts& low, const BranchArtifacts& high,
                  const BranchArtifacts& fused, const TrainConfig& cfg) {
  return branch_loss(x, low.x_tilde, low.nig, BranchKind::low, cfg) +
         branch_loss(x, high.x_tilde, high.nig, BranchKind::high, cfg) +
         branch_loss(x, fused.x_tilde, fused.nig, BranchKind::fused, cfg);
}

// --- trainer ---------------------------------------------------------------------

Trainer::Trainer(Detector& detector, std::span<const TrafficSample> train_set) : det_(detector) {
  if (train_set.empty()) throw DataError("training set is empty");
  for (const auto& s : train_set) {
    if (s.label() != Label::normal) {
      throw DataError("training set must contain only normal samples; '" + s.source_id() + "' is " +
                      std::string(to_string(s.label())));
    }
  }
  prepared_.resize(train_set.size());
  parallel_for(static_cast<int>(train_set.size()), [&](int i) { prepared_[i] = det_.prepare(train_set[i]); });

  const auto params = det_.parameters();
  for (const auto* p : params) {
    state_.adam_m.emplace_back(p->size(), 0.0f);
    state_.adam_v.emplace_back(p->size(), 0.0f);
  }
  state_.rng_state = rng_to_string(std::mt19937_64(derive_seed(det_.train_config().seed, 0x7261696eULL, 0)));
  snapshot_best();
}

void Trainer::restore(const TrainState& state) {
  const auto params = det_.parameters();
  auto check = [&](const std::vector<std::vector<float>>& blobs, const char* what) {
    if (blobs.size() != params.size()) throw ShapeError(std::string("train state: ") + what + " count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (blobs[i].size() != params[i]->size()) {
        throw ShapeError(std::string("train state: ") + what + " size mismatch for " + params[i]->name);
      }
    }
  };
  check(state.adam_m, "adam_m");
  check(state.adam_v, "adam_v");
  check(state.best_weights, "best_weights");
  rng_from_string(state.rng_state);
  state_ = state;
}

void Trainer::snapshot_best() {
  state_.best_weights.clear();
  for (const auto* p : det_.parameters()) state_.best_weights.push_back(p->value);
}

void Trainer::adam_step() {
  const TrainConfig& c = det_.train_config();
  ++state_.adam_step;
  const double t = static_cast<double>(state_.adam_step);
  const double step = c.learning_rate * std::sqrt(1.0 - std::pow(c.adam_beta2, t)) / (1.0 - std::pow(c.adam_beta1, t));
  const float b1 = static_cast<float>(c.adam_beta1), b2 = static_cast<float>(c.adam_beta2);
  const float eps = static_cast<float>(c.adam_eps), lr = static_cast<float>(step);
  auto params = det_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    float* w = params[k]->value.data();
    const float* g = params[k]->grad.data();
    float* m = state_.adam_m[k].data();
    float* v = state_.adam_v[k].data();
    const std::size_t n = params[k]->size();
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
    }
  }
}

double Trainer::run_epoch() {
  const TrainConfig& c = det_.train_config();
  std::mt19937_64 rng = rng_from_string(state_.rng_state);
  order_.resize(prepared_.size());
  for (std::size_t i = 0; i < prepared_.size(); ++i) order_[i] = &prepared_[i];
  std::shuffle(order_.begin(), order_.end(), rng);

  double sum = 0.0;
  const std::size_t bs = static_cast<std::size_t>(c.batch_size);
  for (std::size_t start = 0; start < order_.size(); start += bs) {
    const std::size_t count = std::min(bs, order_.size() - start);
    const auto losses = det_.loss_and_gradients(std::span<const PreparedSample* const>(order_.data() + start, count));
    for (double l : losses) sum += l;
    adam_step();
  }
  const double mean = sum / static_cast<double>(order_.size());
  if (!std::isfinite(mean)) throw DivergenceError("non-finite epoch loss at epoch " + std::to_string(state_.epoch));

  state_.rng_state = rng_to_string(rng);
  state_.history.push_back(mean);
  ++state_.epoch;
  // Relative threshold on |best| since the NLL term can make the loss negative.
  if (!std::isfinite(state_.best_loss) || mean < state_.best_loss - c.min_rel_improvement * std::abs(state_.best_loss)) {
    state_.best_loss = mean;
    state_.bad_epochs = 0;
    snapshot_best();
  } else if (++state_.bad_epochs >= c.patience) {
    state_.stopped_early = true;
  }
  return mean;
}

bool Trainer::finished() const {
  return state_.stopped_early || state_.epoch >= det_.train_config().max_epochs;
}

TrainResult Trainer::run() {
  while (!finished()) run_epoch();
  auto params = det_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = state_.best_weights[k];
  return TrainResult{state_.history, state_.epoch, state_.stopped_early, state_.best_loss};
}

Detector train(std::span<const TrafficSample> train_set, const AEConfig& ae_cfg, const TrainConfig& cfg,
               const Ablation& ablation, TrainResult* result) {
  if (train_set.empty()) throw DataError("training set is empty");
  Detector det(ae_cfg, cfg, ablation, train_set.front().shape());
  Trainer trainer(det, train_set);
  TrainResult r = trainer.run();
  if (result) *result = std::move(r);
  return det;
}

// --- checkpoints -----------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

constexpr char kMagic[8] = {'F', 'R', 'E', 'E', 'U', 'P', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint is truncated");
  return v;
}

void put_floats(std::ostream& out, const std::vector<float>& v) {
  for (float f : v) put(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<float> get_floats(std::istream& in, std::size_t n) {
  std::vector<float> v(n);
  for (auto& f : v) f = std::bit_cast<float>(get<std::uint32_t>(in));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Detector& detector, const TrainState* state) {
  const auto params = detector.parameters();
  json header;
  header["version"] = kCheckpointVersion;
  header["train"] = config::to_json(detector.train_config());
  header["model"] = config::to_json(detector.ae_config());
  header["ablation"] = config::to_json(detector.ablation());
  const Shape3& s = detector.sample_shape();
  header["shape"] = {s.planes, s.rows, s.cols};
  json plist = json::array();
  for (const auto* p : params) plist.push_back({{"name", p->name}, {"shape", p->shape}});
  header["parameters"] = plist;
  if (state) {
    header["state"] = {{"epoch", state->epoch},
                       {"best_loss", std::isfinite(state->best_loss) ? json(state->best_loss) : json(nullptr)},
                       {"bad_epochs", state->bad_epochs},
                       {"stopped_early", state->stopped_early},
                       {"adam_step", state->adam_step},
                       {"rng_state", state->rng_state},
                       {"history", state->history}};
  } else {
    header["state"] = nullptr;
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params) put_floats(out, p->value);
    if (state) {
      for (const auto* blobs : {&state->adam_m, &state->adam_v, &state->best_weights}) {
        if (blobs->size() != params.size()) throw ShapeError("train state does not match the model");
        for (std::size_t k = 0; k < params.size(); ++k) {
          if ((*blobs)[k].size() != params[k]->size()) throw ShapeError("train state does not match the model");
          put_floats(out, (*blobs)[k]);
        }
      }
    }
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = get<std::uint64_t>(in);
  if (len > (1ULL << 30)) throw DataError("checkpoint header is implausibly large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint is truncated");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto shape = header.at("shape").get<std::vector<int>>();
  if (shape.size() != 3) throw DataError("corrupt checkpoint shape");
  LoadedCheckpoint out{Detector(config::ae_config_from_json(header.at("model")),
                                config::train_config_from_json(header.at("train")),
                                config::ablation_from_json(header.at("ablation")), Shape3{shape[0], shape[1], shape[2]}),
                       std::nullopt};

  auto params = out.detector.parameters();
  const auto& plist = header.at("parameters");
  if (plist.size() != params.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(plist.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto name = plist[k].at("name").get<std::string>();
    const auto pshape = plist[k].at("shape").get<std::vector<int>>();
    if (name != params[k]->name || pshape != params[k]->shape) {
      throw ShapeError("checkpoint tensor '" + name + "' does not match model tensor '" + params[k]->name + "'");
    }
  }
  for (auto* p : params) p->value = get_floats(in, p->size());

  if (!header.at("state").is_null()) {
    const auto& js = header.at("state");
    TrainState st;
    st.epoch = js.at("epoch").get<int>();
    st.best_loss = js.at("best_loss").is_null() ? std::numeric_limits<double>::infinity()
                                                : js.at("best_loss").get<double>();
    st.bad_epochs = js.at("bad_epochs").get<int>();
    st.stopped_early = js.at("stopped_early").get<bool>();
    st.adam_step = js.at("adam_step").get<std::uint64_t>();
    st.rng_state = js.at("rng_state").get<std::string>();
    st.history = js.at("history").get<std::vector<double>>();
    for (auto* blobs : {&st.adam_m, &st.adam_v, &st.best_weights}) {
      for (const auto* p : params) blobs->push_back(get_floats(in, p->size()));
    }
    out.state = std::move(st);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint has trailing bytes");
  return out;
}

}  // namespace freeup::training
