#pragma once

// Dual-branch detector, multi-task training loop and checkpoint container.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "freeup/evidential.hpp"
#include "freeup/fusion.hpp"
#include "freeup/ingest.hpp"
#include "freeup/model.hpp"
#include "freeup/spectral.hpp"

namespace freeup::training {

using evidential::DivergenceError;
using evidential::NIGParams;
using model::AEConfig;
using model::BranchKind;

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  int max_epochs = 60;
  double lambda_nll = 1e-2;
  double lambda_pen = 1e-4;
  double lambda_f = 1e-2;
  int P = 8;
  double D = 5.0;
  std::uint64_t seed = 0;
  int patience = 10;
  int n_runs = 5;

  // Adam settings and the early-stop threshold; recorded with every checkpoint.
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double min_rel_improvement = 1e-4;

  void validate() const;
};

/// Graph variants used for ablation studies.
struct Ablation {
  bool no_low_branch = false;
  bool no_high_branch = false;
  bool no_decouple = false;
  bool no_freq_loss = false;
  std::optional<fusion::StaticMode> static_fusion;

  /// Comma-separated flag list, e.g. "no_decouple" or "static_fusion=product".
  static Ablation parse(const std::string& text);
  /// "" for the full model, otherwise the flags joined by '+'.
  std::string tag() const;
  void validate() const;
};

enum class Role { low, high, full };

struct Branch {
  Role role;
  model::Autoencoder ae;
  evidential::EvidentialHead head;
};

/// A sample plus its decoupled bands, computed once per data set.
struct PreparedSample {
  const TrafficSample* sample = nullptr;
  std::vector<float> low, high;  // empty for the single-AE variant
};

/// Everything computed for one sample at inference time.
struct Reconstruction {
  Volume x;
  Volume x_low, x_high;  // decoupled bands (empty for the single-AE variant)
  std::vector<Role> roles;
  std::vector<Volume> ae_out;   // per branch
  std::vector<Volume> x_tilde;  // per branch, after complement integration
  std::vector<NIGParams> nig;   // per branch
  std::optional<fusion::FusedEvidence> fused;
};

struct SampleScores {
  double score = 0.0;  // detection score under the model's scoring mode
  double score_fused = std::numeric_limits<double>::quiet_NaN();
  double score_low = std::numeric_limits<double>::quiet_NaN();
  double score_high = std::numeric_limits<double>::quiet_NaN();
};

struct ScoreRow {
  std::string source_id;
  Label label = Label::unknown;
  SampleScores scores;
};

class Detector {
 public:
  Detector(const AEConfig& ae_cfg, const TrainConfig& cfg, const Ablation& ablation, const Shape3& sample_shape);

  const AEConfig& ae_config() const { return ae_cfg_; }
  const TrainConfig& train_config() const { return cfg_; }
  const Ablation& ablation() const { return ablation_; }
  const Shape3& sample_shape() const { return shape_; }
  const spectral::GaussianMasks& masks() const { return masks_; }

  std::vector<Branch>& branches() { return branches_; }
  const std::vector<Branch>& branches() const { return branches_; }
  bool dual() const { return branches_.size() == 2; }

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  PreparedSample prepare(const TrafficSample& sample) const;

  /// Zeroes gradients, then fills them with d(batch-mean total loss)/d(weights).
  /// Returns the per-sample total losses. Throws DivergenceError on non-finite loss.
  std::vector<double> loss_and_gradients(std::span<const PreparedSample* const> batch);
  /// Loss only, no gradient bookkeeping.
  std::vector<double> losses(std::span<const PreparedSample* const> batch) const;

  Reconstruction reconstruct(const TrafficSample& sample) const;
  SampleScores score(const TrafficSample& sample) const;
  /// Order-preserving; evaluated in batches.
  std::vector<ScoreRow> score_dataset(std::span<const TrafficSample> samples) const;

 private:
  struct Forward;
  struct SamplePass;
  Forward forward_batch(std::span<const PreparedSample* const> batch, bool keep_cache) const;
  SamplePass sample_pass(const PreparedSample& ps, const Forward& fw, int index, bool want_grad) const;
  Reconstruction reconstruct_from(const PreparedSample& ps, const Forward& fw, int index) const;
  SampleScores scores_of(const Reconstruction& r) const;
  std::span<const double> mask_for(Role role) const;

  AEConfig ae_cfg_;
  TrainConfig cfg_;
  Ablation ablation_;
  Shape3 shape_;
  spectral::GaussianMasks masks_;
  std::vector<double> mask_low_, mask_high_;
  std::vector<Branch> branches_;
};

/// Branch objective: rec_loss + lambda_nll * nll_loss + lambda_pen * pen_loss.
double branch_loss(const Volume& x, const Volume& x_tilde, const NIGParams& nig, BranchKind kind,
                   const TrainConfig& cfg);

struct BranchArtifacts {
  Volume x_tilde;
  NIGParams nig;
};

/// L_low + L_high + L_fused; `fused` carries x~_f and the fused parameters.
double total_loss(const Volume& x, const BranchArtifacts& low, const BranchArtifacts& high,
                  const BranchArtifacts& fused, const TrainConfig& cfg);

/// Mutable optimizer/early-stopping state; everything needed to resume.
struct TrainState {
  int epoch = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  bool stopped_early = false;
  std::uint64_t adam_step = 0;
  std::vector<std::vector<float>> adam_m, adam_v;
  std::vector<std::vector<float>> best_weights;
  std::string rng_state;
  std::vector<double> history;  // epoch-mean total loss
};

struct TrainResult {
  std::vector<double> epoch_losses;
  int epochs_run = 0;
  bool stopped_early = false;
  double best_loss = 0.0;
};

class Trainer {
 public:
  /// Rejects empty or non-normal training data (DataError).
  Trainer(Detector& detector, std::span<const TrafficSample> train_set);

  void restore(const TrainState& state);
  const TrainState& state() const { return state_; }

  /// One shuffled pass; returns its mean total loss.
  double run_epoch();
  bool finished() const;
  /// Runs epochs until finished(), then loads the best weights into the detector.
  TrainResult run();

 private:
  void adam_step();
  void snapshot_best();

  Detector& det_;
  std::vector<PreparedSample> prepared_;
  std::vector<const PreparedSample*> order_;
  TrainState state_;
};

/// Builds a detector from configs and trains it on `train_set`.
Detector train(std::span<const TrafficSample> train_set, const AEConfig& ae_cfg, const TrainConfig& cfg,
               const Ablation& ablation, TrainResult* result = nullptr);

// --- checkpoints -----------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Detector& detector, const TrainState* state = nullptr);

struct LoadedCheckpoint {
  Detector detector;
  std::optional<TrainState> state;
};

/// Throws ShapeError when stored tensors do not match the configured model.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace freeup::training
