#pragma once

// Closed-form summation of two NIG distributions and the fused anomaly score.

#include <span>
#include <string_view>

#include "freeup/evidential.hpp"
#include "freeup/tensor.hpp"

namespace freeup::fusion {

using evidential::NIGGrad;
using evidential::NIGParams;

struct FusedEvidence {
  Volume x_tilde;
  NIGParams params;
};

/// x~_f = (v_l x~_l + v_h x~_h) / (v_l + v_h), v_f = v_l + v_h,
/// alpha_f = alpha_l + alpha_h + 1/2,
/// beta_f = beta_l + beta_h + 1/2 v_l m((x~_l - x~_f)^2) + 1/2 v_h m((x~_h - x~_f)^2),
/// with m the element mean.
FusedEvidence fuse_nig(const Volume& x_low, const NIGParams& low, const Volume& x_high, const NIGParams& high);

/// Upstream gradients of the fused quantities, and the resulting branch gradients.
struct FusionGrad {
  std::span<const double> x_tilde;  // d loss / d x~_f, may be empty
  NIGGrad params;
};

struct BranchGrad {
  NIGGrad low;
  NIGGrad high;
};

/// Adds d loss / d x~_l and d loss / d x~_h into the given buffers and
/// returns the parameter gradients.
BranchGrad fuse_nig_backward(const Volume& x_low, const NIGParams& low, const Volume& x_high, const NIGParams& high,
                             const FusionGrad& upstream, std::span<double> grad_x_low, std::span<double> grad_x_high);

/// beta_f / (v_f (alpha_f - 1)).
double anomaly_score(const FusedEvidence& f);

enum class StaticMode { product, weighted_sum };

std::string_view to_string(StaticMode mode);
StaticMode parse_static_mode(std::string_view text);

/// Score-level fusion used as the ablation comparator.
double static_fuse(double score_low, double score_high, StaticMode mode, double weight = 0.5);

}  // namespace freeup::fusion
