#include "ciabench/defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ciabench {

DefenseKind parse_defense_kind(const std::string& tag) {
  if (tag == "none") return DefenseKind::none;
  if (tag == "share_less") return DefenseKind::share_less;
  if (tag == "dp_sgd") return DefenseKind::dp_sgd;
  throw ConfigError("unknown defense kind: '" + tag + "'");
}

std::string defense_name(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::none: return "none";
    case DefenseKind::share_less: return "share_less";
    default: return "dp_sgd";
  }
}

void DefensePolicy::validate() const {
  if (kind == DefenseKind::share_less && tau < 0)
    throw ConfigError("defense.tau must be >= 0");
  if (kind == DefenseKind::dp_sgd) {
    if (clip <= 0) throw ConfigError("defense.clip must be > 0");
    if (noise_mult < 0) throw ConfigError("defense.noise_mult must be >= 0");
    if (delta <= 0 || delta >= 1) throw ConfigError("defense.delta must be in (0,1)");
  }
}

double share_less_loss(double base_loss, const Mat& item_emb_updated,
                       const Mat& item_emb_reference, double tau) {
  if (item_emb_updated.rows() != item_emb_reference.rows() ||
      item_emb_updated.cols() != item_emb_reference.cols())
    throw ProtocolError("share_less_loss: shape mismatch");
  double penalty = 0.0;
  for (Eigen::Index r = 0; r < item_emb_updated.rows(); ++r)
    penalty += (item_emb_updated.row(r) - item_emb_reference.row(r)).norm();
  return base_loss + tau * penalty;
}

double GradientRecord::l2_norm() const {
  double sq = 0.0;
  if (user_row_delta.size() > 0) sq += user_row_delta.squaredNorm();
  for (const auto& [item, row] : item_row_deltas) sq += row.squaredNorm();
  if (head_delta.size() > 0) sq += head_delta.squaredNorm();
  return std::sqrt(sq);
}

void dp_sgd_step(GradientRecord& grads, double clip, double noise_mult, Rng& g) {
  if (clip <= 0) throw ConfigError("dp_sgd_step: clip must be > 0");
  grads.pre_clip_norm = grads.l2_norm();
  double scale = 1.0;
  if (grads.pre_clip_norm > clip) {
    scale = clip / grads.pre_clip_norm;
    grads.clipped = true;
  }
  if (scale != 1.0) {
    if (grads.user_row_delta.size() > 0) grads.user_row_delta *= scale;
    for (auto& [item, row] : grads.item_row_deltas) row *= scale;
    if (grads.head_delta.size() > 0) grads.head_delta *= scale;
  }
  if (noise_mult > 0) {
    const double sigma = noise_mult * clip;
    auto noise_block = [&](auto& block) {
      for (Eigen::Index c = 0; c < block.size(); ++c)
        block(c) += gaussian(g, 0.0, sigma);
    };
    if (grads.user_row_delta.size() > 0) noise_block(grads.user_row_delta);
    for (auto& [item, row] : grads.item_row_deltas) noise_block(row);
    if (grads.head_delta.size() > 0) noise_block(grads.head_delta);
    grads.noised = true;
  }
  grads.post_norm = grads.l2_norm();
}

double gaussian_rdp_epsilon(double noise_mult, int64_t steps, double delta) {
  if (noise_mult <= 0 || steps <= 0)
    return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (double alpha = 1.25; alpha <= 4096.0; alpha *= 1.1) {
    double rdp = static_cast<double>(steps) * alpha /
                 (2.0 * noise_mult * noise_mult);
    double eps = rdp + std::log(1.0 / delta) / (alpha - 1.0);
    best = std::min(best, eps);
  }
  return best;
}

}  // namespace ciabench
