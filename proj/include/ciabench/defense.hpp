#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ciabench/rng.hpp"
#include "ciabench/types.hpp"

namespace ciabench {

enum class DefenseKind { none, share_less, dp_sgd };

DefenseKind parse_defense_kind(const std::string& tag);
std::string defense_name(DefenseKind kind);

struct DefensePolicy {
  DefenseKind kind = DefenseKind::none;
  double tau = 0.5;         // share_less regularization factor
  double clip = 2.0;        // dp_sgd clipping norm C
  double noise_mult = 0.0;  // dp_sgd scaling factor iota
  double delta = 1e-6;      // reported alongside the epsilon estimate

  bool share_less() const { return kind == DefenseKind::share_less; }
  bool dp() const { return kind == DefenseKind::dp_sgd; }
  void validate() const;
};

// Regularized loss value: base plus tau * sum of L2 distances between each
// touched item row and its reference row. Rows are paired positionally.
double share_less_loss(double base_loss, const Mat& item_emb_updated,
                       const Mat& item_emb_reference, double tau);

// One user's aggregate update for a local round, restricted to the rows that
// training touched. Doubles as the gradient record consumed by the AIA
// baseline and by DP bookkeeping.
struct GradientRecord {
  RowVec user_row_delta;  // size 0 when user embeddings are withheld
  std::vector<std::pair<ItemId, RowVec>> item_row_deltas;  // sorted by item
  Vec head_delta;         // size 0 for headless models
  double pre_clip_norm = 0.0;
  double post_norm = 0.0;
  bool clipped = false;
  bool noised = false;

  double l2_norm() const;
};

// Rescales the record to L2 norm <= clip, then adds iid Gaussian noise of
// scale noise_mult*clip to every transmitted coordinate.
void dp_sgd_step(GradientRecord& grads, double clip, double noise_mult, Rng& g);

// Advisory epsilon estimate for the Gaussian mechanism composed over `steps`
// releases, via a min over Renyi orders. This is the artifact's accountant;
// it makes no claim about the accounting used in any published figure.
double gaussian_rdp_epsilon(double noise_mult, int64_t steps, double delta);

}  // namespace ciabench
