#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ciabench/dataset.hpp"
#include "ciabench/defense.hpp"
#include "ciabench/rng.hpp"
#include "ciabench/types.hpp"

namespace ciabench {

enum class ModelKind { gmf, prme };

ModelKind parse_model_kind(const std::string& tag);
std::string model_name(ModelKind kind);

struct TrainConfig {
  double lr = 0.01;
  int32_t local_epochs = 1;
  int32_t batch_size = 64;
  int32_t neg_ratio = 4;
  int32_t dim = 16;
  uint64_t seed = 0;

  void validate() const;
};

// Embedding bundle. `head` is the GMF output layer; empty for prme.
struct RecModel {
  Mat user_emb;  // N x d
  Mat item_emb;  // V x d
  Vec head;
  int32_t dim = 0;

  bool has_head() const { return head.size() > 0; }
  bool finite() const;
};

RecModel init_model(int32_t n_users, int32_t n_items, const TrainConfig& cfg,
                    ModelKind kind);

double sigmoid(double z);

// Scores from raw rows, shared by full-model scoring and the attack's
// momentum/fictive paths.
double gmf_score_rows(const RowVec& user_row, const RowVec& item_row,
                      const Vec& head);
double prme_score_rows(const RowVec& user_row, const RowVec& item_row);

double score_gmf(const RecModel& m, UserId u, ItemId i);
double score_prme(const RecModel& m, UserId u, ItemId i);
double score(const RecModel& m, UserId u, ItemId i, ModelKind kind);

// --- batch losses and gradients ------------------------------------------
// Exposed so tests can check analytic gradients against finite differences.

struct GmfSample {
  ItemId item;
  double label;  // 1 positive, 0 sampled negative
};

struct BprPair {
  ItemId pos;
  ItemId neg;
};

// Mean binary cross-entropy over the batch. Gradients are accumulated into
// the output arguments (g_items maps batch-local slots, see item_slots).
double gmf_batch_loss_grad(const RowVec& user_row, const Mat& item_emb,
                           const Vec& head,
                           const std::vector<GmfSample>& batch,
                           RowVec& g_user, Vec& g_head,
                           std::vector<ItemId>& item_slots, Mat& g_items);

// Mean BPR (pairwise logistic) loss over the pairs, relevance = negated
// squared euclidean distance.
double prme_batch_loss_grad(const RowVec& user_row, const Mat& item_emb,
                            const std::vector<BprPair>& batch, RowVec& g_user,
                            std::vector<ItemId>& item_slots, Mat& g_items);

// --- local training --------------------------------------------------------

struct LocalTrainResult {
  RecModel model;
  GradientRecord grad;
  std::vector<double> epoch_losses;
  bool empty_negative_pool = false;
};

// Delta-only variant used by the protocol loops, which apply updates to
// existing state instead of copying whole models around.
struct LocalDelta {
  GradientRecord grad;
  std::vector<double> epoch_losses;
  bool empty_negative_pool = false;
};

LocalDelta local_train_delta(const RecModel& start, UserId user,
                             const std::vector<ItemId>& train_items,
                             const TrainConfig& cfg, ModelKind kind,
                             const DefensePolicy& defense, uint64_t rng_seed);

void apply_update(RecModel& m, UserId owner, const GradientRecord& grad);

// Mini-batch SGD on the user's own data. Only the user's embedding row, the
// sampled items' rows and the head change. Under share_less the reference for
// the item regularizer is the item matrix at entry (global in FL, the node's
// previous state in GL); under dp_sgd the aggregate delta is clipped and
// noised before it is folded into the returned model.
LocalTrainResult local_train(const RecModel& start, UserId user,
                             const std::vector<ItemId>& train_items,
                             const TrainConfig& cfg, ModelKind kind,
                             const DefensePolicy& defense, uint64_t rng_seed);

// --- utility metrics -------------------------------------------------------

using ScoreFn = std::function<double(UserId, ItemId)>;

// Leave-one-out hit ratio: one seeded held-out test item per user ranked
// against n_neg sampled non-interacted items.
double hit_ratio_at_k(const ScoreFn& score_fn, const InteractionDataset& ds,
                      int32_t k, uint64_t eval_seed, int32_t n_neg = 99);
double hit_ratio_at_k(const RecModel& m, const InteractionDataset& ds,
                      int32_t k, ModelKind kind, uint64_t eval_seed,
                      int32_t n_neg = 99);

// Top-k over the full non-train catalog against the full test set.
double f1_at_k(const ScoreFn& score_fn, const InteractionDataset& ds,
               int32_t k);
double f1_at_k(const RecModel& m, const InteractionDataset& ds, int32_t k,
               ModelKind kind);

// --- checkpoint io ---------------------------------------------------------

void save_model(const RecModel& m, const std::string& path);
RecModel load_model(const std::string& path);

}  // namespace ciabench
