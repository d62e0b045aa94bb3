#include "ciabench/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace ciabench {

ModelKind parse_model_kind(const std::string& tag) {
  if (tag == "gmf") return ModelKind::gmf;
  if (tag == "prme") return ModelKind::prme;
  throw ConfigError("unknown model kind: '" + tag + "'");
}

std::string model_name(ModelKind kind) {
  return kind == ModelKind::gmf ? "gmf" : "prme";
}

void TrainConfig::validate() const {
  if (lr < 0) throw ConfigError("train.lr must be >= 0");
  if (local_epochs < 1) throw ConfigError("train.local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (neg_ratio < 1) throw ConfigError("train.neg_ratio must be >= 1");
  if (dim < 1) throw ConfigError("train.dim must be >= 1");
}

bool RecModel::finite() const {
  return user_emb.allFinite() && item_emb.allFinite() &&
         (head.size() == 0 || head.allFinite());
}

RecModel init_model(int32_t n_users, int32_t n_items, const TrainConfig& cfg,
                    ModelKind kind) {
  if (n_users < 1 || n_items < 1) throw ConfigError("init_model: empty sizes");
  RecModel m;
  m.dim = cfg.dim;
  m.user_emb.resize(n_users, cfg.dim);
  m.item_emb.resize(n_items, cfg.dim);
  Rng g = make_rng(derive_seed(cfg.seed, 0x1417ull));
  constexpr double kInitStd = 0.01;
  for (int32_t r = 0; r < n_users; ++r)
    for (int32_t c = 0; c < cfg.dim; ++c)
      m.user_emb(r, c) = gaussian(g, 0.0, kInitStd);
  for (int32_t r = 0; r < n_items; ++r)
    for (int32_t c = 0; c < cfg.dim; ++c)
      m.item_emb(r, c) = gaussian(g, 0.0, kInitStd);
  if (kind == ModelKind::gmf) {
    m.head.resize(cfg.dim);
    for (int32_t c = 0; c < cfg.dim; ++c) m.head(c) = gaussian(g, 0.0, kInitStd);
  }
  return m;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

// log(1 + e^x) without overflow
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void check_ids(const RecModel& m, UserId u, ItemId i) {
  if (u < 0 || u >= m.user_emb.rows())
    throw std::out_of_range("user id out of range: " + std::to_string(u));
  if (i < 0 || i >= m.item_emb.rows())
    throw std::out_of_range("item id out of range: " + std::to_string(i));
}

}  // namespace

double gmf_score_rows(const RowVec& user_row, const RowVec& item_row,
                      const Vec& head) {
  double z = (user_row.array() * item_row.array()).matrix().dot(head.transpose());
  return sigmoid(z);
}

double prme_score_rows(const RowVec& user_row, const RowVec& item_row) {
  return -(user_row - item_row).squaredNorm();
}

double score_gmf(const RecModel& m, UserId u, ItemId i) {
  check_ids(m, u, i);
  return gmf_score_rows(m.user_emb.row(u), m.item_emb.row(i), m.head);
}

double score_prme(const RecModel& m, UserId u, ItemId i) {
  check_ids(m, u, i);
  return prme_score_rows(m.user_emb.row(u), m.item_emb.row(i));
}

double score(const RecModel& m, UserId u, ItemId i, ModelKind kind) {
  return kind == ModelKind::gmf ? score_gmf(m, u, i) : score_prme(m, u, i);
}

// --- slot-based batch kernels ----------------------------------------------
// Training works on gathered copies of the touched item rows; slots index
// into that scratch matrix so the same kernels serve full matrices and
// scratch alike.

namespace {

struct GmfSlotSample {
  int32_t slot;
  double label;
};

struct BprSlotPair {
  int32_t pos;
  int32_t neg;
};

double gmf_slots_loss_grad(const RowVec& user_row, const Mat& rows,
                           const Vec& head,
                           const std::vector<GmfSlotSample>& batch,
                           RowVec& g_user, Vec& g_head, Mat& g_rows) {
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& s : batch) {
    RowVec prod = (user_row.array() * rows.row(s.slot).array()).matrix();
    double z = prod.dot(head.transpose());
    double yhat = sigmoid(z);
    loss += s.label * softplus(-z) + (1.0 - s.label) * softplus(z);
    double dz = (yhat - s.label) * inv_b;
    g_head += dz * prod.transpose();
    g_user.array() += dz * head.transpose().array() * rows.row(s.slot).array();
    g_rows.row(s.slot).array() += dz * head.transpose().array() * user_row.array();
  }
  return loss * inv_b;
}

double prme_slots_loss_grad(const RowVec& user_row, const Mat& rows,
                            const std::vector<BprSlotPair>& batch,
                            RowVec& g_user, Mat& g_rows) {
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& p : batch) {
    RowVec du_pos = user_row - rows.row(p.pos);
    RowVec du_neg = user_row - rows.row(p.neg);
    // margin, positive when the positive item is closer
    double m = du_neg.squaredNorm() - du_pos.squaredNorm();
    loss += softplus(-m);
    double dm = -sigmoid(-m) * inv_b;
    g_user += dm * 2.0 * (rows.row(p.pos) - rows.row(p.neg));
    g_rows.row(p.pos) += dm * 2.0 * du_pos;
    g_rows.row(p.neg) -= dm * 2.0 * du_neg;
  }
  return loss * inv_b;
}

class SlotIndex {
 public:
  int32_t slot(ItemId item) {
    auto [it, inserted] = slot_of_.try_emplace(item, static_cast<int32_t>(items_.size()));
    if (inserted) items_.push_back(item);
    return it->second;
  }
  const std::vector<ItemId>& items() const { return items_; }
  void clear() {
    slot_of_.clear();
    items_.clear();
  }

 private:
  std::unordered_map<ItemId, int32_t> slot_of_;
  std::vector<ItemId> items_;
};

}  // namespace

double gmf_batch_loss_grad(const RowVec& user_row, const Mat& item_emb,
                           const Vec& head,
                           const std::vector<GmfSample>& batch,
                           RowVec& g_user, Vec& g_head,
                           std::vector<ItemId>& item_slots, Mat& g_items) {
  SlotIndex idx;
  std::vector<GmfSlotSample> slot_batch;
  slot_batch.reserve(batch.size());
  for (const auto& s : batch) slot_batch.push_back({idx.slot(s.item), s.label});
  item_slots = idx.items();
  const int32_t d = static_cast<int32_t>(item_emb.cols());
  Mat rows(item_slots.size(), d);
  for (size_t k = 0; k < item_slots.size(); ++k) rows.row(k) = item_emb.row(item_slots[k]);
  g_user = RowVec::Zero(d);
  g_head = Vec::Zero(d);
  g_items = Mat::Zero(item_slots.size(), d);
  return gmf_slots_loss_grad(user_row, rows, head, slot_batch, g_user, g_head,
                             g_items);
}

double prme_batch_loss_grad(const RowVec& user_row, const Mat& item_emb,
                            const std::vector<BprPair>& batch, RowVec& g_user,
                            std::vector<ItemId>& item_slots, Mat& g_items) {
  SlotIndex idx;
  std::vector<BprSlotPair> slot_batch;
  slot_batch.reserve(batch.size());
  for (const auto& p : batch)
    slot_batch.push_back({idx.slot(p.pos), idx.slot(p.neg)});
  item_slots = idx.items();
  const int32_t d = static_cast<int32_t>(item_emb.cols());
  Mat rows(item_slots.size(), d);
  for (size_t k = 0; k < item_slots.size(); ++k) rows.row(k) = item_emb.row(item_slots[k]);
  g_user = RowVec::Zero(d);
  g_items = Mat::Zero(item_slots.size(), d);
  return prme_slots_loss_grad(user_row, rows, slot_batch, g_user, g_items);
}

// --- local training ----------------------------------------------------------

namespace {

// Current values of the rows one local_train call has touched.
struct TouchedRows {
  std::unordered_map<ItemId, RowVec> rows;

  RowVec& get(ItemId i, const Mat& source) {
    auto it = rows.find(i);
    if (it != rows.end()) return it->second;
    return rows.emplace(i, RowVec(source.row(i))).first->second;
  }
};

ItemId sample_negative(Rng& g, int32_t n_items,
                       const std::unordered_set<ItemId>& exclude) {
  for (;;) {
    ItemId cand = static_cast<ItemId>(uniform_int(g, 0, n_items - 1));
    if (!exclude.count(cand)) return cand;
  }
}

}  // namespace

LocalDelta local_train_delta(const RecModel& start, UserId user,
                             const std::vector<ItemId>& train_items,
                             const TrainConfig& cfg, ModelKind kind,
                             const DefensePolicy& defense, uint64_t rng_seed) {
  if (train_items.empty())
    throw ConfigError("local_train: user has no train items");
  const int32_t d = start.dim;
  const int32_t n_items = static_cast<int32_t>(start.item_emb.rows());
  Rng g = make_rng(rng_seed);

  std::unordered_set<ItemId> owned(train_items.begin(), train_items.end());
  const bool have_negatives = static_cast<int32_t>(owned.size()) < n_items;

  RowVec user_row = start.user_emb.row(user);
  Vec head = start.head;
  TouchedRows touched;

  std::vector<ItemId> order(train_items.begin(), train_items.end());
  std::vector<double> epoch_losses;

  SlotIndex idx;
  std::vector<GmfSlotSample> gmf_batch;
  std::vector<BprSlotPair> bpr_batch;
  Mat rows, g_rows;
  RowVec g_user;
  Vec g_head;

  for (int32_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), g);
    double epoch_loss = 0.0;
    int32_t n_batches = 0;
    for (size_t first = 0; first < order.size(); first += cfg.batch_size) {
      size_t last = std::min(order.size(), first + cfg.batch_size);
      idx.clear();
      gmf_batch.clear();
      bpr_batch.clear();
      for (size_t k = first; k < last; ++k) {
        ItemId pos = order[k];
        int32_t pos_slot = idx.slot(pos);
        if (kind == ModelKind::gmf) {
          gmf_batch.push_back({pos_slot, 1.0});
          if (have_negatives) {
            for (int32_t r = 0; r < cfg.neg_ratio; ++r)
              gmf_batch.push_back({idx.slot(sample_negative(g, n_items, owned)), 0.0});
          }
        } else {
          if (!have_negatives) continue;  // no pairs can be formed
          for (int32_t r = 0; r < cfg.neg_ratio; ++r)
            bpr_batch.push_back({pos_slot, idx.slot(sample_negative(g, n_items, owned))});
        }
      }
      if (gmf_batch.empty() && bpr_batch.empty()) continue;

      const auto& slots = idx.items();
      rows.resize(static_cast<Eigen::Index>(slots.size()), d);
      for (size_t s = 0; s < slots.size(); ++s)
        rows.row(s) = touched.get(slots[s], start.item_emb);
      g_rows = Mat::Zero(static_cast<Eigen::Index>(slots.size()), d);
      g_user = RowVec::Zero(d);

      double loss;
      if (kind == ModelKind::gmf) {
        g_head = Vec::Zero(d);
        loss = gmf_slots_loss_grad(user_row, rows, head, gmf_batch, g_user,
                                   g_head, g_rows);
      } else {
        loss = prme_slots_loss_grad(user_row, rows, bpr_batch, g_user, g_rows);
      }

      if (defense.share_less()) {
        // anchor each touched item row to its value at entry (Eq-style L2,
        // not squared), once per batch per distinct item
        for (size_t s = 0; s < slots.size(); ++s) {
          RowVec diff = rows.row(s) - start.item_emb.row(slots[s]);
          double norm = diff.norm();
          if (norm > 0) g_rows.row(s) += (defense.tau / norm) * diff;
          loss += defense.tau * norm;
        }
      }

      user_row -= cfg.lr * g_user;
      if (kind == ModelKind::gmf) head -= cfg.lr * g_head;
      for (size_t s = 0; s < slots.size(); ++s)
        touched.get(slots[s], start.item_emb) -= cfg.lr * g_rows.row(s);

      epoch_loss += loss;
      ++n_batches;
    }
    epoch_losses.push_back(n_batches ? epoch_loss / n_batches : 0.0);
  }

  LocalDelta out;
  out.empty_negative_pool = !have_negatives;
  out.epoch_losses = std::move(epoch_losses);
  out.grad.user_row_delta = user_row - start.user_emb.row(user);
  if (kind == ModelKind::gmf) out.grad.head_delta = head - start.head;
  out.grad.item_row_deltas.reserve(touched.rows.size());
  for (auto& [item, row] : touched.rows)
    out.grad.item_row_deltas.emplace_back(item, row - RowVec(start.item_emb.row(item)));
  std::sort(out.grad.item_row_deltas.begin(), out.grad.item_row_deltas.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  if (defense.dp()) {
    Rng noise_rng = make_rng(derive_seed(rng_seed, 0xd9ull));
    dp_sgd_step(out.grad, defense.clip, defense.noise_mult, noise_rng);
  }
  return out;
}

void apply_update(RecModel& m, UserId owner, const GradientRecord& grad) {
  if (grad.user_row_delta.size() > 0) m.user_emb.row(owner) += grad.user_row_delta;
  for (const auto& [item, delta] : grad.item_row_deltas) m.item_emb.row(item) += delta;
  if (grad.head_delta.size() > 0) m.head += grad.head_delta;
}

LocalTrainResult local_train(const RecModel& start, UserId user,
                             const std::vector<ItemId>& train_items,
                             const TrainConfig& cfg, ModelKind kind,
                             const DefensePolicy& defense, uint64_t rng_seed) {
  LocalDelta delta =
      local_train_delta(start, user, train_items, cfg, kind, defense, rng_seed);
  LocalTrainResult res;
  res.model = start;
  apply_update(res.model, user, delta.grad);
  res.grad = std::move(delta.grad);
  res.epoch_losses = std::move(delta.epoch_losses);
  res.empty_negative_pool = delta.empty_negative_pool;
  return res;
}

// --- utility metrics ----------------------------------------------------------

double hit_ratio_at_k(const ScoreFn& score_fn, const InteractionDataset& ds,
                      int32_t k, uint64_t eval_seed, int32_t n_neg) {
  int64_t evaluated = 0, hits = 0;
  for (UserId u = 0; u < ds.n_users; ++u) {
    if (ds.test[u].empty()) continue;
    // needs room to sample non-interacted candidates
    if (static_cast<int32_t>(ds.train[u].size() + ds.test[u].size()) >= ds.n_items)
      continue;
    Rng g = make_rng(derive_seed(eval_seed, 0x43ull, static_cast<uint64_t>(u)));
    ItemId held_out = ds.test[u][static_cast<size_t>(
        uniform_int(g, 0, static_cast<int64_t>(ds.test[u].size()) - 1))];
    double s_test = score_fn(u, held_out);
    int32_t better = 0;
    for (int32_t j = 0; j < n_neg; ++j) {
      ItemId cand;
      do {
        cand = static_cast<ItemId>(uniform_int(g, 0, ds.n_items - 1));
      } while (ds.interacted(u, cand));
      if (score_fn(u, cand) > s_test) ++better;
    }
    if (better < k) ++hits;
    ++evaluated;
  }
  return evaluated ? static_cast<double>(hits) / static_cast<double>(evaluated) : 0.0;
}

double hit_ratio_at_k(const RecModel& m, const InteractionDataset& ds,
                      int32_t k, ModelKind kind, uint64_t eval_seed,
                      int32_t n_neg) {
  return hit_ratio_at_k(
      [&](UserId u, ItemId i) { return score(m, u, i, kind); }, ds, k,
      eval_seed, n_neg);
}

double f1_at_k(const ScoreFn& score_fn, const InteractionDataset& ds,
               int32_t k) {
  double f1_sum = 0.0;
  int64_t evaluated = 0;
  std::vector<std::pair<double, ItemId>> scored;
  for (UserId u = 0; u < ds.n_users; ++u) {
    const auto& test = ds.test[u];
    if (test.empty()) continue;
    scored.clear();
    for (ItemId i = 0; i < ds.n_items; ++i) {
      if (ds.in_train(u, i)) continue;
      scored.emplace_back(-score_fn(u, i), i);
    }
    int32_t kk = std::min<int32_t>(k, static_cast<int32_t>(scored.size()));
    std::partial_sort(scored.begin(), scored.begin() + kk, scored.end());
    int32_t hit = 0;
    for (int32_t r = 0; r < kk; ++r)
      if (std::binary_search(test.begin(), test.end(), scored[r].second)) ++hit;
    double precision = k > 0 ? static_cast<double>(hit) / k : 0.0;
    double recall = static_cast<double>(hit) / static_cast<double>(test.size());
    double f1 = (precision + recall) > 0
                    ? 2.0 * precision * recall / (precision + recall)
                    : 0.0;
    f1_sum += f1;
    ++evaluated;
  }
  return evaluated ? f1_sum / static_cast<double>(evaluated) : 0.0;
}

double f1_at_k(const RecModel& m, const InteractionDataset& ds, int32_t k,
               ModelKind kind) {
  return f1_at_k([&](UserId u, ItemId i) { return score(m, u, i, kind); }, ds,
                 k);
}

// --- checkpoint io -------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'C', 'B', 'M', '1'};

void write_mat(std::ofstream& out, const Mat& m) {
  int64_t r = m.rows(), c = m.cols();
  out.write(reinterpret_cast<const char*>(&r), sizeof r);
  out.write(reinterpret_cast<const char*>(&c), sizeof c);
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * r * c));
}

Mat read_mat(std::ifstream& in) {
  int64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), sizeof r);
  in.read(reinterpret_cast<char*>(&c), sizeof c);
  if (!in || r < 0 || c < 0) throw ParseError("corrupt model checkpoint");
  Mat m(r, c);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * r * c));
  if (!in) throw ParseError("truncated model checkpoint");
  return m;
}
}  // namespace

void save_model(const RecModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  int32_t dim = m.dim;
  uint8_t has_head = m.has_head() ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  out.write(reinterpret_cast<const char*>(&has_head), sizeof has_head);
  write_mat(out, m.user_emb);
  write_mat(out, m.item_emb);
  if (has_head) {
    Mat h = m.head.transpose();
    write_mat(out, h);
  }
}

RecModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("bad model checkpoint magic");
  RecModel m;
  uint8_t has_head = 0;
  in.read(reinterpret_cast<char*>(&m.dim), sizeof m.dim);
  in.read(reinterpret_cast<char*>(&has_head), sizeof has_head);
  m.user_emb = read_mat(in);
  m.item_emb = read_mat(in);
  if (has_head) m.head = Vec(read_mat(in).row(0).transpose());
  return m;
}

}  // namespace ciabench
