#include "ciabench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ciabench/rng.hpp"

namespace ciabench {

std::vector<int32_t> sample_without_replacement(Rng& g, int32_t n, int32_t k) {
  if (k > n) k = n;
  std::vector<int32_t> out;
  out.reserve(k);
  if (k * 3 >= n) {
    std::vector<int32_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int32_t i = 0; i < k; ++i) {
      int64_t j = uniform_int(g, i, n - 1);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  } else {
    std::unordered_set<int32_t> seen;
    seen.reserve(static_cast<size_t>(k) * 2);
    while (static_cast<int32_t>(out.size()) < k) {
      int32_t v = static_cast<int32_t>(uniform_int(g, 0, n - 1));
      if (seen.insert(v).second) out.push_back(v);
    }
  }
  return out;
}

DatasetFormat parse_dataset_format(const std::string& tag) {
  if (tag == "movielens100k") return DatasetFormat::movielens100k;
  if (tag == "checkin_tsv") return DatasetFormat::checkin_tsv;
  throw ConfigError("unknown dataset format tag: '" + tag + "'");
}

std::string format_name(DatasetFormat fmt) {
  return fmt == DatasetFormat::movielens100k ? "movielens100k" : "checkin_tsv";
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, '\t')) fields.push_back(cur);
  return fields;
}

}  // namespace

std::vector<RawRecord> load_dataset(const std::string& path, DatasetFormat fmt) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset file: " + path);

  std::vector<RawRecord> records;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    RawRecord rec;
    if (fmt == DatasetFormat::movielens100k) {
      // user item rating timestamp
      if (fields.size() < 4)
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": expected 4 tab-separated columns, got " +
                         std::to_string(fields.size()));
      rec.user = fields[0];
      rec.item = fields[1];
      try {
        rec.value = std::stod(fields[2]);
        rec.timestamp = std::stoll(fields[3]);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": non-numeric rating or timestamp");
      }
    } else {
      // user item [timestamp] [extra columns ignored]
      if (fields.size() < 2)
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": expected at least 2 tab-separated columns");
      rec.user = fields[0];
      rec.item = fields[1];
      if (fields.size() >= 3 && !fields[2].empty()) {
        try {
          rec.timestamp = std::stoll(fields[2]);
        } catch (const std::exception&) {
          // third column is not a timestamp in every check-in dump; ignore
        }
      }
    }
    if (rec.user.empty() || rec.item.empty())
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": empty user or item key");
    records.push_back(std::move(rec));
  }
  return records;
}

bool InteractionDataset::in_train(UserId u, ItemId i) const {
  const auto& t = train[u];
  return std::binary_search(t.begin(), t.end(), i);
}

bool InteractionDataset::interacted(UserId u, ItemId i) const {
  if (in_train(u, i)) return true;
  const auto& t = test[u];
  return std::binary_search(t.begin(), t.end(), i);
}

InteractionDataset binarize_and_split(const std::vector<RawRecord>& records,
                                      double test_fraction, uint64_t seed,
                                      const std::string& name) {
  if (records.empty()) throw ConfigError("binarize_and_split: no records");
  if (test_fraction < 0.0 || test_fraction >= 1.0)
    throw ConfigError("test_fraction must be in [0,1)");

  InteractionDataset ds;
  ds.name = name;

  // Dense ids in first-appearance order; duplicates collapse to one positive.
  std::unordered_map<std::string, UserId> user_ids;
  std::unordered_map<std::string, ItemId> item_ids;
  std::vector<std::vector<ItemId>> items_of;
  for (const auto& rec : records) {
    auto [uit, unew] = user_ids.try_emplace(
        rec.user, static_cast<UserId>(ds.user_keys.size()));
    if (unew) {
      ds.user_keys.push_back(rec.user);
      items_of.emplace_back();
    }
    auto [iit, inew] = item_ids.try_emplace(
        rec.item, static_cast<ItemId>(ds.item_keys.size()));
    if (inew) ds.item_keys.push_back(rec.item);
    items_of[uit->second].push_back(iit->second);
  }
  ds.n_users = static_cast<int32_t>(ds.user_keys.size());
  ds.n_items = static_cast<int32_t>(ds.item_keys.size());
  ds.train.resize(ds.n_users);
  ds.test.resize(ds.n_users);

  for (UserId u = 0; u < ds.n_users; ++u) {
    auto& items = items_of[u];
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    int32_t n = static_cast<int32_t>(items.size());

    int32_t n_test = static_cast<int32_t>(
        std::ceil(test_fraction * static_cast<double>(n)));
    // every user retains at least one train item
    n_test = std::min(n_test, n - 1);
    if (n_test < 0) n_test = 0;
    if (n == 1 && test_fraction > 0.0) ds.users_without_test += 1;

    Rng g = make_rng(derive_seed(seed, 0x59117ull, static_cast<uint64_t>(u)));
    auto test_idx = sample_without_replacement(g, n, n_test);
    std::vector<char> is_test(n, 0);
    for (int32_t idx : test_idx) is_test[idx] = 1;
    for (int32_t i = 0; i < n; ++i) {
      (is_test[i] ? ds.test[u] : ds.train[u]).push_back(items[i]);
    }
    ds.train_total += static_cast<int64_t>(ds.train[u].size());
    ds.test_total += static_cast<int64_t>(ds.test[u].size());
  }
  return ds;
}

std::vector<RawRecord> generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_users < 1 || cfg.n_items < 1 || cfg.n_groups < 1)
    throw ConfigError("generate_synthetic: sizes must be positive");
  Rng g = make_rng(derive_seed(cfg.seed, 0x517e7ull));

  // Item clusters, round-robin so every group has ~n_items/n_groups items.
  std::vector<int32_t> item_group(cfg.n_items);
  for (int32_t i = 0; i < cfg.n_items; ++i) item_group[i] = i % cfg.n_groups;
  std::vector<std::vector<ItemId>> group_items(cfg.n_groups);
  for (int32_t i = 0; i < cfg.n_items; ++i) group_items[item_group[i]].push_back(i);

  // Zipf-like weights over a pool of m items.
  auto make_cdf = [&](size_t m) {
    std::vector<double> cdf(m);
    double acc = 0.0;
    for (size_t r = 0; r < m; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), cfg.popularity_skew);
      cdf[r] = acc;
    }
    for (auto& v : cdf) v /= acc;
    return cdf;
  };
  auto draw_from = [&](const std::vector<ItemId>& pool,
                       const std::vector<double>& cdf, Rng& rng) {
    double x = uniform01(rng);
    size_t r = static_cast<size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
    if (r >= pool.size()) r = pool.size() - 1;
    return pool[r];
  };

  std::vector<std::vector<double>> group_cdf(cfg.n_groups);
  for (int32_t gi = 0; gi < cfg.n_groups; ++gi)
    group_cdf[gi] = make_cdf(group_items[gi].size());
  std::vector<ItemId> all_items(cfg.n_items);
  std::iota(all_items.begin(), all_items.end(), 0);
  auto global_cdf = make_cdf(all_items.size());

  // Per-user activity: heavy-ish tail, floor at min_user_items, scaled so the
  // total lands near target_interactions.
  std::vector<double> raw_activity(cfg.n_users);
  double raw_sum = 0.0;
  for (int32_t u = 0; u < cfg.n_users; ++u) {
    double a = std::exp(gaussian(g, 0.0, 0.8));
    raw_activity[u] = a;
    raw_sum += a;
  }
  double budget = static_cast<double>(cfg.target_interactions) -
                  static_cast<double>(cfg.n_users) * cfg.min_user_items;
  if (budget < 0) budget = 0;

  std::vector<RawRecord> records;
  records.reserve(static_cast<size_t>(cfg.target_interactions));
  for (int32_t u = 0; u < cfg.n_users; ++u) {
    int32_t quota = cfg.min_user_items +
                    static_cast<int32_t>(budget * raw_activity[u] / raw_sum);
    if (quota > cfg.n_items) quota = cfg.n_items;
    int32_t grp = static_cast<int32_t>(uniform_int(g, 0, cfg.n_groups - 1));
    Rng ug = make_rng(derive_seed(cfg.seed, 0x85e2ull, static_cast<uint64_t>(u)));
    std::unordered_set<ItemId> taken;
    taken.reserve(static_cast<size_t>(quota) * 2);
    int64_t attempts = 0;
    const int64_t max_attempts = static_cast<int64_t>(quota) * 60 + 1000;
    while (static_cast<int32_t>(taken.size()) < quota && attempts < max_attempts) {
      ++attempts;
      ItemId it;
      if (uniform01(ug) < cfg.affinity)
        it = draw_from(group_items[grp], group_cdf[grp], ug);
      else
        it = draw_from(all_items, global_cdf, ug);
      if (taken.insert(it).second) {
        RawRecord rec;
        rec.user = "u" + std::to_string(u);
        rec.item = "i" + std::to_string(it);
        rec.value = 1.0;
        rec.timestamp = 0;
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

void write_tsv(const std::vector<RawRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  for (const auto& r : records) {
    out << r.user << '\t' << r.item << '\t'
        << (r.value ? *r.value : 1.0) << '\t'
        << (r.timestamp ? *r.timestamp : 0) << '\n';
  }
}

}  // namespace ciabench
