#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ciabench/types.hpp"

namespace ciabench {

// One interaction line as read from disk, external keys kept verbatim.
struct RawRecord {
  std::string user;
  std::string item;
  std::optional<int64_t> timestamp;
  std::optional<double> value;
};

enum class DatasetFormat { movielens100k, checkin_tsv };

DatasetFormat parse_dataset_format(const std::string& tag);
std::string format_name(DatasetFormat fmt);

std::vector<RawRecord> load_dataset(const std::string& path, DatasetFormat fmt);

// Binarized implicit-feedback dataset with dense ids and a per-user
// train/test split. Train and test item lists are sorted and disjoint.
struct InteractionDataset {
  std::string name;
  int32_t n_users = 0;
  int32_t n_items = 0;
  std::vector<std::string> user_keys;  // dense UserId -> external key
  std::vector<std::string> item_keys;  // dense ItemId -> external key
  std::vector<std::vector<ItemId>> train;
  std::vector<std::vector<ItemId>> test;
  int64_t train_total = 0;
  int64_t test_total = 0;
  // users that had a single interaction and therefore contribute no test item
  int32_t users_without_test = 0;

  bool in_train(UserId u, ItemId i) const;
  bool interacted(UserId u, ItemId i) const;  // train or test
};

InteractionDataset binarize_and_split(const std::vector<RawRecord>& records,
                                      double test_fraction, uint64_t seed,
                                      const std::string& name = "");

// Synthetic implicit-feedback generator used by tests, docs and as the
// acceptance stand-in when no real dataset is on disk. Users belong to latent
// taste groups; items belong to clusters; draws mix in-group popularity with
// global popularity, so Jaccard communities exist like in real rating data.
struct SynthConfig {
  int32_t n_users = 943;
  int32_t n_items = 1682;
  int32_t n_groups = 12;
  int64_t target_interactions = 100000;
  double affinity = 0.78;        // probability a draw comes from the own group
  double popularity_skew = 0.9;  // zipf exponent over items within a pool
  int32_t min_user_items = 20;
  uint64_t seed = 42;
};

std::vector<RawRecord> generate_synthetic(const SynthConfig& cfg);
void write_tsv(const std::vector<RawRecord>& records, const std::string& path);

}  // namespace ciabench
