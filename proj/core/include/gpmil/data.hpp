/*
 * Copyright 2026 The gpmil Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

namespace gpmil {

/// One bag: K instance feature vectors (rows) sharing a bag label, plus the
/// per-instance labels when the data is synthetic. Instance label 0 is the
/// negative/background class.
struct InstanceBag {
  std::string id;
  Eigen::MatrixXd features;  ///< K x D
  int label = 0;
  std::optional<std::vector<int>> instance_labels;

  [[nodiscard]] Eigen::Index size() const { return features.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return features.cols(); }
};

struct Dataset {
  Eigen::Index dim = 0;
  int n_classes = 2;
  std::vector<InstanceBag> bags;

  [[nodiscard]] std::size_t size() const { return bags.size(); }
  [[nodiscard]] bool empty() const { return bags.empty(); }
  [[nodiscard]] std::vector<std::size_t> class_counts() const;
  [[nodiscard]] std::size_t total_instances() const;
};

/// Bag label implied by instance labels under the standard MIL assumption:
/// 0 when every instance is 0, otherwise the largest positive class present.
int mil_bag_label(const std::vector<int>& instance_labels);

/// Checks every bag with instance labels against mil_bag_label, plus shape
/// and finiteness. Returns the ids of violating bags.
std::vector<std::string> find_mil_violations(const Dataset& dataset);

struct SyntheticSpec {
  std::size_t n_bags = 100;
  Eigen::Index k_min = 20;
  Eigen::Index k_max = 50;
  Eigen::Index dim = 16;
  int n_classes = 2;
  /// n_classes x dim; row 0 is the background cluster.
  Eigen::MatrixXd cluster_means;
  double cluster_std = 1.0;
  /// Fraction of class-c instances in a class-c bag, drawn uniformly from
  /// (lo, hi]; must lie in (0, 1].
  double positive_fraction_lo = 0.05;
  double positive_fraction_hi = 0.2;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument describing the first violated constraint.
  void validate() const;
};

/// Background cluster at the origin, class c at `separation` along a seeded
/// random unit direction (distinct directions per class).
Eigen::MatrixXd default_cluster_means(int n_classes, Eigen::Index dim,
                                      double separation, std::uint64_t seed);

/// Class-balanced bags (counts within one of each other). Negative bags draw
/// every instance from cluster 0; a class-c bag draws a fraction of its
/// instances from cluster c and the rest from cluster 0.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Binary format unless the path ends in ".jsonl", in which case the
/// JSON-lines debugging format is used. Both preserve doubles bit-exactly.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

void write_dataset_binary(const Dataset& dataset, std::ostream& out);
Dataset read_dataset_binary(std::istream& in);
void write_dataset_jsonl(const Dataset& dataset, std::ostream& out);
Dataset read_dataset_jsonl(std::istream& in);

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Stratified by bag label and deterministic under `seed`. Every part with a
/// non-zero fraction receives at least one bag of every class; a class with
/// fewer bags than such parts raises StratificationError.
DatasetSplit split_dataset(const Dataset& dataset,
                           const std::array<double, 3>& fractions,
                           std::uint64_t seed);

}  // namespace gpmil
