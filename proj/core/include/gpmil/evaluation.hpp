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

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpmil/data.hpp"
#include "gpmil/mil_head.hpp"

namespace gpmil {

struct PredictionRecord {
  std::string bag_id;
  MatrixXd prob_samples;  ///< N_s x C
  VectorXd mean_probs;
  VectorXd std_probs;  ///< population standard deviation over samples
  int predicted = 0;   ///< argmax of mean_probs, ties to the lowest index
  int true_label = 0;
  VectorXd attention_mean;  ///< per instance, mean over samples
  VectorXd attention_std;

  /// std_probs at the predicted class.
  [[nodiscard]] double predicted_std() const { return std_probs(predicted); }
};

/// Builds a record from Monte-Carlo outputs.
PredictionRecord make_record(std::string bag_id, int true_label,
                             const MatrixXd& prob_samples,
                             const MatrixXd& attention_samples);

/// Noise for bag `b` comes from Rng(derive_seed(seed, b.id)), so results do
/// not depend on bag order and bags may be processed independently.
std::vector<PredictionRecord> predict(const MilModel& model,
                                      const Dataset& dataset, Index n_samples,
                                      std::uint64_t seed);
std::vector<PredictionRecord> predict_gated(const GatedAttentionModel& model,
                                            const Dataset& dataset);

/// Mean of per-class recalls. Throws InvalidArgument on empty input or when
/// a class in [0, n_classes) has no support.
double balanced_accuracy(std::span<const int> predicted,
                         std::span<const int> labels, int n_classes);

/// Mann-Whitney estimate of P(score_pos > score_neg), ties counted 1/2.
/// `positive[i]` marks positives. Throws InvalidArgument if one class is
/// missing.
double auroc(std::span<const double> scores, std::span<const bool> positive);

/// Binary: AUROC of column 1. Multiclass: unweighted one-vs-rest mean over
/// classes that have both positives and negatives.
double auroc_multiclass(const MatrixXd& mean_probs, std::span<const int> labels);

/// Adaptive (equal-mass) calibration error over max-probability confidence.
/// Samples are sorted by (confidence, correctness); bins get n / n_bins
/// samples with the remainder spread over the leading bins. With fewer
/// samples than bins, n bins of one sample each are used.
double adaptive_ece(const MatrixXd& mean_probs, std::span<const int> labels,
                    int n_bins = 15);

/// Min-max scaling to [0, 1]; a constant vector maps to zeros and sets
/// `constant`.
VectorXd minmax_normalize(const VectorXd& values, bool* constant = nullptr);

struct InstanceEval {
  double auc = 0.0;
  double best_acc = 0.0;  ///< balanced instance accuracy
  double best_threshold = 0.0;
  std::size_t n_instances = 0;
  std::size_t constant_slides = 0;
};

/// Attention as instance probability: per-slide min-max normalization,
/// instances pooled across slides, positives are non-zero labels. Best
/// balanced accuracy over thresholds {0, 0.01, ..., 1} with score >= t
/// predicted positive; ties go to the lowest threshold.
InstanceEval instance_eval(std::span<const VectorXd> attention,
                           std::span<const std::vector<int>> instance_labels);
InstanceEval instance_eval(const std::vector<PredictionRecord>& records,
                           const Dataset& dataset);

/// Balanced accuracy of pooled instance scores at one threshold.
double instance_accuracy_at(std::span<const double> scores,
                            std::span<const bool> positive, double threshold);

struct GroupStats {
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  ///< sample standard deviation
};

struct WelchResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool zero_variance = false;
  GroupStats first;
  GroupStats second;
};

/// Two-sided Welch t-test of mean(first) vs mean(second). Both groups need
/// at least two members. When both sample variances vanish the statistic is
/// +-inf (p = 0) for different means and 0 (p = 1) for equal means.
WelchResult welch_t_test(std::span<const double> first,
                         std::span<const double> second);

/// Welch test of predicted-class std for misclassified (first) against
/// correctly classified (second) bags.
WelchResult uncertainty_separation(const std::vector<PredictionRecord>& records);

double log_beta(double a, double b);
/// I_x(a, b), continued fraction (modified Lentz).
double regularized_incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct MetricsReport {
  double balanced_acc = 0.0;
  double auc = 0.0;
  double ace = 0.0;
  std::optional<double> instance_auc;
  std::optional<double> instance_acc_best;
  std::optional<double> best_threshold;
  std::optional<double> welch_t;
  std::optional<double> welch_p;
  std::optional<double> welch_df;
  bool welch_zero_variance = false;
  double mean_std_correct = 0.0;
  double mean_std_incorrect = 0.0;
  std::vector<std::size_t> support;
  std::size_t n_bags = 0;
  std::size_t constant_attention_slides = 0;
};

struct EvalOptions {
  int n_bins = 15;
};

/// Bag metrics always; instance metrics when every bag has instance labels
/// and both instance classes occur; Welch test when both correctness groups
/// have at least two members.
MetricsReport evaluate(const std::vector<PredictionRecord>& records,
                       const Dataset& dataset, const EvalOptions& options = {});

/// Flat JSON object; absent optionals are null.
std::string to_json(const MetricsReport& report);
/// One "key=value" line per field; absent optionals are written as "nan".
std::string to_key_value(const MetricsReport& report);

struct TopInstance {
  std::size_t bag = 0;
  Index instance = 0;
  double similarity = 0.0;
};

struct InducingLabelMap {
  std::vector<std::vector<int>> assignment;  ///< [bag][instance]
  std::vector<std::vector<double>> similarity;
  std::vector<std::vector<TopInstance>> top;  ///< [inducing point]
  std::size_t zero_norm = 0;  ///< zero-norm embeddings or inducing points
};

/// Cosine similarity in projected space; zero-norm vectors get similarity 0
/// and are counted. Ties go to the lowest inducing index.
MatrixXd cosine_similarity(const MatrixXd& rows, const MatrixXd& centers,
                           std::size_t* zero_norm = nullptr);
InducingLabelMap inducing_label_map(const Dataset& dataset,
                                    const MilModel& model, std::size_t top_k);

}  // namespace gpmil
