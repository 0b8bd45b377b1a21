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

#include "gpmil/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "gpmil/error.hpp"
#include "gpmil/rng.hpp"

namespace gpmil {

namespace {

int argmax_lowest(const Eigen::Ref<const VectorXd>& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

PredictionRecord make_record(std::string bag_id, int true_label,
                             const MatrixXd& prob_samples,
                             const MatrixXd& attention_samples) {
  if (prob_samples.rows() < 1) throw InvalidArgument("make_record: no samples");
  PredictionRecord r;
  r.bag_id = std::move(bag_id);
  r.true_label = true_label;
  r.prob_samples = prob_samples;
  const auto n = static_cast<double>(prob_samples.rows());
  r.mean_probs = prob_samples.colwise().mean().transpose();
  r.std_probs = ((prob_samples.rowwise() - r.mean_probs.transpose())
                     .array()
                     .square()
                     .colwise()
                     .sum() /
                 n)
                    .sqrt()
                    .transpose();
  r.predicted = argmax_lowest(r.mean_probs);
  if (attention_samples.size() > 0) {
    const auto s = static_cast<double>(attention_samples.rows());
    r.attention_mean = attention_samples.colwise().mean().transpose();
    r.attention_std = ((attention_samples.rowwise() - r.attention_mean.transpose())
                           .array()
                           .square()
                           .colwise()
                           .sum() /
                       s)
                          .sqrt()
                          .transpose();
  }
  return r;
}

std::vector<PredictionRecord> predict(const MilModel& model,
                                      const Dataset& dataset, Index n_samples,
                                      std::uint64_t seed) {
  std::vector<PredictionRecord> out;
  out.reserve(dataset.size());
  for (const auto& bag : dataset.bags) {
    Rng rng(derive_seed(seed, bag.id));
    const BagForward f = forward_bag(bag, model, n_samples, rng);
    out.push_back(make_record(bag.id, bag.label, f.prob_samples, f.attention_samples));
  }
  return out;
}

std::vector<PredictionRecord> predict_gated(const GatedAttentionModel& model,
                                            const Dataset& dataset) {
  std::vector<PredictionRecord> out;
  out.reserve(dataset.size());
  for (const auto& bag : dataset.bags) {
    const GatedForward f = forward_gated(bag, model);
    out.push_back(make_record(bag.id, bag.label, f.probs.transpose(),
                              f.attention.transpose()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bag-level metrics

double balanced_accuracy(std::span<const int> predicted,
                         std::span<const int> labels, int n_classes) {
  if (predicted.empty()) throw InvalidArgument("balanced_accuracy: empty input");
  if (predicted.size() != labels.size()) {
    throw InvalidArgument("balanced_accuracy: length mismatch");
  }
  std::vector<std::size_t> support(static_cast<std::size_t>(n_classes), 0);
  std::vector<std::size_t> hits(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= n_classes) throw InvalidArgument("balanced_accuracy: label out of range");
    ++support[y];
    if (predicted[i] == y) ++hits[y];
  }
  double sum = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    if (support[c] == 0) {
      throw InvalidArgument("balanced_accuracy: class " + std::to_string(c) +
                            " has no support");
    }
    sum += static_cast<double>(hits[c]) / static_cast<double>(support[c]);
  }
  return sum / n_classes;
}

double auroc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw InvalidArgument("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mid-ranks (1-based) summed over positives; halves are exact in binary.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw InvalidArgument("auroc: need both positive and negative samples");
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

double auroc_multiclass(const MatrixXd& mean_probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(mean_probs.rows()) != labels.size()) {
    throw InvalidArgument("auroc_multiclass: length mismatch");
  }
  const Index n_classes = mean_probs.cols();
  auto one_vs_rest = [&](Index c) {
    std::vector<double> scores(labels.size());
    std::vector<char> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = mean_probs(static_cast<Index>(i), c);
      pos[i] = labels[i] == c;
    }
    const std::vector<bool> flags(pos.begin(), pos.end());
    std::unique_ptr<bool[]> buf(new bool[flags.size()]);
    std::copy(flags.begin(), flags.end(), buf.get());
    return auroc(scores, std::span<const bool>(buf.get(), flags.size()));
  };
  if (n_classes == 2) return one_vs_rest(1);
  double sum = 0.0;
  int used = 0;
  for (Index c = 0; c < n_classes; ++c) {
    const auto count = std::count(labels.begin(), labels.end(), static_cast<int>(c));
    if (count == 0 || static_cast<std::size_t>(count) == labels.size()) continue;
    sum += one_vs_rest(c);
    ++used;
  }
  if (used == 0) throw InvalidArgument("auroc_multiclass: a single class present");
  return sum / used;
}

double adaptive_ece(const MatrixXd& mean_probs, std::span<const int> labels,
                    int n_bins) {
  const std::size_t n = labels.size();
  if (n == 0) throw InvalidArgument("adaptive_ece: empty input");
  if (static_cast<std::size_t>(mean_probs.rows()) != n) {
    throw InvalidArgument("adaptive_ece: length mismatch");
  }
  if (n_bins < 1) throw InvalidArgument("adaptive_ece: n_bins must be >= 1");

  std::vector<std::pair<double, double>> samples(n);  // (confidence, correct)
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = mean_probs.row(static_cast<Index>(i)).transpose();
    samples[i] = {row.maxCoeff(), argmax_lowest(row) == labels[i] ? 1.0 : 0.0};
  }
  std::sort(samples.begin(), samples.end());

  const std::size_t bins = std::min<std::size_t>(static_cast<std::size_t>(n_bins), n);
  const std::size_t base = n / bins;
  const std::size_t extra = n % bins;
  double total = 0.0;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    double conf = 0.0;
    double acc = 0.0;
    for (std::size_t i = pos; i < pos + size; ++i) {
      conf += samples[i].first;
      acc += samples[i].second;
    }
    pos += size;
    total += std::abs(acc / size - conf / size);
  }
  return total / static_cast<double>(bins);
}

// ---------------------------------------------------------------------------
// Instance-level metrics

VectorXd minmax_normalize(const VectorXd& values, bool* constant) {
  if (values.size() == 0) {
    if (constant) *constant = true;
    return values;
  }
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  const bool flat = !(hi > lo);
  if (constant) *constant = flat;
  if (flat) return VectorXd::Zero(values.size());
  return ((values.array() - lo) / (hi - lo)).matrix();
}

double instance_accuracy_at(std::span<const double> scores,
                            std::span<const bool> positive, double threshold) {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (positive[i]) {
      ++n_pos;
      tp += pred;
    } else {
      tn += !pred;
    }
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw InvalidArgument("instance_accuracy_at: need both instance classes");
  }
  return 0.5 * (static_cast<double>(tp) / n_pos + static_cast<double>(tn) / n_neg);
}

InstanceEval instance_eval(std::span<const VectorXd> attention,
                           std::span<const std::vector<int>> instance_labels) {
  if (attention.size() != instance_labels.size()) {
    throw InvalidArgument("instance_eval: slide count mismatch");
  }
  InstanceEval out;
  std::vector<double> scores;
  std::vector<char> pos;
  for (std::size_t b = 0; b < attention.size(); ++b) {
    if (static_cast<std::size_t>(attention[b].size()) != instance_labels[b].size()) {
      throw InvalidArgument("instance_eval: slide " + std::to_string(b) +
                            " has mismatched instance count");
    }
    bool constant = false;
    const VectorXd norm = minmax_normalize(attention[b], &constant);
    out.constant_slides += constant;
    for (Index k = 0; k < norm.size(); ++k) {
      scores.push_back(norm(k));
      pos.push_back(instance_labels[b][k] != 0);
    }
  }
  out.n_instances = scores.size();
  std::unique_ptr<bool[]> flags(new bool[pos.size()]);
  std::copy(pos.begin(), pos.end(), flags.get());
  const std::span<const bool> positive(flags.get(), pos.size());
  out.auc = auroc(scores, positive);
  out.best_acc = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double t = i / 100.0;
    const double acc = instance_accuracy_at(scores, positive, t);
    if (acc > out.best_acc) {
      out.best_acc = acc;
      out.best_threshold = t;
    }
  }
  return out;
}

InstanceEval instance_eval(const std::vector<PredictionRecord>& records,
                           const Dataset& dataset) {
  if (records.size() != dataset.size()) {
    throw InvalidArgument("instance_eval: record count does not match dataset");
  }
  std::vector<VectorXd> attention;
  std::vector<std::vector<int>> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& bag = dataset.bags[i];
    if (!bag.instance_labels) {
      throw InvalidArgument("instance_eval: bag '" + bag.id + "' has no instance labels");
    }
    attention.push_back(records[i].attention_mean);
    labels.push_back(*bag.instance_labels);
  }
  return instance_eval(attention, labels);
}

// ---------------------------------------------------------------------------
// Welch's t-test

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

GroupStats group_stats(std::span<const double> v) {
  GroupStats g;
  g.n = v.size();
  g.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(g.n);
  double ss = 0.0;
  for (const double x : v) ss += (x - g.mean) * (x - g.mean);
  g.stddev = g.n > 1 ? std::sqrt(ss / static_cast<double>(g.n - 1)) : 0.0;
  return g;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("incomplete beta: a, b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - log_beta(a, b));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw InvalidArgument("student_t: df must be > 0");
  if (std::isinf(t)) return 0.0;
  if (t == 0.0) return 1.0;
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

WelchResult welch_t_test(std::span<const double> first,
                         std::span<const double> second) {
  if (first.size() < 2 || second.size() < 2) {
    throw InvalidArgument("welch_t_test: each group needs at least two values");
  }
  WelchResult r;
  r.first = group_stats(first);
  r.second = group_stats(second);
  const double n1 = static_cast<double>(r.first.n);
  const double n2 = static_cast<double>(r.second.n);
  const double v1 = r.first.stddev * r.first.stddev / n1;
  const double v2 = r.second.stddev * r.second.stddev / n2;
  const double se2 = v1 + v2;
  const double diff = r.first.mean - r.second.mean;
  if (!(se2 > 0.0)) {
    r.zero_variance = true;
    r.df = n1 + n2 - 2.0;
    if (diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
      r.p = 0.0;
    }
    return r;
  }
  r.t = diff / std::sqrt(se2);
  r.df = se2 * se2 / (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

WelchResult uncertainty_separation(const std::vector<PredictionRecord>& records) {
  std::vector<double> wrong;
  std::vector<double> right;
  for (const auto& r : records) {
    (r.predicted == r.true_label ? right : wrong).push_back(r.predicted_std());
  }
  return welch_t_test(wrong, right);
}

// ---------------------------------------------------------------------------
// Report

MetricsReport evaluate(const std::vector<PredictionRecord>& records,
                       const Dataset& dataset, const EvalOptions& options) {
  if (records.empty()) throw InvalidArgument("evaluate: no predictions (empty dataset)");
  if (records.size() != dataset.size()) {
    throw InvalidArgument("evaluate: record count does not match dataset");
  }
  MetricsReport rep;
  rep.n_bags = records.size();
  rep.support = dataset.class_counts();

  std::vector<int> predicted;
  std::vector<int> labels;
  MatrixXd mean_probs(static_cast<Index>(records.size()), dataset.n_classes);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].bag_id != dataset.bags[i].id) {
      throw InvalidArgument("evaluate: record order does not match dataset");
    }
    predicted.push_back(records[i].predicted);
    labels.push_back(records[i].true_label);
    mean_probs.row(static_cast<Index>(i)) = records[i].mean_probs.transpose();
  }
  rep.balanced_acc = balanced_accuracy(predicted, labels, dataset.n_classes);
  rep.auc = auroc_multiclass(mean_probs, labels);
  rep.ace = adaptive_ece(mean_probs, labels, options.n_bins);

  const bool have_instances =
      std::all_of(dataset.bags.begin(), dataset.bags.end(),
                  [](const InstanceBag& b) { return b.instance_labels.has_value(); });
  if (have_instances) {
    bool any_pos = false;
    bool any_neg = false;
    for (const auto& b : dataset.bags) {
      for (const int y : *b.instance_labels) (y != 0 ? any_pos : any_neg) = true;
    }
    if (any_pos && any_neg) {
      const InstanceEval ie = instance_eval(records, dataset);
      rep.instance_auc = ie.auc;
      rep.instance_acc_best = ie.best_acc;
      rep.best_threshold = ie.best_threshold;
      rep.constant_attention_slides = ie.constant_slides;
    }
  }

  std::vector<double> wrong;
  std::vector<double> right;
  for (const auto& r : records) {
    (r.predicted == r.true_label ? right : wrong).push_back(r.predicted_std());
  }
  auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  rep.mean_std_correct = mean_of(right);
  rep.mean_std_incorrect = mean_of(wrong);
  if (wrong.size() >= 2 && right.size() >= 2) {
    const WelchResult w = welch_t_test(wrong, right);
    rep.welch_t = w.t;
    rep.welch_p = w.p;
    rep.welch_df = w.df;
    rep.welch_zero_variance = w.zero_variance;
  }
  return rep;
}

std::string to_json(const MetricsReport& r) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["balanced_acc"] = r.balanced_acc;
  j["auc"] = r.auc;
  j["ace"] = r.ace;
  j["instance_auc"] = opt(r.instance_auc);
  j["instance_acc_best"] = opt(r.instance_acc_best);
  j["best_threshold"] = opt(r.best_threshold);
  j["welch_t"] = opt(r.welch_t);
  j["welch_p"] = opt(r.welch_p);
  j["welch_df"] = opt(r.welch_df);
  j["welch_zero_variance"] = r.welch_zero_variance;
  j["mean_std_correct"] = r.mean_std_correct;
  j["mean_std_incorrect"] = r.mean_std_incorrect;
  j["support"] = r.support;
  j["n_bags"] = r.n_bags;
  j["constant_attention_slides"] = r.constant_attention_slides;
  return j.dump(2) + "\n";
}

std::string to_key_value(const MetricsReport& r) {
  std::ostringstream os;
  auto num = [&](const char* key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << key << '=' << buf << '\n';
  };
  auto opt = [&](const char* key, const std::optional<double>& v) {
    num(key, v ? *v : std::numeric_limits<double>::quiet_NaN());
  };
  num("balanced_acc", r.balanced_acc);
  num("auc", r.auc);
  num("ace", r.ace);
  opt("instance_auc", r.instance_auc);
  opt("instance_acc_best", r.instance_acc_best);
  opt("best_threshold", r.best_threshold);
  opt("welch_t", r.welch_t);
  opt("welch_p", r.welch_p);
  opt("welch_df", r.welch_df);
  os << "welch_zero_variance=" << (r.welch_zero_variance ? 1 : 0) << '\n';
  num("mean_std_correct", r.mean_std_correct);
  num("mean_std_incorrect", r.mean_std_incorrect);
  for (std::size_t c = 0; c < r.support.size(); ++c) {
    os << "support_" << c << '=' << r.support[c] << '\n';
  }
  os << "n_bags=" << r.n_bags << '\n';
  os << "constant_attention_slides=" << r.constant_attention_slides << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Inducing-point label maps

MatrixXd cosine_similarity(const MatrixXd& rows, const MatrixXd& centers,
                           std::size_t* zero_norm) {
  if (rows.cols() != centers.cols()) {
    throw InvalidArgument("cosine_similarity: width mismatch");
  }
  const VectorXd rn = rows.rowwise().norm();
  const VectorXd cn = centers.rowwise().norm();
  std::size_t zeros = 0;
  for (Index i = 0; i < rn.size(); ++i) zeros += rn(i) == 0.0;
  for (Index j = 0; j < cn.size(); ++j) zeros += cn(j) == 0.0;
  if (zero_norm) *zero_norm += zeros;
  MatrixXd sim = rows * centers.transpose();
  for (Index i = 0; i < sim.rows(); ++i) {
    for (Index j = 0; j < sim.cols(); ++j) {
      sim(i, j) = (rn(i) == 0.0 || cn(j) == 0.0) ? 0.0 : sim(i, j) / (rn(i) * cn(j));
    }
  }
  return sim;
}

InducingLabelMap inducing_label_map(const Dataset& dataset,
                                    const MilModel& model, std::size_t top_k) {
  const MatrixXd& z = model.sgp.inducing_locations;
  const Index m = z.rows();
  InducingLabelMap out;
  out.top.resize(static_cast<std::size_t>(m));
  std::vector<std::vector<TopInstance>> all(static_cast<std::size_t>(m));

  std::size_t zero_centers = 0;
  for (Index j = 0; j < m; ++j) zero_centers += z.row(j).norm() == 0.0;

  for (std::size_t b = 0; b < dataset.size(); ++b) {
    const MatrixXd proj = project_instances(dataset.bags[b].features, model);
    std::size_t zeros = 0;
    const MatrixXd sim = cosine_similarity(proj, z, &zeros);
    out.zero_norm += zeros - zero_centers;
    std::vector<int> assign(static_cast<std::size_t>(proj.rows()));
    std::vector<double> best(static_cast<std::size_t>(proj.rows()));
    for (Index k = 0; k < proj.rows(); ++k) {
      const int j = argmax_lowest(sim.row(k).transpose());
      assign[k] = j;
      best[k] = sim(k, j);
      for (Index c = 0; c < m; ++c) all[c].push_back({b, k, sim(k, c)});
    }
    out.assignment.push_back(std::move(assign));
    out.similarity.push_back(std::move(best));
  }
  out.zero_norm += zero_centers;

  for (Index c = 0; c < m; ++c) {
    auto& v = all[c];
    const std::size_t keep = std::min(top_k, v.size());
    std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(keep), v.end(),
                      [](const TopInstance& a, const TopInstance& b) {
                        if (a.similarity != b.similarity) return a.similarity > b.similarity;
                        if (a.bag != b.bag) return a.bag < b.bag;
                        return a.instance < b.instance;
                      });
    out.top[c].assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return out;
}

}  // namespace gpmil
