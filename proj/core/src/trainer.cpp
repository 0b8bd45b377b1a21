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

#include "gpmil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gpmil/evaluation.hpp"

namespace gpmil {

namespace {

constexpr double kLogClamp = -30.0;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void check_label(const InstanceBag& bag, int n_classes) {
  if (bag.label < 0 || bag.label >= n_classes) {
    throw InvalidArgument("bag '" + bag.id + "' label " +
                          std::to_string(bag.label) + " out of range for " +
                          std::to_string(n_classes) + " classes");
  }
  if (bag.size() < 1) throw InvalidArgument("bag '" + bag.id + "' is empty");
}

template <TrainableModel M>
void require_finite(const M& grad) {
  for_each_parameter(grad, [](std::string_view name, std::span<const double> g,
                              bool) {
    for (const double x : g) {
      if (!std::isfinite(x)) {
        throw NonFinite("non-finite gradient in block '" + std::string(name) +
                        "'");
      }
    }
  });
}

void require_finite_values(const Eigen::Ref<const MatrixXd>& values,
                           std::string_view what, const InstanceBag& bag) {
  if (!values.allFinite()) {
    throw NonFinite("non-finite " + std::string(what) + " for bag '" + bag.id + "'");
  }
}

template <TrainableModel M>
std::optional<std::string> first_non_finite(const M& model) {
  std::optional<std::string> bad;
  for_each_parameter(model, [&](std::string_view name, std::span<const double> v,
                                bool) {
    if (bad) return;
    for (const double x : v) {
      if (!std::isfinite(x)) {
        bad = std::string(name);
        return;
      }
    }
  });
  return bad;
}

double clamped_log(double p) { return std::max(std::log(p), kLogClamp); }

/// Backward through D -> h (ReLU) -> d' (tanh).
void projector_backward(const MatrixXd& features, const MatrixXd& hidden_pre,
                        const MatrixXd& hidden, const MatrixXd& projected,
                        const Projector& projector, const MatrixXd& g_projected,
                        Projector& grad) {
  const MatrixXd g_out_pre =
      g_projected.array() * (1.0 - projected.array().square());
  grad.output.weight.noalias() += g_out_pre.transpose() * hidden;
  grad.output.bias += g_out_pre.colwise().sum().transpose();
  MatrixXd g_hidden = g_out_pre * projector.output.weight;
  g_hidden = (hidden_pre.array() > 0.0).select(g_hidden, 0.0);
  grad.hidden.weight.noalias() += g_hidden.transpose() * features;
  grad.hidden.bias += g_hidden.colwise().sum().transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and schedule

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(peak_lr >= 0.0)) fail("peak_lr must be >= 0");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (n_samples < 1) fail("n_samples must be >= 1");
  if (eval_samples < 1) fail("eval_samples must be >= 1");
  if (hidden_dim < 1 || proj_dim < 1) fail("layer widths must be positive");
  if (num_inducing < 1) fail("num_inducing must be >= 1");
  if (gated_attention_dim < 1) fail("gated_attention_dim must be >= 1");
  if (kl_scale && !(*kl_scale >= 0.0)) fail("kl_scale must be >= 0");
}

double TrainConfig::resolved_kl_scale(std::size_t n_bags) const {
  if (kl_scale) return *kl_scale;
  return 1.0 / static_cast<double>(std::max<std::size_t>(n_bags, 1));
}

double lr_at(std::int64_t step, const LrSchedule& schedule) {
  if (step < 0) throw InvalidArgument("lr_at: negative step");
  if (schedule.warmup_steps > 0 && step < schedule.warmup_steps) {
    return schedule.peak * static_cast<double>(step) /
           static_cast<double>(schedule.warmup_steps);
  }
  const std::int64_t span = schedule.total_steps - schedule.warmup_steps;
  if (span <= 0) return schedule.peak;
  const double t = std::clamp(
      static_cast<double>(step - schedule.warmup_steps) / static_cast<double>(span),
      0.0, 1.0);
  return std::max(0.0, schedule.peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

// ---------------------------------------------------------------------------
// SGP objective

LossParts elbo_loss(const InstanceBag& bag, const MilModel& model,
                    const TrainConfig& cfg, Rng& rng) {
  model.validate();
  check_label(bag, model.num_classes());
  const MatrixXd projected = project_instances(bag.features, model);
  AttentionPosterior post = variational_marginal(projected, model.sgp);
  if (cfg.zero_variance) post.variance.setZero();
  const MatrixXd raw = sample_attention(post, cfg.n_samples, rng);
  const MatrixXd attention = normalize_attention(raw, model.normalization);
  const MatrixXd probs = classify(aggregate_bag(projected, attention), model);

  LossParts out;
  for (Index s = 0; s < probs.rows(); ++s) out.ce -= clamped_log(probs(s, bag.label));
  out.ce /= static_cast<double>(probs.rows());
  out.kl = kl_inducing(model.sgp);
  out.loss = out.ce + cfg.kl_scale.value_or(1.0) * out.kl;
  return out;
}

Gradients compute_gradients(const InstanceBag& bag, const MilModel& model,
                            const TrainConfig& cfg, Rng& rng) {
  model.validate();
  check_label(bag, model.num_classes());
  const SgpAttentionState& sgp = model.sgp;
  const double ks = cfg.kl_scale.value_or(1.0);
  const Index n_inst = bag.size();
  const Index m = sgp.num_inducing();

  // Forward, keeping every intermediate.
  const MatrixXd& x = bag.features;
  if (x.cols() != model.projector.input_dim()) {
    throw InvalidArgument("compute_gradients: feature width mismatch");
  }
  const MatrixXd hidden_pre = model.projector.hidden.apply(x);
  const MatrixXd hidden = hidden_pre.cwiseMax(0.0);
  const MatrixXd h = model.projector.output.apply(hidden).array().tanh();
  const MarginalTerms terms = marginal_terms(h, sgp);
  AttentionPosterior post = terms.posterior;
  if (cfg.zero_variance) post.variance.setZero();
  if (cfg.n_samples < 1) throw InvalidArgument("n_samples must be positive");
  const MatrixXd noise = rng.normal_matrix(cfg.n_samples, n_inst);
  const MatrixXd raw = reparameterize(post, noise);
  require_finite_values(raw, "attention samples", bag);
  const MatrixXd att = normalize_attention(raw, model.normalization);
  const MatrixXd reps = aggregate_bag(h, att);
  require_finite_values(model.classifier.apply(reps), "class logits", bag);
  const MatrixXd probs = classify(reps, model);
  const auto n_s = static_cast<double>(cfg.n_samples);

  Gradients out{zeros_like(model), {}, terms.posterior.clamped};
  MilModel& g = out.grad;

  for (Index s = 0; s < probs.rows(); ++s) out.loss.ce -= clamped_log(probs(s, bag.label));
  out.loss.ce /= n_s;
  out.loss.kl = kl_inducing(sgp);
  out.loss.loss = out.loss.ce + ks * out.loss.kl;

  // Classifier.
  MatrixXd g_logits = probs / n_s;
  for (Index s = 0; s < probs.rows(); ++s) {
    if (std::log(probs(s, bag.label)) > kLogClamp) {
      g_logits(s, bag.label) -= 1.0 / n_s;
    } else {
      g_logits.row(s).setZero();
    }
  }
  g.classifier.weight = g_logits.transpose() * reps;
  g.classifier.bias = g_logits.colwise().sum().transpose();
  const MatrixXd g_reps = g_logits * model.classifier.weight;

  // Aggregation and normalization.
  MatrixXd g_h = att.transpose() * g_reps;
  const MatrixXd g_att = g_reps * h.transpose();
  MatrixXd g_raw;
  if (model.normalization == Normalization::kSoftmax) {
    const VectorXd inner = (g_att.array() * att.array()).rowwise().sum();
    g_raw = att.array() * (g_att.colwise() - inner).array();
  } else {
    g_raw = g_att.array() * att.array() * (1.0 - att.array());
  }

  // Reparameterization.
  const VectorXd g_mean = g_raw.colwise().sum().transpose();
  VectorXd g_var = VectorXd::Zero(n_inst);
  for (Index k = 0; k < n_inst; ++k) {
    const double var = post.variance(k);
    if (var > 0.0) {
      const double g_std = g_raw.col(k).dot(noise.col(k));
      g_var(k) = 0.5 * g_std / std::sqrt(var);
    }
  }

  // Mean: mu_X + K_XZ alpha, alpha = P (m_U - mu_U), P = K_ZZ^{-1}.
  if (sgp.use_lm) {
    g.sgp.lm_weights = h.transpose() * g_mean;
    g_h.noalias() += g_mean * sgp.lm_weights.transpose();
  }
  g.sgp.lm_bias = g_mean.sum();
  MatrixXd g_kxz = g_mean * terms.alpha.transpose();
  const VectorXd beta = cholesky_solve(terms.k_zz.lower, terms.k_xz.transpose() * g_mean);
  g.sgp.variational_mean = beta;
  MatrixXd g_kzz = -beta * terms.alpha.transpose();

  // Variance: var_k = A + C - x_k^T P x_k + x_k^T P S P x_k, x_k = K_ZX(:, k).
  const MatrixXd& lq = terms.cov_lower;
  const MatrixXd s_mat = lq * lq.transpose();
  const MatrixXd p_mat = cholesky_solve(terms.k_zz.lower, MatrixXd::Identity(m, m));
  const MatrixXd& b = terms.projection;  // P K_ZX
  const MatrixXd bd = b * g_var.asDiagonal();
  const MatrixXd q = bd * b.transpose();  // B D B^T
  g_kxz.noalias() += 2.0 * bd.transpose() * (s_mat * p_mat - MatrixXd::Identity(m, m));
  const MatrixXd sp = s_mat * p_mat;
  g_kzz += q - q * sp - sp.transpose() * q;
  MatrixXd g_s = q;
  KernelGrad g_kernel(sgp.dim());
  g_kernel.raw_outputscale += g_var.sum() * sigmoid(sgp.kernel.raw_outputscale);
  g_kernel.raw_offset += g_var.sum() * sigmoid(sgp.kernel.raw_offset);

  // KL(q(U) || p(U)).
  g_s += 0.5 * ks * p_mat;
  g.sgp.variational_mean += ks * terms.alpha;
  g_kzz -= 0.5 * ks * (p_mat * s_mat * p_mat + terms.alpha * terms.alpha.transpose());
  g_kzz += 0.5 * ks * p_mat;

  // S = L L^T with softplus diagonal.
  MatrixXd g_lq = (g_s + g_s.transpose()) * lq;
  for (Index i = 0; i < m; ++i) g_lq(i, i) -= ks / lq(i, i);
  g.sgp.raw_cov_factor = g_lq.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < m; ++i) {
    g.sgp.raw_cov_factor(i, i) = g_lq(i, i) * sigmoid(sgp.raw_cov_factor(i, i));
  }

  // Kernel matrices.
  MatrixXd& g_z = g.sgp.inducing_locations;
  kernel_matrix_backward(h, sgp.inducing_locations, sgp.kernel, g_kxz, g_h, g_z,
                         g_kernel);
  kernel_matrix_backward(sgp.inducing_locations, sgp.inducing_locations,
                         sgp.kernel, g_kzz, g_z, g_z, g_kernel);
  g.sgp.kernel.raw_outputscale = g_kernel.raw_outputscale;
  g.sgp.kernel.raw_offset = g_kernel.raw_offset;
  g.sgp.kernel.raw_lengthscales = g_kernel.raw_lengthscales;

  projector_backward(x, hidden_pre, hidden, h, model.projector, g_h, g.projector);
  require_finite(g);
  return out;
}

// ---------------------------------------------------------------------------
// Gated baseline objective

double gated_loss(const InstanceBag& bag, const GatedAttentionModel& model) {
  model.validate();
  check_label(bag, model.num_classes());
  const GatedForward f = forward_gated(bag, model);
  return -clamped_log(f.probs(bag.label));
}

GatedGradients compute_gated_gradients(const InstanceBag& bag,
                                       const GatedAttentionModel& model) {
  model.validate();
  check_label(bag, model.num_classes());
  const MatrixXd& x = bag.features;
  if (x.cols() != model.projector.input_dim()) {
    throw InvalidArgument("compute_gated_gradients: feature width mismatch");
  }
  const MatrixXd hidden_pre = model.projector.hidden.apply(x);
  const MatrixXd hidden = hidden_pre.cwiseMax(0.0);
  const MatrixXd h = model.projector.output.apply(hidden).array().tanh();
  const MatrixXd tanh_branch = model.attention_v.apply(h).array().tanh();
  const MatrixXd gate = model.attention_u.apply(h).unaryExpr(&sigmoid);
  const MatrixXd gated = tanh_branch.cwiseProduct(gate);
  const VectorXd scores = gated * model.attention_w;
  require_finite_values(scores, "attention scores", bag);
  const VectorXd a = softmax_rows(scores.transpose()).transpose();
  const VectorXd rep = h.transpose() * a;
  require_finite_values(model.classifier.apply(rep.transpose()), "class logits", bag);
  const VectorXd probs = classify(rep.transpose(), model.classifier).transpose();

  GatedGradients out{zeros_like(model), -clamped_log(probs(bag.label))};
  GatedAttentionModel& g = out.grad;
  if (std::log(probs(bag.label)) <= kLogClamp) return out;

  VectorXd g_logits = probs;
  g_logits(bag.label) -= 1.0;
  g.classifier.weight = g_logits * rep.transpose();
  g.classifier.bias = g_logits;
  const VectorXd g_rep = model.classifier.weight.transpose() * g_logits;
  MatrixXd g_h = a * g_rep.transpose();
  const VectorXd g_a = h * g_rep;
  const VectorXd g_scores = a.array() * (g_a.array() - a.dot(g_a));
  g.attention_w = gated.transpose() * g_scores;
  const MatrixXd g_gated = g_scores * model.attention_w.transpose();
  const MatrixXd g_v_pre =
      (g_gated.array() * gate.array() * (1.0 - tanh_branch.array().square())).matrix();
  const MatrixXd g_u_pre =
      (g_gated.array() * tanh_branch.array() * gate.array() * (1.0 - gate.array()))
          .matrix();
  g.attention_v.weight = g_v_pre.transpose() * h;
  g.attention_v.bias = g_v_pre.colwise().sum().transpose();
  g.attention_u.weight = g_u_pre.transpose() * h;
  g.attention_u.bias = g_u_pre.colwise().sum().transpose();
  g_h.noalias() += g_v_pre * model.attention_v.weight;
  g_h.noalias() += g_u_pre * model.attention_u.weight;

  projector_backward(x, hidden_pre, hidden, h, model.projector, g_h, g.projector);
  require_finite(g);
  return out;
}

// ---------------------------------------------------------------------------
// AdamW

void AdamW::update(std::size_t block, std::span<double> param,
                   std::span<const double> grad, bool decay, double lr) {
  if (block >= m_.size()) {
    m_.resize(block + 1);
    v_.resize(block + 1);
  }
  auto& m = m_[block];
  auto& v = v_[block];
  if (m.size() != param.size()) {
    m.assign(param.size(), 0.0);
    v.assign(param.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (decay) param[i] -= lr * weight_decay_ * param[i];
    m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
    v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, Rng& shuffle_rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_rng.shuffle(std::span<std::size_t>(order));
  return order;
}

void check_dataset(const Dataset& train) {
  if (train.empty()) throw InvalidArgument("train: dataset is empty");
  for (const auto& bag : train.bags) {
    if (bag.dim() != train.dim) {
      throw InvalidArgument("train: bag '" + bag.id + "' has width " +
                            std::to_string(bag.dim()) + ", expected " +
                            std::to_string(train.dim));
    }
  }
}

ModelShape shape_for(const Dataset& train, const TrainConfig& cfg) {
  return {train.dim, cfg.hidden_dim, cfg.proj_dim, cfg.num_inducing,
          train.n_classes};
}

struct StepOutput {
  LossParts loss;
  Index clamped = 0;
  Index variances = 0;
};

bool all_classes_present(const Dataset& ds) {
  const auto counts = ds.class_counts();
  return !ds.empty() &&
         std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
}

void fill_validation(EpochRecord& rec, const std::vector<PredictionRecord>& preds,
                     const Dataset& val) {
  std::vector<int> predicted;
  std::vector<int> labels;
  MatrixXd mean_probs(static_cast<Index>(preds.size()), val.n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    predicted.push_back(preds[i].predicted);
    labels.push_back(preds[i].true_label);
    mean_probs.row(static_cast<Index>(i)) = preds[i].mean_probs.transpose();
  }
  rec.val_balanced_acc = balanced_accuracy(predicted, labels, val.n_classes);
  rec.val_auc = auroc_multiclass(mean_probs, labels);
}

template <TrainableModel M, typename StepFn, typename ValFn>
TrainHistory run_training(M& model, const Dataset& train, const TrainConfig& cfg,
                          const TrainOptions& options, StepFn&& step_fn,
                          ValFn&& val_fn) {
  const std::size_t n = train.size();
  const auto total = static_cast<std::int64_t>(n) * cfg.epochs;
  const LrSchedule schedule{cfg.peak_lr, cfg.warmup_steps, total};
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng sampling_rng(cfg.sampling_seed.value_or(derive_seed(cfg.seed, "sampling")));
  AdamW optimizer(cfg.weight_decay);
  TrainHistory history;

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    for (const std::size_t idx : epoch_order(n, shuffle_rng)) {
      const InstanceBag& bag = train.bags[idx];
      M grad = zeros_like(model);
      StepOutput out;
      try {
        out = step_fn(bag, model, sampling_rng, grad);
      } catch (const NonFinite& e) {
        throw TrainingAborted(std::string(e.what()) + " at step " +
                                  std::to_string(step),
                              std::move(history));
      }
      if (!std::isfinite(out.loss.loss)) {
        throw TrainingAborted("non-finite loss at step " + std::to_string(step) +
                                  " (bag '" + bag.id + "')",
                              std::move(history));
      }
      const double norm = clip_global_norm(grad, cfg.grad_clip);
      const double lr = lr_at(step, schedule);
      optimizer.step(model, grad, lr);
      if (const auto bad = first_non_finite(model)) {
        throw TrainingAborted("non-finite parameter in block '" + *bad +
                                  "' after step " + std::to_string(step),
                              std::move(history));
      }

      StepRecord sr{step, epoch, bag.id, out.loss.loss, out.loss.ce,
                    out.loss.kl, lr, norm};
      if (options.on_step) options.on_step(sr);
      history.steps.push_back(std::move(sr));
      rec.mean_loss += out.loss.loss;
      rec.mean_ce += out.loss.ce;
      rec.kl_sum += out.loss.kl;
      rec.clamped_variances += out.clamped;
      rec.total_variances += out.variances;
      ++step;
    }
    rec.mean_loss /= static_cast<double>(n);
    rec.mean_ce /= static_cast<double>(n);
    if (rec.total_variances > 0 &&
        100 * rec.clamped_variances > rec.total_variances) {
      history.warnings.push_back(
          "epoch " + std::to_string(epoch) + ": " +
          std::to_string(rec.clamped_variances) + " of " +
          std::to_string(rec.total_variances) +
          " marginal variances clamped at zero");
    }
    if (options.validation && all_classes_present(*options.validation)) {
      val_fn(rec, model, *options.validation, epoch);
    }
    history.epochs.push_back(rec);
  }
  return history;
}

}  // namespace

MilModel initialize_model(const Dataset& train, const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(train);
  Rng init_rng(derive_seed(cfg.seed, "init"));
  MilModel model = MilModel::initial(shape_for(train, cfg), cfg.attention, init_rng);

  // Pool projected instances from the first bags of the epoch-0 order (at
  // least ten bags, or all of them) and pick m distinct rows at random.
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  const auto order = epoch_order(train.size(), shuffle_rng);
  const Index m = cfg.num_inducing;
  std::vector<Eigen::RowVectorXd> pool;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (static_cast<Index>(pool.size()) >= m && i >= 10) break;
    const MatrixXd proj = project_instances(train.bags[order[i]].features, model);
    for (Index r = 0; r < proj.rows(); ++r) pool.emplace_back(proj.row(r));
  }
  if (static_cast<Index>(pool.size()) >= m) {
    std::vector<std::size_t> pick(pool.size());
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    init_rng.shuffle(std::span<std::size_t>(pick));
    for (Index j = 0; j < m; ++j) model.sgp.inducing_locations.row(j) = pool[pick[j]];
  }
  return model;
}

TrainResult train(const Dataset& train, const TrainConfig& cfg,
                  const TrainOptions& options) {
  TrainResult result{initialize_model(train, cfg), {}};
  TrainConfig step_cfg = cfg;
  step_cfg.kl_scale = cfg.resolved_kl_scale(train.size());

  auto step_fn = [&](const InstanceBag& bag, const MilModel& model, Rng& rng,
                     MilModel& grad) {
    Gradients g = compute_gradients(bag, model, step_cfg, rng);
    grad = std::move(g.grad);
    return StepOutput{g.loss, g.clamped_variances, bag.size()};
  };
  auto val_fn = [&](EpochRecord& rec, const MilModel& model, const Dataset& val,
                    int epoch) {
    const auto seed = derive_seed(cfg.seed, "validation") + static_cast<std::uint64_t>(epoch);
    fill_validation(rec, predict(model, val, cfg.eval_samples, seed), val);
  };
  result.history =
      run_training(result.model, train, step_cfg, options, step_fn, val_fn);
  return result;
}

GatedAttentionModel initialize_gated_model(const Dataset& train,
                                           const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(train);
  Rng init_rng(derive_seed(cfg.seed, "init"));
  return GatedAttentionModel::initial(shape_for(train, cfg),
                                      cfg.gated_attention_dim, init_rng);
}

GatedTrainResult train_gated(const Dataset& train, const TrainConfig& cfg,
                             const TrainOptions& options) {
  GatedTrainResult result{initialize_gated_model(train, cfg), {}};
  auto step_fn = [](const InstanceBag& bag, const GatedAttentionModel& model,
                    Rng&, GatedAttentionModel& grad) {
    GatedGradients g = compute_gated_gradients(bag, model);
    grad = std::move(g.grad);
    return StepOutput{{g.loss, g.loss, 0.0}, 0, 0};
  };
  auto val_fn = [](EpochRecord& rec, const GatedAttentionModel& model,
                   const Dataset& val, int) {
    fill_validation(rec, predict_gated(model, val), val);
  };
  result.history = run_training(result.model, train, cfg, options, step_fn, val_fn);
  return result;
}

void write_history_jsonl(const TrainHistory& history, std::ostream& out) {
  using nlohmann::json;
  for (const auto& s : history.steps) {
    out << json{{"type", "step"},   {"step", s.step}, {"epoch", s.epoch},
                {"bag", s.bag_id},  {"loss", s.loss}, {"ce", s.ce},
                {"kl", s.kl},       {"lr", s.lr},     {"grad_norm", s.grad_norm}}
               .dump()
        << '\n';
  }
  for (const auto& e : history.epochs) {
    json j{{"type", "epoch"},
           {"epoch", e.epoch},
           {"mean_loss", e.mean_loss},
           {"mean_ce", e.mean_ce},
           {"kl_sum", e.kl_sum},
           {"clamped_variances", e.clamped_variances},
           {"total_variances", e.total_variances}};
    j["val_balanced_acc"] = e.val_balanced_acc ? json(*e.val_balanced_acc) : json(nullptr);
    j["val_auc"] = e.val_auc ? json(*e.val_auc) : json(nullptr);
    out << j.dump() << '\n';
  }
  for (const auto& w : history.warnings) {
    out << json{{"type", "warning"}, {"message", w}}.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Finite differences

bool GradcheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(),
                     [](const BlockCheck& b) { return b.passed(); });
}

namespace {

template <TrainableModel M, typename LossFn>
GradcheckReport finite_difference_check(const M& model, const M& analytic,
                                        LossFn&& loss,
                                        const GradcheckOptions& opt) {
  std::vector<std::span<const double>> grads;
  for_each_parameter(analytic, [&](std::string_view, std::span<const double> g,
                                   bool) { grads.push_back(g); });
  GradcheckReport report;
  M probe = model;
  std::size_t block = 0;
  for_each_parameter(probe, [&](std::string_view name, std::span<double> p, bool) {
    BlockCheck check;
    check.name = std::string(name);
    check.coords = p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + opt.step;
      const double plus = loss(probe);
      p[i] = orig - opt.step;
      const double minus = loss(probe);
      p[i] = orig;
      const double fd = (plus - minus) / (2.0 * opt.step);
      const double an = grads[block][i];
      const double abs_err = std::abs(fd - an);
      const double scale = std::max(std::abs(fd), std::abs(an));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, rel_err);
      if (!(rel_err < opt.rel_tol || abs_err < opt.abs_tol)) ++check.failures;
    }
    report.blocks.push_back(std::move(check));
    ++block;
  });
  return report;
}

}  // namespace

GradcheckReport gradient_check(const InstanceBag& bag, const MilModel& model,
                               const TrainConfig& cfg, std::uint64_t seed,
                               const GradcheckOptions& options) {
  Rng rng(seed);
  Gradients analytic = compute_gradients(bag, model, cfg, rng);
  if (options.corrupt) options.corrupt(analytic.grad);
  return finite_difference_check(
      model, analytic.grad,
      [&](const MilModel& probe) {
        Rng r(seed);
        return elbo_loss(bag, probe, cfg, r).loss;
      },
      options);
}

GradcheckReport gated_gradient_check(const InstanceBag& bag,
                                     const GatedAttentionModel& model,
                                     const GradcheckOptions& options) {
  GatedGradients analytic = compute_gated_gradients(bag, model);
  return finite_difference_check(
      model, analytic.grad,
      [&](const GatedAttentionModel& probe) { return gated_loss(bag, probe); },
      options);
}

}  // namespace gpmil
