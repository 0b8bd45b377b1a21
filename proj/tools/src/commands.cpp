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

#include "gpmil_cli/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "gpmil/error.hpp"

namespace gpmil::cli {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

fs::path with_part(const fs::path& prefix, const char* part, const fs::path& ext) {
  fs::path p = prefix;
  p += std::string(".") + part;
  p += ext;
  return p;
}

std::string counts_line(const Dataset& ds) {
  std::ostringstream os;
  os << ds.size() << " bags (";
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    os << (c ? ", " : "") << "class " << c << ": " << counts[c];
  }
  os << ")";
  return os.str();
}

std::vector<PredictionRecord> run_predict(const ModelFile& file, const Dataset& ds,
                                          const RunConfig& config) {
  if (file.is_sgp()) {
    return predict(std::get<MilModel>(file.model), ds, config.eval.n_samples,
                   eval_seed(config));
  }
  return predict_gated(std::get<GatedAttentionModel>(file.model), ds);
}

Dataset load_nonempty(const fs::path& path, const char* what) {
  Dataset ds = load_dataset(path);
  if (ds.empty()) {
    throw InvalidArgument(std::string(what) + " dataset '" + path.string() + "' is empty");
  }
  return ds;
}

}  // namespace

Dataset cmd_gen_data(const RunConfig& config, const fs::path& out,
                     const std::optional<fs::path>& split_prefix, std::ostream& log) {
  Dataset ds = generate_synthetic(synthetic_spec(config));
  save_dataset(ds, out);
  log << "wrote " << out.string() << ": " << counts_line(ds) << "\n";
  if (split_prefix) {
    const DatasetSplit parts =
        split_dataset(ds, config.data.split, derive_seed(config.seed, "split"));
    const std::pair<const char*, const Dataset*> named[] = {
        {"train", &parts.train}, {"val", &parts.val}, {"test", &parts.test}};
    for (const auto& [name, part] : named) {
      const fs::path p = with_part(*split_prefix, name, out.extension());
      save_dataset(*part, p);
      log << "wrote " << p.string() << ": " << counts_line(*part) << "\n";
    }
  }
  return ds;
}

void cmd_train(const RunConfig& config, const fs::path& data,
               const std::optional<fs::path>& validation, const fs::path& out_dir,
               std::ostream& log) {
  const Dataset train_set = load_nonempty(data, "training");
  std::optional<Dataset> val_set;
  if (validation) val_set = load_dataset(*validation);
  ensure_dir(out_dir);
  write_config(config, out_dir / "config.json");

  TrainOptions opts;
  if (val_set && !val_set->empty()) opts.validation = &*val_set;
  const TrainConfig tc = train_config(config);
  const std::string echo = to_json(config);

  auto write_history = [&](const TrainHistory& h) {
    auto out = open_out(out_dir / "history.jsonl");
    write_history_jsonl(h, out);
  };
  TrainHistory history;
  try {
    if (config.model == "sgpmil") {
      TrainResult r = train(train_set, tc, opts);
      save_model(out_dir / "model.json", r.model, echo);
      history = std::move(r.history);
    } else {
      GatedTrainResult r = train_gated(train_set, tc, opts);
      save_model(out_dir / "model.json", r.model, echo);
      history = std::move(r.history);
    }
  } catch (const TrainingAborted& e) {
    write_history(e.history());
    throw;
  }
  write_history(history);
  for (const auto& w : history.warnings) log << "warning: " << w << "\n";
  if (!history.epochs.empty()) {
    log << "trained " << config.model << " for " << history.epochs.size()
        << " epochs, " << history.steps.size() << " steps; loss "
        << history.epochs.front().mean_loss << " -> " << history.epochs.back().mean_loss
        << "\n";
  }
}

RunConfig config_from_model(const ModelFile& file) {
  return parse_config(file.config_json);
}

MetricsReport cmd_eval(const RunConfig& config, const fs::path& model,
                       const fs::path& data, const fs::path& out_dir,
                       std::ostream& log) {
  const ModelFile file = load_model(model);
  const Dataset ds = load_nonempty(data, "evaluation");
  const auto records = run_predict(file, ds, config);
  const MetricsReport report = evaluate(records, ds, {config.eval.n_bins});
  ensure_dir(out_dir);
  write_config(config, out_dir / "config.json");
  write_file(out_dir / "metrics.json", to_json(report));
  write_file(out_dir / "metrics.txt", to_key_value(report));
  log << "balanced_acc " << report.balanced_acc << "  auc " << report.auc << "  ace "
      << report.ace;
  if (report.instance_auc) log << "  instance_auc " << *report.instance_auc;
  log << "\n";
  return report;
}

std::vector<AblationRun> cmd_ablate(const RunConfig& config, const fs::path& train_path,
                                    const fs::path& test_path, const fs::path& out_dir,
                                    std::ostream& log) {
  const Dataset train_set = load_nonempty(train_path, "training");
  const Dataset test_set = load_nonempty(test_path, "test");
  ensure_dir(out_dir);
  write_config(config, out_dir / "config.json");

  std::vector<AblationRun> runs;
  const auto& g = config.ablate;
  for (const bool lm : g.use_lm) {
    for (const Normalization norm : g.normalization) {
      for (const bool diag : g.diag_only) {
        for (const Index m : g.num_inducing) {
          for (int s = 0; s < g.n_seeds; ++s) {
            RunConfig cell = config;
            cell.model = "sgpmil";
            cell.seed = config.seed + static_cast<std::uint64_t>(s);
            cell.train.attention = {norm, lm, diag};
            cell.train.num_inducing = m;
            const TrainResult r = train(train_set, train_config(cell));
            const auto records = predict(r.model, test_set, cell.eval.n_samples,
                                         eval_seed(cell));
            AblationRun run{lm, norm, diag, m, cell.seed,
                            evaluate(records, test_set, {cell.eval.n_bins})};
            log << "lm=" << lm << " " << to_string(norm) << " diag=" << diag
                << " m=" << m << " seed=" << cell.seed << ": auc " << run.metrics.auc
                << "\n";
            runs.push_back(std::move(run));
          }
        }
      }
    }
  }

  auto runs_out = open_out(out_dir / "ablation_runs.csv");
  runs_out << "use_lm,normalization,diag_only,num_inducing,seed,balanced_acc,auc,ace,"
              "instance_auc,instance_acc_best\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& r : runs) {
    runs_out << r.use_lm << ',' << to_string(r.normalization) << ',' << r.diag_only << ','
             << r.num_inducing << ',' << r.seed << ',' << fmt(r.metrics.balanced_acc) << ','
             << fmt(r.metrics.auc) << ',' << fmt(r.metrics.ace) << ','
             << opt(r.metrics.instance_auc) << ',' << opt(r.metrics.instance_acc_best)
             << '\n';
  }

  auto table = open_out(out_dir / "ablation.csv");
  table << "use_lm,normalization,diag_only,num_inducing,n_seeds";
  const char* metrics[] = {"balanced_acc", "auc", "ace", "instance_auc"};
  for (const char* m : metrics) table << ',' << m << "_mean," << m << "_std";
  table << '\n';
  const auto n = static_cast<std::size_t>(g.n_seeds);
  for (std::size_t first = 0; first < runs.size(); first += n) {
    const auto& head = runs[first];
    table << head.use_lm << ',' << to_string(head.normalization) << ','
          << head.diag_only << ',' << head.num_inducing << ',' << n;
    auto column = [&](auto get) {
      std::vector<double> v;
      for (std::size_t i = first; i < first + n; ++i) {
        if (auto x = get(runs[i].metrics)) v.push_back(*x);
      }
      if (v.empty()) {
        table << ",,";
        return;
      }
      double mean = 0.0;
      for (const double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (const double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      table << ',' << fmt(mean) << ',' << fmt(sd);
    };
    column([](const MetricsReport& r) { return std::optional<double>(r.balanced_acc); });
    column([](const MetricsReport& r) { return std::optional<double>(r.auc); });
    column([](const MetricsReport& r) { return std::optional<double>(r.ace); });
    column([](const MetricsReport& r) { return r.instance_auc; });
    table << '\n';
  }
  log << "wrote " << (out_dir / "ablation.csv").string() << " (" << runs.size() / n
      << " cells)\n";
  return runs;
}

std::size_t cmd_export_attention(const RunConfig& config, const fs::path& model,
                                 const fs::path& data, const fs::path& out,
                                 std::ostream& log) {
  const ModelFile file = load_model(model);
  const Dataset ds = load_dataset(data);
  const auto records = run_predict(file, ds, config);
  std::optional<InducingLabelMap> labels;
  if (file.is_sgp()) {
    labels = inducing_label_map(ds, std::get<MilModel>(file.model), config.eval.top_k);
    if (labels->zero_norm > 0) {
      log << "warning: " << labels->zero_norm << " zero-norm vectors in label map\n";
    }
  }

  auto csv = open_out(out);
  csv << "bag_id,instance,attention_mean,attention_std,attention_norm,instance_label,"
         "inducing_assignment\n";
  std::size_t rows = 0;
  for (std::size_t b = 0; b < ds.size(); ++b) {
    const auto& bag = ds.bags[b];
    const auto& rec = records[b];
    const VectorXd norm = minmax_normalize(rec.attention_mean);
    for (Index k = 0; k < bag.size(); ++k) {
      csv << bag.id << ',' << k << ',' << fmt(rec.attention_mean(k)) << ','
          << fmt(rec.attention_std.size() ? rec.attention_std(k) : 0.0) << ','
          << fmt(norm(k)) << ',';
      if (bag.instance_labels) csv << (*bag.instance_labels)[k];
      csv << ',';
      if (labels) csv << labels->assignment[b][k];
      csv << '\n';
      ++rows;
    }
  }
  log << "wrote " << rows << " instance rows to " << out.string() << "\n";
  return rows;
}

GradcheckFixture gradcheck_fixture(std::uint64_t seed, Normalization mode) {
  constexpr Index k = 6, d = 8, h = 6, dp = 3, m = 4;
  constexpr int c = 3;
  Rng rng(derive_seed(seed, "gradcheck"));
  AttentionOptions opts;
  opts.normalization = mode;
  MilModel model = MilModel::initial({d, h, dp, m, c}, opts, rng);
  auto& s = model.sgp;
  // Move every block away from its initial value so no gradient is trivially zero.
  s.inducing_locations = MatrixXd::NullaryExpr(m, dp, [&] { return rng.uniform(-0.9, 0.9); });
  s.variational_mean = VectorXd::NullaryExpr(m, [&] { return 0.5 * rng.normal(); });
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j <= i; ++j) {
      s.raw_cov_factor(i, j) = i == j ? rng.uniform(-2.5, -1.0) : 0.1 * rng.normal();
    }
  }
  s.lm_weights = VectorXd::NullaryExpr(dp, [&] { return 0.5 * rng.normal(); });
  s.lm_bias = 0.3 * rng.normal();
  s.kernel.raw_outputscale = rng.uniform(-0.5, 0.5);
  s.kernel.raw_lengthscales = VectorXd::NullaryExpr(dp, [&] { return rng.uniform(-0.5, 1.0); });
  s.kernel.raw_offset = rng.uniform(-4.0, -2.0);
  model.projector.hidden.bias = VectorXd::NullaryExpr(h, [&] { return 0.1 * rng.normal(); });
  model.projector.output.bias = VectorXd::NullaryExpr(dp, [&] { return 0.1 * rng.normal(); });
  model.classifier.bias = VectorXd::NullaryExpr(c, [&] { return 0.1 * rng.normal(); });

  InstanceBag bag;
  bag.id = "gradcheck";
  bag.features = rng.normal_matrix(k, d);
  bag.label = static_cast<int>(rng.uniform_int(0, c - 1));

  TrainConfig cfg;
  cfg.n_samples = 2;
  cfg.kl_scale = 0.25;
  cfg.grad_clip = 0.0;
  cfg.attention = opts;
  return {std::move(model), std::move(bag), cfg};
}

bool cmd_gradcheck(const GradcheckRequest& request, std::ostream& log) {
  struct Summary {
    std::size_t coords = 0;
    std::size_t failures = 0;
    double max_abs = 0.0;
    double max_rel = 0.0;
  };
  std::vector<std::string> order;
  std::map<std::string, Summary> blocks;
  for (const Normalization mode : {Normalization::kSigmoid, Normalization::kSoftmax}) {
    for (int i = 0; i < request.n_seeds; ++i) {
      const std::uint64_t seed = request.seed + static_cast<std::uint64_t>(i);
      const GradcheckFixture fx = gradcheck_fixture(seed, mode);
      const GradcheckReport report =
          gradient_check(fx.bag, fx.model, fx.config, derive_seed(seed, "noise"),
                         request.options);
      for (const auto& b : report.blocks) {
        if (!blocks.count(b.name)) order.push_back(b.name);
        auto& s = blocks[b.name];
        s.coords += b.coords;
        s.failures += b.failures;
        s.max_abs = std::max(s.max_abs, b.max_abs_error);
        s.max_rel = std::max(s.max_rel, b.max_rel_error);
      }
    }
  }
  bool ok = true;
  char line[160];
  for (const auto& name : order) {
    const auto& s = blocks[name];
    ok = ok && s.failures == 0;
    std::snprintf(line, sizeof line, "%-26s coords %5zu  failures %4zu  max_abs %.3e  max_rel %.3e  %s\n",
                  name.c_str(), s.coords, s.failures, s.max_abs, s.max_rel,
                  s.failures == 0 ? "PASS" : "FAIL");
    log << line;
  }
  log << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return ok;
}

}  // namespace gpmil::cli
