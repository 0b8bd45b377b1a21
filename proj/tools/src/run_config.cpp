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

#include "gpmil_cli/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gpmil/error.hpp"

namespace gpmil::cli {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

template <typename T>
void read_optional(const json& j, const char* key, const std::string& where,
                   std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, key, where, v);
  out = v;
}

std::vector<bool> read_bools(const json& j, const char* key, const std::string& where,
                             std::vector<bool> current) {
  if (!j.contains(key)) return current;
  std::vector<bool> out;
  read(j, key, where, out);
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (model != "sgpmil" && model != "gated_attention") {
    throw ConfigError("model must be 'sgpmil' or 'gated_attention', got '" + model + "'");
  }
  train.validate();
  if (eval.n_samples < 1) throw ConfigError("eval.n_samples must be >= 1");
  if (eval.n_bins < 1) throw ConfigError("eval.n_bins must be >= 1");
  if (!(data.separation > 0.0)) throw ConfigError("data.separation must be > 0");
  double sum = 0.0;
  for (const double f : data.split) {
    if (f < 0.0) throw ConfigError("data.split fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("data.split must sum to 1");
  const auto& g = ablate;
  if (g.use_lm.empty() || g.normalization.empty() || g.diag_only.empty() ||
      g.num_inducing.empty()) {
    throw ConfigError("ablate: every grid axis needs at least one value");
  }
  for (const Index m : g.num_inducing) {
    if (m < 1) throw ConfigError("ablate.num_inducing values must be >= 1");
  }
  if (g.n_seeds < 1) throw ConfigError("ablate.n_seeds must be >= 1");
}

RunConfig parse_config(std::string_view text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config", {"seed", "model", "data", "train", "eval", "ablate"});
  read(j, "seed", "config", c.seed);
  read(j, "model", "config", c.model);

  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, "data", {"n_bags", "k_min", "k_max", "dim", "n_classes", "separation",
                           "cluster_std", "positive_fraction", "split"});
    auto& o = c.data;
    read(d, "n_bags", "data", o.n_bags);
    read(d, "k_min", "data", o.k_min);
    read(d, "k_max", "data", o.k_max);
    read(d, "dim", "data", o.dim);
    read(d, "n_classes", "data", o.n_classes);
    read(d, "separation", "data", o.separation);
    read(d, "cluster_std", "data", o.cluster_std);
    std::array<double, 2> frac{o.fraction_lo, o.fraction_hi};
    read(d, "positive_fraction", "data", frac);
    o.fraction_lo = frac[0];
    o.fraction_hi = frac[1];
    read(d, "split", "data", o.split);
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train",
               {"epochs", "peak_lr", "warmup_steps", "weight_decay", "n_samples",
                "eval_samples", "hidden_dim", "proj_dim", "num_inducing",
                "gated_attention_dim", "normalization", "use_lm", "diag_only",
                "kl_scale", "grad_clip", "sampling_seed", "zero_variance"});
    auto& o = c.train;
    read(t, "epochs", "train", o.epochs);
    read(t, "peak_lr", "train", o.peak_lr);
    read(t, "warmup_steps", "train", o.warmup_steps);
    read(t, "weight_decay", "train", o.weight_decay);
    read(t, "n_samples", "train", o.n_samples);
    read(t, "eval_samples", "train", o.eval_samples);
    read(t, "hidden_dim", "train", o.hidden_dim);
    read(t, "proj_dim", "train", o.proj_dim);
    read(t, "num_inducing", "train", o.num_inducing);
    read(t, "gated_attention_dim", "train", o.gated_attention_dim);
    if (t.contains("normalization")) {
      std::string mode;
      read(t, "normalization", "train", mode);
      o.attention.normalization = parse_normalization(mode);
    }
    read(t, "use_lm", "train", o.attention.use_lm);
    read(t, "diag_only", "train", o.attention.diag_only);
    read_optional(t, "kl_scale", "train", o.kl_scale);
    read(t, "grad_clip", "train", o.grad_clip);
    read_optional(t, "sampling_seed", "train", o.sampling_seed);
    read(t, "zero_variance", "train", o.zero_variance);
  }

  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, "eval", {"n_samples", "n_bins", "top_k"});
    read(e, "n_samples", "eval", c.eval.n_samples);
    read(e, "n_bins", "eval", c.eval.n_bins);
    read(e, "top_k", "eval", c.eval.top_k);
  }

  if (j.contains("ablate")) {
    const json& a = j["ablate"];
    check_keys(a, "ablate", {"use_lm", "normalization", "diag_only", "num_inducing", "n_seeds"});
    auto& g = c.ablate;
    g.use_lm = read_bools(a, "use_lm", "ablate", g.use_lm);
    g.diag_only = read_bools(a, "diag_only", "ablate", g.diag_only);
    if (a.contains("normalization")) {
      std::vector<std::string> modes;
      read(a, "normalization", "ablate", modes);
      g.normalization.clear();
      for (const auto& m : modes) g.normalization.push_back(parse_normalization(m));
    }
    read(a, "num_inducing", "ablate", g.num_inducing);
    read(a, "n_seeds", "ablate", g.n_seeds);
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"] = c.model;
  const auto& d = c.data;
  j["data"] = {{"n_bags", d.n_bags},
               {"k_min", d.k_min},
               {"k_max", d.k_max},
               {"dim", d.dim},
               {"n_classes", d.n_classes},
               {"separation", d.separation},
               {"cluster_std", d.cluster_std},
               {"positive_fraction", {d.fraction_lo, d.fraction_hi}},
               {"split", d.split}};
  const auto& t = c.train;
  j["train"] = {{"epochs", t.epochs},
                {"peak_lr", t.peak_lr},
                {"warmup_steps", t.warmup_steps},
                {"weight_decay", t.weight_decay},
                {"n_samples", t.n_samples},
                {"eval_samples", t.eval_samples},
                {"hidden_dim", t.hidden_dim},
                {"proj_dim", t.proj_dim},
                {"num_inducing", t.num_inducing},
                {"gated_attention_dim", t.gated_attention_dim},
                {"normalization", std::string(to_string(t.attention.normalization))},
                {"use_lm", t.attention.use_lm},
                {"diag_only", t.attention.diag_only},
                {"kl_scale", t.kl_scale ? json(*t.kl_scale) : json(nullptr)},
                {"grad_clip", t.grad_clip},
                {"sampling_seed", t.sampling_seed ? json(*t.sampling_seed) : json(nullptr)},
                {"zero_variance", t.zero_variance}};
  j["eval"] = {{"n_samples", c.eval.n_samples},
               {"n_bins", c.eval.n_bins},
               {"top_k", c.eval.top_k}};
  std::vector<std::string> modes;
  for (const auto m : c.ablate.normalization) modes.emplace_back(to_string(m));
  j["ablate"] = {{"use_lm", c.ablate.use_lm},
                 {"normalization", modes},
                 {"diag_only", c.ablate.diag_only},
                 {"num_inducing", c.ablate.num_inducing},
                 {"n_seeds", c.ablate.n_seeds}};
  return j.dump(2) + "\n";
}

void write_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << to_json(config);
}

SyntheticSpec synthetic_spec(const RunConfig& c) {
  SyntheticSpec s;
  s.n_bags = c.data.n_bags;
  s.k_min = c.data.k_min;
  s.k_max = c.data.k_max;
  s.dim = c.data.dim;
  s.n_classes = c.data.n_classes;
  s.cluster_means = default_cluster_means(c.data.n_classes, c.data.dim,
                                          c.data.separation,
                                          derive_seed(c.seed, "means"));
  s.cluster_std = c.data.cluster_std;
  s.positive_fraction_lo = c.data.fraction_lo;
  s.positive_fraction_hi = c.data.fraction_hi;
  s.seed = derive_seed(c.seed, "data");
  return s;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.seed;
  return t;
}

std::uint64_t eval_seed(const RunConfig& c) { return derive_seed(c.seed, "eval"); }

}  // namespace gpmil::cli
