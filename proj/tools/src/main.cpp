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

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpmil/error.hpp"
#include "gpmil_cli/commands.hpp"

using namespace gpmil;
using namespace gpmil::cli;

namespace {

// Flags that override config values. Precedence, lowest first: built-in
// defaults, the model's stored config (eval / export-attention), --config,
// then these flags.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<Index> num_inducing;
  std::optional<std::string> normalization;
  std::optional<Index> eval_samples;

  void add_to(CLI::App* cmd, bool training) {
    cmd->add_option("--seed", seed, "Root seed");
    if (training) {
      cmd->add_option("--model-kind", model, "sgpmil or gated_attention");
      cmd->add_option("--epochs", epochs, "Training epochs");
      cmd->add_option("--lr", lr, "Peak learning rate");
      cmd->add_option("--num-inducing", num_inducing, "Number of inducing points");
      cmd->add_option("--normalization", normalization, "sigmoid or softmax");
    }
    cmd->add_option("--eval-samples", eval_samples, "Monte-Carlo samples at evaluation");
  }

  [[nodiscard]] std::string json() const {
    nlohmann::json j = nlohmann::json::object();
    if (seed) j["seed"] = *seed;
    if (model) j["model"] = *model;
    if (epochs) j["train"]["epochs"] = *epochs;
    if (lr) j["train"]["peak_lr"] = *lr;
    if (num_inducing) j["train"]["num_inducing"] = *num_inducing;
    if (normalization) j["train"]["normalization"] = *normalization;
    if (eval_samples) j["eval"]["n_samples"] = *eval_samples;
    return j.dump();
  }
};

RunConfig resolve(RunConfig base, const std::string& config_path, const Overrides& o) {
  if (!config_path.empty()) base = load_config(config_path, std::move(base));
  return parse_config(o.json(), std::move(base));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gpmil: sparse-GP attention multiple-instance learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::string data_path, val_path, test_path, model_path, out_path, split_prefix;
  Overrides over;
  int gc_seeds = 10;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--config", config_path, "Run config (JSON)");
  gen->add_option("--out", out_path, "Dataset file (.bin or .jsonl)")->required();
  gen->add_option("--split-prefix", split_prefix,
                  "Also write <prefix>.train/.val/.test splits");
  over.add_to(gen, false);

  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", config_path, "Run config (JSON)");
  trn->add_option("--data", data_path, "Training dataset")->required();
  trn->add_option("--val", val_path, "Validation dataset");
  trn->add_option("--out-dir", out_path, "Output directory")->required();
  over.add_to(trn, true);

  auto* evl = app.add_subcommand("eval", "Evaluate a model");
  evl->add_option("--config", config_path, "Run config (JSON)");
  evl->add_option("--model", model_path, "Model file")->required();
  evl->add_option("--data", data_path, "Evaluation dataset")->required();
  evl->add_option("--out-dir", out_path, "Output directory")->required();
  over.add_to(evl, false);

  auto* abl = app.add_subcommand("ablate", "Run the ablation grid");
  abl->add_option("--config", config_path, "Run config (JSON)");
  abl->add_option("--data", data_path, "Training dataset")->required();
  abl->add_option("--test", test_path, "Test dataset")->required();
  abl->add_option("--out-dir", out_path, "Output directory")->required();
  over.add_to(abl, true);

  auto* exp = app.add_subcommand("export-attention", "Per-instance attention CSV");
  exp->add_option("--config", config_path, "Run config (JSON)");
  exp->add_option("--model", model_path, "Model file")->required();
  exp->add_option("--data", data_path, "Dataset")->required();
  exp->add_option("--out", out_path, "CSV file")->required();
  over.add_to(exp, false);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc->add_option("--seed", over.seed, "First fixture seed");
  gc->add_option("--n-seeds", gc_seeds, "Number of fixture seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen) {
      const RunConfig c = resolve({}, config_path, over);
      std::optional<fs::path> prefix;
      if (!split_prefix.empty()) prefix = split_prefix;
      cmd_gen_data(c, out_path, prefix, std::cout);
    } else if (*trn) {
      const RunConfig c = resolve({}, config_path, over);
      std::optional<fs::path> val;
      if (!val_path.empty()) val = val_path;
      cmd_train(c, data_path, val, out_path, std::cout);
    } else if (*evl) {
      const RunConfig c = resolve(config_from_model(load_model(model_path)), config_path, over);
      cmd_eval(c, model_path, data_path, out_path, std::cout);
    } else if (*abl) {
      const RunConfig c = resolve({}, config_path, over);
      cmd_ablate(c, data_path, test_path, out_path, std::cout);
    } else if (*exp) {
      const RunConfig c = resolve(config_from_model(load_model(model_path)), config_path, over);
      cmd_export_attention(c, model_path, data_path, out_path, std::cout);
    } else if (*gc) {
      if (gc_seeds < 1) throw ConfigError("--n-seeds must be >= 1");
      GradcheckRequest req;
      req.seed = over.seed.value_or(0);
      req.n_seeds = gc_seeds;
      if (!cmd_gradcheck(req, std::cout)) {
        std::fprintf(stderr, "error: gradcheck_failed: analytic and numeric gradients disagree\n");
        return 1;
      }
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(e.kind()).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
