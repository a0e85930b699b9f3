// Copyright 2026 The gadft Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// gadft command line: gen-data, pretrain, fit, finetune, evaluate, segment
// and ablate. Every command reads a JSON run config and writes below its
// output directory:
//
//   data/                         synthetic corpus in the MVTec layout
//   pretrained.gadw, pretrain.json
//   frozen/<category>/fold<k>.gadw
//   finetuned/<category>/fold<k>.gadw, fold<k>.json (training report)
//   report.csv, report.json       evaluate
//   heatmaps/<variant>/<category>/fold<k>/NNN.{png,f32}
//   ablation.csv, ablation.json
//   manifest_<command>.json

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "gadft/error.hpp"
#include "gadft/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace gadft;

namespace {

constexpr int kUsageError = 2;

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IngestionError("failed writing " + path.string());
}

std::string fold_name(int fold) { return "fold" + std::to_string(fold); }

fs::path weights_path(const RunConfig& c, const std::string& variant, const std::string& category, int fold) {
  return c.output_dir / variant / category / (fold_name(fold) + ".gadw");
}

struct Options {
  std::string config_path;
  std::string output_dir;
  int workers = -1;
  std::string weights;
  std::string variant = "finetuned";
};

RunConfig load(const Options& o) {
  RunConfig c = load_run_config(o.config_path);
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (o.workers >= 0) c.workers = o.workers;
  return c;
}

void log(const std::string& line) { std::cerr << line << std::endl; }

FeatureExtractor<float> load_pretrained(const RunConfig& c, const Options& o) {
  const fs::path path = o.weights.empty() ? c.output_dir / "pretrained.gadw" : fs::path(o.weights);
  if (!fs::exists(path)) throw ConfigError("pretrained weights not found at " + path.string() + "; run pretrain first");
  WeightFile file = load_weights(path, c.extractor);
  if (!file.model.statistics_frozen()) throw StateError(path.string() + " holds a model without frozen statistics");
  return std::move(file.model);
}

void cmd_gen_data(const RunConfig& c) {
  if (c.corpus_source != "synthetic") throw ConfigError("gen-data needs corpus.source = \"synthetic\"");
  const Corpus corpus = load_corpus(c);
  export_mvtec_layout(corpus, c.output_dir / "data");
  log("wrote " + std::to_string(corpus.categories.size()) + " categories to " + (c.output_dir / "data").string());
}

void cmd_pretrain(const RunConfig& c) {
  PretrainSummary summary;
  const FeatureExtractor<float> model = pretrain_model(c, &summary);
  save_weights(c.output_dir / "pretrained.gadw", model);
  nlohmann::json j;
  j["epoch_loss"] = summary.epoch_loss;
  if (summary.heldout_accuracy) j["heldout_accuracy"] = *summary.heldout_accuracy;
  j["seconds"] = summary.seconds;
  write_text(c.output_dir / "pretrain.json", j.dump(2));
  if (summary.heldout_accuracy) log("held-out accuracy " + std::to_string(*summary.heldout_accuracy));
}

// fit and finetune share the grid runner; only the variant differs.
void cmd_train(const RunConfig& c, const Options& o, bool finetune) {
  const FeatureExtractor<float> pretrained = load_pretrained(c, o);
  const Corpus corpus = load_corpus(c);
  const auto categories = select_categories(corpus, c.categories);
  const Variant variant = default_variants(c.train)[finetune ? 1 : 0];
  run_grid(pretrained, categories, c.folds, {variant}, c.train.seed, c.workers, [&](const RunOutcome& r) {
    const fs::path path = weights_path(c, variant.name, r.category, r.fold);
    fs::create_directories(path.parent_path());
    const GaussianModel* g = r.head.kind == HeadKind::gaussian ? &r.head.gaussians : nullptr;
    const LevelCenters* centers = r.head.kind == HeadKind::gaussian ? nullptr : &r.head.centers;
    save_weights(path, r.model, g, centers);
    if (r.report) write_text(path.parent_path() / (fold_name(r.fold) + ".json"), r.report->to_json());
    log(variant.name + " " + r.category + " " + fold_name(r.fold) + " image_auroc " + std::to_string(r.row.image_auroc));
  });
}

// Loads the saved runs of each variant that exists on disk.
void cmd_evaluate(const RunConfig& c, bool heatmaps, const Options& o) {
  const Corpus corpus = load_corpus(c);
  const auto categories = select_categories(corpus, c.categories);
  const auto variants = default_variants(c.train);
  EvalReport report;
  bool any = false;
  for (const CategoryData* cat : categories)
    for (int fold = 0; fold < c.folds; ++fold)
      for (const Variant& v : variants) {
        if (heatmaps && v.name != o.variant) continue;
        const fs::path path = weights_path(c, v.name, cat->name, fold);
        if (!fs::exists(path)) continue;
        any = true;
        const WeightFile file = load_weights(path, c.extractor);
        const ScoringHead head = head_from_weights(file, v.config);
        Evaluation e = evaluate_category(file.model, head, *cat, fold, v.name, v.config.aggregation);
        if (heatmaps) {
          export_heatmaps(e.heatmaps, c.output_dir / "heatmaps" / v.name / cat->name / fold_name(fold));
        } else {
          report.rows.push_back(e.row);
        }
      }
  if (!any) throw ConfigError("no fitted or fine-tuned weights under " + c.output_dir.string() + "; run fit or finetune first");
  if (!heatmaps) {
    write_text(c.output_dir / "report.csv", report.to_csv());
    write_text(c.output_dir / "report.json", report.to_json());
    std::cout << report.to_csv();
  }
}

void cmd_ablate(const RunConfig& c, const Options& o) {
  const FeatureExtractor<float> pretrained = load_pretrained(c, o);
  const Corpus corpus = load_corpus(c);
  const auto categories = select_categories(corpus, c.categories);
  const auto variants = ablation_variants(c.train, c.ablate);
  const auto outcomes = run_grid(pretrained, categories, c.folds, variants, c.train.seed, c.workers,
                                 [](const RunOutcome& r) {
                                   log(r.variant + " " + r.category + " " + fold_name(r.fold) + " image_auroc " +
                                       std::to_string(r.row.image_auroc));
                                 });
  const EvalReport report = to_report(outcomes);
  write_text(c.output_dir / "ablation.csv", report.to_csv());
  write_text(c.output_dir / "ablation.json", report.to_json());
  std::cout << report.to_csv();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian anomaly detection with fine-tuned features"};
  app.require_subcommand(1, 1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "JSON run config")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output", o.output_dir, "Override the config's output directory");
    sub->add_option("-j,--workers", o.workers, "Worker threads (0 = hardware threads)")->check(CLI::NonNegativeNumber);
    return sub;
  };
  auto add_weights = [&](CLI::App* sub) {
    sub->add_option("-w,--weights", o.weights, "Pretrained weights (default <output>/pretrained.gadw)");
    return sub;
  };
  CLI::App* gen = add_common(app.add_subcommand("gen-data", "Write the synthetic corpus in the MVTec layout"));
  CLI::App* pre = add_common(app.add_subcommand("pretrain", "Pretrain the extractor on the texture classification task"));
  CLI::App* fit = add_weights(add_common(app.add_subcommand("fit", "Fit Gaussians on frozen features (baseline)")));
  CLI::App* ft = add_weights(add_common(app.add_subcommand("finetune", "Fine-tune per category and fold")));
  CLI::App* ev = add_common(app.add_subcommand("evaluate", "Score saved runs and write report.csv"));
  CLI::App* seg = add_common(app.add_subcommand("segment", "Write heatmaps of saved runs"));
  seg->add_option("--variant", o.variant, "frozen or finetuned")->check(CLI::IsMember({"frozen", "finetuned"}));
  CLI::App* abl = add_weights(add_common(app.add_subcommand("ablate", "Run the configured ablation grid")));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  std::string command;
  RunConfig config;
  try {
    config = load(o);
    command = app.get_subcommands().front()->get_name();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  }
  try {
    fs::create_directories(config.output_dir);
    write_text(config.output_dir / ("manifest_" + command + ".json"), manifest_json(config, command));
    if (gen->parsed()) cmd_gen_data(config);
    if (pre->parsed()) cmd_pretrain(config);
    if (fit->parsed()) cmd_train(config, o, false);
    if (ft->parsed()) cmd_train(config, o, true);
    if (ev->parsed()) cmd_evaluate(config, false, o);
    if (seg->parsed()) cmd_evaluate(config, true, o);
    if (abl->parsed()) cmd_ablate(config, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
