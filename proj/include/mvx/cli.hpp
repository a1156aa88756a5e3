#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mvx/dataset_io.hpp"
#include "mvx/explain/bundle.hpp"
#include "mvx/metrics.hpp"
#include "mvx/mvarch.hpp"
#include "mvx/plot.hpp"
#include "mvx/synthgen.hpp"
#include "mvx/train.hpp"

namespace mvx::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Everything a run needs, mergeable from a JSON config file with flag
// overrides on top. The resolved copy is persisted beside each command's
// outputs so any artifact can be regenerated from it.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string data_path;

  SyntheticSpec synth;

  std::string arch = "csv";
  ModelConfig model;

  TrainConfig train;
  double train_fraction = 0.7;

  TrainConfig heads = head_defaults();

  ExplainOptions explain;
  std::string checkpoint;
  std::string sample_id;
  std::string view = "all";

  std::string split_file;
  bool explain_metrics = true;  // only takes effect when masks exist
  int explain_metrics_max = 25;

  static TrainConfig head_defaults() {
    TrainConfig c;
    c.batch_size = 16;
    c.epochs = 40;
    c.learning_rate = 1e-2;
    return c;
  }

  void merge_json(const json& j) {
    seed = j.value("seed", seed);
    output_dir = j.value("output_dir", output_dir);
    data_path = j.value("data", json::object()).value("path", data_path);

    if (j.contains("synthetic")) {
      const json& s = j.at("synthetic");
      synth.n_samples = s.value("n_samples", synth.n_samples);
      synth.defect_intensity = s.value("defect_intensity", synth.defect_intensity);
      synth.texture_noise_sigma = s.value("texture_noise_sigma", synth.texture_noise_sigma);
      synth.style_gap = s.value("style_gap", synth.style_gap);
      synth.class_balance = s.value("class_balance", synth.class_balance);
      const int h = s.value("height", synth.schema.height);
      const int w = s.value("width", synth.schema.width);
      synth.schema = default_five_view_schema(h, w);
    }

    if (j.contains("model")) {
      const json& m = j.at("model");
      arch = m.value("arch", arch);
      if (m.contains("pool")) model.pool = pool_from_string(m.at("pool").get<std::string>());
      model.backbone.conv_channels =
          m.value("conv_channels", model.backbone.conv_channels);
      model.backbone.feature_dim = m.value("feature_dim", model.backbone.feature_dim);
      if (m.contains("activation"))
        model.backbone.activation =
            activation_from_string(m.at("activation").get<std::string>());
      model.classifier_hidden = m.value("classifier_hidden", model.classifier_hidden);
    }

    if (j.contains("train")) {
      const json& t = j.at("train");
      train.batch_size = t.value("batch_size", train.batch_size);
      train.epochs = t.value("epochs", train.epochs);
      train.learning_rate = t.value("learning_rate", train.learning_rate);
      train_fraction = t.value("train_fraction", train_fraction);
    }

    if (j.contains("heads")) {
      const json& h = j.at("heads");
      heads.batch_size = h.value("batch_size", heads.batch_size);
      heads.epochs = h.value("epochs", heads.epochs);
      heads.learning_rate = h.value("learning_rate", heads.learning_rate);
    }

    if (j.contains("explain")) {
      const json& e = j.at("explain");
      if (e.contains("method"))
        explain.method = explain_method_from_string(e.at("method").get<std::string>());
      explain.num_segments = e.value("num_segments", explain.num_segments);
      explain.lime_samples = e.value("lime_samples", explain.lime_samples);
      explain.lime_kernel_width = e.value("lime_kernel_width", explain.lime_kernel_width);
      explain.lime_ridge = e.value("lime_ridge", explain.lime_ridge);
      explain.shap_samples = e.value("shap_samples", explain.shap_samples);
      if (e.contains("baseline"))
        explain.baseline = baseline_from_string(e.at("baseline").get<std::string>());
      explain.target_class = e.value("target_class", explain.target_class);
      checkpoint = e.value("checkpoint", checkpoint);
      sample_id = e.value("sample", sample_id);
      view = e.value("view", view);
    }

    if (j.contains("eval")) {
      const json& e = j.at("eval");
      checkpoint = e.value("checkpoint", checkpoint);
      split_file = e.value("split", split_file);
      explain_metrics = e.value("explain_metrics", explain_metrics);
      explain_metrics_max = e.value("explain_metrics_max", explain_metrics_max);
    }
  }

  json to_json() const {
    return json{
        {"seed", seed},
        {"output_dir", output_dir},
        {"data", {{"path", data_path}}},
        {"synthetic",
         {{"n_samples", synth.n_samples},
          {"defect_intensity", synth.defect_intensity},
          {"texture_noise_sigma", synth.texture_noise_sigma},
          {"style_gap", synth.style_gap},
          {"class_balance", synth.class_balance},
          {"height", synth.schema.height},
          {"width", synth.schema.width}}},
        {"model",
         {{"arch", arch},
          {"pool", to_string(model.pool)},
          {"conv_channels", model.backbone.conv_channels},
          {"feature_dim", model.backbone.feature_dim},
          {"activation", to_string(model.backbone.activation)},
          {"classifier_hidden", model.classifier_hidden}}},
        {"train",
         {{"batch_size", train.batch_size},
          {"epochs", train.epochs},
          {"learning_rate", train.learning_rate},
          {"train_fraction", train_fraction}}},
        {"heads",
         {{"batch_size", heads.batch_size},
          {"epochs", heads.epochs},
          {"learning_rate", heads.learning_rate}}},
        {"explain",
         {{"method", to_string(explain.method)},
          {"num_segments", explain.num_segments},
          {"lime_samples", explain.lime_samples},
          {"lime_kernel_width", explain.lime_kernel_width},
          {"lime_ridge", explain.lime_ridge},
          {"shap_samples", explain.shap_samples},
          {"baseline", to_string(explain.baseline)},
          {"target_class", explain.target_class},
          {"checkpoint", checkpoint},
          {"sample", sample_id},
          {"view", view}}},
        {"eval",
         {{"checkpoint", checkpoint},
          {"split", split_file},
          {"explain_metrics", explain_metrics},
          {"explain_metrics_max", explain_metrics_max}}},
    };
  }
};

namespace detail {

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

inline void persist_config(const RunConfig& cfg, const fs::path& dir) {
  write_json_file((dir / "config.resolved.json").string(), cfg.to_json());
}

inline MultiViewSchema schema_for_root(const std::string& root) {
  const fs::path p = fs::path(root) / "schema.json";
  if (!fs::exists(p)) return default_five_view_schema();
  const json j = read_json_file(p.string());
  MultiViewSchema s;
  s.num_views = j.at("num_views").get<int>();
  s.subgroups = j.at("subgroups").get<std::vector<std::vector<int>>>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.channels = j.at("channels").get<int>();
  s.class_names = j.at("class_names").get<std::vector<std::string>>();
  s.validate();
  return s;
}

inline void write_schema_json(const std::string& root, const MultiViewSchema& s) {
  write_json_file((fs::path(root) / "schema.json").string(),
                  json{{"num_views", s.num_views},
                       {"subgroups", s.subgroups},
                       {"height", s.height},
                       {"width", s.width},
                       {"channels", s.channels},
                       {"class_names", s.class_names}});
}

inline Dataset subset_by_ids(const Dataset& ds, const std::vector<std::string>& ids) {
  Dataset out;
  out.schema = ds.schema;
  out.split_tag = ds.split_tag;
  for (const auto& id : ids) {
    try {
      out.samples.push_back(ds.by_id(id));
    } catch (const std::exception&) {
      throw std::runtime_error("split file names sample " + id +
                               " but the dataset has no such sample");
    }
  }
  return out;
}

}  // namespace detail

inline int cmd_generate(RunConfig cfg) {
  cfg.synth.seed = cfg.seed;
  cfg.synth.validate();
  const GeneratedData data = generate(cfg.synth);

  fs::create_directories(cfg.output_dir);
  write_generated(cfg.output_dir, data);
  detail::write_schema_json(cfg.output_dir, cfg.synth.schema);
  detail::persist_config(cfg, cfg.output_dir);

  const auto counts = data.dataset.class_counts();
  std::cout << "generated " << data.dataset.samples.size() << " samples ("
            << counts[static_cast<std::size_t>(cfg.synth.schema.class_index("Defective"))]
            << " defective) at " << cfg.output_dir << "\n";
  return 0;
}

inline int cmd_train(RunConfig cfg) {
  if (cfg.data_path.empty()) throw std::runtime_error("train: --data is required");
  const MultiViewSchema schema = detail::schema_for_root(cfg.data_path);
  const Dataset full = load_dataset(cfg.data_path, schema);
  const auto [train_set, test_set] =
      split_dataset(full, cfg.train_fraction, derive_seed(cfg.seed, 31));

  MultiViewModel model = build_model(arch_from_string(cfg.arch), schema, cfg.model, cfg.seed);

  TrainConfig tc = cfg.train;
  const int total = tc.epochs;
  tc.on_epoch = [total](int epoch, const TrainReport& r) {
    if (epoch % 10 != 0 && epoch != total) return;
    std::cout << "epoch " << epoch << "/" << total << "  loss " << r.train_loss.back()
              << "  train_acc " << r.train_acc.back();
    if (!r.test_acc.empty()) std::cout << "  test_acc " << r.test_acc.back();
    std::cout << "\n";
  };

  TrainReport report = train_model(model, train_set, &test_set, tc, cfg.seed);

  fs::create_directories(cfg.output_dir);
  const fs::path out = cfg.output_dir;
  model.save((out / "checkpoint.bin").string());
  report.save_json((out / "report.json").string());
  report.save_csv((out / "curves.csv").string());
  save_learning_curve_png((out / "curves.png").string(), report);

  json split_ids{{"train", json::array()}, {"test", json::array()}};
  for (const auto& s : train_set.samples) split_ids["train"].push_back(s.sample_id);
  for (const auto& s : test_set.samples) split_ids["test"].push_back(s.sample_id);
  detail::write_json_file((out / "split.json").string(), split_ids);
  detail::persist_config(cfg, out);

  std::cout << "final train_acc " << report.final_train_acc << "  test_acc "
            << report.final_test_acc;
  if (std::isfinite(report.final_test_auc)) std::cout << "  test_auc " << report.final_test_auc;
  std::cout << "\ncheckpoint: " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

inline int cmd_explain(RunConfig cfg) {
  if (cfg.checkpoint.empty()) throw std::runtime_error("explain: --ckpt is required");
  if (cfg.data_path.empty()) throw std::runtime_error("explain: --data is required");
  if (cfg.sample_id.empty()) throw std::runtime_error("explain: --sample is required");

  MultiViewModel model = MultiViewModel::load(cfg.checkpoint);
  const Dataset ds = load_dataset(cfg.data_path, model.schema());
  const Sample& sample = ds.by_id(cfg.sample_id);

  std::vector<int> views;
  if (cfg.view == "all")
    for (int v = 0; v < model.schema().num_views; ++v) views.push_back(v);
  else {
    const int v = std::stoi(cfg.view);
    if (v < 0 || v >= model.schema().num_views)
      throw std::runtime_error("view index " + cfg.view + " outside the schema");
    views.push_back(v);
  }

  const ExplainerBundle bundle =
      ExplainerBundle::build(std::move(model), ds, cfg.heads, derive_seed(cfg.seed, 41));

  fs::create_directories(cfg.output_dir);
  const fs::path out = cfg.output_dir;

  WeightArchive heads_archive;
  heads_archive.manifest = {{"type", "mvx.heads"}, {"kind", to_string(bundle.model.kind())}};
  json scope_list = json::array();
  for (const auto& [scope, head] : bundle.heads) {
    scope_list.push_back(scope);
    heads_archive.put_matrix("head." + scope + ".weight", head.layer.weight);
    heads_archive.put_matrix("head." + scope + ".bias", head.layer.bias);
  }
  heads_archive.manifest["scopes"] = scope_list;
  heads_archive.save((out / "heads.bin").string());

  const std::string method = to_string(cfg.explain.method);
  for (int v : views) {
    const AttributionMap attr =
        explain_view(bundle, sample, v, cfg.explain, derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(v)));
    const std::string stem = cfg.sample_id + "_view" + std::to_string(v) + "_" + method;
    save_grid_csv((out / (stem + ".csv")).string(), attr.per_pixel);
    write_png((out / (stem + "_overlay.png")).string(),
              render_overlay(sample.views[static_cast<std::size_t>(v)], attr));
    std::cout << "view " << v << ": target class " << attr.target_class << ", wrote " << stem
              << ".csv and overlay\n";
  }
  detail::persist_config(cfg, out);
  return 0;
}

inline int cmd_eval(RunConfig cfg) {
  if (cfg.checkpoint.empty()) throw std::runtime_error("eval: --ckpt is required");
  if (cfg.data_path.empty()) throw std::runtime_error("eval: --data is required");

  MultiViewModel model = MultiViewModel::load(cfg.checkpoint);
  const Dataset full = load_dataset(cfg.data_path, model.schema());

  Dataset target = full;
  if (!cfg.split_file.empty()) {
    const json split = detail::read_json_file(cfg.split_file);
    target = detail::subset_by_ids(full, split.at("test").get<std::vector<std::string>>());
  }

  EvalReport report = evaluate_model(model, target);

  const auto masks = load_masks(cfg.data_path, model.schema());
  if (cfg.explain_metrics && !masks.empty()) {
    const ExplainerBundle bundle =
        ExplainerBundle::build(std::move(model), target, cfg.heads, derive_seed(cfg.seed, 41));
    int hits = 0, count = 0;
    double iou_sum = 0.0, baseline_sum = 0.0;
    for (const auto& s : target.samples) {
      if (count >= cfg.explain_metrics_max) break;
      const auto it = masks.find(s.sample_id);
      if (it == masks.end()) continue;
      for (const auto& [v, mask] : it->second) {
        const AttributionMap attr = explain_view(
            bundle, s, v, cfg.explain,
            derive_seed(cfg.seed, 200 + static_cast<std::uint64_t>(count)));
        if (pointing_game(attr, mask)) ++hits;
        iou_sum += topq_iou(attr, mask);
        baseline_sum += random_pixel_hit_rate(
            mask, 2000, derive_seed(cfg.seed, 300 + static_cast<std::uint64_t>(count)));
        ++count;
      }
    }
    if (count > 0) {
      report.has_explanation_metrics = true;
      report.explained_count = count;
      report.pointing_game_hit_rate = static_cast<double>(hits) / count;
      report.pointing_game_baseline = baseline_sum / count;
      report.mean_topq_iou = iou_sum / count;
    }
  }

  fs::create_directories(cfg.output_dir);
  const fs::path out = cfg.output_dir;
  report.save_json((out / "eval_report.json").string());
  detail::persist_config(cfg, out);

  std::cout << "accuracy " << report.accuracy;
  if (std::isfinite(report.auc_value)) std::cout << "  auc " << report.auc_value;
  if (report.has_explanation_metrics)
    std::cout << "  pointing_game " << report.pointing_game_hit_rate << " (baseline "
              << report.pointing_game_baseline << ")";
  std::cout << "\n";
  return 0;
}

// Parses and dispatches; exceptions become an error line on stderr and a
// nonzero exit, so the binary never dumps a raw stack to the user.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"multi-view defect classification and explanation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_flag;
  std::optional<std::string> out_flag;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { seed_flag = v; }, "run seed");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& v) { out_flag = v; }, "output directory");
  };

  auto* gen = app.add_subcommand("generate", "render a synthetic multi-view dataset");
  add_common(gen);

  std::optional<std::string> arch_flag, data_flag;
  auto* train = app.add_subcommand("train", "train an architecture on a dataset");
  add_common(train);
  train->add_option_function<std::string>(
          "--arch", [&](const std::string& v) { arch_flag = v; }, "csv, ssg, psg or cdv")
      ->check(CLI::IsMember({"csv", "ssg", "psg", "cdv"}));
  train->add_option_function<std::string>(
      "--data", [&](const std::string& v) { data_flag = v; }, "dataset root");

  std::optional<std::string> ckpt_flag, sample_flag, view_flag, method_flag;
  auto* explain = app.add_subcommand("explain", "attribution maps through one-view heads");
  add_common(explain);
  explain->add_option_function<std::string>(
      "--data", [&](const std::string& v) { data_flag = v; }, "dataset root");
  explain->add_option_function<std::string>(
      "--ckpt", [&](const std::string& v) { ckpt_flag = v; }, "model checkpoint");
  explain->add_option_function<std::string>(
      "--sample", [&](const std::string& v) { sample_flag = v; }, "sample id");
  explain->add_option_function<std::string>(
      "--view", [&](const std::string& v) { view_flag = v; }, "view index or 'all'");
  explain
      ->add_option_function<std::string>(
          "--method", [&](const std::string& v) { method_flag = v; },
          "lime, kernel_shap or exact_shapley")
      ->check(CLI::IsMember({"lime", "kernel_shap", "exact_shapley"}));

  std::optional<std::string> split_flag;
  auto* eval = app.add_subcommand("eval", "metrics for a checkpoint on a dataset");
  add_common(eval);
  eval->add_option_function<std::string>(
      "--data", [&](const std::string& v) { data_flag = v; }, "dataset root");
  eval->add_option_function<std::string>(
      "--ckpt", [&](const std::string& v) { ckpt_flag = v; }, "model checkpoint");
  eval->add_option_function<std::string>(
      "--split", [&](const std::string& v) { split_flag = v; }, "split.json restricting eval to its test ids");

  std::vector<const char*> argv;
  argv.push_back("mvx");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.merge_json(detail::read_json_file(config_path));
    if (seed_flag) cfg.seed = *seed_flag;
    if (out_flag) cfg.output_dir = *out_flag;
    if (arch_flag) cfg.arch = *arch_flag;
    if (data_flag) cfg.data_path = *data_flag;
    if (ckpt_flag) cfg.checkpoint = *ckpt_flag;
    if (sample_flag) cfg.sample_id = *sample_flag;
    if (view_flag) cfg.view = *view_flag;
    if (method_flag) cfg.explain.method = explain_method_from_string(*method_flag);
    if (split_flag) cfg.split_file = *split_flag;

    if (gen->parsed()) return cmd_generate(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (explain->parsed()) return cmd_explain(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    std::cerr << "error: no command given\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mvx::cli
