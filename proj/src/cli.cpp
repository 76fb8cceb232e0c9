#include "mtcl/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mtcl/config.hpp"
#include "mtcl/errors.hpp"
#include "mtcl/metrics.hpp"
#include "mtcl/train.hpp"

namespace mtcl {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  long seed = -1;
};

ConfigStore build_store(const CommonArgs& args) {
  ConfigStore store;
  if (!args.config_path.empty()) store = ConfigStore::parse_file(args.config_path);
  for (const auto& ov : args.overrides) store.apply_override(ov);
  if (args.seed >= 0) {
    store.apply_override("model.seed=" + std::to_string(args.seed));
    store.apply_override("train.seeds=" + std::to_string(args.seed));
  }
  return store;
}

fs::path require_out_dir(const CommonArgs& args) {
  if (args.out_dir.empty()) throw ConfigError("--out DIR is required");
  fs::path dir(args.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_resolved_config(const fs::path& out_dir, const ConfigStore& store) {
  write_text(out_dir / "config.resolved", store.resolved_text());
}

// Loads every manifest row, preprocesses each modality to the model input
// shape, and returns the samples in manifest order.
std::vector<MultiModalSample> load_dataset(const DatasetManifest& manifest,
                                           const std::array<long, 3>& in_shape) {
  std::vector<MultiModalSample> samples;
  samples.reserve(manifest.rows.size());
  for (size_t i = 0; i < manifest.rows.size(); ++i) {
    MultiModalSample s = load_sample(manifest, i);
    for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc})
      s.volume(m) = preprocess(s.volume(m), in_shape);
    samples.push_back(std::move(s));
  }
  return samples;
}

nlohmann::json metrics_file_json(const MetricReport& report, Task task, const std::string& method,
                                 Scale scale, const std::string& checkpoint_policy) {
  nlohmann::json j = report.to_json();
  j["task"] = to_string(task);
  j["method"] = method;
  j["scale"] = to_string(scale);
  j["checkpoint"] = checkpoint_policy;
  return j;
}

void print_metric_summary(const std::string& label, const MetricReport& r) {
  std::ostringstream os;
  os << label << ":";
  const auto& names = MetricReport::metric_names();
  const auto vals = r.values_in_order();
  for (size_t i = 0; i < names.size(); ++i) {
    os << ' ' << names[i] << '=';
    if (std::isnan(vals[i].value))
      os << "NA";
    else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", vals[i].value);
      os << buf;
    }
  }
  std::cout << os.str() << '\n';
}

int cmd_synth(const CommonArgs& common) {
  ConfigStore store = build_store(common);
  const ResolvedRun run = resolve_run(store);
  run.synth.validate();
  const fs::path out = require_out_dir(common);

  const auto samples = synthesize_dataset(run.synth);
  const fs::path volume_dir = out / "volumes";
  fs::create_directories(volume_dir);

  std::vector<ManifestRow> rows;
  long n_low = 0, n_high_noninv = 0, n_inv = 0;
  for (const auto& s : samples) {
    ManifestRow row;
    row.patient_id = s.patient_id;
    row.grade = s.label_grade;
    row.invasion = s.label_invasion;
    for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc}) {
      const std::string rel = "volumes/" + s.patient_id + "_" + to_string(m) + ".raw";
      save_volume(out / rel, s.volume(m), s.spacing_mm);
      if (m == Modality::t1c)
        row.t1c_path = rel;
      else if (m == Modality::flairc)
        row.flairc_path = rel;
      else
        row.adc_path = rel;
    }
    rows.push_back(std::move(row));
    if (s.label_grade == 0)
      ++n_low;
    else if (s.label_invasion == 0)
      ++n_high_noninv;
    else
      ++n_inv;
  }
  const fs::path manifest_path = out / "manifest.csv";
  write_manifest(manifest_path, rows);
  write_resolved_config(out, store);

  std::printf("synthesized %zu samples: %ld low-grade, %ld high-grade/noninvasion, %ld invasion\n",
              samples.size(), n_low, n_high_noninv, n_inv);
  std::printf("manifest %s (hash %016llx)\n", manifest_path.string().c_str(),
              static_cast<unsigned long long>(hash_file(manifest_path.string())));
  return 0;
}

int cmd_train(const CommonArgs& common) {
  ConfigStore store = build_store(common);
  const ResolvedRun run = resolve_run(store);
  if (run.data.manifest.empty())
    throw ConfigError("data.manifest is required for training (set it in the config or via "
                      "--set data.manifest=PATH)");
  const fs::path out = require_out_dir(common);
  write_resolved_config(out, store);

  const DatasetManifest manifest = load_manifest(run.data.manifest);
  for (const auto& w : manifest.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto samples = load_dataset(manifest, run.train.model.in_shape);

  const SplitResult split =
      stratified_split(manifest, run.data.train_fractions, run.data.split_seed);
  for (const auto& w : split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::vector<MultiModalSample> train_set, test_set;
  for (size_t idx : split.train_indices) train_set.push_back(samples[idx]);
  for (size_t idx : split.test_indices) test_set.push_back(samples[idx]);
  std::printf("dataset: %zu train / %zu test\n", train_set.size(), test_set.size());

  const TrainResult result = train(run.train, train_set, test_set, out);

  const std::string method = to_string(run.train.baseline);
  if (!test_set.empty()) {
    auto [inv, men] = evaluate_checkpoint(result.final_checkpoint, test_set, run.train.threshold);
    write_text(out / "metrics_invasion.json",
               metrics_file_json(inv, Task::invasion, method, run.train.model.scale, "final")
                       .dump(2) +
                   "\n");
    write_text(out / "metrics_meningioma.json",
               metrics_file_json(men, Task::meningioma, method, run.train.model.scale, "final")
                       .dump(2) +
                   "\n");
    print_metric_summary("invasion", inv);
    print_metric_summary("meningioma", men);
  }
  std::printf("final checkpoint: %s\n", result.final_checkpoint.string().c_str());
  if (!result.best_checkpoint.empty())
    std::printf("best checkpoint (mean eval AUC %.4f at epoch %ld): %s\n", result.best_eval_auc,
                result.best_epoch, result.best_checkpoint.string().c_str());
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt, const std::string& manifest_path,
             double threshold) {
  if (ckpt.empty()) throw ConfigError("--ckpt PATH is required");
  std::string manifest_file = manifest_path;
  if (manifest_file.empty()) {
    ConfigStore store = build_store(common);
    const ResolvedRun run = resolve_run(store);
    manifest_file = run.data.manifest;
  }
  if (manifest_file.empty())
    throw ConfigError("a manifest is required (--manifest PATH or data.manifest)");
  const fs::path out = require_out_dir(common);

  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  const DatasetManifest manifest = load_manifest(manifest_file);
  for (const auto& w : manifest.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto samples = load_dataset(manifest, loaded.model->config().in_shape);

  auto [inv, men] = evaluate(*loaded.model, samples, threshold);
  const std::string method = loaded.model->kind();
  const Scale scale = loaded.model->config().scale;
  write_text(out / "metrics_invasion.json",
             metrics_file_json(inv, Task::invasion, method, scale, "explicit").dump(2) + "\n");
  write_text(out / "metrics_meningioma.json",
             metrics_file_json(men, Task::meningioma, method, scale, "explicit").dump(2) + "\n");
  print_metric_summary("invasion", inv);
  print_metric_summary("meningioma", men);
  return 0;
}

int cmd_ablate(const CommonArgs& common, int parallel) {
  ConfigStore store = build_store(common);
  const ResolvedRun run = resolve_run(store);
  if (run.data.manifest.empty())
    throw ConfigError("data.manifest is required for ablation (set data.manifest)");
  const fs::path out = require_out_dir(common);
  write_resolved_config(out, store);

  const DatasetManifest manifest = load_manifest(run.data.manifest);
  for (const auto& w : manifest.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const auto samples = load_dataset(manifest, run.train.model.in_shape);

  std::vector<AblationRowSpec> rows;
  for (const auto& name : run.ablation_rows) rows.push_back(ablation_row_by_name(name));

  const AblationTable table = run_ablation(run.train, samples, run.data.train_fractions, rows,
                                           run.train.seeds, parallel, out);
  write_text(out / "ablation.csv", table.to_csv());
  const std::string text = table.to_text();
  write_text(out / "ablation.txt", text);
  std::cout << text;
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const CommonArgs& common,
               double threshold_check) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  const fs::path out = require_out_dir(common);

  struct Column {
    std::string label;
    MetricReport invasion, meningioma;
  };
  std::vector<Column> columns;
  for (const auto& dir : run_dirs) {
    const fs::path inv_path = fs::path(dir) / "metrics_invasion.json";
    const fs::path men_path = fs::path(dir) / "metrics_meningioma.json";
    if (!fs::exists(inv_path) || !fs::exists(men_path))
      throw DataError("run directory " + dir + " lacks metrics_{invasion,meningioma}.json");
    auto read = [](const fs::path& p) {
      std::ifstream in(p);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse " + p.string() + ": " + e.what());
      }
      return j;
    };
    const nlohmann::json ji = read(inv_path), jm = read(men_path);
    Column col;
    try {
      col.invasion = MetricReport::from_json(ji);
      col.meningioma = MetricReport::from_json(jm);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("incompatible metric schema in " + dir + ": " + e.what());
    }
    const std::string method = ji.value("method", "unknown");
    const std::string scale = ji.value("scale", "unknown");
    col.label = fs::path(dir).filename().string() + " (" + method + ", " + scale + ")";
    if (threshold_check > 0.0 && std::abs(col.invasion.threshold - threshold_check) > 1e-12)
      throw ConfigError("run " + dir + " was evaluated at threshold " +
                        std::to_string(col.invasion.threshold) + ", expected " +
                        std::to_string(threshold_check));
    columns.push_back(std::move(col));
  }

  std::ostringstream csv, text;
  csv << "task,metric";
  for (const auto& c : columns) csv << ',' << c.label;
  csv << '\n';
  char buf[128];
  text << "Comparison over " << columns.size() << " run(s)\n\n";
  std::snprintf(buf, sizeof(buf), "%-30s", "");
  text << buf;
  for (const auto& c : columns) {
    std::snprintf(buf, sizeof(buf), " %-34s", c.label.c_str());
    text << buf;
  }
  text << '\n';
  const auto& names = MetricReport::metric_names();
  for (Task task : {Task::invasion, Task::meningioma}) {
    for (size_t m = 0; m < names.size(); ++m) {
      csv << to_string(task) << ',' << names[m];
      std::snprintf(buf, sizeof(buf), "%-30s", (std::string(to_string(task)) + " " + names[m]).c_str());
      text << buf;
      for (const auto& c : columns) {
        const auto vals = (task == Task::invasion ? c.invasion : c.meningioma).values_in_order();
        if (std::isnan(vals[m].value)) {
          csv << ",NA";
          std::snprintf(buf, sizeof(buf), " %-34s", "NA");
        } else {
          char num[32];
          std::snprintf(num, sizeof(num), "%.6f", vals[m].value);
          csv << ',' << num;
          std::snprintf(buf, sizeof(buf), " %-34s", num);
        }
        text << buf;
      }
      csv << '\n';
      text << '\n';
    }
  }
  write_text(out / "report.csv", csv.str());
  write_text(out / "report.txt", text.str());
  std::cout << text.str();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage = args;
  std::vector<char*> argv;
  static std::string prog = "mtcl";
  argv.push_back(prog.data());
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Task-aware contrastive multi-task learning for multi-modal 3-d volumes"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string ckpt_path, manifest_path;
  double threshold = 0.5;
  double report_threshold = 0.0;
  int parallel = 1;
  std::vector<std::string> run_dirs;

  auto add_common = [&common](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", common.config_path, "configuration file");
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--set", common.overrides, "override: section.key=value (repeatable)");
    sub->add_option("--seed", common.seed, "shorthand for model.seed and train.seeds");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset with planted signals");
  add_common(synth);
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a dataset manifest");
  add_common(train_cmd);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file");
  eval_cmd->add_option("--manifest", manifest_path, "dataset manifest");
  eval_cmd->add_option("--threshold", threshold, "decision threshold on the positive-class probability");
  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid");
  add_common(ablate);
  ablate->add_option("--parallel", parallel, "number of concurrently trained grid cells");
  CLI::App* report = app.add_subcommand("report", "merge run directories into a comparison table");
  add_common(report);
  report->add_option("runs", run_dirs, "completed run directories");
  report->add_option("--threshold", report_threshold,
                     "require every merged report to use this threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(common);
    if (train_cmd->parsed()) return cmd_train(common);
    if (eval_cmd->parsed()) return cmd_eval(common, ckpt_path, manifest_path, threshold);
    if (ablate->parsed()) return cmd_ablate(common, parallel);
    if (report->parsed()) return cmd_report(run_dirs, common, report_threshold);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}

}  // namespace mtcl
