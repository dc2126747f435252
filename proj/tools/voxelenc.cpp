// voxelenc command-line interface.
//
// Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
// Results go to stdout, errors to stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxelenc/voxelenc.hpp"

namespace fs = std::filesystem;
using namespace voxelenc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

ReadOptions read_opts(bool permissive_nan) {
  return {permissive_nan ? NonFinitePolicy::zero_fill : NonFinitePolicy::reject};
}

// ---- inspect ---------------------------------------------------------------

struct InspectArgs {
  std::string path;
};

int cmd_inspect(const InspectArgs& a) {
  const fs::path p = a.path;
  if (p.extension() == ".json") {
    std::cout << manifest_summary(read_manifest(p));
    return kExitOk;
  }
  const MatrixInfo info = read_matrix_info(p);
  std::cout << "rows: " << info.rows << "\n"
            << "cols: " << info.cols << "\n"
            << "dtype: " << (info.csv ? "float64 (csv)" : to_string(info.dtype)) << "\n";
  return kExitOk;
}

// ---- fit / predict / eval --------------------------------------------------

struct FitArgs {
  std::string features, responses, out;
  double lambda = kDefaultLambda;
  std::vector<double> tune_grid;
  double val_fraction = 0.1;
  std::uint64_t seed = kDefaultSeed;
  std::string normalization = "zscore";
  std::size_t block_size = kDefaultSolveBlock;
  bool permissive_nan = false;
};

int cmd_fit(const FitArgs& a) {
  const Matrix x = read_matrix(a.features, read_opts(a.permissive_nan));
  const Matrix y = read_matrix(a.responses, read_opts(a.permissive_nan));
  const FitOptions fopts{parse_normalization(a.normalization), a.block_size};
  EncoderModel model;
  if (a.tune_grid.empty()) {
    model = fit(x, y, a.lambda, fopts);
  } else {
    TuneOptions topts{a.tune_grid, a.val_fraction, a.seed, fopts};
    const TuneResult tuned = tune_lambda(x, y, topts);
    std::cout << "lambda,validation_pc\n";
    for (const auto& [l, pc] : tuned.table) std::cout << l << ',' << pc << '\n';
    model = tuned.model;
  }
  ensure_dir(a.out);
  save_model(model, a.out);
  std::cout << "fitted " << model.feature_count() << "x" << model.target_count()
            << " weights, lambda " << model.lambda << ", solver " << model.solver.method
            << " -> " << a.out << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string model, features, out;
  bool permissive_nan = false;
};

int cmd_predict(const PredictArgs& a) {
  const EncoderModel model = load_model(a.model);
  const Matrix x = read_matrix(a.features, read_opts(a.permissive_nan));
  const Matrix yhat = predict(model, x);
  ensure_dir(a.out);
  const fs::path path = fs::path(a.out) / "predictions.vemf";
  write_matrix(yhat, path);
  std::cout << "wrote " << yhat.rows() << "x" << yhat.cols() << " predictions to " << path.string()
            << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string responses, predictions, out;
  bool permissive_zero_norm = false;
  bool permissive_nan = false;
};

int cmd_eval(const EvalArgs& a) {
  const Matrix y = read_matrix(a.responses, read_opts(a.permissive_nan));
  const Matrix yhat = read_matrix(a.predictions, read_opts(a.permissive_nan));
  const EvalResult r = evaluate(y, yhat, MetricOptions{a.permissive_zero_norm});
  std::cout << to_json(r, false).dump(2) << "\n";
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "eval.json", to_json(r, true).dump(2) + "\n");
    write_mae_csv(r.mae_per_voxel, fs::path(a.out) / "mae.csv");
  }
  return kExitOk;
}

// ---- experiments -------------------------------------------------------------

struct ExperimentArgs {
  std::string config;
  std::string manifest;
  std::size_t k = kDefaultFolds;
  std::uint64_t seed = kDefaultSeed;
  double lambda = kDefaultLambda;
  std::vector<double> tune_grid;
  double val_fraction = 0.1;
  std::string normalization = "zscore";
  std::string model, layer;
  std::vector<std::string> rois, subjects, cells, directions;
  bool no_group_by_concept = false;
  std::size_t block_size = kDefaultSolveBlock;
  bool permissive_zero_norm = false;
  bool permissive_nan = false;
  std::string out;
};

struct ExperimentCommand {
  CLI::App* app = nullptr;
  ExperimentKind kind = ExperimentKind::cv;
  ExperimentArgs args;
};

void add_experiment_options(ExperimentCommand& cmd) {
  CLI::App* app = cmd.app;
  auto& a = cmd.args;
  app->add_option("--config", a.config, "Experiment config JSON (flags override its values)");
  app->add_option("--manifest", a.manifest, "Dataset manifest JSON");
  app->add_option("--k", a.k, "Number of CV folds")->check(CLI::Range(2, 1000000));
  app->add_option("--seed", a.seed, "Base seed for fold assignment");
  app->add_option("--lambda", a.lambda, "Fixed ridge penalty")->check(CLI::NonNegativeNumber);
  app->add_option("--tune-grid", a.tune_grid,
                  "Tune lambda per ROI over this comma-separated grid "
                  "(e.g. 0.01,0.1,1,10,100) instead of using --lambda")
      ->delimiter(',');
  app->add_option("--val-fraction", a.val_fraction, "Validation hold-out fraction when tuning");
  app->add_option("--normalization", a.normalization, "zscore | none")
      ->check(CLI::IsMember({"zscore", "none"}));
  app->add_option("--model", a.model, "Feature model name from the manifest");
  app->add_option("--layer", a.layer,
                  cmd.kind == ExperimentKind::sweep ? "Restrict the sweep to one layer (default all-layers)"
                                                    : "Feature layer name from the manifest");
  app->add_option("--rois", a.rois, "Comma-separated ROI subset")->delimiter(',');
  app->add_option("--subjects", a.subjects, "Comma-separated subject subset")->delimiter(',');
  if (cmd.kind == ExperimentKind::cross)
    app->add_option("--cells", a.cells, "Comma-separated cell subset, e.g. CI,SS")->delimiter(',');
  if (cmd.kind == ExperimentKind::concept_transfer)
    app->add_option("--directions", a.directions,
                    "Comma-separated subset of concrete->abstract, abstract->concrete")
        ->delimiter(',');
  app->add_flag("--no-group-by-concept", a.no_group_by_concept,
                "Fold per stimulus even when concept labels exist");
  app->add_option("--block-size", a.block_size, "Voxel columns per solve block");
  app->add_flag("--permissive-zero-norm", a.permissive_zero_norm,
                "Treat cosD with a zero-norm row as 1 instead of failing");
  app->add_flag("--permissive-nan", a.permissive_nan, "Zero-fill NaN/Inf in inputs");
  app->add_option("--out", a.out, "Output directory");
}

ExperimentConfig build_config(const ExperimentCommand& cmd) {
  const auto& a = cmd.args;
  const CLI::App* app = cmd.app;
  ExperimentConfig c;
  if (!a.config.empty()) {
    const fs::path cfg = a.config;
    const std::string text = detail::read_file_bytes(cfg);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    c = config_from_json(j, cfg.parent_path());
  }
  c.kind = cmd.kind;
  auto given = [&](const char* name) { return app->count(name) > 0; };
  if (given("--manifest")) c.manifest_path = a.manifest;
  if (given("--k")) c.k = a.k;
  if (given("--seed")) c.seed = a.seed;
  if (given("--lambda")) c.lambda = a.lambda;
  if (given("--tune-grid")) c.tune_grid = a.tune_grid;
  if (given("--val-fraction")) c.val_fraction = a.val_fraction;
  if (given("--normalization")) c.normalization = parse_normalization(a.normalization);
  if (given("--model")) c.model = a.model;
  if (given("--layer")) c.layer = a.layer;
  if (given("--rois")) c.rois = a.rois;
  if (given("--subjects")) c.subjects = a.subjects;
  if (cmd.kind == ExperimentKind::cross && given("--cells")) c.cells = a.cells;
  if (cmd.kind == ExperimentKind::concept_transfer && given("--directions")) c.directions = a.directions;
  if (given("--no-group-by-concept")) c.group_by_concept = false;
  if (given("--block-size")) c.block_size = a.block_size;
  if (given("--permissive-zero-norm")) c.permissive_zero_norm = true;
  if (given("--permissive-nan")) c.permissive_nan = true;
  if (given("--out")) c.out_dir = a.out;
  detail::require(!c.manifest_path.empty(), "no manifest given (--manifest or config 'manifest')");
  detail::require(!c.out_dir.empty(), "no output directory given (--out or config 'out')");
  return c;
}

int cmd_experiment(const ExperimentCommand& cmd) {
  const ExperimentConfig c = build_config(cmd);
  const EvalReport report = run_experiment(c);
  write_report(report, c.out_dir);
  std::cout << "roi,layer,cell,two_v_two,pearson,mean_mae\n";
  for (const auto& a : report.aggregates) {
    if (a.level != "subject_mean") continue;
    std::cout << a.roi << ',' << a.layer << ',' << a.cell << ',' << a.two_v_two << ','
              << a.pearson << ',' << a.mean_mae << '\n';
  }
  for (const auto& b : report.best_layers)
    std::cout << "best layer for " << b.roi << " (" << b.cell << "): " << b.layer << " (PC "
              << b.pearson << ")\n";
  std::cout << "wrote " << (c.out_dir / "report.json").string() << "\n";
  return kExitOk;
}

// ---- ttest -------------------------------------------------------------------

struct TtestArgs {
  std::vector<std::string> reports;
  std::vector<std::string> pairs;
  std::string metric = "pearson";
  std::string layer, cell;
  std::vector<std::string> rois;
  bool unpaired = false;
  std::string format = "csv";
  std::string out;
};

int cmd_ttest(const TtestArgs& a) {
  ScoreTable scores;
  std::vector<std::string> roi_order;
  for (const auto& path : a.reports) {
    const EvalReport r = load_report(path);
    collect_scores(r, a.metric, scores, a.layer, a.cell);
    for (const auto& row : r.aggregates)
      if (row.level == "fold_mean" &&
          std::find(roi_order.begin(), roi_order.end(), row.roi) == roi_order.end())
        roi_order.push_back(row.roi);
  }
  if (!a.rois.empty()) roi_order = a.rois;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& p : a.pairs) {
    const auto colon = p.find(':');
    detail::require(colon != std::string::npos && colon > 0 && colon + 1 < p.size(),
                    "pair '" + p + "' must look like ModelA:ModelB");
    pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
  }
  const SignificanceTable table = significance_table(scores, pairs, roi_order, a.metric, !a.unpaired);
  std::cout << (a.format == "text" ? to_text(table) : to_csv(table));
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "pvalues.csv", to_csv(table));
    write_text(fs::path(a.out) / "pvalues.txt", to_text(table));
    write_text(fs::path(a.out) / "pvalues.json", to_json(table).dump(2) + "\n");
  }
  return kExitOk;
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 1000, d = 50, v = 200;
  double sigma = 0.1;
  std::uint64_t seed = 7;
  std::size_t rois = 1;
  std::size_t layers = 1;
  std::size_t true_layer = 1;
  std::string dtype = "float64";
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  detail::require(a.rois >= 1 && a.rois <= a.v, "--rois must be in [1, v]");
  detail::require(a.layers >= 1, "--layers must be >= 1");
  detail::require(a.true_layer >= 1 && a.true_layer <= a.layers, "--true-layer must be in [1, layers]");
  SynthData data = generate(SynthSpec{a.n, a.d, a.v, a.sigma, a.seed});
  const Dtype dtype = a.dtype == "float32" ? Dtype::float32 : Dtype::float64;
  const fs::path out = a.out;
  ensure_dir(out);

  nlohmann::json subject;
  subject["name"] = "synth";
  subject["n_stimuli"] = a.n;
  subject["response_path"] = "Y.vemf";
  nlohmann::json rois = nlohmann::json::array();
  const std::size_t base = a.v / a.rois;
  const std::size_t extra = a.v % a.rois;
  std::size_t start = 0;
  for (std::size_t r = 0; r < a.rois; ++r) {
    const std::size_t count = base + (r < extra ? 1 : 0);
    rois.push_back({{"name", "roi" + std::to_string(r + 1)}, {"start", start}, {"count", count}});
    start += count;
  }
  subject["rois"] = rois;
  nlohmann::json features = nlohmann::json::array();
  CounterRng noise(mix64(a.seed ^ 0x6E6F697365ULL));
  for (std::size_t l = 1; l <= a.layers; ++l) {
    const std::string name = a.layers == 1 ? "X.vemf" : "X_L" + std::to_string(l) + ".vemf";
    Matrix layer = l == a.true_layer ? data.x : normal_matrix(a.n, a.d, noise);
    layer.set_dtype(dtype);
    write_matrix(layer, out / name);
    features.push_back({{"model", "synth"}, {"layer", "L" + std::to_string(l)}, {"path", name}});
  }
  subject["features"] = features;
  data.y.set_dtype(dtype);
  data.w_true.set_dtype(dtype);
  write_matrix(data.y, out / "Y.vemf");
  write_matrix(data.w_true, out / "W_true.vemf");
  nlohmann::json manifest;
  manifest["subjects"] = nlohmann::json::array({subject});
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote X (" << a.n << "x" << a.d << "), Y (" << a.n << "x" << a.v << "), W_true ("
            << a.d << "x" << a.v << ") and manifest.json to " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelenc: ridge-regression brain encoding models and their evaluation "
               "(2V2 accuracy, Pearson correlation, MAE, t-tests)"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", std::string(kVersion));
  std::size_t threads = 0;
  app.add_option("--threads", threads,
                 "Worker threads (default: VOXELENC_THREADS, else logical cores)");

  InspectArgs inspect;
  auto* sub_inspect = app.add_subcommand("inspect", "Print shape and dtype of a matrix file, or summarize a manifest");
  sub_inspect->add_option("path", inspect.path, "VEMF/CSV matrix or manifest .json")->required();

  FitArgs fit_args;
  auto* sub_fit = app.add_subcommand("fit", "Fit a multi-target ridge model");
  sub_fit->add_option("--features", fit_args.features, "Feature matrix X (N x D)")->required();
  sub_fit->add_option("--responses", fit_args.responses, "Response matrix Y (N x V)")->required();
  sub_fit->add_option("--lambda", fit_args.lambda, "Ridge penalty (default 1.0)")->check(CLI::NonNegativeNumber);
  sub_fit->add_option("--tune-grid", fit_args.tune_grid, "Comma-separated lambda grid to tune over")
      ->delimiter(',');
  sub_fit->add_option("--val-fraction", fit_args.val_fraction, "Validation hold-out fraction when tuning");
  sub_fit->add_option("--seed", fit_args.seed, "Seed for the validation hold-out");
  sub_fit->add_option("--normalization", fit_args.normalization, "zscore | none")
      ->check(CLI::IsMember({"zscore", "none"}));
  sub_fit->add_option("--block-size", fit_args.block_size, "Voxel columns per solve block");
  sub_fit->add_flag("--permissive-nan", fit_args.permissive_nan, "Zero-fill NaN/Inf in inputs");
  sub_fit->add_option("--out", fit_args.out, "Model directory (weights.vemf + model.json)")->required();

  PredictArgs predict_args;
  auto* sub_predict = app.add_subcommand("predict", "Apply a fitted model to features");
  sub_predict->add_option("--model", predict_args.model, "Model directory from `fit`")->required();
  sub_predict->add_option("--features", predict_args.features, "Feature matrix X (M x D)")->required();
  sub_predict->add_flag("--permissive-nan", predict_args.permissive_nan, "Zero-fill NaN/Inf in inputs");
  sub_predict->add_option("--out", predict_args.out, "Output directory (predictions.vemf)")->required();

  EvalArgs eval_args;
  auto* sub_eval = app.add_subcommand("eval", "Score predictions: 2V2, Pearson, per-voxel MAE");
  sub_eval->add_option("--responses", eval_args.responses, "True responses Y (N x V)")->required();
  sub_eval->add_option("--predictions", eval_args.predictions, "Predicted responses (N x V)")->required();
  sub_eval->add_flag("--permissive-zero-norm", eval_args.permissive_zero_norm,
                     "Treat cosD with a zero-norm row as 1 instead of failing");
  sub_eval->add_flag("--permissive-nan", eval_args.permissive_nan, "Zero-fill NaN/Inf in inputs");
  sub_eval->add_option("--out", eval_args.out, "Optional directory for eval.json and mae.csv");

  std::vector<ExperimentCommand> experiments(4);
  const std::pair<const char*, const char*> experiment_help[] = {
      {"cv", "K-fold cross-validation per subject and ROI"},
      {"cross", "Train on one sub-dataset, test on each (CC, CI, ..., SS cells)"},
      {"concept", "Concrete->abstract and abstract->concrete transfer"},
      {"sweep", "K-fold CV for every layer of one model; reports the best layer per ROI"}};
  const ExperimentKind kinds[] = {ExperimentKind::cv, ExperimentKind::cross,
                                  ExperimentKind::concept_transfer, ExperimentKind::sweep};
  for (std::size_t i = 0; i < 4; ++i) {
    experiments[i].kind = kinds[i];
    experiments[i].app = app.add_subcommand(experiment_help[i].first, experiment_help[i].second);
    add_experiment_options(experiments[i]);
  }

  TtestArgs ttest_args;
  auto* sub_ttest = app.add_subcommand("ttest", "Two-tailed t-tests between models across subjects, per ROI");
  sub_ttest->add_option("--reports", ttest_args.reports, "Comma-separated run directories or report.json files")
      ->delimiter(',')
      ->required();
  sub_ttest->add_option("--pair", ttest_args.pairs, "Model pair ModelA:ModelB (repeatable)")->required();
  sub_ttest->add_option("--metric", ttest_args.metric, "pearson | two_v_two")
      ->check(CLI::IsMember({"pearson", "two_v_two"}));
  sub_ttest->add_option("--layer", ttest_args.layer, "Layer to compare when reports hold several");
  sub_ttest->add_option("--cell", ttest_args.cell, "Cell to compare when reports hold several");
  sub_ttest->add_option("--rois", ttest_args.rois, "Comma-separated ROI columns, in order")->delimiter(',');
  sub_ttest->add_flag("--unpaired", ttest_args.unpaired, "Pooled two-sample test instead of paired");
  sub_ttest->add_option("--format", ttest_args.format, "csv | text")->check(CLI::IsMember({"csv", "text"}));
  sub_ttest->add_option("--out", ttest_args.out, "Optional directory for pvalues.{csv,txt,json}");

  SynthArgs synth_args;
  auto* sub_synth = app.add_subcommand("synth", "Write a synthetic linear dataset (VEMF files + manifest)");
  sub_synth->add_option("--n", synth_args.n, "Stimuli")->check(CLI::PositiveNumber);
  sub_synth->add_option("--d", synth_args.d, "Feature dimension")->check(CLI::PositiveNumber);
  sub_synth->add_option("--v", synth_args.v, "Voxels")->check(CLI::PositiveNumber);
  sub_synth->add_option("--sigma", synth_args.sigma, "Noise standard deviation")->check(CLI::NonNegativeNumber);
  sub_synth->add_option("--seed", synth_args.seed, "Generator seed");
  sub_synth->add_option("--rois", synth_args.rois, "Split voxels into this many equal ROIs");
  sub_synth->add_option("--layers", synth_args.layers, "Feature layers (others are pure noise)");
  sub_synth->add_option("--true-layer", synth_args.true_layer, "1-based layer carrying the signal");
  sub_synth->add_option("--dtype", synth_args.dtype, "float32 | float64")
      ->check(CLI::IsMember({"float32", "float64"}));
  sub_synth->add_option("--out", synth_args.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (threads > 0) set_threads(threads);

  try {
    if (sub_inspect->parsed()) return cmd_inspect(inspect);
    if (sub_fit->parsed()) return cmd_fit(fit_args);
    if (sub_predict->parsed()) return cmd_predict(predict_args);
    if (sub_eval->parsed()) return cmd_eval(eval_args);
    for (const auto& e : experiments)
      if (e.app->parsed()) return cmd_experiment(e);
    if (sub_ttest->parsed()) return cmd_ttest(ttest_args);
    if (sub_synth->parsed()) return cmd_synth(synth_args);
  } catch (const IoError& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "error (validation): " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  std::cerr << app.help();
  return kExitValidation;
}
