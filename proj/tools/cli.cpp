#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pdrl/baselines.hpp"
#include "pdrl/core.hpp"
#include "pdrl/error.hpp"
#include "pdrl/eval.hpp"
#include "pdrl/io.hpp"
#include "pdrl/pdrl.hpp"
#include "pdrl/scores.hpp"
#include "pdrl/synthdata.hpp"

namespace pdrl::cli {

namespace {

namespace fs = std::filesystem;

struct RunConfig {
  std::vector<std::string> data;
  std::string val;
  std::string out;
  std::string model;
  std::vector<std::string> scores;
  std::string head;
  std::string method;
  std::string target = "force";
  std::string aggregate = "mean";
  std::string scorer;
  std::string history;
  std::size_t k = baselines::kDefaultK;
  std::size_t components = baselines::kDefaultComponents;
  std::size_t components_pca = 2;
  std::uint64_t seed = 0;
  mlp::TrainSchedule schedule;
  std::size_t hidden = heads::kDefaultHiddenWidth;
  double quantile = eval::kDefaultLowQuantile;
  bool no_standardize = false;
  bool per_structure = false;
  bool ood_only = false;
  synth::SynthConfig synth;
};

std::string file_stem(const std::string& path) { return fs::path(path).stem().string(); }

const std::string& single_data(const RunConfig& cfg) {
  if (cfg.data.size() != 1) throw ValidationError("exactly one --data file is required");
  return cfg.data.front();
}

nlohmann::json read_json_file(const std::string& path) {
  const auto text = io::read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": malformed JSON: " + e.what());
  }
}

void write_json(const std::string& path, const nlohmann::ordered_json& j) {
  io::write_text_atomic(path, j.dump(2) + "\n");
}

/// Appends `--key value` pairs from a JSON config for every key not given on the command line.
std::vector<std::string> apply_config(std::vector<std::string> args) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end()) return args;
  if (std::next(it) == args.end()) throw ValidationError("--config needs a path");
  const std::string path = *std::next(it);
  args.erase(it, std::next(it, 2));
  const auto config = read_json_file(path);
  if (!config.is_object()) throw ValidationError(path + ": config must be a JSON object");

  for (const auto& [key, value] : config.items()) {
    const std::string flag = "--" + key;
    if (std::find(args.begin(), args.end(), flag) != args.end()) continue;
    auto push = [&](const nlohmann::json& v) {
      args.push_back(flag);
      args.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    };
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) push(v);
    } else {
      push(value);
    }
  }
  return args;
}

int run_gen(const RunConfig& cfg, std::ostream& out) {
  if (cfg.out.empty()) throw ValidationError("--out directory is required");
  auto synth_cfg = cfg.synth;
  synth_cfg.seed = cfg.seed;
  const auto data = synth::generate_synthetic(synth_cfg);
  synth::write_synthetic(cfg.out, data);
  out << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size() << "/"
      << data.ood.size() << " structures to " << cfg.out << "\n";
  return kExitOk;
}

int run_train(const RunConfig& cfg, std::ostream& out) {
  if (cfg.head.empty()) throw ValidationError("--head is required");
  if (cfg.val.empty() || cfg.out.empty()) throw ValidationError("--data, --val and --out are required");
  const auto kind = heads::parse_head_kind(cfg.head);
  const auto train = load_dataset(single_data(cfg));
  const auto val = load_dataset(cfg.val);
  if (train.empty() || val.empty()) throw ValidationError("training and validation files must be nonempty");

  heads::PdrlOptions options;
  options.schedule = cfg.schedule;
  options.hidden_width = cfg.hidden;
  options.standardize = !cfg.no_standardize;
  const auto result =
      heads::train_pdrl(compute_residuals(train), compute_residuals(val), kind, options, cfg.seed);

  write_json(cfg.out, heads::to_json(result.model));
  if (!cfg.history.empty()) {
    std::string csv = "epoch,train_mse,val_mse,lr\n";
    for (const auto& h : result.history)
      csv += std::to_string(h.epoch) + ',' + io::format_double(h.train_mse) + ',' + io::format_double(h.val_mse) +
             ',' + io::format_double(h.lr) + '\n';
    io::write_text_atomic(cfg.history, csv);
  }
  const auto& last = result.history.back();
  out << "trained " << cfg.head << " for " << last.epoch << " epochs, final lr " << last.lr << "\n";
  return kExitOk;
}

int run_baseline(const RunConfig& cfg, std::ostream& out) {
  if (cfg.out.empty()) throw ValidationError("--out is required");
  const auto residuals = compute_residuals(load_dataset(single_data(cfg)));
  if (cfg.method == "knn") {
    write_json(cfg.out, baselines::to_json(baselines::knn_fit(residuals, cfg.k, !cfg.no_standardize)));
  } else if (cfg.method == "gmm") {
    const auto model = baselines::gmm_fit(residuals, cfg.components, cfg.seed, !cfg.no_standardize);
    write_json(cfg.out, baselines::to_json(model));
    out << "EM iterations: " << model.log_likelihood_trace.size() << "\n";
  } else {
    throw ValidationError("--method must be knn or gmm");
  }
  return kExitOk;
}

int run_score(const RunConfig& cfg, std::ostream&) {
  if (cfg.model.empty() || cfg.out.empty()) throw ValidationError("--model and --out are required");
  const auto j = read_json_file(cfg.model);
  const auto records = load_dataset(single_data(cfg));
  const auto type = j.value("type", std::string());
  UncertaintyReport report;
  if (type == "pdrl")
    report = score_dataset(heads::pdrl_from_json(j), records);
  else if (type == "knn")
    report = score_dataset(baselines::knn_from_json(j), records);
  else if (type == "gmm")
    report = score_dataset(baselines::gmm_from_json(j), records);
  else
    throw ValidationError(cfg.model + ": unknown model type '" + type + "'");
  save_report(cfg.out, report);
  return kExitOk;
}

int run_ensemble_score(const RunConfig& cfg, std::ostream&) {
  if (cfg.out.empty()) throw ValidationError("--out is required");
  save_report(cfg.out, ensemble_score_dataset(load_dataset(single_data(cfg))));
  return kExitOk;
}

void write_reports(const std::string& path, const std::vector<eval::EvalReport>& reports, std::ostream& out) {
  io::write_text_atomic(path, eval::reports_to_csv(reports));
  fs::path json_path(path);
  json_path.replace_extension(".json");
  write_json(json_path.string(), eval::reports_to_json(reports));
  out << eval::reports_to_csv(reports);
}

int run_eval(const RunConfig& cfg, std::ostream& out) {
  if (cfg.scores.size() != 1) throw ValidationError("exactly one --scores file is required");
  if (cfg.out.empty()) throw ValidationError("--out is required");
  const auto records = load_dataset(single_data(cfg));
  eval::IdEvalOptions options;
  options.scorer = cfg.scorer.empty() ? file_stem(cfg.scores.front()) : cfg.scorer;
  options.split = records.empty() || records.front().split.empty() ? file_stem(single_data(cfg)) : records.front().split;
  options.aggregate = parse_aggregate(cfg.aggregate);
  options.per_structure_force = cfg.per_structure;
  options.low_quantile = cfg.quantile;
  const auto [rho, auc] = eval::run_id_eval(load_report(cfg.scores.front()), records,
                                            eval::parse_target(cfg.target), options);
  write_reports(cfg.out, {rho, auc}, out);
  return kExitOk;
}

int run_ood(const RunConfig& cfg, std::ostream& out) {
  if (cfg.data.size() < 2) throw ValidationError("ood needs --data for the ID set followed by at least one OOD set");
  if (cfg.scores.size() != cfg.data.size()) throw ValidationError("give one --scores file per --data file");
  if (cfg.out.empty()) throw ValidationError("--out is required");
  const auto how = parse_aggregate(cfg.aggregate);

  auto side_of = [&](std::size_t i, std::vector<double>& scores, std::vector<double>& errors,
                     std::vector<std::string>* tags) {
    const auto records = load_dataset(cfg.data[i]);
    const eval::ScoreIndex index(load_report(cfg.scores[i]));
    const auto errs = eval::structure_force_errors(records, how);
    for (std::size_t r = 0; r < records.size(); ++r) {
      scores.push_back(index.structure_score(records[r], how, true));
      errors.push_back(errs[r]);
      if (tags) tags->push_back(records[r].split.empty() ? file_stem(cfg.data[i]) : records[r].split);
    }
  };

  std::vector<double> id_scores, id_errors;
  side_of(0, id_scores, id_errors, nullptr);

  std::vector<eval::OodSide> sides;
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 1; i < cfg.data.size(); ++i) {
    std::vector<double> scores, errors;
    std::vector<std::string> tags;
    side_of(i, scores, errors, &tags);
    for (std::size_t r = 0; r < scores.size(); ++r) {
      auto [it, inserted] = slot.try_emplace(tags[r], sides.size());
      if (inserted) sides.push_back({tags[r], {}, {}});
      sides[it->second].scores.push_back(scores[r]);
      sides[it->second].errors.push_back(errors[r]);
    }
  }
  eval::OodOptions options;
  options.scorer = cfg.scorer.empty() ? file_stem(cfg.scores.front()) : cfg.scorer;
  options.ood_only_spearman = cfg.ood_only;
  write_reports(cfg.out, eval::run_ood_eval(id_scores, id_errors, sides, options), out);
  return kExitOk;
}

int run_pca(const RunConfig& cfg, std::ostream&) {
  if (cfg.data.empty()) throw ValidationError("pca needs --data for the training set");
  if (cfg.out.empty()) throw ValidationError("--out is required");
  std::vector<ResidualDataset> residuals;
  std::vector<std::string> names;
  for (const auto& path : cfg.data) {
    const auto records = load_dataset(path);
    if (records.empty()) throw ValidationError(path + ": no records");
    names.push_back(records.front().split.empty() ? file_stem(path) : records.front().split);
    residuals.push_back(compute_residuals(records));
  }
  const auto model = eval::pca_fit(residuals.front(), !cfg.no_standardize);
  if (cfg.components_pca == 0 || cfg.components_pca > residuals.front().d_desc)
    throw ValidationError("--components-pca must lie in [1, d_desc]");
  std::vector<eval::NamedResiduals> sets;
  for (std::size_t i = 0; i < residuals.size(); ++i) sets.push_back({names[i], &residuals[i]});
  std::vector<UncertaintyReport> reports;
  for (const auto& path : cfg.scores) reports.push_back(load_report(path));
  io::write_text_atomic(cfg.out, eval::pca_table_csv(model, sets, cfg.components_pca, reports));
  return kExitOk;
}

void add_schedule_flags(CLI::App* app, RunConfig& cfg) {
  app->add_option("--batch-size", cfg.schedule.batch_size, "Batch size (atoms for force heads, structures for energy heads)");
  app->add_option("--lr", cfg.schedule.initial_lr, "Initial learning rate");
  app->add_option("--patience", cfg.schedule.patience, "Epochs without improvement before halving the learning rate");
  app->add_option("--max-epochs", cfg.schedule.max_epochs, "Epoch limit");
  app->add_option("--min-lr", cfg.schedule.min_lr, "Stop once the learning rate falls below this");
  app->add_option("--hidden", cfg.hidden, "Hidden layer width");
  app->add_option("--history", cfg.history, "Optional CSV of per-epoch losses and learning rates");
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Residual-learning uncertainty for interatomic potentials", "pdrl"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "Generate synthetic train/val/test/ood datasets");
  gen->add_option("--out", cfg.out, "Output directory")->required();
  gen->add_option("--seed", cfg.seed);
  gen->add_option("--d-desc", cfg.synth.d_desc);
  gen->add_option("--n-train", cfg.synth.n_train);
  gen->add_option("--n-val", cfg.synth.n_val);
  gen->add_option("--n-test", cfg.synth.n_test);
  gen->add_option("--n-ood", cfg.synth.n_ood);
  gen->add_option("--atoms-min", cfg.synth.atoms_min);
  gen->add_option("--atoms-max", cfg.synth.atoms_max);
  gen->add_option("--ood-shift", cfg.synth.ood_shift);
  gen->add_option("--noise-scale", cfg.synth.noise_scale);
  gen->add_option("--ensemble-members", cfg.synth.ensemble_members);

  auto* train = app.add_subcommand("train", "Train a residual head");
  train->add_option("--head", cfg.head, "e-norm | e-diff | f-norm | f-diff")->required();
  train->add_option("--data", cfg.data, "Training dataset")->required();
  train->add_option("--val", cfg.val, "Validation dataset")->required();
  train->add_option("--out", cfg.out, "Model output path")->required();
  train->add_option("--seed", cfg.seed);
  train->add_flag("--no-standardize", cfg.no_standardize, "Feed raw descriptors");
  add_schedule_flags(train, cfg);

  auto* baseline = app.add_subcommand("baseline", "Fit a kNN or GMM baseline");
  baseline->add_option("--method", cfg.method, "knn | gmm")->required();
  baseline->add_option("--data", cfg.data, "Training dataset")->required();
  baseline->add_option("--out", cfg.out, "Model output path")->required();
  baseline->add_option("--k", cfg.k, "Neighbours for knn");
  baseline->add_option("--components", cfg.components, "Mixture components for gmm");
  baseline->add_option("--seed", cfg.seed);
  baseline->add_flag("--no-standardize", cfg.no_standardize, "Feed raw descriptors");

  auto* score = app.add_subcommand("score", "Score a dataset with a saved model");
  score->add_option("--model", cfg.model)->required();
  score->add_option("--data", cfg.data)->required();
  score->add_option("--out", cfg.out)->required();

  auto* ensemble = app.add_subcommand("ensemble-score", "Disagreement over ensemble predictions in the dataset");
  ensemble->add_option("--data", cfg.data)->required();
  ensemble->add_option("--out", cfg.out)->required();

  auto* evaluate = app.add_subcommand("eval", "Spearman and AUC on in-domain data");
  evaluate->add_option("--scores", cfg.scores)->required();
  evaluate->add_option("--data", cfg.data)->required();
  evaluate->add_option("--out", cfg.out)->required();
  evaluate->add_option("--target", cfg.target, "energy | force");
  evaluate->add_option("--quantile", cfg.quantile, "Fraction of lowest errors labelled low-error");
  evaluate->add_option("--aggregate", cfg.aggregate, "mean | max over atoms");
  evaluate->add_option("--scorer", cfg.scorer, "Name recorded in the report (default: scores file stem)");
  evaluate->add_flag("--per-structure", cfg.per_structure, "Force target: pair structure aggregates, not atoms");

  auto* ood = app.add_subcommand("ood", "OOD detection: first --data is in-domain, the rest OOD");
  ood->add_option("--data", cfg.data)->required();
  ood->add_option("--scores", cfg.scores)->required();
  ood->add_option("--out", cfg.out)->required();
  ood->add_option("--aggregate", cfg.aggregate, "mean | max over atoms");
  ood->add_option("--scorer", cfg.scorer);
  ood->add_flag("--ood-only", cfg.ood_only, "Spearman over OOD structures only");

  auto* pca = app.add_subcommand("pca", "Project descriptors on the training principal axes");
  pca->add_option("--data", cfg.data, "Training set first, then any others")->required();
  pca->add_option("--scores", cfg.scores, "Score tables to attach as uncertainty");
  pca->add_option("--components-pca", cfg.components_pca);
  pca->add_option("--out", cfg.out)->required();
  pca->add_flag("--no-standardize", cfg.no_standardize);

  try {
    auto args = apply_config(raw_args);
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n";
      auto subs = app.get_subcommands();
      err << (subs.empty() ? app.help() : subs.front()->help());
      return kExitValidation;
    }

    if (gen->parsed()) return run_gen(cfg, out);
    if (train->parsed()) return run_train(cfg, out);
    if (baseline->parsed()) return run_baseline(cfg, out);
    if (score->parsed()) return run_score(cfg, out);
    if (ensemble->parsed()) return run_ensemble_score(cfg, out);
    if (evaluate->parsed()) return run_eval(cfg, out);
    if (ood->parsed()) return run_ood(cfg, out);
    if (pca->parsed()) return run_pca(cfg, out);
    err << app.help();
    return kExitValidation;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace pdrl::cli
