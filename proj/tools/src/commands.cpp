#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "disgenib/checkpoint.hpp"
#include "disgenib/errors.hpp"
#include "disgenib/model.hpp"
#include "disgenib/probe.hpp"

namespace dgib::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "contract error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

std::size_t env_threads() {
  const char* v = std::getenv("DGIB_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("DGIB_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

BaseNovelSplit split_for(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.data.novel_classes == 0) throw ConfigError("data.novel_classes must be >= 1");
  return split_base_novel(ds, last_classes(ds.classes(), cfg.data.novel_classes));
}

std::optional<PriorTable> prior_for(const RunConfig& cfg, const Dataset& ds) {
  if (!ds.attributes) return std::nullopt;
  return PriorTable{*ds.attributes, cfg.objective.prior_sigma};
}

ModelDims dims_for(const RunConfig& cfg, const Dataset& base) {
  ModelDims d;
  d.d_x = base.dim();
  d.d_a = cfg.model.d_a;
  d.d_z = cfg.model.d_z;
  d.hidden = cfg.model.hidden;
  d.layers = cfg.model.layers;
  d.classes = base.classes();
  if (needs_prior(cfg.objective.objective.mode)) {
    if (!base.attributes) {
      throw ConfigError("objective mode '" + to_string(cfg.objective.objective.mode) +
                        "' needs class attributes in the dataset");
    }
    d.d_a = base.attributes->cols();
  }
  d.validate();
  return d;
}

json dims_json(const ModelDims& d) {
  return {{"d_x", d.d_x}, {"d_a", d.d_a}, {"d_z", d.d_z}, {"hidden", d.hidden}, {"layers", d.layers},
          {"classes", d.classes}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  try {
    d.d_x = j.at("d_x").get<std::size_t>();
    d.d_a = j.at("d_a").get<std::size_t>();
    d.d_z = j.at("d_z").get<std::size_t>();
    d.hidden = j.at("hidden").get<std::size_t>();
    d.layers = j.at("layers").get<std::size_t>();
    d.classes = j.at("classes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint dims: ") + e.what());
  }
  d.validate();
  return d;
}

DisGenModel load_model(const Checkpoint& ck) {
  if (!ck.meta.contains("dims")) throw FormatError("checkpoint manifest has no 'dims'");
  DisGenModel model = DisGenModel::init(dims_from_json(ck.meta.at("dims")), 0);
  model.load(ck.arrays);
  return model;
}

void check_dataset_matches(const DisGenModel& model, const Dataset& ds) {
  if (ds.dim() != model.dims().d_x) {
    throw ContractError("dataset features have shape " + shape_to_string(ds.features.shape()) +
                        " but the checkpoint expects [n, " + std::to_string(model.dims().d_x) + "]");
  }
}

}  // namespace

json checkpoint_config(const fs::path& checkpoint) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  if (!ck.meta.contains("config")) throw FormatError("checkpoint manifest has no 'config'");
  return ck.meta.at("config");
}

// ---- gen-data / import-csv ------------------------------------------------

void cmd_gen_data(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const Dataset ds = synth_make(cfg.data.synth, cfg.seed);
  ensure_parent(out);
  dataset_write(ds, out);
  log << "wrote " << out.string() << ": classes=" << ds.classes() << " rows=" << ds.size() << " d_x=" << ds.dim()
      << " d_a=" << cfg.data.synth.d_a << " d_z=" << cfg.data.synth.d_z << " seed=" << cfg.seed << "\n";
}

void cmd_import_csv(const fs::path& features, const std::string& label_column,
                    const std::optional<fs::path>& attributes, const fs::path& out, std::ostream& log) {
  const Dataset ds = csv_import(features, label_column, attributes);
  ensure_parent(out);
  dataset_write(ds, out);
  log << "wrote " << out.string() << ": classes=" << ds.classes() << " rows=" << ds.size() << " d_x=" << ds.dim()
      << (ds.attributes ? " with attributes" : "") << "\n";
  for (std::size_t c = 0; c < ds.classes(); ++c) log << "  " << c << " <- " << ds.class_names[c] << "\n";
}

// ---- train ----------------------------------------------------------------

void cmd_train(const RunConfig& cfg, const TrainPaths& paths, std::ostream& log) {
  const Dataset ds = dataset_read(paths.data);
  const BaseNovelSplit split = split_for(cfg, ds);
  const Dataset& base = split.base;
  const ModelDims dims = dims_for(cfg, base);
  const ObjectiveConfig& objective = cfg.objective.objective;
  std::optional<PriorTable> priors;
  if (needs_prior(objective.mode)) priors = prior_for(cfg, base);

  json resolved = to_json(cfg);
  resolved["model"]["d_a"] = dims.d_a;

  DisGenModel model = DisGenModel::init(dims, cfg.seed);
  Trainer trainer(model, base, objective, cfg.objective.train, cfg.seed, priors);

  if (paths.resume) {
    const Checkpoint ck = read_checkpoint(*paths.resume);
    const ModelDims saved = dims_from_json(ck.meta.at("dims"));
    if (dims_json(saved) != dims_json(dims)) {
      throw ContractError("resume checkpoint dims " + dims_json(saved).dump() + " differ from " +
                          dims_json(dims).dump());
    }
    model.load(ck.arrays);
    trainer.restore_state(ck.meta.at("trainer"), ck.arrays);
    log << "resumed from " << paths.resume->string() << " at epoch " << trainer.epochs_done() << "\n";
  }

  const fs::path trace_path = paths.trace ? *paths.trace : fs::path(cfg.output_dir) / "trace.jsonl";
  ensure_parent(trace_path);
  std::ofstream trace(trace_path, paths.resume ? std::ios::app : std::ios::trunc);
  if (!trace) throw IoError("cannot open trace '" + trace_path.string() + "'");

  auto save = [&] {
    Checkpoint ck;
    ck.meta = {{"config", resolved},
               {"dims", dims_json(dims)},
               {"epoch", trainer.epochs_done()},
               {"seed", cfg.seed},
               {"trainer", trainer.state_meta()},
               {"base_classes", split.base_classes},
               {"novel_classes", split.novel_classes}};
    ck.arrays = model.snapshot();
    for (auto& a : trainer.state_arrays()) ck.arrays.push_back(std::move(a));
    ensure_parent(paths.checkpoint);
    write_checkpoint(paths.checkpoint, ck);
  };

  EpochRecord last;
  bool any = false;
  while (trainer.epochs_done() < cfg.objective.epochs) {
    last = trainer.run_epoch();
    any = true;
    trace << trace_line(last, cfg.seed, resolved).dump() << "\n";
    trace.flush();
    if (!trace) throw IoError("write to trace '" + trace_path.string() + "' failed");
    if (cfg.objective.save_interval > 0 && trainer.epochs_done() % cfg.objective.save_interval == 0) save();
  }
  save();
  if (any) {
    log << "final epoch " << last.epoch << " " << to_json(last.loss).dump() << "\n";
  } else {
    log << "no epochs to run (epoch " << trainer.epochs_done() << " of " << cfg.objective.epochs << ")\n";
  }
}

// ---- eval -----------------------------------------------------------------

void cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data, bool baseline,
              std::ostream& log) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const DisGenModel model = load_model(ck);
  const Dataset ds = dataset_read(data);
  check_dataset_matches(model, ds);
  const BaseNovelSplit split = split_for(cfg, ds);

  AugmentConfig aug = cfg.eval.augment;
  std::optional<PriorTable> priors;
  if (aug.use_prior) {
    priors = prior_for(cfg, split.novel);
    if (!priors) throw ConfigError("eval.use_prior needs class attributes in the dataset");
    if (priors->dim() != model.dims().d_a) {
      throw ContractError("attribute width " + std::to_string(priors->dim()) + " differs from checkpoint d_a " +
                          std::to_string(model.dims().d_a));
    }
  }
  const std::size_t threads = env_threads();
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  for (std::size_t shot : cfg.eval.shots) {
    const EvalSpec spec{cfg.eval.way, shot, cfg.eval.queries, cfg.eval.episodes};
    EvalReport report = eval_episodes(model, split.novel, spec, aug, baseline, priors ? &*priors : nullptr,
                                      &split.base, cfg.seed, threads);
    json j = to_json(report);
    j["run_config"] = to_json(cfg);
    j["checkpoint"] = checkpoint.string();
    const std::string stem = "eval_" + report.mode + "_" + std::to_string(spec.way) + "w" + std::to_string(shot) + "s";
    write_text(dir / (stem + ".json"), j.dump(2) + "\n");
    write_text(dir / (stem + ".csv"), accuracies_csv(report));
    char line[160];
    std::snprintf(line, sizeof(line), "%s %zu-way %zu-shot: %.2f%% +- %.2f%% over %zu episodes\n",
                  report.mode.c_str(), spec.way, shot, 100.0 * report.mean_accuracy, 100.0 * report.ci95,
                  spec.episodes);
    log << line;
  }
}

// ---- probe ----------------------------------------------------------------

void cmd_probe(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& data,
               const std::optional<fs::path>& out, std::ostream& log, std::ostream& warn) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const DisGenModel model = load_model(ck);
  const Dataset ds = dataset_read(data);
  check_dataset_matches(model, ds);
  const BaseNovelSplit split = split_for(cfg, ds);

  const ProbeResult probe = probe_disentanglement(model, split.base, ProbeConfig{}, cfg.seed);
  json j = to_json(probe);
  if (ds.truth_a && ds.truth_z) {
    const EvalSpec spec{cfg.eval.way, cfg.eval.shots.front(), cfg.eval.queries, cfg.eval.probe_episodes};
    const EvalReport r = eval_episodes(model, split.novel, spec, cfg.eval.augment, false, nullptr, &split.base,
                                       cfg.seed, env_threads());
    j["proto_cosine"] = r.fused_cosine;
    j["baseline_cosine"] = r.baseline_cosine;
  } else {
    warn << "warning: dataset has no ground-truth factors; proto_cosine omitted\n";
  }
  j["seed"] = cfg.seed;
  j["run_config"] = to_json(cfg);
  const fs::path path = out ? *out : fs::path(cfg.output_dir) / "probe.json";
  write_text(path, j.dump(2) + "\n");
  char line[160];
  std::snprintf(line, sizeof(line), "probe: acc_from_A=%.4f acc_from_Z=%.4f chance=%.4f\n", probe.acc_from_a,
                probe.acc_from_z, probe.chance);
  log << line;
}

}  // namespace dgib::cli
