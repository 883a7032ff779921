#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "selfcheck.hpp"

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override a config key, e.g. objective.alpha=2.0")->take_all();
  }

  dgib::cli::RunConfig resolve(const nlohmann::json& base = nlohmann::json::object()) const {
    std::optional<std::filesystem::path> path;
    if (!file.empty()) path = file;
    return dgib::cli::resolve_config(base, path, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  using namespace dgib::cli;

  CLI::App app{"dgib: disentangled generative information bottleneck for few-shot learning"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, eval_flags, probe_flags;

  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic fixture dataset (DGIBDS01)");
  gen_flags.attach(gen);
  gen->add_option("--out", gen_out, "output dataset file")->required();

  TrainPaths train_paths;
  std::string trace, resume;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint plus JSON-lines trace");
  train_flags.attach(train);
  train->add_option("--data", train_paths.data, "dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--checkpoint", train_paths.checkpoint, "checkpoint to write")->required();
  train->add_option("--trace", trace, "trace file (default <output_dir>/trace.jsonl)");
  train->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingFile);

  std::string eval_ckpt, eval_data;
  bool baseline = false;
  auto* eval = app.add_subcommand("eval", "episodic few-shot evaluation on the held-out classes");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "dataset file")->required()->check(CLI::ExistingFile);
  eval->add_flag("--baseline", baseline, "support-only prototypes, no augmentation");

  std::string probe_ckpt, probe_data, probe_out;
  auto* probe = app.add_subcommand("probe", "linear probes on the encoder means");
  probe_flags.attach(probe);
  probe->add_option("--checkpoint", probe_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  probe->add_option("--data", probe_data, "dataset file")->required()->check(CLI::ExistingFile);
  probe->add_option("--out", probe_out, "probe JSON (default <output_dir>/probe.json)");

  std::string suite, mutate = "none";
  auto* self = app.add_subcommand("selfcheck", "run the built-in numerical suites");
  self->add_option("--suite", suite, "run a single suite");
  self->add_option("--mutate", mutate)->group("");  // hidden: inject a known defect

  std::string csv_features, csv_label = "label", csv_attributes, csv_out;
  auto* csv = app.add_subcommand("import-csv", "convert CSV features (and class attributes) to DGIBDS01");
  csv->add_option("--features", csv_features, "CSV with a header row")->required()->check(CLI::ExistingFile);
  csv->add_option("--label-column", csv_label, "name of the label column");
  csv->add_option("--attributes", csv_attributes, "CSV of per-class attributes")->check(CLI::ExistingFile);
  csv->add_option("--out", csv_out, "output dataset file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded(
      [&]() -> int {
        if (*gen) {
          cmd_gen_data(gen_flags.resolve(), gen_out, std::cout);
        } else if (*train) {
          if (!trace.empty()) train_paths.trace = trace;
          if (!resume.empty()) train_paths.resume = resume;
          // A resumed run continues under the config it was started with.
          const nlohmann::json base =
              train_paths.resume ? checkpoint_config(*train_paths.resume) : nlohmann::json::object();
          cmd_train(train_flags.resolve(base), train_paths, std::cout);
        } else if (*eval) {
          cmd_eval(eval_flags.resolve(checkpoint_config(eval_ckpt)), eval_ckpt, eval_data, baseline, std::cout);
        } else if (*probe) {
          std::optional<std::filesystem::path> out;
          if (!probe_out.empty()) out = probe_out;
          cmd_probe(probe_flags.resolve(checkpoint_config(probe_ckpt)), probe_ckpt, probe_data, out, std::cout,
                    std::cerr);
        } else if (*self) {
          const Mutation m = parse_mutation(mutate);
          if (suite.empty()) return cmd_selfcheck(m, std::cout);
          const SuiteReport r = run_selfcheck_suite(suite, m);
          std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.summary << "\n";
          for (const auto& f : r.failures) std::cout << "     failing case: " << f.dump() << "\n";
          return r.passed ? kExitOk : kExitSelfcheckFailed;
        } else if (*csv) {
          std::optional<std::filesystem::path> attrs;
          if (!csv_attributes.empty()) attrs = csv_attributes;
          cmd_import_csv(csv_features, csv_label, attrs, csv_out, std::cout);
        }
        return kExitOk;
      },
      std::cerr);
}
