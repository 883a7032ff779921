#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "config.hpp"

namespace dgib::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitSelfcheckFailed = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
};

// Runs `body`, mapping library errors onto exit codes and printing the
// message to `err`.
int run_guarded(const std::function<int()>& body, std::ostream& err);

// Eval parallelism from DGIB_THREADS (default 1).
std::size_t env_threads();

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);

void cmd_import_csv(const std::filesystem::path& features, const std::string& label_column,
                    const std::optional<std::filesystem::path>& attributes, const std::filesystem::path& out,
                    std::ostream& log);

struct TrainPaths {
  std::filesystem::path data;
  std::filesystem::path checkpoint;            // written every save_interval and at the end
  std::optional<std::filesystem::path> trace;  // default <output_dir>/trace.jsonl
  std::optional<std::filesystem::path> resume;
};

void cmd_train(const RunConfig& cfg, const TrainPaths& paths, std::ostream& log);

// Writes <output_dir>/eval_<mode>_<way>w<shot>s.{json,csv} per shot count.
void cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& data,
              bool baseline, std::ostream& log);

void cmd_probe(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& data,
               const std::optional<std::filesystem::path>& out, std::ostream& log, std::ostream& warn);

// The resolved RunConfig recorded in a checkpoint.
nlohmann::json checkpoint_config(const std::filesystem::path& checkpoint);

}  // namespace dgib::cli
