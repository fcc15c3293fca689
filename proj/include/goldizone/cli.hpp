#pragma once

// Experiment driver: JSON run configs, the eight subcommands, CSV tables
// and their JSON manifests.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "goldizone/datasets.hpp"
#include "goldizone/errors.hpp"
#include "goldizone/logitmodel.hpp"
#include "goldizone/trainlab.hpp"

namespace gz::cli {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr int kSchemaVersion = 1;

/// Bad or inconsistent configuration; `field` is a JSON path like
/// "dataset.classes".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | gaussian | idx
  std::size_t classes = 4;
  std::size_t dim = 20;                 // blobs
  std::size_t per_class = 100;          // blobs
  double spread = 1.0;                  // blobs
  double radius = 3.0;                  // blobs
  std::vector<std::size_t> shape;       // gaussian sample shape
  std::size_t samples = 0;              // gaussian
  std::string images, labels;           // idx training files
  std::string test_images, test_labels; // idx, optional
  bool standardize = false;             // idx
  std::size_t limit = 0;                // idx: keep the first `limit` samples (0 = all)
  double input_scale = 1.0;             // multiplies every input
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::string command;
  std::string arch = "mlp-small";
  DatasetConfig dataset;
  std::uint64_t seed = 0;                 // projector and protocol seed
  std::vector<std::uint64_t> init_seeds;  // defaults to {seed}
  std::size_t d = 50;
  std::size_t hessian_batch = 512;
  double temperature = 1.0;
  double zone_threshold = 1.0;
  std::string out_dir = "out";

  // sweep-alpha, train-grid, precollapse, grad-similarity
  std::vector<double> alpha_grid;
  // sweep-temp
  double alpha = 1.0;
  std::vector<double> temperature_grid;
  // train-grid, uso
  std::vector<double> eta0_grid;
  double eta0 = 0.1;
  double baseline_eta0 = 0.1;
  std::size_t steps = 500;
  std::size_t dense_log_steps = 100;
  std::size_t log_every = 10;
  LabelMode label_mode = LabelMode::True;
  RegimeThresholds thresholds;
  // scatter, grad-similarity
  std::size_t n_inits = 200;
  std::size_t batch_size = 200;
  // prior-sweep
  std::size_t n_priors = 300;
  std::size_t subset_size = 400;
  std::size_t monte_carlo_samples = 10000;
  GradLawVariant grad_law_variant = GradLawVariant::RootVariance;
  // uso
  double uniformity_tol = 1e-12;

  nlohmann::json to_json() const;
};

/// Validates and fills defaults. Unknown keys are rejected.
RunConfig parse_config(const nlohmann::json& j, const std::string& command);
/// Reads and parses a JSON file (IoError if unreadable, ConfigError if malformed).
RunConfig load_config(const std::string& path, const std::string& command);

struct Overrides {
  std::optional<std::vector<double>> alpha_grid;
  std::optional<std::size_t> d;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};
void apply_overrides(RunConfig& config, const Overrides& overrides);

std::vector<std::string> command_names();

/// One output file. Cells are preformatted; empty means missing.
struct Table {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

/// 17 significant digits; "nan", "inf", "-inf" for non-finite values.
std::string fmt(double v);
std::string fmt(std::size_t v);
std::string fmt_u64(std::uint64_t v);
std::string fmt(bool v);

/// Comment row "# goldizone <name> schema=<v>", header row, data rows.
std::string render_csv(const Table& table);

struct RunResult {
  std::vector<Table> tables;
  nlohmann::json info;  // run facts for the manifest (P, L, checksum, ...)
};

/// Loads the dataset the config describes; input_scale applied.
Dataset load_dataset(const DatasetConfig& config);

/// Runs the configured command. `threads` only changes wall time.
RunResult run(const RunConfig& config, std::size_t threads);

/// Writes <out_dir>/<name>.csv and <out_dir>/<name>.manifest.json for every
/// table. Returns the CSV paths.
std::vector<std::string> write_outputs(const RunConfig& config, const RunResult& result,
                                       const std::string& started_at, std::size_t threads);

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

/// Entry point of the goldizone executable. Exit codes: 0 success, 1 runtime
/// failure, 2 config error, 3 I/O error.
int main_entry(int argc, char** argv);

}  // namespace gz::cli
