#include <CLI11.hpp>

#include <iostream>

#include "goldizone/cli.hpp"
#include "goldizone/parallel.hpp"

namespace gz::cli {

namespace {

const char* describe(const std::string& name) {
  if (name == "sweep-alpha") return "curvature decomposition across initialization scales";
  if (name == "sweep-temp") return "curvature decomposition across softmax temperatures";
  if (name == "train-grid") return "gradient descent over an (alpha, eta0) grid with regime labels";
  if (name == "scatter") return "confidence, gradient and curvature over random initializations";
  if (name == "grad-similarity") return "gradient cosine between real, held-out and noise batches";
  if (name == "prior-sweep") return "gradient norm against label-prior shift";
  if (name == "uso") return "scaled run against the uniform-softmax-output dynamics";
  if (name == "precollapse") return "first-layer Hessian probe before softmax collapse";
  return "";
}

}  // namespace

int main_entry(int argc, char** argv) {
  CLI::App app{"goldizone: curvature experiments on scaled homogeneous networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<double> alpha_grid;
  std::size_t d = 0;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<CLI::App*> subs;
  for (const auto& name : command_names()) {
    CLI::App* sc = app.add_subcommand(name, describe(name));
    sc->add_option("--config", config_path, "JSON run config")->required();
    sc->add_option("--alpha-grid", alpha_grid, "comma-separated alpha values")->delimiter(',');
    sc->add_option("--d", d, "projected subspace dimension");
    sc->add_option("--seed", seed, "protocol seed");
    sc->add_option("--out-dir", out_dir, "output directory");
    subs.push_back(sc);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* chosen = nullptr;
  for (auto* sc : subs)
    if (sc->parsed()) chosen = sc;
  const std::string command = chosen->get_name();

  try {
    RunConfig config = load_config(config_path, command);
    Overrides ov;
    if (chosen->count("--alpha-grid")) ov.alpha_grid = alpha_grid;
    if (chosen->count("--d")) ov.d = d;
    if (chosen->count("--seed")) ov.seed = seed;
    if (chosen->count("--out-dir")) ov.out_dir = out_dir;
    apply_overrides(config, ov);

    const std::size_t threads = worker_count_from_env();
    const std::string started = utc_timestamp();
    const RunResult result = run(config, threads);
    for (const auto& path : write_outputs(config, result, started, threads))
      std::cout << path << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace gz::cli
