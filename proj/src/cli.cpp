#include "goldizone/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "goldizone/diffengine.hpp"
#include "goldizone/parallel.hpp"
#include "goldizone/spectra.hpp"

namespace gz::cli {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string> kCommands = {"sweep-alpha", "sweep-temp",      "train-grid",
                                            "scatter",     "grad-similarity", "prior-sweep",
                                            "uso",         "precollapse"};

std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t n) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(std::pow(10.0, lo_exp + (hi_exp - lo_exp) * static_cast<double>(i) /
                                              static_cast<double>(n - 1)));
  return out;
}

// ---- JSON reading with field paths ---------------------------------------

class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_size(*v, path(key));
  }
  void read_u64(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_u64(*v, path(key));
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path(key), "expected an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number())
          throw ConfigError(path(key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back((*v)[i].get<double>());
      }
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path(key), "expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_size((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
    }
  }
  void read_u64s(const std::string& key, std::vector<std::uint64_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(path(key), "expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(as_u64((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
  }

 private:
  static std::uint64_t as_u64(const json& v, const std::string& p) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0)
      return static_cast<std::uint64_t>(v.get<long long>());
    throw ConfigError(p, "expected a non-negative integer");
  }
  static std::size_t as_size(const json& v, const std::string& p) {
    return static_cast<std::size_t>(as_u64(v, p));
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

void require_positive_grid(const std::vector<double>& grid, const std::string& field) {
  require(!grid.empty(), field, "must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i)
    require(std::isfinite(grid[i]) && grid[i] > 0.0, field + "[" + std::to_string(i) + "]",
            "must be a positive finite number");
}

void validate(RunConfig& c) {
  const auto archs = known_architectures();
  require(std::find(archs.begin(), archs.end(), c.arch) != archs.end(), "arch",
          "unknown architecture '" + c.arch + "'");
  const auto& ds = c.dataset;
  require(ds.kind == "blobs" || ds.kind == "gaussian" || ds.kind == "idx", "dataset.kind",
          "must be one of blobs, gaussian, idx");
  require(ds.classes >= 2, "dataset.classes", "must be >= 2");
  if (ds.kind == "blobs") {
    require(ds.dim >= 1, "dataset.dim", "must be >= 1");
    require(ds.per_class >= 2, "dataset.per_class", "must be >= 2");
    require(std::isfinite(ds.spread) && ds.spread >= 0.0, "dataset.spread", "must be >= 0");
    require(std::isfinite(ds.radius) && ds.radius >= 0.0, "dataset.radius", "must be >= 0");
  } else if (ds.kind == "gaussian") {
    require(!ds.shape.empty(), "dataset.shape", "must not be empty");
    require(ds.samples >= 2, "dataset.samples", "must be >= 2");
  } else {
    require(!ds.images.empty(), "dataset.images", "is required for idx data");
    require(!ds.labels.empty(), "dataset.labels", "is required for idx data");
    require(ds.test_images.empty() == ds.test_labels.empty(), "dataset.test_images",
            "test_images and test_labels go together");
  }
  require(std::isfinite(ds.input_scale) && ds.input_scale > 0.0, "dataset.input_scale",
          "must be positive");

  require(c.d >= 1, "d", "must be >= 1");
  require(c.hessian_batch >= 1, "hessian_batch", "must be >= 1");
  require(std::isfinite(c.temperature) && c.temperature > 0.0, "temperature", "must be positive");
  require(std::isfinite(c.zone_threshold) && c.zone_threshold > 0.0, "zone_threshold",
          "must be positive");
  require(!c.out_dir.empty(), "out_dir", "must not be empty");
  require(std::isfinite(c.alpha) && c.alpha > 0.0, "alpha", "must be positive");
  require(std::isfinite(c.eta0) && c.eta0 > 0.0, "eta0", "must be positive");
  require(std::isfinite(c.baseline_eta0) && c.baseline_eta0 > 0.0, "baseline_eta0",
          "must be positive");
  require(c.steps >= 1, "steps", "must be >= 1");
  require(c.log_every >= 1, "log_every", "must be >= 1");
  require(c.n_inits >= 2, "n_inits", "must be >= 2");
  require(c.batch_size >= 2, "batch_size", "must be >= 2");
  require(c.n_priors >= 3, "n_priors", "must be >= 3");
  require(c.subset_size >= 2, "subset_size", "must be >= 2");
  require(c.monte_carlo_samples >= 2, "monte_carlo_samples", "must be >= 2");
  require(c.uniformity_tol > 0.0, "uniformity_tol", "must be positive");
  const auto& th = c.thresholds;
  require(th.divergence_norm_factor > 1.0, "thresholds.divergence_norm_factor", "must be > 1");
  require(th.zero_logit_recover <= th.zero_logit_enter && th.zero_logit_recover >= 0.0 &&
              th.zero_logit_enter <= 1.0,
          "thresholds.zero_logit_enter", "need 0 <= zero_logit_recover <= zero_logit_enter <= 1");

  if (c.init_seeds.empty()) c.init_seeds.push_back(c.seed);

  if (c.command == "sweep-alpha") {
    if (c.alpha_grid.empty()) c.alpha_grid = logspace(-2.0, 2.0, 9);
    require_positive_grid(c.alpha_grid, "alpha_grid");
  } else if (c.command == "sweep-temp") {
    if (c.temperature_grid.empty()) c.temperature_grid = logspace(-3.0, 3.0, 13);
    require_positive_grid(c.temperature_grid, "temperature_grid");
  } else if (c.command == "train-grid") {
    if (c.alpha_grid.empty()) c.alpha_grid = {0.03, 0.1, 0.3, 1.0};
    if (c.eta0_grid.empty()) c.eta0_grid = {0.1, 1.0, 10.0, 100.0};
    require_positive_grid(c.alpha_grid, "alpha_grid");
    require_positive_grid(c.eta0_grid, "eta0_grid");
  } else if (c.command == "precollapse") {
    if (c.alpha_grid.empty()) c.alpha_grid = logspace(0.0, 1.5, 7);
    require_positive_grid(c.alpha_grid, "alpha_grid");
  } else if (c.command == "grad-similarity") {
    if (c.alpha_grid.empty()) c.alpha_grid = {1.0};
    require_positive_grid(c.alpha_grid, "alpha_grid");
  }
}

}  // namespace

std::vector<std::string> command_names() { return kCommands; }

RunConfig parse_config(const json& j, const std::string& command) {
  require(std::find(kCommands.begin(), kCommands.end(), command) != kCommands.end(), "",
          "unknown command '" + command + "'");
  RunConfig c;
  c.command = command;
  Obj o(j, "");
  std::string declared;
  o.read("command", declared);
  require(declared.empty() || declared == command, "command",
          "config is for '" + declared + "', not '" + command + "'");

  o.read("arch", c.arch);
  if (const json* dj = o.find("dataset")) {
    Obj d(*dj, "dataset");
    auto& ds = c.dataset;
    d.read("kind", ds.kind);
    d.read("classes", ds.classes);
    d.read("dim", ds.dim);
    d.read("per_class", ds.per_class);
    d.read("spread", ds.spread);
    d.read("radius", ds.radius);
    d.read("shape", ds.shape);
    d.read("samples", ds.samples);
    d.read("images", ds.images);
    d.read("labels", ds.labels);
    d.read("test_images", ds.test_images);
    d.read("test_labels", ds.test_labels);
    d.read("standardize", ds.standardize);
    d.read("limit", ds.limit);
    d.read("input_scale", ds.input_scale);
    d.read_u64("seed", ds.seed);
    d.reject_unknown();
  }
  o.read_u64("seed", c.seed);
  o.read_u64s("init_seeds", c.init_seeds);
  o.read("d", c.d);
  o.read("hessian_batch", c.hessian_batch);
  o.read("temperature", c.temperature);
  o.read("zone_threshold", c.zone_threshold);
  o.read("out_dir", c.out_dir);
  o.read("alpha_grid", c.alpha_grid);
  o.read("alpha", c.alpha);
  o.read("temperature_grid", c.temperature_grid);
  o.read("eta0_grid", c.eta0_grid);
  o.read("eta0", c.eta0);
  o.read("baseline_eta0", c.baseline_eta0);
  o.read("steps", c.steps);
  o.read("dense_log_steps", c.dense_log_steps);
  o.read("log_every", c.log_every);
  std::string label_mode = to_string(c.label_mode);
  o.read("label_mode", label_mode);
  try {
    c.label_mode = parse_label_mode(label_mode);
  } catch (const InvalidInput&) {
    throw ConfigError("label_mode", "must be one of true, shuffled-fixed, shuffled-every-step");
  }
  if (const json* tj = o.find("thresholds")) {
    Obj t(*tj, "thresholds");
    auto& th = c.thresholds;
    t.read("divergence_norm_factor", th.divergence_norm_factor);
    t.read("zero_logit_enter", th.zero_logit_enter);
    t.read("zero_logit_recover", th.zero_logit_recover);
    t.read("lazy_gap", th.lazy_gap);
    t.read("normal_gap", th.normal_gap);
    t.read("lazy_train_accuracy", th.lazy_train_accuracy);
    t.reject_unknown();
  }
  o.read("n_inits", c.n_inits);
  o.read("batch_size", c.batch_size);
  o.read("n_priors", c.n_priors);
  o.read("subset_size", c.subset_size);
  o.read("monte_carlo_samples", c.monte_carlo_samples);
  std::string variant = to_string(c.grad_law_variant);
  o.read("grad_law_variant", variant);
  if (variant == "variance")
    c.grad_law_variant = GradLawVariant::Variance;
  else if (variant == "root-variance")
    c.grad_law_variant = GradLawVariant::RootVariance;
  else
    throw ConfigError("grad_law_variant", "must be 'variance' or 'root-variance'");
  o.read("uniformity_tol", c.uniformity_tol);
  o.reject_unknown();

  validate(c);
  return c;
}

RunConfig load_config(const std::string& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON in ") + path + ": " + e.what());
  }
  return parse_config(j, command);
}

json RunConfig::to_json() const {
  json ds = {{"kind", dataset.kind},
             {"classes", dataset.classes},
             {"input_scale", dataset.input_scale},
             {"seed", dataset.seed}};
  if (dataset.kind == "blobs") {
    ds["dim"] = dataset.dim;
    ds["per_class"] = dataset.per_class;
    ds["spread"] = dataset.spread;
    ds["radius"] = dataset.radius;
  } else if (dataset.kind == "gaussian") {
    ds["shape"] = dataset.shape;
    ds["samples"] = dataset.samples;
  } else {
    ds["images"] = dataset.images;
    ds["labels"] = dataset.labels;
    if (!dataset.test_images.empty()) {
      ds["test_images"] = dataset.test_images;
      ds["test_labels"] = dataset.test_labels;
    }
    ds["standardize"] = dataset.standardize;
    ds["limit"] = dataset.limit;
  }
  json th = {{"divergence_norm_factor", thresholds.divergence_norm_factor},
             {"zero_logit_enter", thresholds.zero_logit_enter},
             {"zero_logit_recover", thresholds.zero_logit_recover},
             {"lazy_gap", thresholds.lazy_gap},
             {"normal_gap", thresholds.normal_gap},
             {"lazy_train_accuracy", thresholds.lazy_train_accuracy}};
  return json{{"command", command},
              {"arch", arch},
              {"dataset", ds},
              {"seed", seed},
              {"init_seeds", init_seeds},
              {"d", d},
              {"hessian_batch", hessian_batch},
              {"temperature", temperature},
              {"zone_threshold", zone_threshold},
              {"out_dir", out_dir},
              {"alpha_grid", alpha_grid},
              {"alpha", alpha},
              {"temperature_grid", temperature_grid},
              {"eta0_grid", eta0_grid},
              {"eta0", eta0},
              {"baseline_eta0", baseline_eta0},
              {"steps", steps},
              {"dense_log_steps", dense_log_steps},
              {"log_every", log_every},
              {"label_mode", to_string(label_mode)},
              {"thresholds", th},
              {"n_inits", n_inits},
              {"batch_size", batch_size},
              {"n_priors", n_priors},
              {"subset_size", subset_size},
              {"monte_carlo_samples", monte_carlo_samples},
              {"grad_law_variant", to_string(grad_law_variant)},
              {"uniformity_tol", uniformity_tol}};
}

void apply_overrides(RunConfig& c, const Overrides& ov) {
  if (ov.alpha_grid) {
    require_positive_grid(*ov.alpha_grid, "--alpha-grid");
    c.alpha_grid = *ov.alpha_grid;
  }
  if (ov.d) {
    require(*ov.d >= 1, "--d", "must be >= 1");
    c.d = *ov.d;
  }
  if (ov.seed) {
    // A defaulted init seed follows the new seed; explicit init seeds stay.
    if (c.init_seeds.size() == 1 && c.init_seeds[0] == c.seed) c.init_seeds[0] = *ov.seed;
    c.seed = *ov.seed;
  }
  if (ov.out_dir) {
    require(!ov.out_dir->empty(), "--out-dir", "must not be empty");
    c.out_dir = *ov.out_dir;
  }
}

// ---- formatting ------------------------------------------------------------

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "1" : "0"; }

namespace {
// Missing value: empty cell.
std::string opt(double v) { return std::isfinite(v) ? fmt(v) : std::string(); }
}  // namespace

std::string render_csv(const Table& t) {
  std::ostringstream os;
  os << "# goldizone " << t.name << " schema=" << kSchemaVersion << "\n";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << "\n";
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw ShapeMismatch("table " + t.name + ": row width differs from the header");
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  return os.str();
}

// ---- data ------------------------------------------------------------------

Dataset load_dataset(const DatasetConfig& c) {
  Dataset ds;
  if (c.kind == "blobs") {
    ds = make_blobs(c.classes, c.dim, c.per_class, c.spread, c.seed, c.radius);
  } else if (c.kind == "gaussian") {
    ds = gaussian_images(c.shape, c.samples, c.classes, c.seed);
  } else {
    ds = load_idx(c.images, c.labels, c.standardize);
    if (c.limit > 0 && c.limit < ds.size()) {
      std::vector<std::size_t> idx(c.limit);
      std::iota(idx.begin(), idx.end(), 0);
      ds = ds.subset(idx);
    }
    if (!c.test_images.empty()) {
      Dataset test = load_idx(c.test_images, c.test_labels, c.standardize);
      if (test.sample_shape() != ds.sample_shape())
        throw ConfigError("dataset.test_images", "test images differ in shape from training images");
      const std::size_t n = ds.size(), m = test.size();
      std::vector<std::size_t> shape = ds.X.shape();
      shape[0] = n + m;
      std::vector<double> x(ds.X.data());
      x.insert(x.end(), test.X.data().begin(), test.X.data().end());
      Dataset merged;
      merged.X = Tensor(shape, std::move(x));
      merged.y = ds.y;
      merged.y.insert(merged.y.end(), test.y.begin(), test.y.end());
      merged.is_test.assign(n, 0);
      merged.is_test.resize(n + m, 1);
      ds = std::move(merged);
    }
    std::size_t k = 0;
    for (int v : ds.y) k = std::max(k, static_cast<std::size_t>(v) + 1);
    if (k > c.classes)
      throw ConfigError("dataset.classes", "labels reach " + std::to_string(k - 1) +
                                               " but classes is " + std::to_string(c.classes));
    ds.num_classes = c.classes;
    ds.index();
  }
  if (c.input_scale != 1.0) ds = ds.scaled_inputs(c.input_scale);
  return ds;
}

namespace {

struct Context {
  Dataset full, train, test;
  std::vector<std::size_t> input_shape;
  std::size_t K = 0;
};

Context make_context(const RunConfig& c) {
  Context ctx;
  ctx.full = load_dataset(c.dataset);
  ctx.train = ctx.full.train();
  ctx.test = ctx.full.test();
  if (ctx.train.size() == 0) throw ConfigError("dataset", "no training samples");
  ctx.input_shape = ctx.full.sample_shape();
  ctx.K = c.dataset.classes;
  return ctx;
}

HomogeneousNet make_net(const RunConfig& c, const Context& ctx, std::uint64_t init_seed) {
  try {
    return build_net(c.arch, ctx.input_shape, ctx.K, init_seed);
  } catch (const InvalidInput& e) {
    throw ConfigError("arch", e.what());
  } catch (const ShapeMismatch& e) {
    throw ConfigError("arch", e.what());
  } catch (const UnsupportedArchitecture& e) {
    throw ConfigError("arch", e.what());
  }
}

// The curvature batch: every training sample when there are at most
// hessian_batch of them, otherwise a class-balanced draw.
Batch eval_batch(const Dataset& train, std::size_t n, std::uint64_t seed) {
  if (train.size() <= n) return train.batch();
  return train.subset(balanced_batch(train, n, seed)).batch();
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json base_info(const Context& ctx, const HomogeneousNet& net) {
  return json{{"dataset_checksum", hex64(checksum(ctx.full))},
              {"train_samples", ctx.train.size()},
              {"test_samples", ctx.test.size()},
              {"param_count", net.param_count()},
              {"degree", net.degree()}};
}

// ---- sweep metrics ---------------------------------------------------------

struct Metrics {
  DecompositionReport rep;
  double loss = kNaN, grad_norm = kNaN, entropy = kNaN;
  double gamma = kNaN, sigma_c2 = kNaN, sigma_e2 = kNaN, model = kNaN;
};

Metrics measure(const HomogeneousNet& net, const Batch& batch, double temperature,
                const Projector& r, double zone_threshold) {
  Metrics m;
  const auto dec = projected_decomposition(net, batch, temperature, r);
  m.rep = report_decomposition(dec, zone_threshold);
  const LossGradient lg = loss_and_grad(net, batch, temperature);
  m.loss = lg.loss;
  m.grad_norm = norm2(lg.grad);
  m.entropy = confidence_stats(lg.probs).mean_entropy;

  // Random-logit-model prediction for the G-term curvature. Jacobians of
  // z / T are what enter G, so the tempered ones are fed to the estimator.
  std::vector<Tensor> jac = projected_jacobians(net, batch.X, r);
  for (auto& t : jac)
    for (auto& v : t.values()) v /= temperature;
  const SigmaEstimate est = estimate_sigmas(jac);
  m.sigma_c2 = est.params.sigma_c2;
  m.sigma_e2 = est.params.sigma_e2;
  try {
    m.gamma = gamma_p(lg.probs.p).gamma_p;
    if (est.params.d >= est.params.K)
      m.model = expected_gterm_curvature(est.params, lg.probs.p);
  } catch (const DegenerateDistribution&) {
  }
  return m;
}

const std::vector<std::string> kSweepColumns = {
    "init_seed",        "alpha",          "temperature",       "eta0",
    "curvature_H",      "curvature_G",    "curvature_Hstar",   "specnorm_H",
    "specnorm_G",       "specnorm_Hstar", "gh_ratio",          "local_convexity",
    "local_convexity_G", "local_convexity_Hstar", "mean_entropy", "loss",
    "grad_norm",        "in_zone",        "regime",            "gamma_p",
    "sigma_c2",         "sigma_e2",       "model_curvature",   "model_rel_error"};

std::vector<std::string> sweep_cells(std::uint64_t init_seed, double alpha, double temperature,
                                     const Metrics& m) {
  const auto& r = m.rep;
  const double g = r.G.positive_curvature;
  const double rel = (std::isfinite(m.model) && g != 0.0) ? std::abs(m.model - g) / std::abs(g) : kNaN;
  return {fmt_u64(init_seed),
          fmt(alpha),
          fmt(temperature),
          "",
          fmt(r.H.positive_curvature),
          fmt(g),
          fmt(r.Hstar.positive_curvature),
          fmt(r.H.spec_norm),
          fmt(r.G.spec_norm),
          fmt(r.Hstar.spec_norm),
          fmt(r.verdict.ratio),
          fmt(r.H.local_convexity),
          fmt(r.G.local_convexity),
          fmt(r.Hstar.local_convexity),
          fmt(m.entropy),
          fmt(m.loss),
          fmt(m.grad_norm),
          fmt(r.verdict.in_zone),
          "",
          opt(m.gamma),
          fmt(m.sigma_c2),
          fmt(m.sigma_e2),
          opt(m.model),
          opt(rel)};
}

RunResult cmd_sweep_alpha(const RunConfig& c, std::size_t threads) {
  const Context ctx = make_context(c);
  const Batch batch = eval_batch(ctx.train, c.hessian_batch, c.seed);
  const std::size_t na = c.alpha_grid.size();
  const std::size_t cells = c.init_seeds.size() * na;
  std::vector<std::vector<std::string>> rows(cells);
  std::vector<HomogeneousNet> nets;
  for (auto s : c.init_seeds) nets.push_back(make_net(c, ctx, s));
  const std::size_t P = nets[0].param_count();
  const Projector r = make_projector(P, std::min(c.d, P), c.seed);
  parallel_for(cells, threads, [&](std::size_t i) {
    const std::size_t s = i / na;
    const double alpha = c.alpha_grid[i % na];
    const Metrics m =
        measure(scale_params(nets[s], alpha), batch, c.temperature, r, c.zone_threshold);
    rows[i] = sweep_cells(c.init_seeds[s], alpha, c.temperature, m);
  });
  // Grid key (init_seed, alpha): sort alpha within each seed.
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (a / na != b / na) return c.init_seeds[a / na] < c.init_seeds[b / na];
    return c.alpha_grid[a % na] < c.alpha_grid[b % na];
  });
  Table t{"sweep_alpha", kSweepColumns, {}};
  for (auto i : order) t.rows.push_back(rows[i]);
  RunResult res;
  res.tables.push_back(std::move(t));
  res.info = base_info(ctx, nets[0]);
  res.info["eval_batch"] = batch.size();
  res.info["projector_dim"] = r.dim();
  return res;
}

RunResult cmd_sweep_temp(const RunConfig& c, std::size_t threads) {
  const Context ctx = make_context(c);
  const Batch batch = eval_batch(ctx.train, c.hessian_batch, c.seed);
  const HomogeneousNet base = make_net(c, ctx, c.init_seeds[0]);
  const std::size_t P = base.param_count();
  const double L = static_cast<double>(base.degree());
  const Projector r = make_projector(P, std::min(c.d, P), c.seed);
  const HomogeneousNet net = scale_params(base, c.alpha);

  std::vector<double> grid = c.temperature_grid;
  std::sort(grid.begin(), grid.end());
  const std::size_t n = grid.size();
  std::vector<std::vector<std::string>> rows(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const double T = grid[i];
    const Metrics m = measure(net, batch, T, r, c.zone_threshold);
    // Same softmax at T = 1 after rescaling the weights by T^(-1/L).
    const double dual_alpha = c.alpha * std::pow(T, -1.0 / L);
    const Metrics dm = measure(scale_params(base, dual_alpha), batch, 1.0, r, c.zone_threshold);
    auto row = sweep_cells(c.init_seeds[0], c.alpha, T, m);
    const double a[3] = {m.rep.H.positive_curvature, m.rep.G.positive_curvature,
                         m.rep.Hstar.positive_curvature};
    const double b[3] = {dm.rep.H.positive_curvature, dm.rep.G.positive_curvature,
                         dm.rep.Hstar.positive_curvature};
    double dev = 0.0;
    for (int k = 0; k < 3; ++k)
      dev = std::max(dev, std::abs(a[k] - b[k]) / std::max(std::abs(b[k]), 1e-300));
    row.push_back(fmt(dual_alpha));
    row.push_back(fmt(b[0]));
    row.push_back(fmt(b[1]));
    row.push_back(fmt(b[2]));
    row.push_back(fmt(dev));
    rows[i] = std::move(row);
  });
  auto cols = kSweepColumns;
  for (const char* extra : {"dual_alpha", "dual_curvature_H", "dual_curvature_G",
                            "dual_curvature_Hstar", "duality_rel_dev"})
    cols.push_back(extra);
  Table t{"sweep_temp", cols, std::move(rows)};
  RunResult res;
  res.tables.push_back(std::move(t));
  res.info = base_info(ctx, base);
  res.info["eval_batch"] = batch.size();
  res.info["projector_dim"] = r.dim();
  return res;
}

// ---- training grid ---------------------------------------------------------

double init_hessian_norm(const HomogeneousNet& net, const Batch& batch, double temperature,
                         std::uint64_t seed, bool& converged) {
  const CurvatureProbe probe(net, batch, temperature);
  const MatVec op = [&](std::span<const double> v) { return probe.hvp(v); };
  converged = true;
  try {
    return std::abs(power_iteration_deflated(op, net.param_count(), 1, 1e-6, 2000, seed)[0].value);
  } catch (const ConvergenceFailure& e) {
    converged = false;
    return std::abs(e.best_value());
  }
}

RunResult cmd_train_grid(const RunConfig& c, std::size_t threads) {
  const Context ctx = make_context(c);
  if (ctx.test.size() == 0)
    throw ConfigError("dataset", "train-grid needs a held-out split for the regime baseline");
  const HomogeneousNet base = make_net(c, ctx, c.init_seeds[0]);
  const Batch hbatch = eval_batch(ctx.train, c.hessian_batch, c.seed);

  auto make_cfg = [&](double alpha, double eta0) {
    TrainConfig tc;
    tc.alpha = alpha;
    tc.eta0 = eta0;
    tc.temperature = c.temperature;
    tc.steps = c.steps;
    tc.label_mode = c.label_mode;
    tc.label_seed = c.seed;
    tc.dense_log_steps = c.dense_log_steps;
    tc.log_every = c.log_every;
    tc.thresholds = c.thresholds;
    return tc;
  };
  const TrainResult ref = train(base, ctx.train, ctx.test, make_cfg(1.0, c.baseline_eta0));
  const double baseline =
      ref.trajectory.points.empty() ? kNaN : ref.trajectory.points.back().test_accuracy;

  const std::size_t na = c.alpha_grid.size(), ne = c.eta0_grid.size();
  std::vector<double> alphas = c.alpha_grid, etas = c.eta0_grid;
  std::sort(alphas.begin(), alphas.end());
  std::sort(etas.begin(), etas.end());
  const std::size_t cells = na * ne;
  struct Cell {
    std::vector<std::string> row;
    std::vector<std::vector<std::string>> traj;
    bool trainable = false;
    bool failed = false;
  };
  std::vector<Cell> out(cells);
  std::vector<double> hnorm(na, kNaN);
  std::vector<bool> hconv(na, false);
  std::vector<std::string> herr(na);
  parallel_for(na, threads, [&](std::size_t i) {
    try {
      bool conv = false;
      hnorm[i] = init_hessian_norm(scale_params(base, alphas[i]), hbatch, c.temperature, c.seed, conv);
      hconv[i] = conv;
    } catch (const Error& e) {
      herr[i] = e.what();
    }
  });
  parallel_for(cells, threads, [&](std::size_t i) {
    const std::size_t ai = i / ne;
    const double alpha = alphas[ai], eta0 = etas[i % ne];
    Cell& cell = out[i];
    TrainConfig tc = make_cfg(alpha, eta0);
    tc.baseline_accuracy = baseline;
    const double eta = effective_learning_rate(eta0, alpha, base.degree());
    try {
      const TrainResult r = train(base, ctx.train, ctx.test, tc);
      const auto& pts = r.trajectory.points;
      const auto& last = pts.back();
      cell.trainable = r.regime == RegimeLabel::Normal || r.regime == RegimeLabel::Lazy;
      cell.row = {fmt(alpha),
                  fmt(eta0),
                  fmt(eta),
                  to_string(r.regime),
                  fmt(cell.trainable),
                  fmt(r.max_train_accuracy),
                  fmt(r.max_test_accuracy),
                  fmt(last.train_accuracy),
                  fmt(last.test_accuracy),
                  fmt(r.max_theta_norm),
                  fmt(r.trajectory.initial_theta_norm),
                  fmt(last.zero_logit_fraction),
                  opt(hnorm[ai]),
                  fmt(hconv[ai]),
                  opt(eta * hnorm[ai]),
                  fmt(last.step),
                  fmt(r.trajectory.aborted),
                  opt(baseline),
                  herr[ai]};
      for (const auto& p : pts)
        cell.traj.push_back({fmt(alpha), fmt(eta0), fmt(p.step), opt(p.loss),
                             fmt(p.train_accuracy), fmt(p.test_accuracy), fmt(p.theta_norm),
                             opt(p.grad_norm), opt(p.cos_theta_neg_grad),
                             fmt(p.zero_logit_fraction), opt(p.mean_entropy), fmt(p.finite)});
    } catch (const Error& e) {
      cell.failed = true;
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), ',', ';');
      cell.row = {fmt(alpha), fmt(eta0), fmt(eta), "", "", "", "", "", "", "", "", "",
                  opt(hnorm[ai]), fmt(hconv[ai]), opt(eta * hnorm[ai]), "", "", opt(baseline),
                  msg};
    }
  });

  Table regimes{"train_grid",
                {"alpha", "eta0", "effective_eta", "regime", "trainable", "max_train_accuracy",
                 "max_test_accuracy", "final_train_accuracy", "final_test_accuracy",
                 "max_theta_norm", "initial_theta_norm", "final_zero_logit_fraction",
                 "hessian_norm", "hessian_norm_converged", "eta_hessian_product", "steps_run",
                 "aborted", "baseline_accuracy", "error"},
                {}};
  Table traj{"train_grid_trajectories",
             {"alpha", "eta0", "step", "loss", "train_accuracy", "test_accuracy", "theta_norm",
              "grad_norm", "cos_theta_neg_grad", "zero_logit_fraction", "mean_entropy", "finite"},
             {}};
  Table boundary{"train_grid_boundary", {"alpha", "max_trainable_eta0", "min_untrainable_eta0"}, {}};
  for (std::size_t ai = 0; ai < na; ++ai) {
    double best = kNaN, worst = kNaN;
    for (std::size_t ei = 0; ei < ne; ++ei) {
      const Cell& cell = out[ai * ne + ei];
      regimes.rows.push_back(cell.row);
      for (const auto& r : cell.traj) traj.rows.push_back(r);
      if (cell.failed) continue;
      if (cell.trainable)
        best = etas[ei];
      else if (std::isnan(worst))
        worst = etas[ei];
    }
    boundary.rows.push_back({fmt(alphas[ai]), opt(best), opt(worst)});
  }
  RunResult res;
  res.tables.push_back(std::move(regimes));
  res.tables.push_back(std::move(traj));
  res.tables.push_back(std::move(boundary));
  res.info = base_info(ctx, base);
  res.info["baseline_accuracy"] = baseline;
  res.info["baseline_eta0"] = c.baseline_eta0;
  res.info["eval_batch"] = hbatch.size();
  return res;
}

// ---- protocols -------------------------------------------------------------

Batch balanced(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  return ds.subset(balanced_batch(ds, std::min(n, ds.size()), seed)).batch();
}

RunResult cmd_scatter(const RunConfig& c, std::size_t threads) {
  const Context ctx = make_context(c);
  const Batch batch = balanced(ctx.train, c.batch_size, c.seed);
  ScatterConfig sc;
  sc.arch = c.arch;
  sc.n_inits = c.n_inits;
  sc.d = c.d;
  sc.seed = c.seed;
  sc.temperature = c.temperature;
  const auto rows = confidence_scatter(batch, ctx.input_shape, sc, threads);

  Table t{"scatter",
          {"init_seed", "mean_entropy", "grad_norm", "curvature_H", "curvature_G", "loss"},
          {}};
  std::vector<double> ent, g, curv, loss;
  for (const auto& r : rows) {
    t.rows.push_back({fmt_u64(r.init_seed), fmt(r.mean_entropy), fmt(r.grad_norm),
                      fmt(r.curvature), fmt(r.gterm_curvature), fmt(r.loss)});
    ent.push_back(r.mean_entropy);
    g.push_back(r.grad_norm);
    curv.push_back(r.curvature);
    loss.push_back(r.loss);
  }
  Table s{"scatter_summary", {"x", "y", "spearman"}, {}};
  s.rows.push_back({"mean_entropy", "curvature_H", fmt(spearman(ent, curv))});
  s.rows.push_back({"mean_entropy", "grad_norm", fmt(spearman(ent, g))});
  s.rows.push_back({"mean_entropy", "loss", fmt(spearman(ent, loss))});
  RunResult res;
  res.tables.push_back(std::move(t));
  res.tables.push_back(std::move(s));
  res.info = base_info(ctx, make_net(c, ctx, c.seed));
  res.info["batch_size"] = batch.size();
  return res;
}

RunResult cmd_grad_similarity(const RunConfig& c, std::size_t threads) {
  const Context ctx = make_context(c);
  const std::size_t n = std::min(c.batch_size, ctx.train.size() / 2);
  // Two disjoint class-balanced halves of one draw.
  const auto idx = balanced_batch(ctx.train, 2 * n, c.seed);
  std::vector<std::size_t> ia, ib;
  for (std::size_t i = 0; i < idx.size(); ++i) (i % 2 ? ib : ia).push_back(idx[i]);
  const Batch real_a = ctx.train.subset(ia).batch();
  const Batch real_b = ctx.train.subset(ib).batch();
  Dataset noise = gaussian_images(ctx.input_shape, real_a.size(), ctx.K, mix64(c.seed ^ 0x6e6f6973ULL));
  const Batch noise_batch(noise.X, real_a.y, ctx.K);

  std::vector<std::uint64_t> seeds = c.init_seeds;
  if (seeds.size() == 1)
    for (std::size_t i = 1; i < c.n_inits; ++i) seeds.push_back(mix64(c.seed + i));
  const std::size_t na = c.alpha_grid.size();
  std::vector<double> alphas = c.alpha_grid;
  std::sort(alphas.begin(), alphas.end());
  const std::size_t cells = seeds.size() * na;
  std::vector<std::vector<std::string>> rows(cells);
  parallel_for(cells, threads, [&](std::size_t i) {
    const std::uint64_t s = seeds[i / na];
    const double alpha = alphas[i % na];
    const HomogeneousNet net = scale_params(make_net(c, ctx, s), alpha);
    auto cosine = [&](const Batch& a, const Batch& b) {
      try {
        return grad_similarity(net, a, b);
      } catch (const DegenerateGradient&) {
        return kNaN;
      }
    };
    rows[i] = {fmt_u64(s),
               fmt(alpha),
               opt(cosine(real_a, noise_batch)),
               opt(cosine(real_a, real_b)),
               fmt(norm2(loss_grad(net, real_a, 1.0))),
               fmt(norm2(loss_grad(net, noise_batch, 1.0)))};
  });
  Table t{"grad_similarity",
          {"init_seed", "alpha", "cos_real_noise", "cos_real_real", "grad_norm_real",
           "grad_norm_noise"},
          std::move(rows)};
  RunResult res;
  res.tables.push_back(std::move(t));
  res.info = base_info(ctx, make_net(c, ctx, seeds[0]));
  res.info["batch_size"] = real_a.size();
  return res;
}

RunResult cmd_prior_sweep(const RunConfig& c, std::size_t threads) {
  const Context ctx = make_context(c);
  const HomogeneousNet net =
      scale_params(make_net(c, ctx, c.init_seeds[0]), c.alpha);
  const PriorSweepResult ps =
      prior_sweep(net, ctx.train, c.n_priors, c.subset_size, c.seed, c.temperature, threads);

  // Variances of the full logit Jacobians, so the law's dimension is P.
  const Batch batch = eval_batch(ctx.train, c.hessian_batch, c.seed);
  std::vector<Tensor> jac(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t mu) {
    jac[mu] = logit_jacobian(net, batch.sample(mu));
    for (auto& v : jac[mu].values()) v /= c.temperature;
  });
  const SigmaEstimate est = estimate_sigmas(jac);
  const LogitModelParams& params = est.params;

  const std::size_t K = ctx.K;
  std::vector<std::string> cols = {"index", "distance", "grad_norm", "predicted_variance",
                                   "predicted_root_variance", "predicted_selected"};
  for (std::size_t k = 0; k < K; ++k) cols.push_back("prior_" + std::to_string(k));
  for (std::size_t k = 0; k < K; ++k) cols.push_back("qhat_" + std::to_string(k));
  Table t{"prior_sweep", cols, {}};
  for (std::size_t i = 0; i < ps.rows.size(); ++i) {
    const auto& r = ps.rows[i];
    const GradLawPrediction pred = expected_grad_law(params, r.qhat, r.prior);
    const double sel = c.grad_law_variant == GradLawVariant::Variance ? pred.variance : pred.root_variance;
    std::vector<std::string> row = {fmt(i), fmt(r.distance), fmt(r.grad_norm), fmt(pred.variance),
                                    fmt(pred.root_variance), fmt(sel)};
    for (double v : r.prior) row.push_back(fmt(v));
    for (double v : r.qhat) row.push_back(fmt(v));
    t.rows.push_back(std::move(row));
  }

  // Monte-Carlo check of the two slope laws in the projected dimension d.
  LogitModelParams mc_params = params;
  mc_params.d = std::max(c.d, K);
  const auto& probe = ps.rows.front();
  const GradLawMonteCarlo mc = grad_law_monte_carlo(mc_params, probe.qhat, probe.prior,
                                                    c.monte_carlo_samples, c.seed);

  const double dsc = static_cast<double>(params.d) * params.sigma_c2;
  Table s{"prior_sweep_summary",
          {"slope", "intercept", "r2", "sigma_c2", "sigma_e2", "dimension",
           "predicted_slope_variance", "predicted_slope_root_variance", "selected_variant",
           "mc_dimension", "mc_samples", "mc_distance", "mc_empirical", "mc_variance_rel_error",
           "mc_root_variance_rel_error", "mc_winner"},
          {}};
  s.rows.push_back({fmt(ps.fit.slope), fmt(ps.fit.intercept), fmt(ps.fit.r2),
                    fmt(params.sigma_c2), fmt(params.sigma_e2), fmt(params.d), fmt(dsc),
                    fmt(std::sqrt(dsc)), to_string(c.grad_law_variant), fmt(mc_params.d),
                    fmt(c.monte_carlo_samples), fmt(mc.prediction.distance), fmt(mc.empirical),
                    fmt(mc.variance_rel_error), fmt(mc.root_variance_rel_error), to_string(mc.winner)});
  RunResult res;
  res.tables.push_back(std::move(t));
  res.tables.push_back(std::move(s));
  res.info = base_info(ctx, net);
  res.info["jacobian_samples"] = batch.size();
  return res;
}

RunResult cmd_uso(const RunConfig& c, std::size_t /*threads*/) {
  const Context ctx = make_context(c);
  const HomogeneousNet base = make_net(c, ctx, c.init_seeds[0]);
  TrainConfig tc;
  tc.alpha = c.alpha;
  tc.eta0 = c.eta0;
  tc.temperature = 1.0;
  tc.steps = c.steps;
  tc.dense_log_steps = c.dense_log_steps;
  tc.log_every = c.log_every;
  tc.record_theta = true;
  tc.thresholds = c.thresholds;
  const TrainResult scaled = train(base, ctx.train, ctx.test, tc);
  // The scaled run divided by alpha follows phi <- phi - eta0 g_USO(phi).
  TrainConfig uc = tc;
  uc.alpha = 1.0;
  const TrainResult uso = uso_train(base, ctx.train, ctx.test, uc);

  const auto& sp = scaled.trajectory.points;
  const auto& up = uso.trajectory.points;
  const auto& st = scaled.trajectory.thetas;
  const auto& ut = uso.trajectory.thetas;
  const std::size_t n = std::min(sp.size(), up.size());
  const std::size_t P = base.param_count();
  Table t{"uso",
          {"step", "loss", "uso_loss", "max_uniform_deviation", "uniform", "theta_norm_rescaled",
           "uso_theta_norm", "position_rel_dev", "displacement_rel_dev"},
          {}};
  std::size_t qualifying = 0;
  double max_pos = 0.0, max_disp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sp[i].step != up[i].step) break;
    double dp = 0.0, np = 0.0, dd = 0.0, nd = 0.0, nr = 0.0;
    for (std::size_t j = 0; j < P; ++j) {
      const double phi = st[i][j] / c.alpha;
      const double disp = (st[i][j] - st[0][j]) / c.alpha;
      const double udisp = ut[i][j] - ut[0][j];
      dp += (phi - ut[i][j]) * (phi - ut[i][j]);
      np += ut[i][j] * ut[i][j];
      dd += (disp - udisp) * (disp - udisp);
      nd += udisp * udisp;
      nr += phi * phi;
    }
    const double pos = np > 0.0 ? std::sqrt(dp / np) : 0.0;
    const double dsp = nd > 0.0 ? std::sqrt(dd / nd) : (dd > 0.0 ? kNaN : 0.0);
    const bool uniform = sp[i].finite && sp[i].max_uniform_deviation < c.uniformity_tol;
    if (uniform) {
      ++qualifying;
      max_pos = std::max(max_pos, pos);
      max_disp = std::isnan(dsp) ? dsp : std::max(max_disp, dsp);
    }
    t.rows.push_back({fmt(sp[i].step), opt(sp[i].loss), opt(up[i].loss),
                      fmt(sp[i].max_uniform_deviation), fmt(uniform), fmt(std::sqrt(nr)),
                      fmt(up[i].theta_norm), fmt(pos), opt(dsp)});
  }
  Table s{"uso_summary",
          {"alpha", "eta0", "effective_eta", "uniformity_tol", "logged_steps", "qualifying_steps",
           "max_position_rel_dev", "max_displacement_rel_dev"},
          {}};
  s.rows.push_back({fmt(c.alpha), fmt(c.eta0), fmt(scaled.trajectory.effective_eta),
                    fmt(c.uniformity_tol), fmt(n), fmt(qualifying),
                    qualifying ? fmt(max_pos) : "", qualifying ? opt(max_disp) : ""});
  RunResult res;
  res.tables.push_back(std::move(t));
  res.tables.push_back(std::move(s));
  res.info = base_info(ctx, base);
  res.info["effective_eta"] = scaled.trajectory.effective_eta;
  return res;
}

RunResult cmd_precollapse(const RunConfig& c, std::size_t /*threads*/) {
  const Context ctx = make_context(c);
  const HomogeneousNet net = make_net(c, ctx, c.init_seeds[0]);
  const Batch batch = eval_batch(ctx.train, c.hessian_batch, c.seed);
  std::vector<double> grid = c.alpha_grid;
  std::sort(grid.begin(), grid.end());
  PrecollapseOptions po;
  po.temperature = c.temperature;
  po.d = c.d;
  po.seed = c.seed;
  std::vector<PrecollapseRow> rows;
  try {
    rows = precollapse_probe(net, batch, grid, po);
  } catch (const UnsupportedArchitecture& e) {
    throw ConfigError("arch", e.what());
  }
  Table t{"precollapse",
          {"alpha", "mu0", "max_entropy", "mean_entropy", "top_eigenvalue", "alignment",
           "gterm_curvature", "hessian_curvature", "dominance_gap"},
          {}};
  for (const auto& r : rows) {
    const double mean = std::accumulate(r.entropies.begin(), r.entropies.end(), 0.0) /
                        static_cast<double>(r.entropies.size());
    t.rows.push_back({fmt(r.alpha), fmt(r.mu0), fmt(r.max_entropy), fmt(mean),
                      fmt(r.top_eigenvalue), fmt(r.alignment), fmt(r.gterm_curvature),
                      fmt(r.hessian_curvature), fmt(r.dominance_gap)});
  }
  double collapse = kNaN;
  try {
    collapse = locate_collapse_alpha(net, batch, grid.front(), grid.back() * 100.0, 1e-6,
                                     c.temperature);
  } catch (const InvalidInput&) {
  }
  Table s{"precollapse_summary", {"collapse_alpha", "entropy_threshold"}, {}};
  s.rows.push_back({opt(collapse), fmt(1e-6)});
  RunResult res;
  res.tables.push_back(std::move(t));
  res.tables.push_back(std::move(s));
  res.info = base_info(ctx, net);
  res.info["eval_batch"] = batch.size();
  return res;
}

}  // namespace

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunResult run(const RunConfig& c, std::size_t threads) {
  threads = std::max<std::size_t>(threads, 1);
  if (c.command == "sweep-alpha") return cmd_sweep_alpha(c, threads);
  if (c.command == "sweep-temp") return cmd_sweep_temp(c, threads);
  if (c.command == "train-grid") return cmd_train_grid(c, threads);
  if (c.command == "scatter") return cmd_scatter(c, threads);
  if (c.command == "grad-similarity") return cmd_grad_similarity(c, threads);
  if (c.command == "prior-sweep") return cmd_prior_sweep(c, threads);
  if (c.command == "uso") return cmd_uso(c, threads);
  if (c.command == "precollapse") return cmd_precollapse(c, threads);
  throw ConfigError("", "unknown command '" + c.command + "'");
}

std::vector<std::string> write_outputs(const RunConfig& c, const RunResult& result,
                                       const std::string& started_at, std::size_t threads) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec) throw IoError("cannot create " + c.out_dir + ": " + ec.message());
  const std::string finished_at = utc_timestamp();
  std::vector<std::string> paths;
  for (const auto& t : result.tables) {
    const fs::path csv = fs::path(c.out_dir) / (t.name + ".csv");
    const fs::path man = fs::path(c.out_dir) / (t.name + ".manifest.json");
    {
      std::ofstream out(csv, std::ios::binary);
      if (!out) throw IoError("cannot write " + csv.string());
      out << render_csv(t);
      if (!out) throw IoError("write failed for " + csv.string());
    }
    json m = {{"tool", "goldizone"},
              {"tool_version", kToolVersion},
              {"schema_version", kSchemaVersion},
              {"command", c.command},
              {"table", t.name},
              {"csv", csv.filename().string()},
              {"columns", t.columns},
              {"rows", t.rows.size()},
              {"config", c.to_json()},
              {"seeds", {{"seed", c.seed}, {"init_seeds", c.init_seeds}, {"dataset", c.dataset.seed}}},
              {"arch", c.arch},
              {"d", c.d},
              {"hessian_batch", c.hessian_batch},
              {"threads", threads},
              {"formula",
               {{"grad_law_variant", to_string(c.grad_law_variant)},
                {"zone_threshold", c.zone_threshold},
                {"convexity_tol", 1e-10}}},
              {"run", result.info},
              {"started_at", started_at},
              {"finished_at", finished_at}};
    std::ofstream out(man);
    if (!out) throw IoError("cannot write " + man.string());
    out << m.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + man.string());
    paths.push_back(csv.string());
  }
  return paths;
}

}  // namespace gz::cli
