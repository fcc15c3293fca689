#include "goldizone/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "goldizone/errors.hpp"

namespace gz {

CurvatureReport curvature_report(const SymmetricMatrix& a, double tol, std::size_t top_m) {
  if (!a.all_finite()) throw InvalidInput("curvature_report: matrix has non-finite entries");
  CurvatureReport r;
  const std::size_t n = a.dim();
  r.frobenius = a.frobenius();
  if (n == 0 || r.frobenius < 1e-300) {
    r.degenerate = true;
    r.frobenius = 0.0;
    r.top_eigs.assign(std::min(top_m, n), 0.0);
    return r;
  }
  r.trace = a.trace();
  r.positive_curvature = r.trace / r.frobenius;

  // Normalize first so Jacobi rotations never see underflowing products.
  const double s = a.max_abs();
  const EigenDecomposition eig = eigh(a.scaled(1.0 / s));
  const double cut = tol * r.frobenius / s;
  std::size_t positive = 0;
  double spec = 0.0;
  for (double l : eig.values) {
    if (l > cut) ++positive;
    spec = std::max(spec, std::abs(l));
  }
  r.local_convexity = static_cast<double>(positive) / static_cast<double>(n);
  r.spec_norm = spec * s;
  for (std::size_t i = 0; i < std::min(top_m, n); ++i) r.top_eigs.push_back(eig.values[i] * s);
  return r;
}

namespace {

void project_out(std::vector<double>& v, const std::vector<EigenPair>& found) {
  for (const auto& f : found) {
    const double c = dot(v, f.vector);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * f.vector[i];
  }
}

}  // namespace

std::vector<EigenPair> power_iteration_deflated(const MatVec& matvec, std::size_t dim,
                                                std::size_t m, double tol,
                                                std::size_t max_iter, std::uint64_t seed) {
  if (dim == 0) throw InvalidInput("power iteration needs dim >= 1");
  if (m == 0 || m > 20 || m > dim) throw InvalidInput("power iteration: m must be in [1, min(20, dim)]");
  if (!(tol > 0.0)) throw InvalidInput("power iteration: tol must be positive");

  Rng rng(mix64(seed ^ 0x706f776572ULL));
  std::vector<EigenPair> found;
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    project_out(v, found);
    double nv = norm2(v);
    if (nv == 0.0) throw InvalidInput("power iteration: start vector vanished after deflation");
    for (auto& x : v) x /= nv;

    double best_res = std::numeric_limits<double>::infinity();
    std::vector<double> best_v = v;
    double best_l = 0.0;
    bool done = false;
    for (std::size_t it = 0; it < max_iter; ++it) {
      std::vector<double> w = matvec(v);
      if (w.size() != dim) throw ShapeMismatch("matvec returned the wrong size");
      project_out(w, found);
      const double lambda = dot(v, w);
      double res = 0.0;
      for (std::size_t i = 0; i < dim; ++i) res += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
      res = std::sqrt(res);
      if (!std::isfinite(res)) throw InvalidInput("power iteration: operator produced non-finite values");
      if (res < best_res) {
        best_res = res;
        best_v = v;
        best_l = lambda;
      }
      const double nw = norm2(w);
      if (res <= tol * std::abs(lambda) || nw == 0.0) {
        found.push_back({lambda, v});
        done = true;
        break;
      }
      for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / nw;
    }
    if (!done)
      throw ConvergenceFailure("power iteration did not converge for eigenpair " +
                                   std::to_string(k),
                               best_res, best_v, best_l);
  }
  std::stable_sort(found.begin(), found.end(), [](const EigenPair& a, const EigenPair& b) {
    return std::abs(a.value) > std::abs(b.value);
  });
  return found;
}

GoldilocksVerdict goldilocks_verdict(const ProjectedDecomposition& dec, double zone_threshold) {
  GoldilocksVerdict v;
  v.threshold = zone_threshold;
  v.gnorm = curvature_report(dec.G, 1e-10, 0).spec_norm;
  v.hstarnorm = curvature_report(dec.Hstar, 1e-10, 0).spec_norm;
  if (v.gnorm == 0.0)
    v.ratio = 0.0;
  else if (v.hstarnorm == 0.0)
    v.ratio = std::numeric_limits<double>::infinity();
  else
    v.ratio = v.gnorm / v.hstarnorm;
  v.in_zone = v.gnorm > 0.0 && v.ratio >= zone_threshold;
  return v;
}

DecompositionReport report_decomposition(const ProjectedDecomposition& dec,
                                         double zone_threshold) {
  DecompositionReport r;
  r.H = curvature_report(dec.H);
  r.G = curvature_report(dec.G);
  r.Hstar = curvature_report(dec.Hstar);
  r.verdict = goldilocks_verdict(dec, zone_threshold);
  return r;
}

double max_sample_entropy(const HomogeneousNet& net, const Batch& batch, double alpha,
                          double temperature) {
  const auto probs = softmax_batch(forward_logits(scale_params(net, alpha), batch.X), temperature);
  double best = 0.0;
  for (std::size_t mu = 0; mu < probs.batch(); ++mu)
    best = std::max(best, entropy(probs.p.row(mu)));
  return best;
}

double locate_collapse_alpha(const HomogeneousNet& net, const Batch& batch, double lo, double hi,
                             double threshold, double temperature, int iterations) {
  if (!(lo > 0.0) || !(hi > lo)) throw InvalidInput("collapse bracket must satisfy 0 < lo < hi");
  const double flo = max_sample_entropy(net, batch, lo, temperature);
  const double fhi = max_sample_entropy(net, batch, hi, temperature);
  if (!(flo > threshold && fhi <= threshold))
    throw InvalidInput("entropy does not cross the threshold inside the bracket");
  double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < iterations; ++i) {
    const double mid = 0.5 * (a + b);
    if (max_sample_entropy(net, batch, std::exp(mid), temperature) > threshold)
      a = mid;
    else
      b = mid;
  }
  return std::exp(0.5 * (a + b));
}

std::vector<PrecollapseRow> precollapse_probe(const HomogeneousNet& net, const Batch& batch,
                                              std::span<const double> alpha_grid,
                                              const PrecollapseOptions& options) {
  const auto& layers = net.layers();
  const std::size_t first = net.first_param_layer();
  for (std::size_t l = 0; l < first; ++l)
    if (layers[l].spec.kind != LayerKind::Flatten)
      throw UnsupportedArchitecture("precollapse probe needs a fully-connected first layer");
  const LayerPlan& plan = layers[first];
  if (plan.spec.kind != LayerKind::Linear)
    throw UnsupportedArchitecture("precollapse probe needs a fully-connected first layer, got " +
                                  net.arch());

  const std::size_t hidden = plan.spec.out_features, in = plan.spec.in_features;
  const Projector first_layer = coordinate_projector(net.param_count(), plan.offset, plan.count);
  const Projector global =
      make_projector(net.param_count(), std::min(options.d, net.param_count()), options.seed);

  std::vector<PrecollapseRow> rows;
  for (double alpha : alpha_grid) {
    const HomogeneousNet scaled = scale_params(net, alpha);
    const CurvatureProbe probe(scaled, batch, options.temperature);
    PrecollapseRow row;
    row.alpha = alpha;
    const auto& probs = probe.probs();
    for (std::size_t mu = 0; mu < probs.batch(); ++mu) {
      row.entropies.push_back(entropy(probs.p.row(mu)));
      if (row.entropies.back() > row.max_entropy || mu == 0) {
        row.max_entropy = row.entropies.back();
        row.mu0 = mu;
      }
    }

    const MatVec op = [&](std::span<const double> u) {
      return first_layer.project(probe.hvp(first_layer.lift(u)));
    };
    const auto top = power_iteration_deflated(op, plan.count, 1, options.eig_tol,
                                              options.max_iter, options.seed);
    row.top_eigenvalue = top[0].value;
    std::vector<double> avg(in, 0.0);
    for (std::size_t h = 0; h < hidden; ++h)
      for (std::size_t i = 0; i < in; ++i) avg[i] += top[0].vector[h * in + i];
    const auto x0 = batch.X.values().subspan(row.mu0 * in, in);
    const double na = norm2(avg), nx = norm2(x0);
    row.alignment = (na > 0.0 && nx > 0.0) ? std::abs(dot(avg, x0)) / (na * nx) : 0.0;

    const auto dec = projected_decomposition(scaled, batch, options.temperature, global);
    row.gterm_curvature = curvature_report(dec.G).positive_curvature;
    row.hessian_curvature = curvature_report(dec.H).positive_curvature;
    const auto per = per_sample_gterms(scaled, batch, options.temperature, global);
    const double gf = dec.G.frobenius();
    row.dominance_gap =
        gf > 0.0
            ? (dec.G - per[row.mu0].scaled(1.0 / static_cast<double>(batch.size()))).frobenius() / gf
            : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace gz
