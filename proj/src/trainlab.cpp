#include "goldizone/trainlab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "goldizone/diffengine.hpp"
#include "goldizone/errors.hpp"
#include "goldizone/parallel.hpp"
#include "goldizone/spectra.hpp"

namespace gz {

const char* to_string(LabelMode m) noexcept {
  switch (m) {
    case LabelMode::True: return "true";
    case LabelMode::ShuffledFixed: return "shuffled-fixed";
    case LabelMode::ShuffledEveryStep: return "shuffled-every-step";
  }
  return "?";
}

const char* to_string(RegimeLabel r) noexcept {
  switch (r) {
    case RegimeLabel::Normal: return "Normal";
    case RegimeLabel::Diverged: return "Diverged";
    case RegimeLabel::ZeroLogit: return "ZeroLogit";
    case RegimeLabel::Lazy: return "Lazy";
    case RegimeLabel::Stalled: return "Stalled";
  }
  return "?";
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "true") return LabelMode::True;
  if (s == "shuffled-fixed") return LabelMode::ShuffledFixed;
  if (s == "shuffled-every-step") return LabelMode::ShuffledEveryStep;
  throw InvalidInput("unknown label mode '" + s + "'");
}

double effective_learning_rate(double eta0, double alpha, std::size_t degree) {
  return eta0 * std::pow(alpha, 2.0 - static_cast<double>(degree));
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t b = logits.extent(0);
  if (b != labels.size()) throw ShapeMismatch("accuracy: logits and labels disagree");
  if (b == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t mu = 0; mu < b; ++mu) {
    const auto row = logits.row(mu);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    if (best == labels[mu]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(b);
}

double zero_logit_fraction(const Tensor& logits, double tol) {
  const std::size_t b = logits.extent(0);
  if (b == 0) return 0.0;
  std::size_t zero = 0;
  for (std::size_t mu = 0; mu < b; ++mu) {
    double m = 0.0;
    for (double v : logits.row(mu)) m = std::max(m, std::abs(v));
    if (m <= tol) ++zero;
  }
  return static_cast<double>(zero) / static_cast<double>(b);
}

double zero_logit_fraction(const Tensor& logits) {
  double m = 0.0;
  for (double v : logits.values()) m = std::max(m, std::abs(v));
  return zero_logit_fraction(logits, 1e-9 * (1.0 + m));
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double max_uniform_deviation(const SoftmaxBatch& probs) {
  const double u = 1.0 / static_cast<double>(probs.classes());
  double m = 0.0;
  for (double v : probs.p.values()) m = std::max(m, std::abs(v - u));
  return m;
}

}  // namespace

TrainResult train(const HomogeneousNet& base, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& config) {
  if (!(config.alpha > 0.0)) throw InvalidInput("alpha must be positive");
  if (!(config.eta0 > 0.0)) throw InvalidInput("eta0 must be positive");
  if (config.steps == 0) throw InvalidInput("steps must be >= 1");
  if (config.log_every == 0) throw InvalidInput("log_every must be >= 1");

  HomogeneousNet net = scale_params(base, config.alpha);
  const std::size_t L = net.degree();
  const double eta = effective_learning_rate(config.eta0, config.alpha, L);
  const double temp = config.uso_mode ? 1.0 : config.temperature;

  Batch batch = train_set.batch();
  if (config.label_mode == LabelMode::ShuffledFixed)
    batch.y = shuffled_labels(train_set.y, config.label_seed);
  const bool has_test = test_set.size() > 0;

  TrainResult res;
  auto& traj = res.trajectory;
  traj.effective_eta = eta;
  traj.degree = L;
  traj.initial_theta_norm = norm2(net.theta());

  std::vector<double> theta(net.theta().begin(), net.theta().end());
  for (std::size_t t = 0; t <= config.steps; ++t) {
    if (config.label_mode == LabelMode::ShuffledEveryStep)
      batch.y = shuffled_labels(train_set.y, mix64(config.label_seed + 0x9E3779B97F4A7C15ULL * (t + 1)));
    const std::vector<double> coeff =
        config.uso_mode ? uniform_output_coefficients(batch) : std::vector<double>{};
    const bool log = t < config.dense_log_steps || t % config.log_every == 0 || t == config.steps;

    LossGradient lg;
    bool finite = all_finite(theta);
    if (finite) {
      lg = loss_and_grad(net, batch, temp, coeff);
      finite = std::isfinite(lg.loss) && all_finite(lg.grad) && lg.logits.all_finite();
    }

    if (log || !finite) {
      TrajectoryPoint pt;
      pt.step = t;
      pt.finite = finite;
      pt.theta_norm = norm2(theta);
      if (finite) {
        pt.loss = lg.loss;
        pt.train_accuracy = accuracy(lg.logits, batch.y);
        if (has_test) pt.test_accuracy = accuracy(forward_logits(net, test_set.X), test_set.y);
        pt.grad_norm = norm2(lg.grad);
        pt.cos_theta_neg_grad = (pt.theta_norm > 0.0 && pt.grad_norm > 0.0)
                                    ? -dot(theta, lg.grad) / (pt.theta_norm * pt.grad_norm)
                                    : 0.0;
        pt.zero_logit_fraction = zero_logit_fraction(lg.logits);
        pt.mean_entropy = confidence_stats(lg.probs).mean_entropy;
        pt.max_uniform_deviation = max_uniform_deviation(lg.probs);
      } else {
        pt.loss = std::numeric_limits<double>::quiet_NaN();
      }
      traj.points.push_back(pt);
      if (config.record_theta) traj.thetas.push_back(theta);
      res.max_train_accuracy = std::max(res.max_train_accuracy, pt.train_accuracy);
      res.max_test_accuracy = std::max(res.max_test_accuracy, pt.test_accuracy);
      if (std::isfinite(pt.theta_norm)) res.max_theta_norm = std::max(res.max_theta_norm, pt.theta_norm);
    }
    if (!finite) {
      traj.aborted = true;
      break;
    }
    if (t == config.steps) break;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= eta * lg.grad[i];
    net = net.with_theta(theta);
  }

  res.final_theta = std::move(theta);
  res.regime = classify_regime(traj, config.baseline_accuracy, config.thresholds);
  return res;
}

TrainResult uso_train(const HomogeneousNet& base, const Dataset& train_set,
                      const Dataset& test_set, TrainConfig config) {
  config.uso_mode = true;
  return train(base, train_set, test_set, config);
}

RegimeLabel classify_regime(const TrajectoryRecord& traj, double baseline,
                            const RegimeThresholds& th) {
  const auto& pts = traj.points;
  if (pts.empty()) return RegimeLabel::Stalled;
  const auto& first = pts.front();
  const auto& last = pts.back();

  if (traj.aborted) return RegimeLabel::Diverged;
  for (const auto& p : pts)
    if (!p.finite || !std::isfinite(p.loss)) return RegimeLabel::Diverged;
  double max_norm = 0.0;
  for (const auto& p : pts) max_norm = std::max(max_norm, p.theta_norm);
  const double init = traj.initial_theta_norm > 0.0 ? traj.initial_theta_norm : first.theta_norm;
  if (init > 0.0 && max_norm > th.divergence_norm_factor * init &&
      last.train_accuracy <= first.train_accuracy)
    return RegimeLabel::Diverged;

  std::size_t enter = pts.size();
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts[i].zero_logit_fraction >= th.zero_logit_enter) {
      enter = i;
      break;
    }
  if (enter < pts.size() && last.zero_logit_fraction >= th.zero_logit_enter) {
    bool recovered = false;
    for (std::size_t i = enter; i < pts.size(); ++i)
      if (pts[i].zero_logit_fraction < th.zero_logit_recover) recovered = true;
    if (!recovered) return RegimeLabel::ZeroLogit;
  }

  const double ref = std::isfinite(baseline) ? baseline : last.test_accuracy;
  if (last.train_accuracy >= th.lazy_train_accuracy && last.test_accuracy <= ref - th.lazy_gap)
    return RegimeLabel::Lazy;
  if (last.test_accuracy >= ref - th.normal_gap) return RegimeLabel::Normal;
  return RegimeLabel::Stalled;
}

double linear_probe(const Tensor& train_features, std::span<const int> train_labels,
                    const Tensor& test_features, std::span<const int> test_labels,
                    std::size_t num_classes, const ProbeConfig& config) {
  if (train_features.rank() != 2 || test_features.rank() != 2)
    throw ShapeMismatch("linear_probe expects B x F features");
  const std::size_t n = train_features.extent(0), f = train_features.extent(1);
  const std::size_t k = num_classes;
  if (test_features.extent(1) != f) throw ShapeMismatch("train/test feature widths differ");
  if (n != train_labels.size() || test_features.extent(0) != test_labels.size())
    throw ShapeMismatch("features and labels disagree");
  if (!train_features.all_finite() || !test_features.all_finite())
    throw InvalidInput("linear_probe features must be finite");
  if (n == 0) throw InvalidInput("linear_probe needs training samples");
  if (std::all_of(train_labels.begin(), train_labels.end(),
                  [&](int v) { return v == train_labels[0]; }))
    throw InvalidInput("linear_probe needs at least two classes");

  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) mean[j] += train_features.at(i, j) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) {
      const double r = train_features.at(i, j) - mean[j];
      sd[j] += r * r / static_cast<double>(n);
    }
  for (auto& s : sd) s = s > 0.0 ? std::sqrt(s) : 1.0;
  auto standardized = [&](const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.extent(0); ++i)
      for (std::size_t j = 0; j < f; ++j) out.at(i, j) = (x.at(i, j) - mean[j]) / sd[j];
    return out;
  };
  const Tensor xtr = standardized(train_features);
  const Tensor xte = standardized(test_features);

  std::vector<double> w(f * k, 0.0), b(k, 0.0), gw(f * k), gb(k), z(k);
  auto logits_of = [&](const Tensor& x, std::size_t i, std::vector<double>& out) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < f; ++j) s += x.at(i, j) * w[j * k + c];
      out[c] = s;
    }
  };
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      logits_of(xtr, i, z);
      auto p = stable_softmax(z, 1.0);
      p[train_labels[i]] -= 1.0;
      for (std::size_t c = 0; c < k; ++c) {
        gb[c] += p[c];
        for (std::size_t j = 0; j < f; ++j) gw[j * k + c] += xtr.at(i, j) * p[c];
      }
    }
    const double s = config.learning_rate / static_cast<double>(n);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= s * gw[i];
    for (std::size_t c = 0; c < k; ++c) b[c] -= s * gb[c];
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < xte.extent(0); ++i) {
    logits_of(xte, i, z);
    if (std::max_element(z.begin(), z.end()) - z.begin() == test_labels[i]) ++hit;
  }
  return xte.extent(0) ? static_cast<double>(hit) / static_cast<double>(xte.extent(0)) : 0.0;
}

double grad_similarity(const HomogeneousNet& net, const Batch& a, const Batch& b) {
  const auto ga = loss_grad(net, a, 1.0);
  const auto gb = loss_grad(net, b, 1.0);
  const double na = norm2(ga), nb = norm2(gb);
  if (na == 0.0 || nb == 0.0) throw DegenerateGradient("grad_similarity: zero gradient");
  return dot(ga, gb) / (na * nb);
}

LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("least_squares needs >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw InvalidInput("least_squares: x has no spread");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return fit;
}

PriorSweepResult prior_sweep(const HomogeneousNet& net, const Dataset& ds, std::size_t n_priors,
                             std::size_t subset_size, std::uint64_t seed, double temperature,
                             std::size_t threads) {
  if (n_priors < 2) throw InvalidInput("prior_sweep needs at least 2 priors");
  for (const auto& pool : ds.class_pools)
    if (pool.empty()) throw InvalidInput("prior_sweep: a class pool is empty");
  const std::size_t k = ds.num_classes;
  PriorSweepResult res;
  res.rows.resize(n_priors);
  parallel_for(n_priors, threads, [&](std::size_t i) {
    Rng rng(mix64(seed ^ (0xD1B54A32D192ED03ULL * (i + 1))));
    std::vector<double> q(k);
    double s = 0.0;
    for (auto& v : q) s += (v = rng.gamma(1.0));
    for (auto& v : q) v /= s;
    const Dataset sub = resample_by_prior(ds, q, subset_size, rng.next_u64());
    const auto lg = loss_and_grad(net, sub.batch(), temperature);
    PriorSweepRow row;
    row.prior = sub.prior();
    row.qhat = confidence_stats(lg.probs).qhat;
    double d2 = 0.0;
    for (std::size_t c = 0; c < k; ++c) d2 += (row.qhat[c] - row.prior[c]) * (row.qhat[c] - row.prior[c]);
    row.distance = std::sqrt(d2);
    row.grad_norm = norm2(lg.grad);
    res.rows[i] = std::move(row);
  });
  std::vector<double> x, y;
  for (const auto& r : res.rows) {
    x.push_back(r.distance);
    y.push_back(r.grad_norm);
  }
  res.fit = least_squares(x, y);
  return res;
}

std::vector<ScatterRow> confidence_scatter(const Batch& batch, std::vector<std::size_t> input_shape,
                                           const ScatterConfig& config, std::size_t threads) {
  if (config.n_inits < 2) throw InvalidInput("confidence_scatter needs n_inits >= 2");
  std::vector<ScatterRow> rows(config.n_inits);
  parallel_for(config.n_inits, threads, [&](std::size_t i) {
    ScatterRow row;
    row.init_seed = mix64(config.seed + 0x9E3779B97F4A7C15ULL * (i + 1));
    const HomogeneousNet net = build_net(config.arch, input_shape, batch.num_classes, row.init_seed);
    const auto lg = loss_and_grad(net, batch, config.temperature);
    row.loss = lg.loss;
    row.grad_norm = norm2(lg.grad);
    row.mean_entropy = confidence_stats(lg.probs).mean_entropy;
    const Projector r = make_projector(net.param_count(), std::min(config.d, net.param_count()),
                                       row.init_seed ^ 0x5bd1e995ULL);
    const auto dec = projected_decomposition(net, batch, config.temperature, r);
    row.curvature = curvature_report(dec.H).positive_curvature;
    row.gterm_curvature = curvature_report(dec.G).positive_curvature;
    rows[i] = row;
  });
  return rows;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidInput("spearman needs >= 2 paired values");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace gz
