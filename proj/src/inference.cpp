#include "countfuse/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "countfuse/common.hpp"

namespace countfuse {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// factorize with escalating diagonal jitter; unless the problem guarantees a
// fixed pattern, entries can cancel to structural zeros between calls, so the
// symbolic analysis is re-run each time
std::shared_ptr<SparseChol> factorize_spd(const Eigen::SparseMatrix<double>& H,
                                          const NewtonOptions& opts,
                                          std::shared_ptr<SparseChol>& chol,
                                          bool reuse_symbolic = false,
                                          bool* jittered = nullptr) {
  if (!chol) chol = std::make_shared<SparseChol>();
  if (jittered) *jittered = false;
  if (reuse_symbolic) {
    chol->factorize(H);
  } else {
    chol->compute(H);
  }
  if (chol->info() == Eigen::Success) return chol;
  double scale = 0.0;
  for (int i = 0; i < H.rows(); ++i) scale = std::max(scale, H.coeff(i, i));
  if (scale <= 0.0) scale = 1.0;
  Eigen::SparseMatrix<double> I(H.rows(), H.cols());
  I.setIdentity();
  double jitter = opts.jitter0 * scale;
  for (int k = 0; k <= opts.max_jitter_doublings; ++k) {
    const Eigen::SparseMatrix<double> Hj = H + Eigen::SparseMatrix<double>(jitter * I);
    chol->compute(Hj);  // jittered pattern: the symbolic analysis is replaced
    if (chol->info() == Eigen::Success) {
      if (jittered) *jittered = true;
      return chol;
    }
    jitter *= 2.0;
  }
  throw numeric_error("Newton step: Hessian not positive definite after jitter escalation");
}

}  // namespace

LatentProblem make_problem(const JointModel::Conditional& cond) {
  LatentProblem p;
  p.dim = cond.dim();
  p.pattern_fixed = true;
  p.log_joint = [&cond](const Eigen::VectorXd& x) { return cond.log_joint(x); };
  p.grad_neg_hess = [&cond](const Eigen::VectorXd& x, Eigen::VectorXd& g,
                            Eigen::SparseMatrix<double>& H) { cond.grad_neg_hess(x, g, H); };
  return p;
}

Eigen::VectorXd GaussianApprox::sample(Rng& rng) const {
  Eigen::VectorXd z(mode.size());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
  Eigen::VectorXd u = factor->matrixU().solve(z);
  return mode + factor->permutationPinv() * u;
}

GaussianApprox inner_newton(const LatentProblem& problem, const Eigen::VectorXd& init,
                            const NewtonOptions& opts) {
  if (init.size() != problem.dim) throw input_error("inner_newton: init has wrong dimension");
  Eigen::VectorXd x = init;
  double f = problem.log_joint(x);
  if (!std::isfinite(f)) throw numeric_error("inner_newton: objective not finite at init");

  Eigen::VectorXd g;
  Eigen::SparseMatrix<double> H;
  std::shared_ptr<SparseChol> chol;
  bool analyzed = false;
  int iter = 0;
  for (; iter <= opts.max_iter; ++iter) {
    problem.grad_neg_hess(x, g, H);
    if (!g.allFinite()) throw numeric_error("inner_newton: non-finite gradient");
    if (g.norm() < opts.grad_tol) break;
    if (iter == opts.max_iter) {
      std::ostringstream msg;
      msg << "inner_newton did not converge in " << opts.max_iter
          << " iterations (|grad| = " << g.norm() << ")";
      throw numeric_error(msg.str());
    }
    if (problem.pattern_fixed && !analyzed) {
      chol = std::make_shared<SparseChol>();
      chol->analyzePattern(H);
      analyzed = true;
    }
    bool jittered = false;
    factorize_spd(H, opts, chol, problem.pattern_fixed, &jittered);
    if (jittered) analyzed = false;
    const Eigen::VectorXd step = chol->solve(g);
    double t = 1.0;
    bool accepted = false;
    const double floor = f - 1e-10 * (1.0 + std::abs(f));
    for (int halving = 0; halving < 40; ++halving) {
      const Eigen::VectorXd xc = x + t * step;
      const double fc = problem.log_joint(xc);
      if (std::isfinite(fc) && fc > floor) {
        x = xc;
        f = fc;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // stalled at numerical precision; accept if the gradient is already small
      if (g.norm() < 1e4 * opts.grad_tol) break;
      std::ostringstream msg;
      msg << "inner_newton stalled at iteration " << iter << " (|grad| = " << g.norm() << ")";
      throw numeric_error(msg.str());
    }
  }

  problem.grad_neg_hess(x, g, H);
  if (problem.pattern_fixed && !analyzed) {
    chol = std::make_shared<SparseChol>();
    chol->analyzePattern(H);
    analyzed = true;
  }
  bool jittered = false;
  factorize_spd(H, opts, chol, problem.pattern_fixed, &jittered);
  (void)jittered;  // final factor may carry jitter; precision reflects H regardless
  GaussianApprox approx;
  approx.mode = x;
  approx.precision = H;
  approx.factor = chol;
  approx.log_det_half = half_log_det(*chol);
  approx.log_joint_at_mode = f;
  approx.iterations = iter;
  return approx;
}

double laplace_log_posterior(const GaussianApprox& approx) {
  return approx.log_joint_at_mode + 0.5 * kLog2Pi * approx.mode.size() - approx.log_det_half;
}

double hyper_log_posterior(const JointModel& model, const HyperVector& hyper,
                           Eigen::VectorXd* warm_start, const NewtonOptions& opts) {
  const JointModel::Conditional cond = model.at(hyper);
  const LatentProblem problem = make_problem(cond);
  Eigen::VectorXd init = model.default_latent_start();
  if (warm_start && warm_start->size() == problem.dim &&
      std::isfinite(cond.log_joint(*warm_start)))
    init = *warm_start;
  const GaussianApprox approx = inner_newton(problem, init, opts);
  if (warm_start) *warm_start = approx.mode;
  return laplace_log_posterior(approx);
}

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, double init_step, double f_tol,
                             int max_evals, int stall_window) {
  const int d = static_cast<int>(x0.size());
  int evals = 0;
  double best_seen = -std::numeric_limits<double>::infinity();
  int evals_at_best = 0;
  const auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    if (v > best_seen + f_tol) {
      best_seen = v;
      evals_at_best = evals;
    }
    return v;
  };

  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(d) + 1, x0);
  std::vector<double> fs(static_cast<std::size_t>(d) + 1);
  fs[0] = eval(xs[0]);
  for (int k = 0; k < d; ++k) {
    xs[static_cast<std::size_t>(k) + 1][k] += init_step;
    fs[static_cast<std::size_t>(k) + 1] = eval(xs[static_cast<std::size_t>(k) + 1]);
  }
  std::vector<int> order(static_cast<std::size_t>(d) + 1);
  const auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return fs[static_cast<std::size_t>(a)] > fs[static_cast<std::size_t>(b)];
    });
  };

  NelderMeadResult res;
  while (true) {
    sort_simplex();
    const int best = order[0], worst = order[static_cast<std::size_t>(d)];
    const int second_worst = order[static_cast<std::size_t>(d) - 1];
    if (fs[static_cast<std::size_t>(best)] - fs[static_cast<std::size_t>(worst)] < f_tol) {
      res.converged = true;
      break;
    }
    // nearly flat ridge: no improvement beyond f_tol for a full window
    if (stall_window > 0 && evals - evals_at_best >= stall_window) {
      res.converged = true;
      break;
    }
    if (evals >= max_evals) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d);
    for (int i = 0; i <= d; ++i)
      if (i != worst) centroid += xs[static_cast<std::size_t>(i)];
    centroid /= static_cast<double>(d);

    const Eigen::VectorXd xr = centroid + (centroid - xs[static_cast<std::size_t>(worst)]);
    const double fr = eval(xr);
    if (fr > fs[static_cast<std::size_t>(best)]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xs[static_cast<std::size_t>(worst)]);
      const double fe = eval(xe);
      if (fe > fr) {
        xs[static_cast<std::size_t>(worst)] = xe;
        fs[static_cast<std::size_t>(worst)] = fe;
      } else {
        xs[static_cast<std::size_t>(worst)] = xr;
        fs[static_cast<std::size_t>(worst)] = fr;
      }
    } else if (fr > fs[static_cast<std::size_t>(second_worst)]) {
      xs[static_cast<std::size_t>(worst)] = xr;
      fs[static_cast<std::size_t>(worst)] = fr;
    } else {
      const bool outside = fr > fs[static_cast<std::size_t>(worst)];
      Eigen::VectorXd xc;
      if (outside)
        xc = centroid + 0.5 * (centroid - xs[static_cast<std::size_t>(worst)]);
      else
        xc = centroid - 0.5 * (centroid - xs[static_cast<std::size_t>(worst)]);
      const double fc = eval(xc);
      if ((outside && fc >= fr) || (!outside && fc > fs[static_cast<std::size_t>(worst)])) {
        xs[static_cast<std::size_t>(worst)] = xc;
        fs[static_cast<std::size_t>(worst)] = fc;
      } else {
        // shrink toward the best vertex
        for (int i = 0; i <= d; ++i) {
          if (i == best) continue;
          xs[static_cast<std::size_t>(i)] =
              xs[static_cast<std::size_t>(best)] +
              0.5 * (xs[static_cast<std::size_t>(i)] - xs[static_cast<std::size_t>(best)]);
          fs[static_cast<std::size_t>(i)] = eval(xs[static_cast<std::size_t>(i)]);
        }
      }
    }
  }
  sort_simplex();
  res.x = xs[static_cast<std::size_t>(order[0])];
  res.f = fs[static_cast<std::size_t>(order[0])];
  res.evals = evals;
  return res;
}

ParamSummary summarize(std::vector<double> draws) {
  ParamSummary s;
  const std::size_t n = draws.size();
  if (n == 0) return s;
  double mean = 0.0;
  for (double v : draws) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : draws) ss += (v - mean) * (v - mean);
  s.mean = mean;
  s.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  std::sort(draws.begin(), draws.end());
  const auto quantile = [&](double p) {
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, n - 1);
    return draws[lo] + (h - std::floor(h)) * (draws[hi] - draws[lo]);
  };
  s.q025 = quantile(0.025);
  s.q50 = quantile(0.5);
  s.q975 = quantile(0.975);
  return s;
}

std::vector<std::string> fit_parameter_names(Variant v,
                                             const std::vector<std::string>& covariate_names) {
  std::vector<std::string> names;
  names.emplace_back("Intercept");
  for (const auto& c : covariate_names) names.push_back(c);
  for (int j = 2; j <= 4; ++j) names.push_back("zeta" + std::to_string(j));
  if (v != Variant::M1)
    for (int j = 2; j <= 4; ++j) names.push_back("psi" + std::to_string(j));
  names.emplace_back("rho1");
  names.emplace_back("sigma1");
  for (int j = 2; j <= 4; ++j) names.push_back("tau" + std::to_string(j));
  if (v == Variant::M3) {
    names.emplace_back("rho2");
    names.emplace_back("sigma2");
  }
  return names;
}

std::vector<std::string> PosteriorFit::parameter_names() const {
  return fit_parameter_names(variant, covariate_names);
}

Eigen::VectorXd PosteriorFit::parameter_draws(const std::string& name) const {
  const int n = static_cast<int>(latent_samples.rows());
  const auto latent_col = [&](int c) { return latent_samples.col(c); };
  if (name == "Intercept") return latent_col(0);
  for (std::size_t k = 0; k < covariate_names.size(); ++k)
    if (covariate_names[k] == name) return latent_col(static_cast<int>(k) + 1);
  for (int j = 2; j <= 4; ++j) {
    if (name == "zeta" + std::to_string(j))
      return latent_col(layout.zeta_offset() + j - 2).array().exp();
  }
  // hyper-block parameters
  int k = 2;
  const auto hyper_col = [&](int c, bool expo) -> Eigen::VectorXd {
    return expo ? Eigen::VectorXd(hyper_samples.col(c).array().exp())
                : Eigen::VectorXd(hyper_samples.col(c));
  };
  if (name == "rho1") return hyper_col(0, true);
  if (name == "sigma1") return hyper_col(1, true);
  if (variant != Variant::M1) {
    for (int j = 2; j <= 4; ++j)
      if (name == "psi" + std::to_string(j)) return hyper_col(k + j - 2, false);
    k += 3;
  }
  for (int j = 2; j <= 4; ++j)
    if (name == "tau" + std::to_string(j)) return hyper_col(k + j - 2, true);
  k += 3;
  if (variant == Variant::M3) {
    if (name == "rho2") return hyper_col(k, true);
    if (name == "sigma2") return hyper_col(k + 1, true);
  }
  (void)n;
  throw input_error("unknown parameter name: " + name);
}

namespace {

void draw_samples(const std::vector<GaussianApprox>& approx,
                  const std::vector<Eigen::VectorXd>& design_points,
                  const Eigen::VectorXd& weights, int n, std::uint64_t seed,
                  Eigen::MatrixXd& hyper_out, Eigen::MatrixXd& latent_out) {
  const int hdim = static_cast<int>(design_points.front().size());
  const int ldim = static_cast<int>(approx.front().mode.size());
  hyper_out.resize(n, hdim);
  latent_out.resize(n, ldim);
  Eigen::VectorXd cumulative(weights.size());
  double acc = 0.0;
  for (int i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cumulative[i] = acc;
  }
  Rng rng(seed);
  for (int s = 0; s < n; ++s) {
    const double u = rng.uniform() * acc;
    int m = 0;
    while (m + 1 < cumulative.size() && u > cumulative[m]) ++m;
    hyper_out.row(s) = design_points[static_cast<std::size_t>(m)].transpose();
    latent_out.row(s) = approx[static_cast<std::size_t>(m)].sample(rng).transpose();
  }
}

}  // namespace

PosteriorFit fit_model(const JointModel& model, const FitOptions& opts) {
  if (!model.data().has_all_sources())
    throw input_error("fit requires observations from all four sources");
  const Variant variant = model.spec().variant;
  const int hdim = model.hyper_dim();

  Eigen::VectorXd warm = model.default_latent_start();
  int hyper_evals = 0;
  const auto objective = [&](const Eigen::VectorXd& theta) {
    ++hyper_evals;
    try {
      return hyper_log_posterior(model, HyperVector::unpack(variant, theta), &warm, opts.newton);
    } catch (const numeric_error&) {
      return -1e300;  // reject this region
    }
  };

  Eigen::VectorXd theta0 = opts.theta_start ? *opts.theta_start
                                            : model.default_hyper_start().pack(variant);
  if (theta0.size() != hdim) throw input_error("theta_start has wrong dimension");

  const NelderMeadResult nm = nelder_mead(objective, theta0, opts.nm_init_step, opts.nm_tol,
                                          opts.nm_max_evals, opts.nm_stall_window);
  if (!nm.converged) {
    std::ostringstream msg;
    msg << "hyperparameter optimizer did not converge after " << nm.evals
        << " evaluations; best log-posterior " << nm.f << " at theta [";
    for (int i = 0; i < nm.x.size(); ++i) msg << (i ? ", " : "") << nm.x[i];
    msg << "]";
    throw numeric_error(msg.str());
  }
  const Eigen::VectorXd theta_hat = nm.x;

  // finite-difference curvature of the hyper log posterior at the mode
  const double f0 = objective(theta_hat);
  Eigen::MatrixXd curv(hdim, hdim);
  const double h = opts.fd_step;
  for (int k = 0; k < hdim; ++k) {
    Eigen::VectorXd tp = theta_hat, tm = theta_hat;
    tp[k] += h;
    tm[k] -= h;
    curv(k, k) = -(objective(tp) + objective(tm) - 2.0 * f0) / (h * h);
  }
  for (int k = 0; k < hdim; ++k) {
    for (int l = k + 1; l < hdim; ++l) {
      Eigen::VectorXd tpp = theta_hat, tpm = theta_hat, tmp = theta_hat, tmm = theta_hat;
      tpp[k] += h; tpp[l] += h;
      tpm[k] += h; tpm[l] -= h;
      tmp[k] -= h; tmp[l] += h;
      tmm[k] -= h; tmm[l] -= h;
      const double v = -(objective(tpp) - objective(tpm) - objective(tmp) + objective(tmm)) /
                       (4.0 * h * h);
      curv(k, l) = v;
      curv(l, k) = v;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(curv);
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(1e-3);

  // star design: mode plus +/- radius along each curvature eigendirection
  std::vector<Eigen::VectorXd> points;
  points.push_back(theta_hat);
  for (int k = 0; k < hdim; ++k) {
    const Eigen::VectorXd dir = eig.eigenvectors().col(k) * (opts.ccd_radius / std::sqrt(lam[k]));
    points.push_back(theta_hat + dir);
    points.push_back(theta_hat - dir);
  }

  PosteriorFit fitres;
  fitres.variant = variant;
  fitres.layout = model.layout();
  fitres.covariate_names = model.data().covariate_names;
  fitres.theta_mode = theta_hat;
  fitres.seed = opts.seed;

  for (const auto& theta : points) {
    const HyperVector hv = HyperVector::unpack(variant, theta);
    try {
      const JointModel::Conditional cond = model.at(hv);
      const LatentProblem problem = make_problem(cond);
      Eigen::VectorXd init = warm;
      if (!std::isfinite(cond.log_joint(init))) init = model.default_latent_start();
      GaussianApprox approx = inner_newton(problem, init, opts.newton);
      fitres.design_points.push_back(theta);
      fitres.design_approx.push_back(std::move(approx));
    } catch (const numeric_error&) {
      if (fitres.design_points.empty())
        throw;  // the mode itself must evaluate
    }
  }
  const std::size_t npts = fitres.design_points.size();
  fitres.design_log_post.resize(static_cast<Eigen::Index>(npts));
  for (std::size_t m = 0; m < npts; ++m)
    fitres.design_log_post[static_cast<Eigen::Index>(m)] =
        laplace_log_posterior(fitres.design_approx[m]);
  const double lmax = fitres.design_log_post.maxCoeff();
  Eigen::VectorXd w = (fitres.design_log_post.array() - lmax).exp();
  fitres.weights = w / w.sum();
  fitres.nm_evals = hyper_evals;

  draw_samples(fitres.design_approx, fitres.design_points, fitres.weights, opts.n_samples,
               derive_seed(opts.seed, 0xf17), fitres.hyper_samples, fitres.latent_samples);

  for (const auto& name : fitres.parameter_names()) {
    const Eigen::VectorXd draws = fitres.parameter_draws(name);
    fitres.summaries[name] = summarize(std::vector<double>(draws.begin(), draws.end()));
  }
  return fitres;
}

PosteriorFit fit(const ModelSpec& spec, const SurveyDataset& data, const TriMesh& mesh,
                 const FitOptions& opts) {
  const JointModel model(spec, data, mesh);
  return fit_model(model, opts);
}

void sample_posterior(const PosteriorFit& fit, int n, std::uint64_t seed,
                      Eigen::MatrixXd& hyper_out, Eigen::MatrixXd& latent_out) {
  if (fit.design_approx.empty()) throw input_error("sample_posterior: fit has no design points");
  draw_samples(fit.design_approx, fit.design_points, fit.weights, n, seed, hyper_out, latent_out);
}

}  // namespace countfuse
