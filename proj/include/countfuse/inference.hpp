#pragma once

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "countfuse/model.hpp"

namespace countfuse {

// Generic latent objective: log density (up to theta-level constants) with
// analytic gradient and negative Hessian. The joint Poisson model and the
// Gaussian test toys both fit this shape.
struct LatentProblem {
  int dim = 0;
  std::function<double(const Eigen::VectorXd&)> log_joint;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::SparseMatrix<double>&)>
      grad_neg_hess;
  // set when the Hessian sparsity pattern cannot change between iterates,
  // allowing the symbolic factorization to be reused
  bool pattern_fixed = false;
};

LatentProblem make_problem(const JointModel::Conditional& cond);

struct NewtonOptions {
  double grad_tol = 1e-8;
  int max_iter = 100;
  double jitter0 = 1e-8;
  int max_jitter_doublings = 6;
};

struct GaussianApprox {
  Eigen::VectorXd mode;
  Eigen::SparseMatrix<double> precision;  // negative Hessian at the mode
  double log_det_half = 0.0;              // 0.5 log |precision|
  double log_joint_at_mode = 0.0;
  int iterations = 0;
  std::shared_ptr<SparseChol> factor;

  Eigen::VectorXd sample(Rng& rng) const;
};

GaussianApprox inner_newton(const LatentProblem& problem, const Eigen::VectorXd& init,
                            const NewtonOptions& opts = {});

// Laplace identity: log pi(theta | y) = log_joint(mode) + d/2 log 2pi - 0.5 log|H|.
double laplace_log_posterior(const GaussianApprox& approx);

double hyper_log_posterior(const JointModel& model, const HyperVector& hyper,
                           Eigen::VectorXd* warm_start = nullptr,
                           const NewtonOptions& opts = {});

struct NelderMeadResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

// Derivative-free simplex maximization, deterministic.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, double init_step, double f_tol,
                             int max_evals, int stall_window = 0);

struct FitOptions {
  int nm_max_evals = 2000;
  double nm_tol = 1e-4;
  double nm_init_step = 0.4;
  int nm_stall_window = 200;  // stop after this many evals without nm_tol improvement
  double fd_step = 0.1;          // finite-difference step for the hyper Hessian
  double ccd_radius = 1.1;       // star-design radius in standardized coordinates
  int n_samples = 10000;
  std::uint64_t seed = 1;
  NewtonOptions newton;
  std::optional<Eigen::VectorXd> theta_start;
};

struct ParamSummary {
  double mean = 0.0, sd = 0.0, q025 = 0.0, q50 = 0.0, q975 = 0.0;
};

ParamSummary summarize(std::vector<double> draws);

struct PosteriorFit {
  Variant variant = Variant::M1;
  LatentLayout layout;
  std::vector<std::string> covariate_names;
  Eigen::VectorXd theta_mode;
  std::vector<Eigen::VectorXd> design_points;   // explored hyper values
  Eigen::VectorXd design_log_post;
  Eigen::VectorXd weights;                      // normalized, sum 1
  std::vector<GaussianApprox> design_approx;
  Eigen::MatrixXd hyper_samples;   // n_samples x hyper dim
  Eigen::MatrixXd latent_samples;  // n_samples x latent dim
  std::map<std::string, ParamSummary> summaries;
  std::uint64_t seed = 0;
  int nm_evals = 0;

  std::vector<std::string> parameter_names() const;
  // per-sample value of one named parameter (beta / zeta / psi / rho / sigma / tau)
  Eigen::VectorXd parameter_draws(const std::string& name) const;
};

std::vector<std::string> fit_parameter_names(Variant v,
                                             const std::vector<std::string>& covariate_names);

PosteriorFit fit_model(const JointModel& model, const FitOptions& opts);
PosteriorFit fit(const ModelSpec& spec, const SurveyDataset& data, const TriMesh& mesh,
                 const FitOptions& opts);

// n fresh joint draws from the stored mixture; deterministic given seed.
void sample_posterior(const PosteriorFit& fit, int n, std::uint64_t seed,
                      Eigen::MatrixXd& hyper_out, Eigen::MatrixXd& latent_out);

}  // namespace countfuse
