#pragma once

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cstdint>
#include <memory>

#include "countfuse/mesh.hpp"
#include "countfuse/rng.hpp"

namespace countfuse {

// Matern covariance parameters in the range/sd parameterization,
// rho = sqrt(8)/kappa. Smoothness nu is fixed to 1.
struct MaternParams {
  double rho = 0.0;    // meters
  double sigma = 0.0;  // marginal standard deviation

  double kappa() const { return std::sqrt(8.0) / rho; }
};

// Tail-probability statements P(rho < rho0) = alpha_rho, P(sigma > sigma0) = alpha_sigma.
struct PcPriorSpec {
  double rho0 = 0.0;
  double alpha_rho = 0.0;
  double sigma0 = 0.0;
  double alpha_sigma = 0.0;

  double lambda_rho() const { return -std::log(alpha_rho) * rho0; }
  double lambda_sigma() const { return -std::log(alpha_sigma) / sigma0; }
  // prior median of the range, used for default buffer widths
  double rho_median() const { return lambda_rho() / std::log(2.0); }
};

double matern_cov(double h, const MaternParams& p);

// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G), the nu=1 (alpha=2, d=2)
// GMRF representation on the mesh, calibrated so marginal variances approach
// sigma^2 away from the mesh boundary.
Eigen::SparseMatrix<double> spde_precision(const TriMesh& mesh, const MaternParams& p);

// log pi(rho, sigma) of the range/sd PC prior pair for d=2:
//   pi(rho)   = lambda_rho rho^{-2} exp(-lambda_rho / rho)
//   pi(sigma) = lambda_sigma exp(-lambda_sigma sigma)
double pc_prior_logpdf(double rho, double sigma, const PcPriorSpec& spec);

using SparseChol = Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>;

// 0.5 log|Q| from a computed factorization
double half_log_det(const SparseChol& chol);

// Factorizes Q once and draws exact N(0, Q^{-1}) samples.
class GrfSampler {
 public:
  explicit GrfSampler(const Eigen::SparseMatrix<double>& Q);
  Eigen::VectorXd sample(Rng& rng) const;
  double half_log_det() const { return half_log_det_; }
  const SparseChol& factor() const { return *chol_; }

 private:
  std::shared_ptr<SparseChol> chol_;
  double half_log_det_ = 0.0;
  int n_ = 0;
};

Eigen::VectorXd sample_grf(const Eigen::SparseMatrix<double>& Q, std::uint64_t seed);

}  // namespace countfuse
