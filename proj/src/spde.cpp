#include "countfuse/spde.hpp"

#include <cmath>
#include <sstream>

#include "countfuse/common.hpp"

namespace countfuse {

double matern_cov(double h, const MaternParams& p) {
  if (!(p.rho > 0.0) || !(p.sigma > 0.0)) throw input_error("matern_cov: rho, sigma must be positive");
  if (h < 0.0) throw input_error("matern_cov: negative distance");
  const double s2 = p.sigma * p.sigma;
  if (h == 0.0) return s2;
  const double kh = p.kappa() * h;
  if (kh > 700.0) return 0.0;  // K_1 underflows
  return s2 * kh * std::cyl_bessel_k(1.0, kh);
}

Eigen::SparseMatrix<double> spde_precision(const TriMesh& mesh, const MaternParams& p) {
  if (!(p.rho > 0.0) || !(p.sigma > 0.0)) throw input_error("spde_precision: rho, sigma must be positive");
  const double kappa = p.kappa();
  const double k2 = kappa * kappa;
  const double tau2 = 1.0 / (4.0 * M_PI * k2 * p.sigma * p.sigma);

  const Eigen::VectorXd& c = mesh.mass;
  if ((c.array() <= 0.0).any()) throw numeric_error("spde_precision: singular lumped mass matrix");
  const auto& G = mesh.stiffness;
  const Eigen::SparseMatrix<double> GCG =
      G * c.cwiseInverse().asDiagonal() * G;

  Eigen::SparseMatrix<double> Q = GCG;
  Q += Eigen::SparseMatrix<double>((2.0 * k2) * G);
  Eigen::SparseMatrix<double> Cd(mesh.n_nodes(), mesh.n_nodes());
  Cd.reserve(Eigen::VectorXi::Constant(mesh.n_nodes(), 1));
  for (int i = 0; i < mesh.n_nodes(); ++i) Cd.insert(i, i) = k2 * k2 * c[i];
  Q += Cd;
  Q *= tau2;
  Q.makeCompressed();
  return Q;
}

double pc_prior_logpdf(double rho, double sigma, const PcPriorSpec& spec) {
  if (!(rho > 0.0) || !(sigma > 0.0))
    throw input_error("pc_prior_logpdf: rho and sigma must be positive");
  const double lr = spec.lambda_rho();
  const double ls = spec.lambda_sigma();
  return std::log(lr) - 2.0 * std::log(rho) - lr / rho + std::log(ls) - ls * sigma;
}

double half_log_det(const SparseChol& chol) {
  const Eigen::SparseMatrix<double> L = chol.matrixL();
  return L.diagonal().array().log().sum();
}

GrfSampler::GrfSampler(const Eigen::SparseMatrix<double>& Q)
    : chol_(std::make_shared<SparseChol>()), n_(static_cast<int>(Q.rows())) {
  chol_->compute(Q);
  if (chol_->info() != Eigen::Success) {
    // locate the first non-positive pivot for the error report
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Q);
    int bad = -1;
    if (ldlt.info() == Eigen::Success) {
      const Eigen::VectorXd d = ldlt.vectorD();
      for (int i = 0; i < d.size(); ++i)
        if (!(d[i] > 0.0)) {
          bad = i;
          break;
        }
    }
    std::ostringstream msg;
    msg << "precision matrix not positive definite";
    if (bad >= 0) msg << " (leading minor " << bad + 1 << ")";
    throw numeric_error(msg.str());
  }
  half_log_det_ = countfuse::half_log_det(*chol_);
}

Eigen::VectorXd GrfSampler::sample(Rng& rng) const {
  Eigen::VectorXd z(n_);
  for (int i = 0; i < n_; ++i) z[i] = rng.normal();
  // Q = P' L L' P  =>  x = P^{-1} L^{-T} z  ~  N(0, Q^{-1})
  Eigen::VectorXd u = chol_->matrixU().solve(z);
  return chol_->permutationPinv() * u;
}

Eigen::VectorXd sample_grf(const Eigen::SparseMatrix<double>& Q, std::uint64_t seed) {
  GrfSampler sampler(Q);
  Rng rng(seed);
  return sampler.sample(rng);
}

}  // namespace countfuse
