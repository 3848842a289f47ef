#include "countfuse/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "countfuse/common.hpp"

namespace countfuse {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double field_half_log_det(const Eigen::SparseMatrix<double>& Q, const char* what) {
  SparseChol chol(Q);
  if (chol.info() != Eigen::Success)
    throw numeric_error(std::string(what) + ": precision not positive definite");
  return half_log_det(chol);
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::M1: return "M1";
    case Variant::M2: return "M2";
    case Variant::M3: return "M3";
  }
  return "M?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "M1" || name == "m1" || name == "1") return Variant::M1;
  if (name == "M2" || name == "m2" || name == "2") return Variant::M2;
  if (name == "M3" || name == "m3" || name == "3") return Variant::M3;
  throw input_error("unknown model variant: " + name);
}

std::vector<Point2> SurveyDataset::site_positions() const {
  std::vector<Point2> pts;
  pts.reserve(sites.size());
  for (const auto& s : sites) pts.push_back(s.pos);
  return pts;
}

double SurveyDataset::mean_count(int source) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& o : observations)
    if (o.source == source) {
      sum += o.y;
      ++n;
    }
  return n > 0 ? sum / n : 0.0;
}

bool SurveyDataset::has_all_sources() const {
  std::array<bool, 4> seen{};
  for (const auto& o : observations) seen[static_cast<std::size_t>(o.source - 1)] = true;
  return seen[0] && seen[1] && seen[2] && seen[3];
}

void SurveyDataset::validate() const {
  if (sites.empty()) throw input_error("dataset has no sites");
  if (covariates.rows() != n_sites())
    throw input_error("covariate matrix row count does not match site count");
  if (static_cast<std::size_t>(covariates.cols()) != covariate_names.size())
    throw input_error("covariate matrix column count does not match names");
  for (const auto& s : sites) {
    if (s.country != 'A' && s.country != 'B')
      throw input_error("site " + s.id + ": country must be A or B");
    if (!std::isfinite(s.pos.x) || !std::isfinite(s.pos.y))
      throw input_error("site " + s.id + ": non-finite coordinates");
  }
  for (const auto& o : observations) {
    if (o.site < 0 || o.site >= n_sites()) throw input_error("observation site index out of range");
    if (o.source < 1 || o.source > 4) throw input_error("observation source must be 1..4");
    const char c = sites[static_cast<std::size_t>(o.site)].country;
    if ((o.source <= 2 && c != 'A') || (o.source >= 3 && c != 'B')) {
      std::ostringstream msg;
      msg << "source " << o.source << " recorded at country-" << c << " site "
          << sites[static_cast<std::size_t>(o.site)].id;
      throw input_error(msg.str());
    }
    if (!(o.y >= 0.0) || !std::isfinite(o.y)) throw input_error("negative or non-finite count");
  }
  // standardization sanity, only meaningful with enough sites
  if (n_sites() >= 10) {
    for (int k = 0; k < covariates.cols(); ++k) {
      const double mean = covariates.col(k).mean();
      const double sd = std::sqrt((covariates.col(k).array() - mean).square().sum() /
                                  (covariates.rows() - 1));
      if (std::abs(mean) > 1.0 || sd < 0.05 || sd > 20.0)
        throw input_error("covariate '" + covariate_names[static_cast<std::size_t>(k)] +
                          "' does not look standardized (grid mean 0, sd 1)");
    }
  }
}

int HyperVector::dim(Variant v) {
  switch (v) {
    case Variant::M1: return 5;
    case Variant::M2: return 8;
    case Variant::M3: return 10;
  }
  return 0;
}

Eigen::VectorXd HyperVector::pack(Variant v) const {
  Eigen::VectorXd theta(dim(v));
  theta[0] = log_rho1;
  theta[1] = log_sigma1;
  int k = 2;
  if (v != Variant::M1)
    for (double ps : psi) theta[k++] = ps;
  for (double lt : log_tau) theta[k++] = lt;
  if (v == Variant::M3) {
    theta[k++] = log_rho2;
    theta[k++] = log_sigma2;
  }
  return theta;
}

HyperVector HyperVector::unpack(Variant v, const Eigen::VectorXd& theta) {
  if (theta.size() != dim(v)) throw input_error("hyperparameter vector has wrong dimension");
  HyperVector h;
  h.log_rho1 = theta[0];
  h.log_sigma1 = theta[1];
  int k = 2;
  if (v != Variant::M1)
    for (double& ps : h.psi) ps = theta[k++];
  for (double& lt : h.log_tau) lt = theta[k++];
  if (v == Variant::M3) {
    h.log_rho2 = theta[k++];
    h.log_sigma2 = theta[k++];
  }
  return h;
}

double poisson_log_pmf(double y, double eta) {
  return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
}

JointModel::JointModel(ModelSpec spec, const SurveyDataset& data, const TriMesh& mesh)
    : spec_(std::move(spec)), data_(&data), mesh_(&mesh) {
  data.validate();
  if (!spec_.covariate_names.empty() && spec_.covariate_names != data.covariate_names)
    throw input_error("model covariate names do not match the dataset");

  layout_.p = static_cast<int>(data.covariates.cols());
  layout_.n1 = mesh.n_nodes();
  layout_.n2 = spec_.variant == Variant::M3 ? mesh.n_nodes() : 0;

  const auto positions = data.site_positions();
  Projector proj = make_projector(mesh, positions);
  for (std::size_t i = 0; i < positions.size(); ++i)
    if (proj.is_outside(static_cast<int>(i)))
      throw input_error("site " + data.sites[i].id + " lies outside the mesh");
  A_sites_ = std::move(proj.A);

  const int m = data.n_obs();
  fixed_design_.resize(m, layout_.p + 1);
  y_.resize(m);
  lgamma_y1_.resize(m);
  obs_source_.resize(static_cast<std::size_t>(m));
  obs_site_.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const auto& o = data.observations[static_cast<std::size_t>(i)];
    fixed_design_(i, 0) = 1.0;
    for (int k = 0; k < layout_.p; ++k) fixed_design_(i, k + 1) = data.covariates(o.site, k);
    y_[i] = o.y;
    lgamma_y1_[i] = std::lgamma(o.y + 1.0);
    obs_source_[static_cast<std::size_t>(i)] = o.source;
    obs_site_[static_cast<std::size_t>(i)] = o.site;
  }
}

Eigen::VectorXd JointModel::default_latent_start() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout_.dim());
  const double m1 = std::max(data_->mean_count(1), 0.1);
  x[0] = std::log(m1);
  for (int j = 2; j <= 4; ++j) {
    const double mj = std::max(data_->mean_count(j), 0.1);
    x[layout_.zeta_offset() + j - 2] = std::clamp(std::log(mj / m1), -10.0, 10.0);
  }
  return x;
}

HyperVector JointModel::default_hyper_start() const {
  HyperVector h;
  h.log_rho1 = std::log(spec_.priors.pc1.rho0);
  h.log_sigma1 = std::log(0.5 * spec_.priors.pc1.sigma0);
  h.psi = {1.0, 1.0, 1.0};
  h.log_tau = {0.0, 0.0, 0.0};
  // the second field starts close to its base model (PC-prior shrinkage);
  // its posterior is nearly flat in log sigma2 when the data carry no omega2
  h.log_rho2 = std::log(spec_.priors.pc2.rho0);
  h.log_sigma2 = std::log(0.1 * spec_.priors.pc2.sigma0);
  return h;
}

JointModel::Conditional JointModel::at(const HyperVector& hyper) const {
  Conditional c;
  c.model = this;
  c.hyper = hyper;
  const auto& pr = spec_.priors;
  const LatentLayout& lay = layout_;
  const int m = static_cast<int>(y_.size());

  // observation design B: eta = B x
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(m) * (static_cast<std::size_t>(lay.p) + 8));
  for (int i = 0; i < m; ++i) {
    const int src = obs_source_[static_cast<std::size_t>(i)];
    const int site = obs_site_[static_cast<std::size_t>(i)];
    for (int k = 0; k <= lay.p; ++k) trips.emplace_back(i, lay.beta_offset() + k, fixed_design_(i, k));
    if (src >= 2) trips.emplace_back(i, lay.zeta_offset() + src - 2, 1.0);
    const double psi_tilde =
        (spec_.variant == Variant::M1 || src == 1) ? 1.0 : hyper.psi[static_cast<std::size_t>(src - 2)];
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(A_sites_, site); it;
         ++it) {
      trips.emplace_back(i, lay.w1_offset() + static_cast<int>(it.col()), psi_tilde * it.value());
      if (spec_.variant == Variant::M3 && src == 2)
        trips.emplace_back(i, lay.w2_offset() + static_cast<int>(it.col()), it.value());
    }
  }
  c.design.resize(m, lay.dim());
  c.design.setFromTriplets(trips.begin(), trips.end());
  c.design.makeCompressed();

  // latent prior precision and its half log determinant
  const Eigen::SparseMatrix<double> Q1 = spde_precision(*mesh_, hyper.field1());
  double hld = field_half_log_det(Q1, "field 1");
  std::vector<Eigen::Triplet<double>> ptrips;
  ptrips.reserve(static_cast<std::size_t>(Q1.nonZeros()) * 2 + 16);
  for (int k = 0; k <= lay.p; ++k) {
    ptrips.emplace_back(lay.beta_offset() + k, lay.beta_offset() + k, pr.beta_precision);
    hld += 0.5 * std::log(pr.beta_precision);
  }
  for (int j = 0; j < 3; ++j) {
    const double tau = std::exp(hyper.log_tau[static_cast<std::size_t>(j)]);
    ptrips.emplace_back(lay.zeta_offset() + j, lay.zeta_offset() + j, tau);
    hld += 0.5 * hyper.log_tau[static_cast<std::size_t>(j)];
  }
  for (int col = 0; col < Q1.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(Q1, col); it; ++it)
      ptrips.emplace_back(lay.w1_offset() + static_cast<int>(it.row()),
                          lay.w1_offset() + col, it.value());
  if (spec_.variant == Variant::M3) {
    const Eigen::SparseMatrix<double> Q2 = spde_precision(*mesh_, hyper.field2());
    hld += field_half_log_det(Q2, "field 2");
    for (int col = 0; col < Q2.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(Q2, col); it; ++it)
        ptrips.emplace_back(lay.w2_offset() + static_cast<int>(it.row()),
                            lay.w2_offset() + col, it.value());
  }
  c.prior_precision.resize(lay.dim(), lay.dim());
  c.prior_precision.setFromTriplets(ptrips.begin(), ptrips.end());
  c.prior_precision.makeCompressed();
  c.half_log_det_priors = hld;

  // hyperprior: PC priors with log-scale Jacobians, Normal psi, Gamma tau
  double hp = pc_prior_logpdf(std::exp(hyper.log_rho1), std::exp(hyper.log_sigma1), pr.pc1) +
              hyper.log_rho1 + hyper.log_sigma1;
  if (spec_.variant != Variant::M1) {
    for (double ps : hyper.psi)
      hp += 0.5 * std::log(pr.psi_precision / (2.0 * M_PI)) -
            0.5 * pr.psi_precision * (ps - pr.psi_mean) * (ps - pr.psi_mean);
  }
  for (double lt : hyper.log_tau) {
    const double tau = std::exp(lt);
    hp += pr.tau_shape * std::log(pr.tau_rate) - std::lgamma(pr.tau_shape) +
          (pr.tau_shape - 1.0) * std::log(tau) - pr.tau_rate * tau + lt;
  }
  if (spec_.variant == Variant::M3)
    hp += pc_prior_logpdf(std::exp(hyper.log_rho2), std::exp(hyper.log_sigma2), pr.pc2) +
          hyper.log_rho2 + hyper.log_sigma2;
  c.hyper_log_prior = hp;

  c.const_terms = -lgamma_y1_.sum() - 0.5 * kLog2Pi * lay.dim();
  return c;
}

Eigen::VectorXd JointModel::observation_predictor(const HyperVector& hyper,
                                                  const Eigen::VectorXd& latent) const {
  if (latent.size() != layout_.dim()) throw input_error("latent vector has wrong dimension");
  const Eigen::VectorXd u1 = A_sites_ * layout_.w1(latent);
  Eigen::VectorXd u2;
  if (spec_.variant == Variant::M3) u2 = A_sites_ * layout_.w2(latent);
  const Eigen::VectorXd fixed = fixed_design_ * layout_.beta(latent);
  const auto logz = layout_.log_zeta(latent);
  const int m = static_cast<int>(y_.size());
  Eigen::VectorXd eta(m);
  for (int i = 0; i < m; ++i) {
    const int src = obs_source_[static_cast<std::size_t>(i)];
    const int site = obs_site_[static_cast<std::size_t>(i)];
    const double psi_tilde =
        (spec_.variant == Variant::M1 || src == 1) ? 1.0 : hyper.psi[static_cast<std::size_t>(src - 2)];
    double e = fixed[i] + psi_tilde * u1[site];
    if (src >= 2) e += logz[src - 2];
    if (spec_.variant == Variant::M3 && src == 2) e += u2[site];
    eta[i] = e;
  }
  return eta;
}

Eigen::VectorXd JointModel::Conditional::linear_predictor(const Eigen::VectorXd& x) const {
  if (x.size() != dim()) throw input_error("latent vector has wrong dimension");
  return design * x;
}

double JointModel::Conditional::log_joint(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd eta = linear_predictor(x);
  const auto& y = model->y_;
  double ll = 0.0;
  for (int i = 0; i < eta.size(); ++i) {
    if (std::isnan(eta[i])) {
      std::ostringstream msg;
      msg << "non-finite linear predictor at observation " << i;
      throw numeric_error(msg.str());
    }
    ll += y[i] * eta[i] - std::exp(eta[i]);
  }
  const double quad = x.dot(prior_precision * x);
  return ll + const_terms + half_log_det_priors - 0.5 * quad + hyper_log_prior;
}

void JointModel::Conditional::grad_neg_hess(const Eigen::VectorXd& x, Eigen::VectorXd& grad,
                                            Eigen::SparseMatrix<double>& neg_hess) const {
  const Eigen::VectorXd eta = linear_predictor(x);
  const Eigen::VectorXd mu = eta.array().exp();
  grad = design.transpose() * (model->y_ - mu) - prior_precision * x;
  neg_hess = Eigen::SparseMatrix<double>(design.transpose() * mu.asDiagonal() * design) +
             prior_precision;
}

Eigen::VectorXd linear_predictors(const ModelSpec& spec, const Eigen::VectorXd& latent,
                                  const HyperVector& hyper, const SurveyDataset& data,
                                  const TriMesh& mesh) {
  JointModel model(spec, data, mesh);
  return model.at(hyper).linear_predictor(latent);
}

double log_joint(const ModelSpec& spec, const Eigen::VectorXd& latent, const HyperVector& hyper,
                 const SurveyDataset& data, const TriMesh& mesh) {
  JointModel model(spec, data, mesh);
  return model.at(hyper).log_joint(latent);
}

void grad_hess_latent(const ModelSpec& spec, const Eigen::VectorXd& latent,
                      const HyperVector& hyper, const SurveyDataset& data, const TriMesh& mesh,
                      Eigen::VectorXd& grad, Eigen::SparseMatrix<double>& neg_hess) {
  JointModel model(spec, data, mesh);
  model.at(hyper).grad_neg_hess(latent, grad, neg_hess);
}

}  // namespace countfuse
