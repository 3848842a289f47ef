#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "countfuse/common.hpp"
#include "countfuse/model.hpp"
#include "countfuse/spde.hpp"
#include "toy.hpp"

using namespace countfuse;
using countfuse::testing::Toy;
using countfuse::testing::make_toy;

namespace {

HyperVector toy_hyper(double extent = 10000.0) {
  HyperVector h;
  h.log_rho1 = std::log(0.4 * extent);
  h.log_sigma1 = std::log(0.7);
  h.psi = {1.3, 0.9, 1.1};
  h.log_tau = {0.2, -0.4, 0.1};
  h.log_rho2 = std::log(0.2 * extent);
  h.log_sigma2 = std::log(0.5);
  return h;
}

Eigen::VectorXd random_latent(const LatentLayout& lay, std::uint64_t seed, double field_scale = 0.3) {
  Rng rng(seed);
  Eigen::VectorXd x(lay.dim());
  for (int i = 0; i < lay.dim(); ++i) x[i] = field_scale * rng.normal();
  x[0] = 3.0 + 0.2 * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("poisson log pmf reference values") {
  // 3 ln 2 - 2 - ln 6, hand evaluation
  CHECK(poisson_log_pmf(3.0, std::log(2.0)) ==
        doctest::Approx(-1.7123179275482191).epsilon(1e-12));
  CHECK(poisson_log_pmf(0.0, 0.0) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("poisson term is unimodal in the linear predictor") {
  const double y = 7.0;
  const double eta_star = std::log(y);
  const auto f = [&](double eta) { return y * eta - std::exp(eta); };
  for (double d = 0.1; d < 3.0; d += 0.3) {
    CHECK(f(eta_star) > f(eta_star + d));
    CHECK(f(eta_star) > f(eta_star - d));
    CHECK(f(eta_star + d) > f(eta_star + d + 0.1));
    CHECK(f(eta_star - d) > f(eta_star - d - 0.1));
  }
}

TEST_CASE("hyper vector packs to the variant-specific dimension") {
  const HyperVector h = toy_hyper();
  CHECK(h.pack(Variant::M1).size() == 5);
  CHECK(h.pack(Variant::M2).size() == 8);
  CHECK(h.pack(Variant::M3).size() == 10);
  const Eigen::VectorXd t = h.pack(Variant::M3);
  const HyperVector back = HyperVector::unpack(Variant::M3, t);
  CHECK(back.pack(Variant::M3) == t);
  CHECK_THROWS_AS(HyperVector::unpack(Variant::M1, t), input_error);
}

TEST_CASE("single-source linear predictor is the design dot product") {
  // one country-A site, one source-1 observation, beta = (4.70, -0.20), X = 0.5
  SurveyDataset data;
  data.sites.push_back({"s0", {500.0, 500.0}, 'A'});
  data.observations.push_back({0, 1, 10.0});
  data.covariates.resize(1, 1);
  data.covariates(0, 0) = 0.5;
  data.covariate_names = {"PREC"};
  const TriMesh mesh = build_mesh(DomainSpec::rectangle(0, 0, 1000, 1000, 400, 400, 0));

  ModelSpec spec;
  spec.variant = Variant::M1;
  const JointModel model(spec, data, mesh);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(model.layout().dim());
  x[0] = 4.70;
  x[1] = -0.20;
  HyperVector h;
  const Eigen::VectorXd eta = model.at(h).linear_predictor(x);
  REQUIRE(eta.size() == 1);
  CHECK(eta[0] == doctest::Approx(4.60).epsilon(1e-15));
}

TEST_CASE("model reductions are bit-exact") {
  const Toy toy = make_toy(8, 5, 11);
  HyperVector h = toy_hyper();

  ModelSpec s1;
  s1.variant = Variant::M1;
  ModelSpec s2 = s1;
  s2.variant = Variant::M2;
  ModelSpec s3 = s1;
  s3.variant = Variant::M3;

  const JointModel m1(s1, toy.data, toy.mesh);
  const JointModel m2(s2, toy.data, toy.mesh);
  const JointModel m3(s3, toy.data, toy.mesh);

  SUBCASE("M2 with psi = 1 equals M1") {
    HyperVector hp = h;
    hp.psi = {1.0, 1.0, 1.0};
    const Eigen::VectorXd x = random_latent(m1.layout(), 5);
    const Eigen::VectorXd e1 = m1.at(hp).linear_predictor(x);
    const Eigen::VectorXd e2 = m2.at(hp).linear_predictor(x);
    CHECK((e1 - e2).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("M3 with w2 = 0 equals M2") {
    const Eigen::VectorXd x2 = random_latent(m2.layout(), 6);
    Eigen::VectorXd x3 = Eigen::VectorXd::Zero(m3.layout().dim());
    x3.head(x2.size()) = x2;
    const Eigen::VectorXd e2 = m2.at(h).linear_predictor(x2);
    const Eigen::VectorXd e3 = m3.at(h).linear_predictor(x3);
    CHECK((e2 - e3).lpNorm<Eigen::Infinity>() == 0.0);
  }

  SUBCASE("M2 psi=1 log joint differs from M1 by the psi prior constant only") {
    HyperVector hp = h;
    hp.psi = {1.0, 1.0, 1.0};
    const Eigen::VectorXd x = random_latent(m1.layout(), 7);
    const double l1 = m1.at(hp).log_joint(x);
    const double l2 = m2.at(hp).log_joint(x);
    const double psi_const = 3.0 * 0.5 * std::log(0.1 / (2.0 * M_PI));
    CHECK(l2 - l1 == doctest::Approx(psi_const).epsilon(1e-12));
  }
}

TEST_CASE("log joint matches an independently computed block decomposition") {
  const Toy toy = make_toy(6, 4, 21);
  ModelSpec spec;
  spec.variant = Variant::M3;
  const JointModel model(spec, toy.data, toy.mesh);
  const HyperVector h = toy_hyper();
  const Eigen::VectorXd x = random_latent(model.layout(), 13);
  const double got = model.at(h).log_joint(x);

  // oracle: every block recomputed with dense linear algebra
  const LatentLayout& lay = model.layout();
  const Eigen::VectorXd beta = lay.beta(x);
  const Eigen::VectorXd logz = lay.log_zeta(x);
  const Eigen::VectorXd w1 = lay.w1(x);
  const Eigen::VectorXd w2 = lay.w2(x);

  const auto positions = toy.data.site_positions();
  const Projector proj = make_projector(toy.mesh, positions);
  const Eigen::VectorXd u1 = proj.A * w1;
  const Eigen::VectorXd u2 = proj.A * w2;

  double want = 0.0;
  for (const auto& o : toy.data.observations) {
    const double psi_t = o.source == 1 ? 1.0 : h.psi[static_cast<std::size_t>(o.source - 2)];
    double eta = beta[0] + beta[1] * toy.data.covariates(o.site, 0);
    if (o.source >= 2) eta += logz[o.source - 2];
    eta += psi_t * u1[o.site];
    if (o.source == 2) eta += u2[o.site];
    want += poisson_log_pmf(o.y, eta);
  }
  const auto gmrf_dense = [](const Eigen::VectorXd& w, const Eigen::MatrixXd& Q) {
    const double n = static_cast<double>(w.size());
    const double logdet = Eigen::LDLT<Eigen::MatrixXd>(Q).vectorD().array().log().sum();
    return -0.5 * n * std::log(2.0 * M_PI) + 0.5 * logdet - 0.5 * w.dot(Q * w);
  };
  want += gmrf_dense(w1, Eigen::MatrixXd(spde_precision(toy.mesh, h.field1())));
  want += gmrf_dense(w2, Eigen::MatrixXd(spde_precision(toy.mesh, h.field2())));
  for (int k = 0; k < beta.size(); ++k)
    want += 0.5 * std::log(0.01 / (2.0 * M_PI)) - 0.5 * 0.01 * beta[k] * beta[k];
  for (int j = 0; j < 3; ++j) {
    const double tau = std::exp(h.log_tau[static_cast<std::size_t>(j)]);
    want += 0.5 * std::log(tau / (2.0 * M_PI)) - 0.5 * tau * logz[j] * logz[j];
  }
  const PriorBlocks& pr = spec.priors;
  want += pc_prior_logpdf(std::exp(h.log_rho1), std::exp(h.log_sigma1), pr.pc1) + h.log_rho1 +
          h.log_sigma1;
  want += pc_prior_logpdf(std::exp(h.log_rho2), std::exp(h.log_sigma2), pr.pc2) + h.log_rho2 +
          h.log_sigma2;
  for (double ps : h.psi)
    want += 0.5 * std::log(pr.psi_precision / (2.0 * M_PI)) -
            0.5 * pr.psi_precision * (ps - pr.psi_mean) * (ps - pr.psi_mean);
  for (double lt : h.log_tau)
    want += std::log(pr.tau_rate) - pr.tau_rate * std::exp(lt) + lt;

  CHECK(got == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("intercept shifts are equivalent to scaling all source means") {
  const Toy toy = make_toy(6, 4, 31);
  ModelSpec spec;
  spec.variant = Variant::M1;
  const JointModel model(spec, toy.data, toy.mesh);
  const HyperVector h = toy_hyper();
  const Eigen::VectorXd x = random_latent(model.layout(), 3);
  const double c = 0.37;
  Eigen::VectorXd xs = x;
  xs[0] += c;

  const auto cond = model.at(h);
  const Eigen::VectorXd eta = cond.linear_predictor(x);
  const Eigen::VectorXd eta_shift = cond.linear_predictor(xs);
  double ll_shift = 0.0, ll_scaled = 0.0;
  for (int i = 0; i < eta.size(); ++i) {
    const double y = toy.data.observations[static_cast<std::size_t>(i)].y;
    ll_shift += poisson_log_pmf(y, eta_shift[i]);
    // same observation against means scaled by exp(c)
    ll_scaled += y * std::log(std::exp(c) * std::exp(eta[i])) - std::exp(c) * std::exp(eta[i]) -
                 std::lgamma(y + 1.0);
  }
  CHECK(ll_shift == doctest::Approx(ll_scaled).epsilon(1e-10));
}

TEST_CASE("gradient and hessian match finite differences") {
  const Toy toy = make_toy(5, 3, 41, 6000.0, 2500.0);
  ModelSpec spec;
  spec.variant = Variant::M2;
  const JointModel model(spec, toy.data, toy.mesh);
  const HyperVector h = toy_hyper(6000.0);
  const auto cond = model.at(h);
  const Eigen::VectorXd x = random_latent(model.layout(), 17);

  Eigen::VectorXd grad;
  Eigen::SparseMatrix<double> neg_hess;
  cond.grad_neg_hess(x, grad, neg_hess);

  const int d = model.layout().dim();
  const double step = 1e-6;
  Eigen::VectorXd fd(d);
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += step;
    xm[k] -= step;
    fd[k] = (cond.log_joint(xp) - cond.log_joint(xm)) / (2.0 * step);
  }
  const double scale = grad.norm();
  CHECK((grad - fd).norm() < 1e-5 * std::max(scale, 1.0));

  // Hessian against finite differences of the analytic gradient
  Eigen::MatrixXd fd_hess(d, d);
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += step;
    xm[k] -= step;
    Eigen::VectorXd gp, gm;
    Eigen::SparseMatrix<double> dummy;
    cond.grad_neg_hess(xp, gp, dummy);
    cond.grad_neg_hess(xm, gm, dummy);
    fd_hess.col(k) = (gp - gm) / (2.0 * step);
  }
  const Eigen::MatrixXd analytic = -Eigen::MatrixXd(neg_hess);
  CHECK((analytic - fd_hess).norm() < 1e-4 * std::max(analytic.norm(), 1.0));
}

TEST_CASE("design-matrix and per-observation predictors agree") {
  const Toy toy = make_toy(7, 4, 71);
  for (Variant v : {Variant::M1, Variant::M2, Variant::M3}) {
    ModelSpec spec;
    spec.variant = v;
    const JointModel model(spec, toy.data, toy.mesh);
    const HyperVector h = toy_hyper();
    const Eigen::VectorXd x = random_latent(model.layout(), 29);
    const Eigen::VectorXd via_design = model.at(h).linear_predictor(x);
    const Eigen::VectorXd via_obs = model.observation_predictor(h, x);
    CHECK((via_design - via_obs).lpNorm<Eigen::Infinity>() <
          1e-12 * (1.0 + via_design.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("hessian sparsity pattern is independent of latent values") {
  const Toy toy = make_toy(5, 3, 51);
  ModelSpec spec;
  spec.variant = Variant::M2;
  const JointModel model(spec, toy.data, toy.mesh);
  const auto cond = model.at(toy_hyper());

  Eigen::VectorXd g;
  Eigen::SparseMatrix<double> h1, h2;
  cond.grad_neg_hess(random_latent(model.layout(), 1), g, h1);
  cond.grad_neg_hess(random_latent(model.layout(), 2), g, h2);
  REQUIRE(h1.nonZeros() == h2.nonZeros());
  for (int k = 0; k < h1.outerSize(); ++k) {
    Eigen::SparseMatrix<double>::InnerIterator i1(h1, k), i2(h2, k);
    for (; i1 && i2; ++i1, ++i2) {
      CHECK(i1.row() == i2.row());
    }
    CHECK_FALSE(static_cast<bool>(i1));
    CHECK_FALSE(static_cast<bool>(i2));
  }
}

TEST_CASE("dataset validation catches protocol violations") {
  Toy toy = make_toy(5, 3, 61);
  SUBCASE("source at the wrong country") {
    toy.data.observations.push_back({0, 3, 1.0});  // site 0 is country A
    CHECK_THROWS_AS(toy.data.validate(), input_error);
  }
  SUBCASE("negative count") {
    toy.data.observations[0].y = -1.0;
    CHECK_THROWS_AS(toy.data.validate(), input_error);
  }
  SUBCASE("non-finite eta is reported with the observation index") {
    ModelSpec spec;
    spec.variant = Variant::M1;
    const JointModel model(spec, toy.data, toy.mesh);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(model.layout().dim());
    x[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(model.at(toy_hyper()).log_joint(x), numeric_error);
  }
}
