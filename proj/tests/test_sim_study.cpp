#include <doctest.h>

#include <cmath>

#include "countfuse/common.hpp"
#include "countfuse/sim_study.hpp"

using namespace countfuse;

namespace {

ScenarioSpec small_scenario(int scenario, std::uint64_t seed = 11) {
  ScenarioSpec s;
  s.scenario = scenario;
  s.n_sites_a = 20;
  s.n_sites_b = 12;
  s.replicates = 2;
  s.base_seed = seed;
  s.covariate.cell = 3000.0;
  return s;
}

DomainSpec small_domain() {
  return DomainSpec::rectangle(0.0, 0.0, 60000.0, 60000.0, 8000.0, 8000.0, 16000.0);
}

}  // namespace

TEST_CASE("site layout is deterministic and honors counts and countries") {
  const ScenarioSpec spec = small_scenario(1);
  const DomainSpec dom = small_domain();
  const auto sites = make_sites(spec, dom);
  REQUIRE(static_cast<int>(sites.size()) == spec.n_sites_a + spec.n_sites_b);
  int na = 0, nb = 0;
  const double split = spec.country_split * 60000.0;
  for (const auto& s : sites) {
    CHECK(point_in_polygon(s.pos, dom.boundary));
    if (s.country == 'A') {
      ++na;
      CHECK(s.pos.x < split);
    } else {
      ++nb;
      CHECK(s.pos.x >= split);
    }
  }
  CHECK(na == spec.n_sites_a);
  CHECK(nb == spec.n_sites_b);
  const auto again = make_sites(spec, dom);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    CHECK(again[i].pos.x == sites[i].pos.x);
    CHECK(again[i].pos.y == sites[i].pos.y);
  }
}

TEST_CASE("true intensity follows the log-linear display") {
  const ScenarioSpec spec = small_scenario(1);
  const SimContext ctx(spec, small_domain());
  const auto truth = ctx.simulate_truth(123);
  const Eigen::VectorXd& prec = ctx.covariate_at_sites();
  for (int i = 0; i < truth.lambda_true_sites.size(); ++i) {
    const double want = std::exp(spec.beta0 + spec.beta1 * prec[i] + truth.omega_sites[i]);
    CHECK(truth.lambda_true_sites[i] == doctest::Approx(want).epsilon(1e-14));
  }

  SUBCASE("with a flat field and no covariate effect the intensity is exp(beta0)") {
    ScenarioSpec flat = spec;
    flat.beta1 = 0.0;
    flat.sigma2 = 1e-18;
    const SimContext fctx(flat, small_domain());
    const auto ftruth = fctx.simulate_truth(5);
    for (int i = 0; i < ftruth.lambda_true_sites.size(); ++i)
      CHECK(ftruth.lambda_true_sites[i] == doctest::Approx(109.94717245212352).epsilon(1e-6));
  }

  SUBCASE("field variance matches sigma2 across draws") {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<int>(ctx.sites().size()));
    Eigen::VectorXd sumsq = sum;
    const int draws = 600;
    for (int d = 0; d < draws; ++d) {
      const auto t = ctx.simulate_truth(derive_seed(9000, static_cast<std::uint64_t>(d)));
      sum += t.omega_sites;
      sumsq += t.omega_sites.cwiseProduct(t.omega_sites);
    }
    const Eigen::VectorXd var =
        sumsq / draws - (sum / draws).cwiseProduct(sum / draws);
    CHECK(var.mean() == doctest::Approx(spec.sigma2).epsilon(0.10));
  }
}

TEST_CASE("observation generation matches the scenario table") {
  const ScenarioSpec spec = small_scenario(1);
  const SimContext ctx(spec, small_domain());

  SUBCASE("count ratios recover zeta2/zeta1 over many replicates") {
    double y1 = 0.0, y2 = 0.0;
    for (int r = 0; r < 120; ++r) {
      const SurveyDataset d = ctx.replicate_dataset(r);
      for (const auto& o : d.observations) {
        if (o.source == 1) y1 += o.y;
        if (o.source == 2) y2 += o.y;
      }
    }
    CHECK(y2 / y1 == doctest::Approx(0.04 / 0.91).epsilon(0.02));
  }

  SUBCASE("sources appear only in their country") {
    const SurveyDataset d = ctx.replicate_dataset(0);
    d.validate();
    for (const auto& o : d.observations) {
      const char c = d.sites[static_cast<std::size_t>(o.site)].country;
      if (o.source <= 2) CHECK(c == 'A');
      if (o.source >= 3) CHECK(c == 'B');
    }
  }

  SUBCASE("replicates are bit-identical under reruns and differ across indices") {
    const SurveyDataset a = ctx.replicate_dataset(1);
    const SurveyDataset b = ctx.replicate_dataset(1);
    const SurveyDataset c = ctx.replicate_dataset(2);
    REQUIRE(a.observations.size() == b.observations.size());
    bool all_equal_c = true;
    for (std::size_t i = 0; i < a.observations.size(); ++i) {
      CHECK(a.observations[i].y == b.observations[i].y);
      if (a.observations[i].y != c.observations[i].y) all_equal_c = false;
    }
    CHECK_FALSE(all_equal_c);
  }
}

TEST_CASE("scenario 2 with psi = 1 reproduces scenario 1 bit for bit") {
  ScenarioSpec s1 = small_scenario(1, 77);
  ScenarioSpec s2 = small_scenario(2, 77);
  s2.psi_star = {1.0, 1.0, 1.0, 1.0};
  const SimContext c1(s1, small_domain());
  const SimContext c2(s2, small_domain());
  const SurveyDataset d1 = c1.replicate_dataset(0);
  const SurveyDataset d2 = c2.replicate_dataset(0);
  REQUIRE(d1.observations.size() == d2.observations.size());
  for (std::size_t i = 0; i < d1.observations.size(); ++i)
    CHECK(d1.observations[i].y == d2.observations[i].y);
}

TEST_CASE("scenario 2 distorts the source-2 counts") {
  ScenarioSpec s2 = small_scenario(2, 31);
  const SimContext ctx(s2, small_domain());
  const auto truth = ctx.simulate_truth(1);
  const SurveyDataset d = ctx.simulate_observations(truth, 2);
  // same seeds, psi = 1
  ScenarioSpec s1 = s2;
  s1.scenario = 1;
  const SimContext ctx1(s1, small_domain());
  const SurveyDataset d1 = ctx1.simulate_observations(truth, 2);
  bool any_diff = false;
  for (std::size_t i = 0; i < d.observations.size(); ++i)
    if (d.observations[i].y != d1.observations[i].y) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("study truth table carries the scenario parameters") {
  const ScenarioSpec s2 = small_scenario(2);
  const auto t1 = study_truth(s2, Variant::M1);
  CHECK(t1.size() == 7);  // beta0, beta1, rho, sigma, zeta2..4*
  const auto t2 = study_truth(s2, Variant::M2);
  REQUIRE(t2.size() == 10);
  CHECK(t2[7].first == "psi2");
  CHECK(t2[7].second == doctest::Approx(1.57));
  const auto t1s = study_truth(small_scenario(1), Variant::M2);
  CHECK(t1s[7].second == doctest::Approx(1.0));
}

TEST_CASE("a tiny study aggregates bias and rmse across replicates") {
  ScenarioSpec spec = small_scenario(1, 5);
  spec.replicates = 2;
  StudyOptions opts;
  opts.fit.n_samples = 300;
  opts.fit.nm_max_evals = 800;
  opts.fit.nm_stall_window = 120;
  opts.threads = 2;
  const SimStudyReport rep = run_study(spec, small_domain(), {Variant::M1}, opts);
  CHECK(rep.failures.at("M1") == 0);
  const StudyRow& b0 = rep.row("M1", "beta0");
  CHECK(b0.n_ok == 2);
  CHECK(std::isfinite(b0.mean_bias));
  CHECK(b0.mean_rmse > 0.0);
  CHECK(b0.se_bias >= 0.0);
  const StudyRow& z2 = rep.row("M1", "zeta2_star");
  CHECK(std::abs(z2.mean_bias) < 0.05);  // truth 0.04, generous sanity bound
  // csv shape
  const std::string csv = rep.to_csv();
  CHECK(csv.find("scenario,model,parameter,mean_bias,se_bias,mean_rmse,se_rmse,n_ok") == 0);
  CHECK(csv.find("1,M1,zeta2_star") != std::string::npos);
}
