#include "countfuse/sim_study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "countfuse/assessment.hpp"
#include "countfuse/common.hpp"

namespace countfuse {

namespace {

constexpr std::uint64_t kOmegaStream = 0x01;
constexpr std::uint64_t kCountStream = 0x02;
constexpr std::uint64_t kFitStream = 0x03;

struct Ridge {
  double ux, uy, wavelength, phase, amplitude;
};

std::vector<Ridge> make_ridges(const CovariateSurfaceSpec& spec, const DomainSpec& domain) {
  double x0 = domain.boundary[0].x, x1 = x0, y0 = domain.boundary[0].y, y1 = y0;
  for (const auto& p : domain.boundary) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double extent = std::max(x1 - x0, y1 - y0);
  Rng rng(derive_seed(spec.seed, 0xc0f));
  std::vector<Ridge> ridges;
  for (int k = 0; k < spec.n_ridges; ++k) {
    Ridge r;
    const double angle = rng.uniform() * 2.0 * M_PI;
    r.ux = std::cos(angle);
    r.uy = std::sin(angle);
    r.wavelength = (0.5 + 0.7 * rng.uniform()) * extent;
    r.phase = rng.uniform() * 2.0 * M_PI;
    r.amplitude = 0.5 + 0.5 * rng.uniform();
    ridges.push_back(r);
  }
  return ridges;
}

double halton(std::uint64_t index, std::uint64_t base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

}  // namespace

void ScenarioSpec::validate() const {
  if (scenario != 1 && scenario != 2) throw input_error("scenario must be 1 or 2");
  for (double z : zeta_star)
    if (!(z > 0.0)) throw input_error("zeta_star values must be positive");
  if (!(rho > 0.0) || !(sigma2 > 0.0)) throw input_error("rho and sigma2 must be positive");
  if (n_sites_a < 1 || n_sites_b < 1) throw input_error("site counts must be positive");
  if (replicates < 1) throw input_error("replicate count must be at least 1");
}

double covariate_surface(const CovariateSurfaceSpec& spec, const DomainSpec& domain,
                         const Point2& p) {
  const std::vector<Ridge> ridges = make_ridges(spec, domain);
  double v = 0.0;
  for (const auto& r : ridges)
    v += r.amplitude *
         std::cos(2.0 * M_PI * (p.x * r.ux + p.y * r.uy) / r.wavelength + r.phase);
  return v;
}

CovariateRaster make_covariate_raster(const CovariateSurfaceSpec& spec,
                                      const DomainSpec& domain) {
  double x0 = domain.boundary[0].x, x1 = x0, y0 = domain.boundary[0].y, y1 = y0;
  for (const auto& p : domain.boundary) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const std::vector<Ridge> ridges = make_ridges(spec, domain);
  CovariateRaster r;
  r.name = spec.name;
  r.cell = spec.cell;
  r.xll = x0;
  r.yll = y0;
  r.ncols = static_cast<int>(std::ceil((x1 - x0) / spec.cell));
  r.nrows = static_cast<int>(std::ceil((y1 - y0) / spec.cell));
  if (r.ncols < 2 || r.nrows < 2) throw input_error("covariate raster would be degenerate");
  r.values.resize(r.nrows, r.ncols);
  for (int i = 0; i < r.nrows; ++i) {
    for (int j = 0; j < r.ncols; ++j) {
      const Point2 c = r.cell_center(i, j);
      double v = 0.0;
      for (const auto& ridge : ridges)
        v += ridge.amplitude *
             std::cos(2.0 * M_PI * (c.x * ridge.ux + c.y * ridge.uy) / ridge.wavelength +
                      ridge.phase);
      r.values(i, j) = v;
    }
  }
  return r;
}

std::vector<SurveySite> make_sites(const ScenarioSpec& spec, const DomainSpec& domain) {
  double x0 = domain.boundary[0].x, x1 = x0, y0 = domain.boundary[0].y, y1 = y0;
  for (const auto& p : domain.boundary) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  // seeded Halton points with a Cranley-Patterson rotation
  Rng rng(derive_seed(spec.site_seed, 0x517e));
  const double shift_x = rng.uniform(), shift_y = rng.uniform();
  const double split_x = x0 + spec.country_split * (x1 - x0);

  std::vector<SurveySite> sites;
  int got_a = 0, got_b = 0, id = 0;
  for (std::uint64_t index = 1; got_a < spec.n_sites_a || got_b < spec.n_sites_b; ++index) {
    if (index > 1000000) throw numeric_error("site placement did not fill the requested counts");
    double ux = halton(index, 2) + shift_x;
    double uy = halton(index, 3) + shift_y;
    ux -= std::floor(ux);
    uy -= std::floor(uy);
    const Point2 p{x0 + ux * (x1 - x0), y0 + uy * (y1 - y0)};
    if (!point_in_polygon(p, domain.boundary)) continue;
    const bool west = p.x < split_x;
    if (west && got_a < spec.n_sites_a) {
      sites.push_back({"A" + std::to_string(++got_a), p, 'A'});
      ++id;
    } else if (!west && got_b < spec.n_sites_b) {
      sites.push_back({"B" + std::to_string(++got_b), p, 'B'});
      ++id;
    }
  }
  (void)id;
  return sites;
}

SimContext::SimContext(const ScenarioSpec& spec, const DomainSpec& domain)
    : spec_(spec),
      domain_(domain),
      mesh_(build_mesh(domain)),
      sites_(make_sites(spec, domain)),
      raster_(make_covariate_raster(spec.covariate, domain)),
      field_sampler_(spde_precision(mesh_, {spec.rho, std::sqrt(spec.sigma2)})) {
  spec.validate();
  std::vector<CovariateRaster> rasters{raster_};
  const Eigen::MatrixXd X = extract_covariates(rasters, sites_, &standardizer_);
  prec_sites_ = X.col(0);
  Projector proj = make_projector(mesh_, [&] {
    std::vector<Point2> pts;
    for (const auto& s : sites_) pts.push_back(s.pos);
    return pts;
  }());
  for (std::size_t i = 0; i < sites_.size(); ++i)
    if (proj.is_outside(static_cast<int>(i)))
      throw numeric_error("site " + sites_[i].id + " outside the mesh");
  A_sites_ = std::move(proj.A);
}

SimContext::Truth SimContext::simulate_truth(std::uint64_t seed) const {
  Truth t;
  Rng rng(seed);
  t.omega_nodes = field_sampler_.sample(rng);
  t.omega_sites = A_sites_ * t.omega_nodes;
  t.lambda_true_sites =
      (spec_.beta0 + spec_.beta1 * prec_sites_.array() + t.omega_sites.array()).exp();
  return t;
}

SurveyDataset SimContext::simulate_observations(const Truth& truth, std::uint64_t seed) const {
  SurveyDataset data;
  data.sites = sites_;
  data.covariates = prec_sites_;
  data.covariate_names = {spec_.covariate.name};
  const std::array<double, 4> psi = spec_.effective_psi();
  Rng rng(seed);
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    const bool in_a = sites_[i].country == 'A';
    for (int j = in_a ? 1 : 3; j <= (in_a ? 2 : 4); ++j) {
      const double lambda = spec_.zeta_star[static_cast<std::size_t>(j - 1)] *
                            truth.lambda_true_sites[static_cast<Eigen::Index>(i)] *
                            std::exp((psi[static_cast<std::size_t>(j - 1)] - 1.0) *
                                     truth.omega_sites[static_cast<Eigen::Index>(i)]);
      SurveyObs o;
      o.site = static_cast<int>(i);
      o.source = j;
      o.y = static_cast<double>(rng.poisson(lambda));
      data.observations.push_back(o);
    }
  }
  return data;
}

SurveyDataset SimContext::replicate_dataset(int replicate, Truth* truth_out) const {
  const std::uint64_t rep_seed =
      derive_seed(spec_.base_seed, static_cast<std::uint64_t>(replicate));
  const Truth truth = simulate_truth(derive_seed(rep_seed, kOmegaStream));
  SurveyDataset data = simulate_observations(truth, derive_seed(rep_seed, kCountStream));
  if (truth_out) *truth_out = truth;
  return data;
}

std::vector<std::pair<std::string, double>> study_truth(const ScenarioSpec& spec, Variant v) {
  std::vector<std::pair<std::string, double>> truths;
  truths.emplace_back("beta0", spec.beta0);
  truths.emplace_back("beta1", spec.beta1);
  truths.emplace_back("rho", spec.rho);
  truths.emplace_back("sigma", std::sqrt(spec.sigma2));
  for (int j = 2; j <= 4; ++j)
    truths.emplace_back("zeta" + std::to_string(j) + "_star",
                        spec.zeta_star[static_cast<std::size_t>(j - 1)]);
  if (v != Variant::M1) {
    const std::array<double, 4> psi = spec.effective_psi();
    for (int j = 2; j <= 4; ++j)
      truths.emplace_back("psi" + std::to_string(j), psi[static_cast<std::size_t>(j - 1)]);
  }
  return truths;
}

namespace {

// posterior draws of one study parameter; zeta_j^* is reconstructed from the
// fitted zeta_j at the true zeta_1^*
Eigen::VectorXd study_parameter_draws(const PosteriorFit& fit, const ScenarioSpec& spec,
                                      const std::string& name) {
  for (int j = 2; j <= 4; ++j) {
    if (name == "zeta" + std::to_string(j) + "_star") {
      const Eigen::VectorXd zeta = fit.parameter_draws("zeta" + std::to_string(j));
      return zeta * spec.zeta_star[0];
    }
  }
  if (name == "beta0") return fit.parameter_draws("Intercept");
  if (name == "beta1") return fit.parameter_draws(fit.covariate_names.at(0));
  if (name == "rho") return fit.parameter_draws("rho1");
  if (name == "sigma") return fit.parameter_draws("sigma1");
  return fit.parameter_draws(name);
}

}  // namespace

const StudyRow& SimStudyReport::row(const std::string& model,
                                    const std::string& parameter) const {
  for (const auto& r : rows)
    if (r.model == model && r.parameter == parameter) return r;
  throw input_error("no study row for " + model + "/" + parameter);
}

std::string SimStudyReport::to_csv() const {
  std::ostringstream os;
  os << "scenario,model,parameter,mean_bias,se_bias,mean_rmse,se_rmse,n_ok\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%s,%.10g,%.10g,%.10g,%.10g,%d\n", r.scenario,
                  r.model.c_str(), r.parameter.c_str(), r.mean_bias, r.se_bias, r.mean_rmse,
                  r.se_rmse, r.n_ok);
    os << buf;
  }
  return os.str();
}

std::string SimStudyReport::to_table() const {
  // Table-2 style: one block per model, fixed-effect and field parameters
  std::ostringstream os;
  char buf[200];
  os << "Scenario Model  Parameter        Bias (SE)            RMSE (SE)         n\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-8d %-6s %-14s %12.4g (%.3g) %12.4g (%.3g) %5d\n",
                  r.scenario, r.model.c_str(), r.parameter.c_str(), r.mean_bias, r.se_bias,
                  r.mean_rmse, r.se_rmse, r.n_ok);
    os << buf;
  }
  return os.str();
}

SimStudyReport run_study(const ScenarioSpec& spec, const DomainSpec& domain,
                         const std::vector<Variant>& models, const StudyOptions& opts) {
  spec.validate();
  const SimContext ctx(spec, domain);
  const int K = spec.replicates;

  // datasets are cheap; generate them up front so fits can run concurrently
  std::vector<SurveyDataset> datasets;
  datasets.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) datasets.push_back(ctx.replicate_dataset(k));

  struct Task {
    int replicate;
    std::size_t model_index;
  };
  std::vector<Task> tasks;
  for (std::size_t m = 0; m < models.size(); ++m)
    for (int k = 0; k < K; ++k) tasks.push_back({k, m});

  struct Result {
    bool ok = false;
    std::string error;
    std::vector<std::pair<double, double>> stats;  // per parameter
  };
  std::vector<Result> results(tasks.size());

  const auto run_task = [&](const Task& task) {
    Result res;
    const Variant v = models[task.model_index];
    try {
      ModelSpec mspec;
      mspec.variant = v;
      const JointModel model(mspec, datasets[static_cast<std::size_t>(task.replicate)],
                             ctx.mesh());
      FitOptions fopts = opts.fit;
      fopts.seed = derive_seed(
          derive_seed(spec.base_seed, static_cast<std::uint64_t>(task.replicate)),
          kFitStream + task.model_index);
      const PosteriorFit fit = fit_model(model, fopts);
      for (const auto& [name, truth] : study_truth(spec, v)) {
        const Eigen::VectorXd draws = study_parameter_draws(fit, spec, name);
        const std::vector<double> dv(draws.begin(), draws.end());
        res.stats.push_back(bias_rmse(dv, truth));
      }
      res.ok = true;
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    return res;
  };

  const int threads = std::max(1, opts.threads);
  if (threads == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) results[t] = run_task(tasks[t]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const std::size_t t = next.fetch_add(1);
          if (t >= tasks.size()) break;
          results[t] = run_task(tasks[t]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  SimStudyReport report;
  report.replicates = K;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const Variant v = models[m];
    const std::string mname = variant_name(v);
    const auto truths = study_truth(spec, v);
    std::vector<std::vector<double>> biases(truths.size()), rmses(truths.size());
    int failed = 0;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (tasks[t].model_index != m) continue;
      const Result& res = results[t];
      if (!res.ok) {
        ++failed;
        std::ostringstream msg;
        msg << mname << " replicate " << tasks[t].replicate << ": " << res.error;
        report.failure_messages.push_back(msg.str());
        continue;
      }
      for (std::size_t pidx = 0; pidx < truths.size(); ++pidx) {
        biases[pidx].push_back(res.stats[pidx].first);
        rmses[pidx].push_back(res.stats[pidx].second);
      }
    }
    report.failures[mname] = failed;
    for (std::size_t pidx = 0; pidx < truths.size(); ++pidx) {
      StudyRow row;
      row.scenario = spec.scenario;
      row.model = mname;
      row.parameter = truths[pidx].first;
      row.n_ok = static_cast<int>(biases[pidx].size());
      const auto mean_se = [](const std::vector<double>& xs) {
        const double n = static_cast<double>(xs.size());
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= n;
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        const double se = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
        return std::make_pair(mean, se);
      };
      if (row.n_ok > 0) {
        std::tie(row.mean_bias, row.se_bias) = mean_se(biases[pidx]);
        std::tie(row.mean_rmse, row.se_rmse) = mean_se(rmses[pidx]);
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace countfuse
