// pybind11 bindings exposing the main operations: mesh building, SPDE
// precision and sampling, PC priors, model fitting, scoring rules, and
// scenario simulation.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "countfuse/assessment.hpp"
#include "countfuse/common.hpp"
#include "countfuse/inference.hpp"
#include "countfuse/mesh.hpp"
#include "countfuse/model.hpp"
#include "countfuse/sim_study.hpp"
#include "countfuse/spde.hpp"

namespace py = pybind11;
using namespace countfuse;

namespace {

std::vector<Point2> as_points(const Eigen::MatrixXd& xy) {
  if (xy.cols() != 2) throw input_error("expected an (n, 2) array of coordinates");
  std::vector<Point2> pts(static_cast<std::size_t>(xy.rows()));
  for (Eigen::Index i = 0; i < xy.rows(); ++i) pts[static_cast<std::size_t>(i)] = {xy(i, 0), xy(i, 1)};
  return pts;
}

DomainSpec domain_from(const Eigen::MatrixXd& boundary, double max_edge_inner,
                       double max_edge_outer, double buffer_width) {
  DomainSpec d;
  d.boundary = as_points(boundary);
  d.max_edge_inner = max_edge_inner;
  d.max_edge_outer = max_edge_outer;
  d.buffer_width = buffer_width;
  return d;
}

py::dict sparse_triplets(const Eigen::SparseMatrix<double>& M) {
  std::vector<int> rows, cols;
  std::vector<double> vals;
  rows.reserve(static_cast<std::size_t>(M.nonZeros()));
  for (int k = 0; k < M.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it) {
      rows.push_back(static_cast<int>(it.row()));
      cols.push_back(static_cast<int>(it.col()));
      vals.push_back(it.value());
    }
  }
  py::dict out;
  out["shape"] = py::make_tuple(M.rows(), M.cols());
  out["row"] = rows;
  out["col"] = cols;
  out["data"] = vals;
  return out;
}

SurveyDataset dataset_from(const Eigen::MatrixXd& site_xy, const std::vector<std::string>& country,
                           const std::vector<int>& obs_site, const std::vector<int>& obs_source,
                           const Eigen::VectorXd& obs_y, const Eigen::MatrixXd& covariates,
                           const std::vector<std::string>& covariate_names) {
  SurveyDataset data;
  const auto pts = as_points(site_xy);
  if (country.size() != pts.size()) throw input_error("country list does not match sites");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (country[i] != "A" && country[i] != "B") throw input_error("country must be 'A' or 'B'");
    data.sites.push_back({"s" + std::to_string(i), pts[i], country[i][0]});
  }
  if (obs_site.size() != obs_source.size() ||
      static_cast<Eigen::Index>(obs_site.size()) != obs_y.size())
    throw input_error("observation arrays must have equal length");
  for (std::size_t i = 0; i < obs_site.size(); ++i)
    data.observations.push_back({obs_site[i], obs_source[i], obs_y[static_cast<Eigen::Index>(i)]});
  data.covariates = covariates;
  data.covariate_names = covariate_names;
  data.validate();
  return data;
}

py::dict fit_to_dict(const PosteriorFit& fit) {
  py::dict out;
  out["variant"] = variant_name(fit.variant);
  out["theta_mode"] = fit.theta_mode;
  out["weights"] = fit.weights;
  out["nm_evals"] = fit.nm_evals;
  py::dict params;
  for (const auto& name : fit.parameter_names()) {
    const ParamSummary& s = fit.summaries.at(name);
    py::dict d;
    d["mean"] = s.mean;
    d["sd"] = s.sd;
    d["q025"] = s.q025;
    d["q50"] = s.q50;
    d["q975"] = s.q975;
    params[name.c_str()] = d;
  }
  out["parameters"] = params;
  out["hyper_samples"] = fit.hyper_samples;
  out["latent_samples"] = fit.latent_samples;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "joint spatial modeling of multi-protocol count surveys";

  py::register_exception<input_error>(m, "InputError", PyExc_ValueError);
  py::register_exception<numeric_error>(m, "NumericError", PyExc_RuntimeError);

  py::class_<TriMesh>(m, "TriMesh")
      .def_property_readonly("n_nodes", &TriMesh::n_nodes)
      .def_property_readonly("nodes",
                             [](const TriMesh& mesh) {
                               Eigen::MatrixXd out(mesh.n_nodes(), 2);
                               for (int i = 0; i < mesh.n_nodes(); ++i) {
                                 out(i, 0) = mesh.nodes[static_cast<std::size_t>(i)].x;
                                 out(i, 1) = mesh.nodes[static_cast<std::size_t>(i)].y;
                               }
                               return out;
                             })
      .def_property_readonly("triangles",
                             [](const TriMesh& mesh) {
                               Eigen::MatrixXi out(static_cast<int>(mesh.triangles.size()), 3);
                               for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
                                 for (int v = 0; v < 3; ++v)
                                   out(static_cast<int>(t), v) =
                                       mesh.triangles[t][static_cast<std::size_t>(v)];
                               return out;
                             })
      .def_property_readonly("mass", [](const TriMesh& mesh) { return mesh.mass; })
      .def_property_readonly("stiffness",
                             [](const TriMesh& mesh) { return sparse_triplets(mesh.stiffness); })
      .def("total_area", &TriMesh::total_area)
      .def("projector", [](const TriMesh& mesh, const Eigen::MatrixXd& xy) {
        const Projector proj = make_projector(mesh, as_points(xy));
        py::dict out = sparse_triplets(proj.A);
        out["outside"] = std::vector<bool>(proj.outside.begin(), proj.outside.end());
        return out;
      });

  m.def("build_mesh", [](const Eigen::MatrixXd& boundary, double max_edge_inner,
                         double max_edge_outer, double buffer_width) {
          return build_mesh(domain_from(boundary, max_edge_inner, max_edge_outer, buffer_width));
        },
        py::arg("boundary"), py::arg("max_edge_inner"), py::arg("max_edge_outer"),
        py::arg("buffer_width") = 0.0);

  m.def("matern_cov", [](double h, double rho, double sigma) {
          return matern_cov(h, {rho, sigma});
        },
        py::arg("h"), py::arg("rho"), py::arg("sigma"));

  m.def("spde_precision", [](const TriMesh& mesh, double rho, double sigma) {
          return sparse_triplets(spde_precision(mesh, {rho, sigma}));
        },
        py::arg("mesh"), py::arg("rho"), py::arg("sigma"));

  m.def("pc_prior_logpdf", [](double rho, double sigma, double rho0, double alpha_rho,
                              double sigma0, double alpha_sigma) {
          return pc_prior_logpdf(rho, sigma, {rho0, alpha_rho, sigma0, alpha_sigma});
        },
        py::arg("rho"), py::arg("sigma"), py::arg("rho0"), py::arg("alpha_rho"),
        py::arg("sigma0"), py::arg("alpha_sigma"));

  m.def("sample_grf", [](const TriMesh& mesh, double rho, double sigma, std::uint64_t seed) {
          return sample_grf(spde_precision(mesh, {rho, sigma}), seed);
        },
        py::arg("mesh"), py::arg("rho"), py::arg("sigma"), py::arg("seed"));

  m.def("fit", [](const TriMesh& mesh, const std::string& variant,
                  const Eigen::MatrixXd& site_xy, const std::vector<std::string>& country,
                  const std::vector<int>& obs_site, const std::vector<int>& obs_source,
                  const Eigen::VectorXd& obs_y, const Eigen::MatrixXd& covariates,
                  const std::vector<std::string>& covariate_names, int n_samples,
                  std::uint64_t seed, int nm_max_evals) {
          const SurveyDataset data = dataset_from(site_xy, country, obs_site, obs_source, obs_y,
                                                  covariates, covariate_names);
          ModelSpec spec;
          spec.variant = variant_from_name(variant);
          spec.covariate_names = covariate_names;
          FitOptions opts;
          opts.n_samples = n_samples;
          opts.seed = seed;
          opts.nm_max_evals = nm_max_evals;
          return fit_to_dict(fit(spec, data, mesh, opts));
        },
        py::arg("mesh"), py::arg("variant"), py::arg("site_xy"), py::arg("country"),
        py::arg("obs_site"), py::arg("obs_source"), py::arg("obs_y"), py::arg("covariates"),
        py::arg("covariate_names"), py::arg("n_samples") = 2000, py::arg("seed") = 1,
        py::arg("nm_max_evals") = 2000);

  m.def("dic", [](const Eigen::MatrixXd& loglik, const Eigen::VectorXd& loglik_at_mean) {
          double pd = 0.0;
          const double v = dic(loglik, loglik_at_mean, &pd);
          return py::make_tuple(v, pd);
        },
        py::arg("loglik"), py::arg("loglik_at_mean"));
  m.def("waic", [](const Eigen::MatrixXd& loglik) { return waic(loglik); }, py::arg("loglik"));
  m.def("cpo_lpml", [](const Eigen::MatrixXd& loglik) {
          const CpoResult r = cpo_lpml(loglik);
          return py::make_tuple(r.cpo, r.lpml);
        },
        py::arg("loglik"));
  m.def("crps_empirical", [](const std::vector<double>& draws, double y) {
          return crps_empirical(draws, y);
        },
        py::arg("draws"), py::arg("y"));
  m.def("bias_rmse", [](const std::vector<double>& draws, double truth) {
          const auto [b, r] = bias_rmse(draws, truth);
          return py::make_tuple(b, r);
        },
        py::arg("draws"), py::arg("truth"));

  m.def("simulate_scenario", [](int scenario, std::uint64_t seed, int n_sites_a, int n_sites_b,
                                double domain_size, double max_edge, double buffer_width) {
          ScenarioSpec spec;
          spec.scenario = scenario;
          spec.base_seed = seed;
          spec.n_sites_a = n_sites_a;
          spec.n_sites_b = n_sites_b;
          spec.replicates = 1;
          spec.covariate.cell = std::max(domain_size / 50.0, 500.0);
          const DomainSpec domain = DomainSpec::rectangle(0, 0, domain_size, domain_size,
                                                          max_edge, max_edge, buffer_width);
          const SimContext ctx(spec, domain);
          SimContext::Truth truth;
          const SurveyDataset data = ctx.replicate_dataset(0, &truth);
          py::dict out;
          Eigen::MatrixXd xy(data.n_sites(), 2);
          std::vector<std::string> country;
          for (int i = 0; i < data.n_sites(); ++i) {
            xy(i, 0) = data.sites[static_cast<std::size_t>(i)].pos.x;
            xy(i, 1) = data.sites[static_cast<std::size_t>(i)].pos.y;
            country.emplace_back(1, data.sites[static_cast<std::size_t>(i)].country);
          }
          std::vector<int> obs_site, obs_source;
          std::vector<double> obs_y;
          for (const auto& o : data.observations) {
            obs_site.push_back(o.site);
            obs_source.push_back(o.source);
            obs_y.push_back(o.y);
          }
          out["site_xy"] = xy;
          out["country"] = country;
          out["obs_site"] = obs_site;
          out["obs_source"] = obs_source;
          out["obs_y"] = obs_y;
          out["covariates"] = Eigen::MatrixXd(data.covariates);
          out["covariate_names"] = data.covariate_names;
          out["omega_sites"] = truth.omega_sites;
          out["lambda_true_sites"] = truth.lambda_true_sites;
          return out;
        },
        py::arg("scenario"), py::arg("seed"), py::arg("n_sites_a") = 30,
        py::arg("n_sites_b") = 20, py::arg("domain_size") = 50000.0,
        py::arg("max_edge") = 6000.0, py::arg("buffer_width") = 10000.0);
}
