#include "countfuse/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "countfuse/assessment.hpp"
#include "countfuse/common.hpp"
#include "countfuse/predict.hpp"
#include <json.hpp>

namespace countfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("cannot open file for writing: " + path);
  os << content;
}

void require_out_dir(const RunConfig& cfg) {
  if (!fs::is_directory(cfg.out_dir))
    throw input_error("output directory does not exist: " + cfg.out_dir);
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_manifest(const RunConfig& cfg, const std::string& subcommand) {
  json j;
  j["artifact_version"] = kArtifactVersion;
  j["config_hash"] = cfg.config_hash();
  j["seed"] = cfg.seed;
  j["subcommand"] = subcommand;
  write_text_file(join_path(cfg.out_dir, "run_manifest.json"), j.dump(2) + "\n");
}

json summaries_json(const PosteriorFit& fit) {
  json params;
  for (const auto& name : fit.parameter_names()) {
    const ParamSummary& s = fit.summaries.at(name);
    params[name] = {{"mean", s.mean}, {"sd", s.sd}, {"q025", s.q025}, {"q50", s.q50},
                    {"q975", s.q975}};
  }
  return params;
}

std::vector<CovariateRaster> load_rasters_for(const std::vector<std::string>& names,
                                              const std::vector<std::string>& paths) {
  std::vector<CovariateRaster> all;
  all.reserve(paths.size());
  for (const auto& p : paths) all.push_back(read_asc(p));
  std::vector<CovariateRaster> ordered;
  for (const auto& name : names) {
    bool found = false;
    for (const auto& r : all) {
      if (r.name == name) {
        ordered.push_back(r);
        found = true;
        break;
      }
    }
    if (!found) throw input_error("no raster provides covariate '" + name + "'");
  }
  return ordered;
}

SurveyDataset load_dataset(const RunConfig& cfg, Standardizer* transform) {
  SurveyDataset data;
  if (!cfg.paths.dataset.empty()) {
    data = read_dataset_csv(cfg.paths.dataset);
  } else if (!cfg.paths.records.empty() && !cfg.paths.sites.empty()) {
    data = aggregate_counts(read_sites_csv(cfg.paths.sites),
                            read_records_csv(cfg.paths.records));
  } else {
    throw input_error("config must set paths.dataset, or paths.sites and paths.records");
  }
  if (cfg.model.covariates.empty()) {
    if (transform) *transform = Standardizer{};
    return data;
  }
  const auto rasters = load_rasters_for(cfg.model.covariates, cfg.paths.rasters);
  data.covariates = extract_covariates(rasters, data.sites, transform);
  data.covariate_names = cfg.model.covariates;
  return data;
}

}  // namespace

std::string RunConfig::canonical_json() const {
  // out_dir and threads are execution details; they do not change artifact
  // content, so the config hash ignores them
  json j;
  j["seed"] = seed;
  j["fast"] = fast;
  j["domain"] = {{"x0", domain.x0},
                 {"y0", domain.y0},
                 {"x1", domain.x1},
                 {"y1", domain.y1},
                 {"polygon_csv", domain.polygon_csv},
                 {"max_edge_inner", domain.max_edge_inner},
                 {"max_edge_outer", domain.max_edge_outer},
                 {"buffer_width", domain.buffer_width},
                 {"max_nodes", domain.max_nodes}};
  j["priors"] = {{"pc1_rho0", priors.pc1_rho0},
                 {"pc1_alpha_rho", priors.pc1_alpha_rho},
                 {"pc1_sigma0", priors.pc1_sigma0},
                 {"pc1_alpha_sigma", priors.pc1_alpha_sigma},
                 {"pc2_rho0", priors.pc2_rho0},
                 {"pc2_alpha_rho", priors.pc2_alpha_rho},
                 {"pc2_sigma0", priors.pc2_sigma0},
                 {"pc2_alpha_sigma", priors.pc2_alpha_sigma},
                 {"beta_precision", priors.beta_precision},
                 {"psi_mean", priors.psi_mean},
                 {"psi_precision", priors.psi_precision},
                 {"tau_shape", priors.tau_shape},
                 {"tau_rate", priors.tau_rate}};
  j["model"] = {{"variant", model.variant}, {"covariates", model.covariates}};
  j["inference"] = {{"nm_max_evals", inference.nm_max_evals},
                    {"nm_stall_window", inference.nm_stall_window},
                    {"nm_tol", inference.nm_tol},
                    {"nm_init_step", inference.nm_init_step},
                    {"fd_step", inference.fd_step},
                    {"ccd_radius", inference.ccd_radius},
                    {"newton_tol", inference.newton_tol},
                    {"n_samples", inference.n_samples},
                    {"theta_start", inference.theta_start},
                    {"cpo_cv_threshold", inference.cpo_cv_threshold}};
  j["scenario"] = {{"scenario", scenario.scenario},
                   {"beta0", scenario.beta0},
                   {"beta1", scenario.beta1},
                   {"rho", scenario.rho},
                   {"sigma2", scenario.sigma2},
                   {"zeta_star", scenario.zeta_star},
                   {"psi_star", scenario.psi_star},
                   {"n_sites_a", scenario.n_sites_a},
                   {"n_sites_b", scenario.n_sites_b},
                   {"country_split", scenario.country_split},
                   {"site_seed", scenario.site_seed},
                   {"cov_seed", scenario.cov_seed},
                   {"cov_cell", scenario.cov_cell},
                   {"cov_name", scenario.cov_name},
                   {"replicates", scenario.replicates},
                   {"models", scenario.models}};
  j["paths"] = {{"dataset", paths.dataset},
                {"sites", paths.sites},
                {"records", paths.records},
                {"rasters", paths.rasters},
                {"fit_dir", paths.fit_dir}};
  j["screen"] = {{"threshold", screen.threshold},
                 {"priority", screen.priority},
                 {"max_cells", screen.max_cells}};
  return j.dump();
}

std::string RunConfig::config_hash() const { return hex64(fnv1a(canonical_json())); }

PriorBlocks RunConfig::prior_blocks() const {
  PriorBlocks pb;
  pb.pc1 = {priors.pc1_rho0, priors.pc1_alpha_rho, priors.pc1_sigma0, priors.pc1_alpha_sigma};
  pb.pc2 = {priors.pc2_rho0, priors.pc2_alpha_rho, priors.pc2_sigma0, priors.pc2_alpha_sigma};
  pb.beta_precision = priors.beta_precision;
  pb.psi_mean = priors.psi_mean;
  pb.psi_precision = priors.psi_precision;
  pb.tau_shape = priors.tau_shape;
  pb.tau_rate = priors.tau_rate;
  return pb;
}

DomainSpec RunConfig::domain_spec() const {
  DomainSpec d;
  if (!domain.polygon_csv.empty()) {
    std::ifstream is(domain.polygon_csv);
    if (!is) throw input_error("cannot open polygon file: " + domain.polygon_csv);
    std::string line;
    std::getline(is, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,y") throw input_error("polygon file must have header x,y");
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        throw input_error("bad polygon row: " + line);
      d.boundary.push_back(
          {std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
    }
  } else {
    if (!(domain.x1 > domain.x0) || !(domain.y1 > domain.y0))
      throw input_error("domain rectangle is empty; set domain.x0 < x1 and y0 < y1");
    d.boundary = {{domain.x0, domain.y0},
                  {domain.x1, domain.y0},
                  {domain.x1, domain.y1},
                  {domain.x0, domain.y1}};
  }
  d.max_edge_inner = domain.max_edge_inner;
  d.max_edge_outer = domain.max_edge_outer > 0.0 ? domain.max_edge_outer : domain.max_edge_inner;
  if (domain.buffer_width >= 0.0) {
    d.buffer_width = domain.buffer_width;
  } else {
    const PcPriorSpec pc1{priors.pc1_rho0, priors.pc1_alpha_rho, priors.pc1_sigma0,
                          priors.pc1_alpha_sigma};
    d.buffer_width = 2.0 * pc1.rho_median();
  }
  d.max_nodes = static_cast<std::size_t>(domain.max_nodes);
  return d;
}

ScenarioSpec RunConfig::scenario_spec() const {
  ScenarioSpec s;
  s.scenario = scenario.scenario;
  s.beta0 = scenario.beta0;
  s.beta1 = scenario.beta1;
  s.rho = scenario.rho;
  s.sigma2 = scenario.sigma2;
  if (scenario.zeta_star.size() != 4 || scenario.psi_star.size() != 4)
    throw input_error("scenario.zeta_star and scenario.psi_star need 4 entries");
  for (int j = 0; j < 4; ++j) {
    s.zeta_star[static_cast<std::size_t>(j)] = scenario.zeta_star[static_cast<std::size_t>(j)];
    s.psi_star[static_cast<std::size_t>(j)] = scenario.psi_star[static_cast<std::size_t>(j)];
  }
  s.n_sites_a = scenario.n_sites_a;
  s.n_sites_b = scenario.n_sites_b;
  s.country_split = scenario.country_split;
  s.site_seed = scenario.site_seed;
  s.covariate.seed = scenario.cov_seed;
  s.covariate.cell = scenario.cov_cell;
  s.covariate.name = scenario.cov_name;
  s.replicates = scenario.replicates;
  s.base_seed = seed;
  return s;
}

FitOptions RunConfig::fit_options() const {
  FitOptions f;
  f.nm_max_evals = inference.nm_max_evals;
  f.nm_stall_window = inference.nm_stall_window;
  f.nm_tol = inference.nm_tol;
  f.nm_init_step = inference.nm_init_step;
  f.fd_step = inference.fd_step;
  f.ccd_radius = inference.ccd_radius;
  f.newton.grad_tol = inference.newton_tol;
  f.n_samples = inference.n_samples;
  f.seed = seed;
  if (!inference.theta_start.empty()) {
    Eigen::VectorXd t(static_cast<Eigen::Index>(inference.theta_start.size()));
    for (std::size_t i = 0; i < inference.theta_start.size(); ++i)
      t[static_cast<Eigen::Index>(i)] = inference.theta_start[i];
    f.theta_start = t;
  }
  return f;
}

namespace {

std::string domain_hash_of(const DomainSpec& d) {
  std::ostringstream os;
  char buf[64];
  for (const auto& p : d.boundary) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g;", p.x, p.y);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "|%.17g|%.17g|%.17g", d.max_edge_inner, d.max_edge_outer,
                d.buffer_width);
  os << buf;
  return hex64(fnv1a(os.str()));
}

constexpr std::uint64_t kSamplesMagic = 0x3153504d41534643ULL;  // "CFSAMPS1"

}  // namespace

void save_fit(const std::string& dir, const PosteriorFit& fit, const Standardizer& transform,
              const std::string& domain_hash) {
  json j;
  j["variant"] = variant_name(fit.variant);
  j["covariates"] = fit.covariate_names;
  j["standardizer"] = {{"names", transform.names}, {"mean", transform.mean},
                       {"sd", transform.sd}};
  j["domain_hash"] = domain_hash;
  j["seed"] = fit.seed;
  j["nm_evals"] = fit.nm_evals;
  j["n_samples"] = static_cast<long>(fit.latent_samples.rows());
  j["theta_mode"] = std::vector<double>(fit.theta_mode.begin(), fit.theta_mode.end());
  std::vector<std::vector<double>> pts;
  for (const auto& t : fit.design_points) pts.emplace_back(t.begin(), t.end());
  j["design_points"] = pts;
  j["design_log_post"] =
      std::vector<double>(fit.design_log_post.begin(), fit.design_log_post.end());
  j["weights"] = std::vector<double>(fit.weights.begin(), fit.weights.end());
  j["layout"] = {{"p", fit.layout.p}, {"n1", fit.layout.n1}, {"n2", fit.layout.n2}};
  j["parameters"] = summaries_json(fit);
  write_text_file(join_path(dir, "fit.json"), j.dump(2) + "\n");

  std::ofstream os(join_path(dir, "samples.bin"), std::ios::binary);
  if (!os) throw input_error("cannot write samples.bin in " + dir);
  const auto put_u32 = [&](std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  os.write(reinterpret_cast<const char*>(&kSamplesMagic), sizeof(kSamplesMagic));
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(fit.variant));
  put_u32(static_cast<std::uint32_t>(fit.latent_samples.rows()));
  put_u32(static_cast<std::uint32_t>(fit.hyper_samples.cols()));
  put_u32(static_cast<std::uint32_t>(fit.latent_samples.cols()));
  put_u32(static_cast<std::uint32_t>(fit.layout.p));
  put_u32(static_cast<std::uint32_t>(fit.layout.n1));
  put_u32(static_cast<std::uint32_t>(fit.layout.n2));
  for (int s = 0; s < fit.hyper_samples.rows(); ++s) {
    const Eigen::VectorXd row = fit.hyper_samples.row(s);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(sizeof(double)) * row.size());
  }
  for (int s = 0; s < fit.latent_samples.rows(); ++s) {
    const Eigen::VectorXd row = fit.latent_samples.row(s);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(sizeof(double)) * row.size());
  }
}

FitArtifacts load_fit(const std::string& dir) {
  std::ifstream jf(join_path(dir, "fit.json"));
  if (!jf) throw input_error("cannot open " + join_path(dir, "fit.json"));
  json j;
  jf >> j;

  FitArtifacts art;
  art.fit.variant = variant_from_name(j.at("variant").get<std::string>());
  art.fit.covariate_names = j.at("covariates").get<std::vector<std::string>>();
  art.standardizer.names = j.at("standardizer").at("names").get<std::vector<std::string>>();
  art.standardizer.mean = j.at("standardizer").at("mean").get<std::vector<double>>();
  art.standardizer.sd = j.at("standardizer").at("sd").get<std::vector<double>>();
  art.domain_hash = j.at("domain_hash").get<std::string>();
  art.seed = j.at("seed").get<std::uint64_t>();
  art.fit.seed = art.seed;
  art.fit.nm_evals = j.at("nm_evals").get<int>();
  const auto mode = j.at("theta_mode").get<std::vector<double>>();
  art.fit.theta_mode = Eigen::Map<const Eigen::VectorXd>(mode.data(),
                                                         static_cast<Eigen::Index>(mode.size()));
  for (const auto& pt : j.at("design_points")) {
    const auto v = pt.get<std::vector<double>>();
    art.fit.design_points.push_back(
        Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  const auto lp = j.at("design_log_post").get<std::vector<double>>();
  art.fit.design_log_post =
      Eigen::Map<const Eigen::VectorXd>(lp.data(), static_cast<Eigen::Index>(lp.size()));
  const auto w = j.at("weights").get<std::vector<double>>();
  art.fit.weights = Eigen::Map<const Eigen::VectorXd>(w.data(),
                                                      static_cast<Eigen::Index>(w.size()));
  for (const auto& [name, s] : j.at("parameters").items()) {
    ParamSummary ps;
    ps.mean = s.at("mean").get<double>();
    ps.sd = s.at("sd").get<double>();
    ps.q025 = s.at("q025").get<double>();
    ps.q50 = s.at("q50").get<double>();
    ps.q975 = s.at("q975").get<double>();
    art.fit.summaries[name] = ps;
  }

  std::ifstream bs(join_path(dir, "samples.bin"), std::ios::binary);
  if (!bs) throw input_error("cannot open " + join_path(dir, "samples.bin"));
  std::uint64_t magic = 0;
  bs.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  if (magic != kSamplesMagic) throw input_error("samples.bin has a bad magic number");
  const auto get_u32 = [&] {
    std::uint32_t v = 0;
    bs.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != 1) throw input_error("samples.bin has unsupported version");
  const std::uint32_t variant_code = get_u32();
  if (variant_code != static_cast<std::uint32_t>(art.fit.variant))
    throw input_error("samples.bin variant does not match fit.json");
  const std::uint32_t S = get_u32();
  const std::uint32_t hdim = get_u32();
  const std::uint32_t ldim = get_u32();
  art.fit.layout.p = static_cast<int>(get_u32());
  art.fit.layout.n1 = static_cast<int>(get_u32());
  art.fit.layout.n2 = static_cast<int>(get_u32());
  if (art.fit.layout.dim() != static_cast<int>(ldim))
    throw input_error("samples.bin layout is inconsistent");
  art.fit.hyper_samples.resize(S, hdim);
  art.fit.latent_samples.resize(S, ldim);
  for (std::uint32_t s = 0; s < S; ++s) {
    Eigen::VectorXd row(hdim);
    bs.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(double)) * hdim);
    art.fit.hyper_samples.row(s) = row.transpose();
  }
  for (std::uint32_t s = 0; s < S; ++s) {
    Eigen::VectorXd row(ldim);
    bs.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(double)) * ldim);
    art.fit.latent_samples.row(s) = row.transpose();
  }
  if (!bs) throw input_error("samples.bin is truncated");
  return art;
}

void run_simulate(const RunConfig& cfg) {
  require_out_dir(cfg);
  const DomainSpec domain = cfg.domain_spec();
  const ScenarioSpec spec = cfg.scenario_spec();
  const SimContext ctx(spec, domain);

  SimContext::Truth truth;
  const SurveyDataset data = ctx.replicate_dataset(0, &truth);

  write_sites_csv(join_path(cfg.out_dir, "sites.csv"), ctx.sites());
  write_dataset_csv(join_path(cfg.out_dir, "dataset.csv"), data);
  write_asc(join_path(cfg.out_dir, spec.covariate.name + ".asc"), ctx.covariate_raster());

  json truth_json;
  truth_json["scenario"] = spec.scenario;
  truth_json["beta0"] = spec.beta0;
  truth_json["beta1"] = spec.beta1;
  truth_json["rho"] = spec.rho;
  truth_json["sigma2"] = spec.sigma2;
  truth_json["zeta_star"] = spec.zeta_star;
  truth_json["psi_star"] = spec.effective_psi();
  truth_json["seed"] = cfg.seed;
  truth_json["site_ids"] = [&] {
    std::vector<std::string> ids;
    for (const auto& s : ctx.sites()) ids.push_back(s.id);
    return ids;
  }();
  truth_json["omega_sites"] =
      std::vector<double>(truth.omega_sites.begin(), truth.omega_sites.end());
  truth_json["lambda_true_sites"] =
      std::vector<double>(truth.lambda_true_sites.begin(), truth.lambda_true_sites.end());
  truth_json["covariate_sites"] =
      std::vector<double>(ctx.covariate_at_sites().begin(), ctx.covariate_at_sites().end());
  write_text_file(join_path(cfg.out_dir, "truth.json"), truth_json.dump(2) + "\n");
  write_manifest(cfg, "simulate");
}

void run_fit(const RunConfig& cfg) {
  require_out_dir(cfg);
  Standardizer transform;
  SurveyDataset data = load_dataset(cfg, &transform);
  const DomainSpec domain = cfg.domain_spec();
  const TriMesh mesh = build_mesh(domain);

  ModelSpec spec;
  spec.variant = variant_from_name(cfg.model.variant);
  spec.covariate_names = cfg.model.covariates;
  spec.priors = cfg.prior_blocks();

  const JointModel model(spec, data, mesh);
  const PosteriorFit fit = fit_model(model, cfg.fit_options());
  save_fit(cfg.out_dir, fit, transform, domain_hash_of(domain));
  write_manifest(cfg, "fit");
}

namespace {

FitArtifacts load_fit_checked(const RunConfig& cfg, const DomainSpec& domain) {
  const std::string dir = cfg.paths.fit_dir.empty() ? cfg.out_dir : cfg.paths.fit_dir;
  FitArtifacts art = load_fit(dir);
  if (art.domain_hash != domain_hash_of(domain))
    throw input_error("fit artifacts in " + dir + " were built for a different domain/mesh");
  return art;
}

}  // namespace

void run_assess(const RunConfig& cfg) {
  require_out_dir(cfg);
  const DomainSpec domain = cfg.domain_spec();
  FitArtifacts art = load_fit_checked(cfg, domain);
  if (!cfg.model.covariates.empty() && cfg.model.covariates != art.fit.covariate_names)
    throw input_error("config model.covariates do not match the fit artifacts");

  Standardizer transform;
  SurveyDataset data = load_dataset(cfg, &transform);
  const TriMesh mesh = build_mesh(domain);
  ModelSpec spec;
  spec.variant = art.fit.variant;
  spec.covariate_names = art.fit.covariate_names;
  spec.priors = cfg.prior_blocks();
  const JointModel model(spec, data, mesh);

  const AssessmentReport report =
      assess_fit(model, art.fit, derive_seed(cfg.seed, 0xa55e55), cfg.inference.cpo_cv_threshold);
  write_text_file(join_path(cfg.out_dir, "assessment.json"), report.to_json());
  write_text_file(join_path(cfg.out_dir, "assessment.txt"),
                  report.to_table(variant_name(art.fit.variant)));
  write_manifest(cfg, "assess");
}

void run_predict(const RunConfig& cfg) {
  require_out_dir(cfg);
  const DomainSpec domain = cfg.domain_spec();
  FitArtifacts art = load_fit_checked(cfg, domain);

  // grid covariates must be exactly the fit's covariates
  const auto rasters = load_rasters_for(art.fit.covariate_names, cfg.paths.rasters);
  if (art.standardizer.names != art.fit.covariate_names)
    throw input_error("fit artifacts carry no usable standardizer");
  const GridSpec grid = GridSpec::from_raster(rasters.front());
  for (const auto& r : rasters) {
    if (r.ncols != grid.ncols || r.nrows != grid.nrows || r.xll != grid.xll ||
        r.yll != grid.yll || r.cell != grid.cell)
      throw input_error("covariate rasters disagree on grid geometry");
  }

  const long n_cells = static_cast<long>(grid.ncols) * grid.nrows;
  Eigen::MatrixXd cov_std(n_cells, static_cast<Eigen::Index>(rasters.size()));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(n_cells), 1);
  for (long c = 0; c < n_cells; ++c) {
    const int row = static_cast<int>(c / grid.ncols), col = static_cast<int>(c % grid.ncols);
    const Point2 center = grid.cell_center(row, col);
    if (!point_in_polygon(center, domain.boundary)) {
      valid[static_cast<std::size_t>(c)] = 0;
      continue;
    }
    for (std::size_t k = 0; k < rasters.size(); ++k) {
      const double v = rasters[k].values(row, col);
      if (rasters[k].is_nodata(v)) {
        valid[static_cast<std::size_t>(c)] = 0;
        break;
      }
      cov_std(c, static_cast<Eigen::Index>(k)) = art.standardizer.apply(k, v);
    }
  }

  const TriMesh mesh = build_mesh(domain);
  const int stored = static_cast<int>(art.fit.latent_samples.rows());
  const int n_samples = std::min(cfg.inference.n_samples, stored);
  const PredictionRaster pred = predict_grid_from_samples(
      art.fit, grid, cov_std, valid, mesh, art.fit.hyper_samples.topRows(n_samples),
      art.fit.latent_samples.topRows(n_samples));

  write_asc(join_path(cfg.out_dir, "mean.asc"), pred.mean_raster());
  write_asc(join_path(cfg.out_dir, "sd.asc"), pred.sd_raster());
  json sidecar;
  sidecar["model"] = variant_name(art.fit.variant);
  sidecar["n_samples"] = n_samples;
  sidecar["seed"] = cfg.seed;
  sidecar["fit_seed"] = art.seed;
  write_text_file(join_path(cfg.out_dir, "prediction.json"), sidecar.dump(2) + "\n");
  write_manifest(cfg, "predict");
}

void run_screen(const RunConfig& cfg) {
  require_out_dir(cfg);
  if (cfg.paths.rasters.size() < 2)
    throw input_error("screen needs at least two rasters in paths.rasters");
  std::vector<CovariateRaster> rasters;
  for (const auto& p : cfg.paths.rasters) rasters.push_back(read_asc(p));
  const CovariateRaster& first = rasters.front();
  for (const auto& r : rasters)
    if (r.ncols != first.ncols || r.nrows != first.nrows)
      throw input_error("screen rasters disagree on grid dimensions");

  // grid sample: cells valid in every raster, strided down to max_cells
  std::vector<long> cells;
  const long n_cells = static_cast<long>(first.ncols) * first.nrows;
  for (long c = 0; c < n_cells; ++c) {
    bool ok = true;
    for (const auto& r : rasters)
      if (r.is_nodata(r.values(static_cast<int>(c / first.ncols),
                               static_cast<int>(c % first.ncols)))) {
        ok = false;
        break;
      }
    if (ok) cells.push_back(c);
  }
  if (cells.size() < 3) throw input_error("screen: fewer than 3 jointly valid cells");
  const long stride =
      std::max(1L, static_cast<long>(cells.size()) / std::max(1L, cfg.screen.max_cells));
  std::vector<long> sampled;
  for (std::size_t i = 0; i < cells.size(); i += static_cast<std::size_t>(stride))
    sampled.push_back(cells[i]);

  Eigen::MatrixXd X(static_cast<Eigen::Index>(sampled.size()),
                    static_cast<Eigen::Index>(rasters.size()));
  std::vector<std::string> names;
  for (std::size_t k = 0; k < rasters.size(); ++k) {
    names.push_back(rasters[k].name);
    for (std::size_t i = 0; i < sampled.size(); ++i)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          rasters[k].values(static_cast<int>(sampled[i] / first.ncols),
                            static_cast<int>(sampled[i] % first.ncols));
  }
  const std::vector<std::string> priority =
      cfg.screen.priority.empty() ? names : cfg.screen.priority;
  const auto kept = screen_covariates(X, names, cfg.screen.threshold, priority);

  json j;
  j["kept"] = kept;
  std::vector<std::string> dropped;
  for (const auto& n : names)
    if (std::find(kept.begin(), kept.end(), n) == kept.end()) dropped.push_back(n);
  j["dropped"] = dropped;
  j["threshold"] = cfg.screen.threshold;
  j["n_grid_cells"] = sampled.size();
  write_text_file(join_path(cfg.out_dir, "screen.json"), j.dump(2) + "\n");
  write_manifest(cfg, "screen");
}

void run_study(const RunConfig& cfg) {
  require_out_dir(cfg);
  const DomainSpec domain = cfg.domain_spec();
  ScenarioSpec spec = cfg.scenario_spec();
  StudyOptions opts;
  opts.fit = cfg.fit_options();
  opts.threads = cfg.threads;
  if (cfg.fast) {
    spec.replicates = std::min(spec.replicates, 5);
    opts.fit.n_samples = std::min(opts.fit.n_samples, 500);
    opts.fit.nm_max_evals = std::min(opts.fit.nm_max_evals, 600);
  }
  std::vector<Variant> models;
  for (const auto& name : cfg.scenario.models) models.push_back(variant_from_name(name));
  if (models.empty()) throw input_error("scenario.models is empty");

  const SimStudyReport report = run_study(spec, domain, models, opts);
  write_text_file(join_path(cfg.out_dir, "study.csv"), report.to_csv());
  write_text_file(join_path(cfg.out_dir, "study.txt"), report.to_table());
  json meta;
  meta["replicates"] = report.replicates;
  meta["failures"] = report.failures;
  meta["failure_messages"] = report.failure_messages;
  write_text_file(join_path(cfg.out_dir, "study.json"), meta.dump(2) + "\n");
  write_manifest(cfg, "study");
}

}  // namespace countfuse
