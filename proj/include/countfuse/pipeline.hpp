#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "countfuse/model.hpp"
#include "countfuse/sim_study.hpp"

namespace countfuse {

// Configuration shared by all subcommands; populated from the TOML config
// file plus command-line overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
  bool fast = false;

  struct Domain {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    std::string polygon_csv;  // optional; overrides the rectangle
    double max_edge_inner = 0.0;
    double max_edge_outer = 0.0;  // 0: same as inner
    double buffer_width = -1.0;   // <0: 2 x PC-prior median range
    long max_nodes = 200000;
  } domain;

  struct Priors {
    double pc1_rho0 = 20000.0, pc1_alpha_rho = 0.1, pc1_sigma0 = 1.0, pc1_alpha_sigma = 0.1;
    double pc2_rho0 = 2000.0, pc2_alpha_rho = 0.1, pc2_sigma0 = 3.0, pc2_alpha_sigma = 0.1;
    double beta_precision = 0.01;
    double psi_mean = 1.0, psi_precision = 0.1;
    double tau_shape = 1.0, tau_rate = 5e-5;
  } priors;

  struct Model {
    std::string variant = "M1";
    std::vector<std::string> covariates;
  } model;

  struct Inference {
    int nm_max_evals = 2000;
    int nm_stall_window = 200;
    double nm_tol = 1e-4;
    double nm_init_step = 0.4;
    double fd_step = 0.1;
    double ccd_radius = 1.1;
    double newton_tol = 1e-8;
    int n_samples = 10000;
    std::vector<double> theta_start;
    double cpo_cv_threshold = 5.0;
  } inference;

  struct Scenario {
    int scenario = 1;
    double beta0 = 4.70, beta1 = -0.20;
    double rho = 15000.0, sigma2 = 0.14;
    std::vector<double> zeta_star = {0.91, 0.04, 0.57, 1.72};
    std::vector<double> psi_star = {1.0, 1.57, 1.09, 1.21};
    int n_sites_a = 113, n_sites_b = 70;
    double country_split = 0.55;
    std::uint64_t site_seed = 7;
    std::uint64_t cov_seed = 101;
    double cov_cell = 2000.0;
    std::string cov_name = "PREC";
    int replicates = 100;
    std::vector<std::string> models = {"M1", "M2", "M3"};
  } scenario;

  struct Paths {
    std::string dataset;
    std::string sites;
    std::string records;
    std::vector<std::string> rasters;
    std::string fit_dir;  // where fit.json / samples.bin live; default out_dir
  } paths;

  struct Screen {
    double threshold = 0.7;
    std::vector<std::string> priority;
    long max_cells = 100000;
  } screen;

  std::string canonical_json() const;
  std::string config_hash() const;

  PriorBlocks prior_blocks() const;
  DomainSpec domain_spec() const;
  ScenarioSpec scenario_spec() const;
  FitOptions fit_options() const;
};

inline constexpr const char* kArtifactVersion = "0.1.0";

void run_simulate(const RunConfig& cfg);
void run_fit(const RunConfig& cfg);
void run_assess(const RunConfig& cfg);
void run_predict(const RunConfig& cfg);
void run_screen(const RunConfig& cfg);
void run_study(const RunConfig& cfg);

// fit artifacts on disk (fit.json + samples.bin); loaded fits carry samples
// and summaries but no design-point factors
struct FitArtifacts {
  PosteriorFit fit;
  Standardizer standardizer;
  std::string domain_hash;
  std::uint64_t seed = 0;
};

void save_fit(const std::string& dir, const PosteriorFit& fit, const Standardizer& transform,
              const std::string& domain_hash);
FitArtifacts load_fit(const std::string& dir);

}  // namespace countfuse
