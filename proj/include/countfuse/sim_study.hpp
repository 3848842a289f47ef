#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "countfuse/inference.hpp"
#include "countfuse/model.hpp"
#include "countfuse/survey_io.hpp"

namespace countfuse {

// Smooth synthetic covariate: a sum of seeded cosine ridges, standing in for
// the precipitation surface.
struct CovariateSurfaceSpec {
  std::uint64_t seed = 101;
  int n_ridges = 3;
  double cell = 2000.0;  // raster cell size, meters
  std::string name = "PREC";
};

struct ScenarioSpec {
  int scenario = 1;  // 1: proportional sources, 2: psi-distorted sources
  double beta0 = 4.70;
  double beta1 = -0.20;
  double rho = 15000.0;    // meters
  double sigma2 = 0.14;    // field variance
  std::array<double, 4> zeta_star = {0.91, 0.04, 0.57, 1.72};
  std::array<double, 4> psi_star = {1.0, 1.57, 1.09, 1.21};
  int n_sites_a = 113;
  int n_sites_b = 70;
  double country_split = 0.55;  // country A west of this fraction of the domain
  std::uint64_t site_seed = 7;
  CovariateSurfaceSpec covariate;
  int replicates = 100;
  std::uint64_t base_seed = 1;

  // effective distortion: scenario 1 is the psi = 1 row of the scenario table
  std::array<double, 4> effective_psi() const {
    return scenario == 1 ? std::array<double, 4>{1.0, 1.0, 1.0, 1.0} : psi_star;
  }
  void validate() const;
};

// Fixed ingredients shared by every replicate: mesh, sites, covariate raster,
// site-level standardized covariate, field sampler at the true parameters.
class SimContext {
 public:
  SimContext(const ScenarioSpec& spec, const DomainSpec& domain);

  const ScenarioSpec& scenario() const { return spec_; }
  const DomainSpec& domain() const { return domain_; }
  const TriMesh& mesh() const { return mesh_; }
  const std::vector<SurveySite>& sites() const { return sites_; }
  const CovariateRaster& covariate_raster() const { return raster_; }
  const Standardizer& standardizer() const { return standardizer_; }
  const Eigen::VectorXd& covariate_at_sites() const { return prec_sites_; }

  struct Truth {
    Eigen::VectorXd omega_nodes;
    Eigen::VectorXd omega_sites;
    Eigen::VectorXd lambda_true_sites;
  };

  Truth simulate_truth(std::uint64_t seed) const;
  SurveyDataset simulate_observations(const Truth& truth, std::uint64_t seed) const;
  // both steps with replicate-derived seeds
  SurveyDataset replicate_dataset(int replicate, Truth* truth_out = nullptr) const;

 private:
  ScenarioSpec spec_;
  DomainSpec domain_;
  TriMesh mesh_;
  std::vector<SurveySite> sites_;
  CovariateRaster raster_;
  Standardizer standardizer_;
  Eigen::VectorXd prec_sites_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> A_sites_;
  GrfSampler field_sampler_;
};

// evaluate the ridge covariate surface (unstandardized)
double covariate_surface(const CovariateSurfaceSpec& spec, const DomainSpec& domain,
                         const Point2& p);
CovariateRaster make_covariate_raster(const CovariateSurfaceSpec& spec, const DomainSpec& domain);
std::vector<SurveySite> make_sites(const ScenarioSpec& spec, const DomainSpec& domain);

struct StudyRow {
  int scenario = 0;
  std::string model;
  std::string parameter;
  double mean_bias = 0.0, se_bias = 0.0;
  double mean_rmse = 0.0, se_rmse = 0.0;
  int n_ok = 0;
};

struct SimStudyReport {
  std::vector<StudyRow> rows;
  int replicates = 0;
  std::map<std::string, int> failures;  // model -> failed replicate count
  std::vector<std::string> failure_messages;

  const StudyRow& row(const std::string& model, const std::string& parameter) const;
  std::string to_csv() const;
  std::string to_table() const;
};

struct StudyOptions {
  FitOptions fit;      // n_samples is the per-replicate posterior sample count
  int threads = 1;
};

SimStudyReport run_study(const ScenarioSpec& spec, const DomainSpec& domain,
                         const std::vector<Variant>& models, const StudyOptions& opts);

// per-parameter truth values used for bias/rmse, in report order
std::vector<std::pair<std::string, double>> study_truth(const ScenarioSpec& spec, Variant v);

}  // namespace countfuse
