#pragma once

#include <Eigen/SparseCore>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "countfuse/mesh.hpp"
#include "countfuse/spde.hpp"

namespace countfuse {

enum class Variant { M1, M2, M3 };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct SurveySite {
  std::string id;
  Point2 pos;
  char country = 'A';  // 'A' or 'B'
};

struct SurveyObs {
  int site = 0;    // index into sites
  int source = 1;  // 1..4; 1,2 at country A, 3,4 at country B
  double y = 0.0;  // site-level mean count, nonnegative real
};

struct SurveyDataset {
  std::vector<SurveySite> sites;
  std::vector<SurveyObs> observations;
  Eigen::MatrixXd covariates;  // sites x p, standardized over the prediction grid
  std::vector<std::string> covariate_names;
  std::array<std::string, 4> source_labels = {"points_A", "lines_A", "points_B", "lines_B"};

  int n_sites() const { return static_cast<int>(sites.size()); }
  int n_obs() const { return static_cast<int>(observations.size()); }
  std::vector<Point2> site_positions() const;
  double mean_count(int source) const;
  bool has_all_sources() const;
  void validate() const;
};

struct PriorBlocks {
  double beta_precision = 0.01;
  double psi_mean = 1.0;
  double psi_precision = 0.1;
  double tau_shape = 1.0;   // Gamma prior on the log zeta precisions
  double tau_rate = 5e-5;
  PcPriorSpec pc1{20000.0, 0.1, 1.0, 0.1};
  PcPriorSpec pc2{2000.0, 0.1, 3.0, 0.1};
};

struct ModelSpec {
  Variant variant = Variant::M1;
  std::vector<std::string> covariate_names;
  PriorBlocks priors;
};

// Hyperparameter block theta. Dimension depends on the variant:
// M1 -> 5, M2 -> 8 (adds psi), M3 -> 10 (adds the second field).
struct HyperVector {
  double log_rho1 = 0.0;
  double log_sigma1 = 0.0;
  std::array<double, 3> psi = {1.0, 1.0, 1.0};        // psi_2..psi_4 (M2/M3)
  std::array<double, 3> log_tau = {0.0, 0.0, 0.0};    // precisions of log zeta_j
  double log_rho2 = 0.0;   // M3 only
  double log_sigma2 = 0.0;

  static int dim(Variant v);
  Eigen::VectorXd pack(Variant v) const;
  static HyperVector unpack(Variant v, const Eigen::VectorXd& theta);
  MaternParams field1() const { return {std::exp(log_rho1), std::exp(log_sigma1)}; }
  MaternParams field2() const { return {std::exp(log_rho2), std::exp(log_sigma2)}; }
};

// Flat layout of the latent Gaussian block x = (beta, log zeta, w1 [, w2]).
struct LatentLayout {
  int p = 0;   // covariate slopes (beta has p+1 entries)
  int n1 = 0;  // field-1 nodes
  int n2 = 0;  // field-2 nodes, 0 unless M3

  int beta_offset() const { return 0; }
  int zeta_offset() const { return p + 1; }
  int w1_offset() const { return p + 4; }
  int w2_offset() const { return p + 4 + n1; }
  int dim() const { return p + 4 + n1 + n2; }

  auto beta(const Eigen::VectorXd& x) const { return x.segment(beta_offset(), p + 1); }
  auto log_zeta(const Eigen::VectorXd& x) const { return x.segment(zeta_offset(), 3); }
  auto w1(const Eigen::VectorXd& x) const { return x.segment(w1_offset(), n1); }
  auto w2(const Eigen::VectorXd& x) const { return x.segment(w2_offset(), n2); }
};

// Joint model over one dataset and mesh: Poisson likelihoods for the four
// sources sharing one latent field (two for M3), plus all prior terms.
class JointModel {
 public:
  JointModel(ModelSpec spec, const SurveyDataset& data, const TriMesh& mesh);

  const ModelSpec& spec() const { return spec_; }
  const LatentLayout& layout() const { return layout_; }
  const SurveyDataset& data() const { return *data_; }
  const TriMesh& mesh() const { return *mesh_; }
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& site_projector() const { return A_sites_; }
  int hyper_dim() const { return HyperVector::dim(spec_.variant); }

  Eigen::VectorXd default_latent_start() const;
  HyperVector default_hyper_start() const;

  // Everything that depends on theta, assembled once per hyperparameter value.
  struct Conditional {
    const JointModel* model = nullptr;
    HyperVector hyper;
    Eigen::SparseMatrix<double> design;           // obs x latent dim
    Eigen::SparseMatrix<double> prior_precision;  // latent prior block-diagonal
    double half_log_det_priors = 0.0;             // fields + beta + zeta blocks
    double hyper_log_prior = 0.0;                 // PC priors, psi, tau, Jacobians
    double const_terms = 0.0;                     // -lgamma(y+1), 2pi constants

    int dim() const { return model->layout().dim(); }
    Eigen::VectorXd linear_predictor(const Eigen::VectorXd& x) const;
    double log_joint(const Eigen::VectorXd& x) const;
    void grad_neg_hess(const Eigen::VectorXd& x, Eigen::VectorXd& grad,
                       Eigen::SparseMatrix<double>& neg_hess) const;
  };

  Conditional at(const HyperVector& hyper) const;

  // eta for every observation without assembling the design matrix; used for
  // per-sample scoring where hyper changes across samples
  Eigen::VectorXd observation_predictor(const HyperVector& hyper,
                                        const Eigen::VectorXd& latent) const;
  const Eigen::VectorXd& counts() const { return y_; }
  int obs_source(int i) const { return obs_source_[static_cast<std::size_t>(i)]; }

 private:
  ModelSpec spec_;
  const SurveyDataset* data_;
  const TriMesh* mesh_;
  LatentLayout layout_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> A_sites_;  // sites x n1
  Eigen::MatrixXd fixed_design_;         // obs x (p+1), [1 X]
  Eigen::VectorXd y_;
  Eigen::VectorXd lgamma_y1_;
  std::vector<int> obs_source_;
  std::vector<int> obs_site_;
};

// Spec-level entry points (thin wrappers over JointModel).
Eigen::VectorXd linear_predictors(const ModelSpec& spec, const Eigen::VectorXd& latent,
                                  const HyperVector& hyper, const SurveyDataset& data,
                                  const TriMesh& mesh);
double log_joint(const ModelSpec& spec, const Eigen::VectorXd& latent,
                 const HyperVector& hyper, const SurveyDataset& data, const TriMesh& mesh);
void grad_hess_latent(const ModelSpec& spec, const Eigen::VectorXd& latent,
                      const HyperVector& hyper, const SurveyDataset& data,
                      const TriMesh& mesh, Eigen::VectorXd& grad,
                      Eigen::SparseMatrix<double>& neg_hess);

double poisson_log_pmf(double y, double eta);

}  // namespace countfuse
