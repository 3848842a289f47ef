#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "countfuse/inference.hpp"
#include "countfuse/model.hpp"

namespace countfuse {

// All matrix-based scores take log p(y_i | theta^s): rows are posterior
// samples, columns are observations.

// DIC with the plug-in deviance evaluated at the posterior mean linear
// predictor (loglik_at_mean), the standard hierarchical-model choice.
double dic(const Eigen::MatrixXd& loglik, const Eigen::VectorXd& loglik_at_mean,
           double* p_d = nullptr);

// WAIC = -2 [ sum_i log mean_s p(y_i|theta^s) - sum_i var_s log p(y_i|theta^s) ].
// Observations whose predictive density underflows to zero are reported in
// zero_density_obs and contribute -inf lppd (WAIC becomes +inf).
double waic(const Eigen::MatrixXd& loglik, std::vector<int>* zero_density_obs = nullptr);

struct CpoResult {
  Eigen::VectorXd cpo;      // harmonic-mean estimate per observation
  Eigen::VectorXd log_cpo;  // kept in log space for LPML
  double lpml = 0.0;
  std::vector<int> unstable;  // flagged by the weight coefficient of variation
};

CpoResult cpo_lpml(const Eigen::MatrixXd& loglik, double cv_threshold = 5.0);

// Sample CRPS: mean |X - y| - 0.5 mean |X - X'| over predictive draws.
double crps_empirical(std::span<const double> draws, double y);

// Simulation-study formulas: bias = mean(theta^p - truth),
// rmse = sqrt(mean (theta^p - truth)^2).
std::pair<double, double> bias_rmse(std::span<const double> draws, double truth);

struct AssessmentReport {
  double dic = 0.0;
  double waic = 0.0;
  double lpml = 0.0;
  double mean_crps = 0.0;
  double rmse = 0.0;  // source-1 posterior-mean count vs observed
  double p_d = 0.0;
  Eigen::VectorXd cpo;
  Eigen::VectorXd crps;
  std::vector<int> unstable_cpo;
  std::vector<int> zero_density_obs;

  std::string to_json() const;
  // plain-text table with the five performance rows
  std::string to_table(const std::string& model_label) const;
};

// Scores a fitted model on its dataset using the fit's stored joint samples.
AssessmentReport assess_fit(const JointModel& model, const PosteriorFit& fit,
                            std::uint64_t crps_seed, double cpo_cv_threshold = 5.0);

}  // namespace countfuse
