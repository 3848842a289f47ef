#include "countfuse/assessment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "countfuse/common.hpp"
#include "countfuse/rng.hpp"
#include <json.hpp>

namespace countfuse {

namespace {

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

double dic(const Eigen::MatrixXd& loglik, const Eigen::VectorXd& loglik_at_mean, double* p_d) {
  if (loglik.rows() < 1) throw input_error("dic: needs posterior samples");
  if (loglik.cols() != loglik_at_mean.size())
    throw input_error("dic: plug-in log-likelihood has wrong length");
  const double dbar = -2.0 * loglik.rowwise().sum().mean();
  const double dhat = -2.0 * loglik_at_mean.sum();
  const double pd = dbar - dhat;
  if (p_d) *p_d = pd;
  return dbar + pd;
}

double waic(const Eigen::MatrixXd& loglik, std::vector<int>* zero_density_obs) {
  const int S = static_cast<int>(loglik.rows());
  const int n = static_cast<int>(loglik.cols());
  if (S < 1) throw input_error("waic: needs posterior samples");
  double lppd = 0.0, penalty = 0.0;
  if (zero_density_obs) zero_density_obs->clear();
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd col = loglik.col(i);
    const double li = log_sum_exp(col) - std::log(static_cast<double>(S));
    lppd += li;
    if (!std::isfinite(li)) {
      if (zero_density_obs) zero_density_obs->push_back(i);
      continue;  // the lppd term already forces WAIC to +inf
    }
    if (S > 1) {
      const double mean = col.mean();
      penalty += (col.array() - mean).square().sum() / static_cast<double>(S - 1);
    }
  }
  return -2.0 * (lppd - penalty);
}

CpoResult cpo_lpml(const Eigen::MatrixXd& loglik, double cv_threshold) {
  const int S = static_cast<int>(loglik.rows());
  const int n = static_cast<int>(loglik.cols());
  if (S < 1) throw input_error("cpo_lpml: needs posterior samples");
  CpoResult res;
  res.cpo.resize(n);
  res.log_cpo.resize(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd neg = -loglik.col(i);
    // CPO_i = [mean_s 1/p(y_i|theta^s)]^{-1}, harmonic-mean identity
    const double log_mean_inv = log_sum_exp(neg) - std::log(static_cast<double>(S));
    res.log_cpo[i] = -log_mean_inv;
    res.cpo[i] = std::exp(res.log_cpo[i]);
    // coefficient of variation of the weights, shift-invariant
    const double m = neg.maxCoeff();
    const Eigen::ArrayXd w = (neg.array() - m).exp();
    const double wm = w.mean();
    const double wsd = S > 1 ? std::sqrt((w - wm).square().sum() / static_cast<double>(S - 1)) : 0.0;
    if (wm > 0.0 && wsd / wm > cv_threshold) res.unstable.push_back(i);
  }
  res.lpml = res.log_cpo.sum();
  return res;
}

double crps_empirical(std::span<const double> draws, double y) {
  const std::size_t S = draws.size();
  if (S < 2) throw input_error("crps_empirical: needs at least 2 draws");
  std::vector<double> x(draws.begin(), draws.end());
  std::sort(x.begin(), x.end());
  double abs_err = 0.0, spread = 0.0;
  for (std::size_t k = 0; k < S; ++k) {
    abs_err += std::abs(x[k] - y);
    spread += (2.0 * static_cast<double>(k) - static_cast<double>(S) + 1.0) * x[k];
  }
  const double n = static_cast<double>(S);
  return abs_err / n - spread / (n * n);
}

std::pair<double, double> bias_rmse(std::span<const double> draws, double truth) {
  if (draws.empty()) throw input_error("bias_rmse: needs at least 1 sample");
  double sum = 0.0, sumsq = 0.0;
  for (double v : draws) {
    const double d = v - truth;
    sum += d;
    sumsq += d * d;
  }
  const double n = static_cast<double>(draws.size());
  return {sum / n, std::sqrt(sumsq / n)};
}

std::string AssessmentReport::to_json() const {
  nlohmann::json j;
  j["dic"] = dic;
  j["waic"] = waic;
  j["rmse"] = rmse;
  j["lmpl"] = lpml;
  j["mean_crps"] = mean_crps;
  j["p_d"] = p_d;
  j["cpo"] = std::vector<double>(cpo.begin(), cpo.end());
  j["crps"] = std::vector<double>(crps.begin(), crps.end());
  j["unstable_cpo"] = unstable_cpo;
  j["zero_density_obs"] = zero_density_obs;
  return j.dump(2) + "\n";
}

std::string AssessmentReport::to_table(const std::string& model_label) const {
  char buf[96];
  std::ostringstream os;
  os << "Measure of performance  " << model_label << "\n";
  const auto row = [&](const char* label, double v) {
    std::snprintf(buf, sizeof(buf), "%-22s  %.2f\n", label, v);
    os << buf;
  };
  row("DIC", dic);
  row("WAIC", waic);
  row("RMSE", rmse);
  row("LMPL", lpml);
  row("Mean CRPS", mean_crps);
  return os.str();
}

AssessmentReport assess_fit(const JointModel& model, const PosteriorFit& fit,
                            std::uint64_t crps_seed, double cpo_cv_threshold) {
  const int S = static_cast<int>(fit.latent_samples.rows());
  const int n = model.data().n_obs();
  if (S < 1) throw input_error("assess_fit: fit has no samples");
  const Eigen::VectorXd& y = model.counts();

  Eigen::MatrixXd eta(S, n);
  for (int s = 0; s < S; ++s) {
    const HyperVector h = HyperVector::unpack(fit.variant, fit.hyper_samples.row(s).transpose());
    eta.row(s) = model.observation_predictor(h, fit.latent_samples.row(s).transpose()).transpose();
  }
  Eigen::MatrixXd loglik(S, n);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < n; ++i) loglik(s, i) = poisson_log_pmf(y[i], eta(s, i));

  const Eigen::VectorXd eta_mean = eta.colwise().mean();
  Eigen::VectorXd loglik_at_mean(n);
  for (int i = 0; i < n; ++i) loglik_at_mean[i] = poisson_log_pmf(y[i], eta_mean[i]);

  AssessmentReport rep;
  rep.dic = dic(loglik, loglik_at_mean, &rep.p_d);
  rep.waic = waic(loglik, &rep.zero_density_obs);
  const CpoResult cpo_res = cpo_lpml(loglik, cpo_cv_threshold);
  rep.cpo = cpo_res.cpo;
  rep.lpml = cpo_res.lpml;
  rep.unstable_cpo = cpo_res.unstable;

  // predictive draws per observation for the CRPS
  rep.crps.resize(n);
  std::vector<double> draws(static_cast<std::size_t>(S));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(crps_seed, static_cast<std::uint64_t>(i)));
    for (int s = 0; s < S; ++s)
      draws[static_cast<std::size_t>(s)] = static_cast<double>(rng.poisson(std::exp(eta(s, i))));
    rep.crps[i] = crps_empirical(draws, y[i]);
  }
  rep.mean_crps = rep.crps.mean();

  // prediction RMSE for the reference likelihood (source 1)
  double se = 0.0;
  int n1 = 0;
  for (int i = 0; i < n; ++i) {
    if (model.obs_source(i) != 1) continue;
    const double mean_count = eta.col(i).array().exp().mean();
    se += (mean_count - y[i]) * (mean_count - y[i]);
    ++n1;
  }
  rep.rmse = n1 > 0 ? std::sqrt(se / n1) : 0.0;
  return rep;
}

}  // namespace countfuse
