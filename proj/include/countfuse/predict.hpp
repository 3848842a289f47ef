#pragma once

#include <cstdint>
#include <vector>

#include "countfuse/inference.hpp"
#include "countfuse/survey_io.hpp"

namespace countfuse {

struct GridSpec {
  int ncols = 0, nrows = 0;
  double xll = 0.0, yll = 0.0;
  double cell = 0.0;
  double nodata = -9999.0;

  Point2 cell_center(int row, int col) const {
    return {xll + (static_cast<double>(col) + 0.5) * cell,
            yll + (static_cast<double>(nrows - 1 - row) + 0.5) * cell};
  }
  static GridSpec from_raster(const CovariateRaster& r) {
    return {r.ncols, r.nrows, r.xll, r.yll, r.cell, r.nodata};
  }
};

// Posterior predictive surfaces of the total-abundance proxy Y1(s) + Y2(s):
// mean(g) = mean_s[lam1 + lam2], sd(g) = sqrt(mean + var_s[lam1 + lam2])
// by the law of total variance for the Poisson sum.
struct PredictionRaster {
  GridSpec grid;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd sd;

  CovariateRaster mean_raster() const;
  CovariateRaster sd_raster() const;
};

// cov_std: standardized covariates per grid cell in row-major file order;
// cell_valid masks cells with usable covariates (nodata cells are skipped).
PredictionRaster predict_grid(const PosteriorFit& fit, const GridSpec& grid,
                              const Eigen::MatrixXd& cov_std,
                              const std::vector<std::uint8_t>& cell_valid, const TriMesh& mesh,
                              int n_samples, std::uint64_t seed);

// same contract, but reusing already drawn joint samples (file-based runs)
PredictionRaster predict_grid_from_samples(const PosteriorFit& fit, const GridSpec& grid,
                                           const Eigen::MatrixXd& cov_std,
                                           const std::vector<std::uint8_t>& cell_valid,
                                           const TriMesh& mesh,
                                           const Eigen::MatrixXd& hyper_samples,
                                           const Eigen::MatrixXd& latent_samples);

}  // namespace countfuse
