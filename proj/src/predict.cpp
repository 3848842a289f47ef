#include "countfuse/predict.hpp"

#include <cmath>

#include "countfuse/common.hpp"

namespace countfuse {

namespace {

CovariateRaster raster_from(const GridSpec& g, const Eigen::MatrixXd& values,
                            const std::string& name) {
  CovariateRaster r;
  r.name = name;
  r.ncols = g.ncols;
  r.nrows = g.nrows;
  r.xll = g.xll;
  r.yll = g.yll;
  r.cell = g.cell;
  r.nodata = g.nodata;
  r.values = values;
  return r;
}

}  // namespace

CovariateRaster PredictionRaster::mean_raster() const { return raster_from(grid, mean, "mean"); }
CovariateRaster PredictionRaster::sd_raster() const { return raster_from(grid, sd, "sd"); }

PredictionRaster predict_grid_from_samples(const PosteriorFit& fit, const GridSpec& grid,
                                           const Eigen::MatrixXd& cov_std,
                                           const std::vector<std::uint8_t>& cell_valid,
                                           const TriMesh& mesh,
                                           const Eigen::MatrixXd& hyper_samples,
                                           const Eigen::MatrixXd& latent_samples) {
  const long n_cells = static_cast<long>(grid.ncols) * grid.nrows;
  if (cov_std.rows() != n_cells) throw input_error("predict_grid: covariate rows != grid cells");
  if (cell_valid.size() != static_cast<std::size_t>(n_cells))
    throw input_error("predict_grid: validity mask size mismatch");
  if (cov_std.cols() != static_cast<Eigen::Index>(fit.covariate_names.size()))
    throw input_error("predict_grid: covariate count does not match the fit");
  const int S = static_cast<int>(latent_samples.rows());
  if (S < 1) throw input_error("predict_grid: no posterior samples");

  // project only the usable cells
  std::vector<Point2> centers;
  std::vector<long> center_cell;
  for (long c = 0; c < n_cells; ++c) {
    if (!cell_valid[static_cast<std::size_t>(c)]) continue;
    centers.push_back(grid.cell_center(static_cast<int>(c / grid.ncols),
                                       static_cast<int>(c % grid.ncols)));
    center_cell.push_back(c);
  }
  const Projector proj = make_projector(mesh, centers);

  std::vector<long> active;       // cells inside the mesh
  std::vector<int> active_row;    // their projector rows
  for (std::size_t r = 0; r < centers.size(); ++r) {
    if (proj.is_outside(static_cast<int>(r))) continue;
    active.push_back(center_cell[r]);
    active_row.push_back(static_cast<int>(r));
  }

  const LatentLayout& lay = fit.layout;
  const int p = lay.p;
  Eigen::MatrixXd fixed(active.size(), p + 1);
  for (std::size_t a = 0; a < active.size(); ++a) {
    fixed(static_cast<Eigen::Index>(a), 0) = 1.0;
    for (int k = 0; k < p; ++k)
      fixed(static_cast<Eigen::Index>(a), k + 1) = cov_std(active[a], k);
  }

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(active.size()));
  Eigen::VectorXd sumsq = sum;
  Eigen::VectorXd u1(active.size()), u2(active.size());
  for (int s = 0; s < S; ++s) {
    const Eigen::VectorXd x = latent_samples.row(s).transpose();
    const HyperVector h = HyperVector::unpack(fit.variant, hyper_samples.row(s).transpose());
    const Eigen::VectorXd w1_all = proj.A * lay.w1(x);
    Eigen::VectorXd w2_all;
    if (fit.variant == Variant::M3) w2_all = proj.A * lay.w2(x);
    const Eigen::VectorXd eta_fixed = fixed * lay.beta(x);
    const double log_zeta2 = lay.log_zeta(x)[0];
    const double psi2 = fit.variant == Variant::M1 ? 1.0 : h.psi[0];
    for (std::size_t a = 0; a < active.size(); ++a) {
      const double w1 = w1_all[active_row[a]];
      const double eta1 = eta_fixed[static_cast<Eigen::Index>(a)] + w1;
      double eta2 = eta1 + log_zeta2 + (psi2 - 1.0) * w1;
      if (fit.variant == Variant::M3) eta2 += w2_all[active_row[a]];
      const double total = std::exp(eta1) + std::exp(eta2);
      sum[static_cast<Eigen::Index>(a)] += total;
      sumsq[static_cast<Eigen::Index>(a)] += total * total;
    }
  }

  PredictionRaster out;
  out.grid = grid;
  out.mean = Eigen::MatrixXd::Constant(grid.nrows, grid.ncols, grid.nodata);
  out.sd = Eigen::MatrixXd::Constant(grid.nrows, grid.ncols, grid.nodata);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const long c = active[a];
    const double m = sum[static_cast<Eigen::Index>(a)] / S;
    // population variance so a single degenerate sample gives sd = sqrt(mean)
    const double var =
        std::max(0.0, sumsq[static_cast<Eigen::Index>(a)] / S - m * m);
    out.mean(c / grid.ncols, c % grid.ncols) = m;
    out.sd(c / grid.ncols, c % grid.ncols) = std::sqrt(m + var);
  }
  return out;
}

PredictionRaster predict_grid(const PosteriorFit& fit, const GridSpec& grid,
                              const Eigen::MatrixXd& cov_std,
                              const std::vector<std::uint8_t>& cell_valid, const TriMesh& mesh,
                              int n_samples, std::uint64_t seed) {
  Eigen::MatrixXd hyper, latent;
  sample_posterior(fit, n_samples, seed, hyper, latent);
  return predict_grid_from_samples(fit, grid, cov_std, cell_valid, mesh, hyper, latent);
}

}  // namespace countfuse
