#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

#include "countfuse/model.hpp"

namespace countfuse {

struct RawRecord {
  std::string site_id;
  int year = 0;
  std::string species;
  int source = 1;
  double count = 0.0;
};

std::vector<SurveySite> read_sites_csv(const std::string& path);
void write_sites_csv(const std::string& path, const std::vector<SurveySite>& sites);
std::vector<RawRecord> read_records_csv(const std::string& path);

// Per (site, source, year) counts are summed over species, then averaged over
// the years in which that site-source was actually surveyed. Observations are
// emitted in (site, source) order.
SurveyDataset aggregate_counts(const std::vector<SurveySite>& sites,
                               const std::vector<RawRecord>& records);

// ESRI ASCII grid. values(0, 0) is the north-west cell, matching file order.
struct CovariateRaster {
  std::string name;
  int ncols = 0, nrows = 0;
  double xll = 0.0, yll = 0.0;
  double cell = 0.0;
  double nodata = -9999.0;
  Eigen::MatrixXd values;

  Point2 cell_center(int row, int col) const;
  bool contains(const Point2& p) const;
  // nearest-cell lookup; throws when p is outside the extent
  double value_at(const Point2& p) const;
  bool is_nodata(double v) const { return v == nodata; }
};

CovariateRaster read_asc(const std::string& path);
void write_asc(const std::string& path, const CovariateRaster& raster);
void write_asc(std::ostream& os, const CovariateRaster& raster);

// grid standardization transform, reused for prediction-time covariates
struct Standardizer {
  std::vector<std::string> names;
  std::vector<double> mean, sd;

  double apply(std::size_t k, double v) const { return (v - mean[k]) / sd[k]; }
};

// Nearest-cell covariate extraction standardized by grid statistics.
Eigen::MatrixXd extract_covariates(const std::vector<CovariateRaster>& rasters,
                                   const std::vector<SurveySite>& sites,
                                   Standardizer* transform = nullptr);

// Drops the lower-priority member of every pair with |pearson| > threshold,
// iterating until no violating pair remains. priority lists every name,
// highest priority first. Returns kept names in column order.
std::vector<std::string> screen_covariates(const Eigen::MatrixXd& grid_sample,
                                           const std::vector<std::string>& names,
                                           double threshold,
                                           const std::vector<std::string>& priority);

// Aggregated dataset CSV: site_id,x,y,country,source,mean_count
void write_dataset_csv(const std::string& path, const SurveyDataset& data);
SurveyDataset read_dataset_csv(const std::string& path);

}  // namespace countfuse
