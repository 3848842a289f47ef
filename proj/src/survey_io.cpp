#include "countfuse/survey_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "countfuse/common.hpp"

namespace countfuse {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw input_error("cannot parse number '" + s + "' in " + what);
  }
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw input_error("cannot parse integer '" + s + "' in " + what);
  }
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw input_error("cannot open file: " + path);
  return is;
}

void expect_header(const std::string& got, const std::string& want, const std::string& path) {
  if (got != want)
    throw input_error("bad header in " + path + ": expected '" + want + "', got '" + got + "'");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<SurveySite> read_sites_csv(const std::string& path) {
  std::ifstream is = open_or_throw(path);
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  expect_header(line, "site_id,x,y,country", path);
  std::vector<SurveySite> sites;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw input_error("bad row in " + path + ": " + line);
    SurveySite s;
    s.id = f[0];
    s.pos.x = parse_double(f[1], path);
    s.pos.y = parse_double(f[2], path);
    if (f[3] != "A" && f[3] != "B") throw input_error("country must be A or B in " + path);
    s.country = f[3][0];
    if (!seen.insert(s.id).second) throw input_error("duplicate site_id " + s.id + " in " + path);
    sites.push_back(s);
  }
  if (sites.empty()) throw input_error("no sites in " + path);
  return sites;
}

void write_sites_csv(const std::string& path, const std::vector<SurveySite>& sites) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open sites file for writing: " + path);
  os << "site_id,x,y,country\n";
  for (const auto& s : sites)
    os << s.id << "," << fmt(s.pos.x) << "," << fmt(s.pos.y) << "," << s.country << "\n";
}

std::vector<RawRecord> read_records_csv(const std::string& path) {
  std::ifstream is = open_or_throw(path);
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  expect_header(line, "site_id,year,species,source,count", path);
  std::vector<RawRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw input_error("bad row in " + path + ": " + line);
    RawRecord r;
    r.site_id = f[0];
    r.year = parse_int(f[1], path);
    r.species = f[2];
    r.source = parse_int(f[3], path);
    r.count = parse_double(f[4], path);
    if (r.source < 1 || r.source > 4) throw input_error("source must be 1..4 in " + path);
    if (r.count < 0.0) throw input_error("negative count in " + path);
    records.push_back(r);
  }
  return records;
}

SurveyDataset aggregate_counts(const std::vector<SurveySite>& sites,
                               const std::vector<RawRecord>& records) {
  if (records.empty()) throw input_error("aggregate_counts: no records");
  std::map<std::string, int> site_index;
  for (std::size_t i = 0; i < sites.size(); ++i)
    site_index[sites[i].id] = static_cast<int>(i);

  std::set<std::string> unknown;
  // (site, source, year) -> summed count over species
  std::map<std::tuple<int, int, int>, double> per_year;
  for (const auto& r : records) {
    const auto it = site_index.find(r.site_id);
    if (it == site_index.end()) {
      unknown.insert(r.site_id);
      continue;
    }
    per_year[{it->second, r.source, r.year}] += r.count;
  }
  if (!unknown.empty()) {
    std::ostringstream msg;
    msg << "records reference unknown site_ids:";
    for (const auto& id : unknown) msg << " " << id;
    throw input_error(msg.str());
  }

  std::map<std::pair<int, int>, std::pair<double, int>> totals;  // sum, n years
  for (const auto& [key, total] : per_year) {
    auto& slot = totals[{std::get<0>(key), std::get<1>(key)}];
    slot.first += total;
    slot.second += 1;
  }

  SurveyDataset data;
  data.sites = sites;
  data.covariates.resize(static_cast<Eigen::Index>(sites.size()), 0);
  for (const auto& [key, sum_n] : totals) {
    SurveyObs o;
    o.site = key.first;
    o.source = key.second;
    o.y = sum_n.first / static_cast<double>(sum_n.second);
    data.observations.push_back(o);
  }
  return data;
}

Point2 CovariateRaster::cell_center(int row, int col) const {
  return {xll + (static_cast<double>(col) + 0.5) * cell,
          yll + (static_cast<double>(nrows - 1 - row) + 0.5) * cell};
}

bool CovariateRaster::contains(const Point2& p) const {
  return p.x >= xll && p.x <= xll + ncols * cell && p.y >= yll && p.y <= yll + nrows * cell;
}

double CovariateRaster::value_at(const Point2& p) const {
  if (!contains(p)) throw input_error("point outside raster extent of " + name);
  int col = static_cast<int>((p.x - xll) / cell);
  int row_from_bottom = static_cast<int>((p.y - yll) / cell);
  col = std::clamp(col, 0, ncols - 1);
  row_from_bottom = std::clamp(row_from_bottom, 0, nrows - 1);
  return values(nrows - 1 - row_from_bottom, col);
}

CovariateRaster read_asc(const std::string& path) {
  std::ifstream is = open_or_throw(path);
  CovariateRaster r;
  // name = file stem
  std::string stem = path;
  if (const auto slash = stem.find_last_of('/'); slash != std::string::npos)
    stem = stem.substr(slash + 1);
  if (const auto dot = stem.find_last_of('.'); dot != std::string::npos) stem = stem.substr(0, dot);
  r.name = stem;

  const auto read_kv = [&](const char* key) {
    std::string k;
    double v = 0.0;
    if (!(is >> k >> v) || k != key)
      throw input_error("bad ESRI ASCII header in " + path + ": expected " + key);
    return v;
  };
  r.ncols = static_cast<int>(read_kv("ncols"));
  r.nrows = static_cast<int>(read_kv("nrows"));
  r.xll = read_kv("xllcorner");
  r.yll = read_kv("yllcorner");
  r.cell = read_kv("cellsize");
  r.nodata = read_kv("NODATA_value");
  if (r.ncols <= 0 || r.nrows <= 0 || r.cell <= 0.0)
    throw input_error("bad raster dimensions in " + path);
  r.values.resize(r.nrows, r.ncols);
  for (int i = 0; i < r.nrows; ++i)
    for (int j = 0; j < r.ncols; ++j)
      if (!(is >> r.values(i, j))) throw input_error("truncated raster " + path);
  return r;
}

void write_asc(std::ostream& os, const CovariateRaster& r) {
  os << "ncols " << r.ncols << "\n";
  os << "nrows " << r.nrows << "\n";
  os << "xllcorner " << fmt(r.xll) << "\n";
  os << "yllcorner " << fmt(r.yll) << "\n";
  os << "cellsize " << fmt(r.cell) << "\n";
  os << "NODATA_value " << fmt(r.nodata) << "\n";
  for (int i = 0; i < r.nrows; ++i) {
    for (int j = 0; j < r.ncols; ++j) {
      if (j) os << " ";
      os << fmt(r.values(i, j));
    }
    os << "\n";
  }
}

void write_asc(const std::string& path, const CovariateRaster& r) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open raster for writing: " + path);
  write_asc(os, r);
}

Eigen::MatrixXd extract_covariates(const std::vector<CovariateRaster>& rasters,
                                   const std::vector<SurveySite>& sites,
                                   Standardizer* transform) {
  if (rasters.empty()) throw input_error("extract_covariates: no rasters");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(sites.size()),
                    static_cast<Eigen::Index>(rasters.size()));
  Standardizer tf;
  for (std::size_t k = 0; k < rasters.size(); ++k) {
    const CovariateRaster& r = rasters[k];
    // grid statistics over all non-nodata cells
    double sum = 0.0;
    long n = 0;
    for (int i = 0; i < r.nrows; ++i)
      for (int j = 0; j < r.ncols; ++j)
        if (!r.is_nodata(r.values(i, j))) {
          sum += r.values(i, j);
          ++n;
        }
    if (n < 2) throw input_error("raster " + r.name + " has fewer than 2 data cells");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (int i = 0; i < r.nrows; ++i)
      for (int j = 0; j < r.ncols; ++j)
        if (!r.is_nodata(r.values(i, j))) ss += (r.values(i, j) - mean) * (r.values(i, j) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0.0)
      throw input_error("covariate '" + r.name + "' has zero variance over the grid");
    tf.names.push_back(r.name);
    tf.mean.push_back(mean);
    tf.sd.push_back(sd);
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const double v = r.value_at(sites[s].pos);
      if (r.is_nodata(v))
        throw input_error("site " + sites[s].id + " falls on a nodata cell of " + r.name);
      X(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = (v - mean) / sd;
    }
  }
  if (transform) *transform = tf;
  return X;
}

std::vector<std::string> screen_covariates(const Eigen::MatrixXd& grid_sample,
                                           const std::vector<std::string>& names,
                                           double threshold,
                                           const std::vector<std::string>& priority) {
  const int p = static_cast<int>(grid_sample.cols());
  if (p < 2) throw input_error("screen_covariates: needs at least 2 columns");
  if (static_cast<std::size_t>(p) != names.size())
    throw input_error("screen_covariates: names do not match columns");
  std::vector<int> rank(static_cast<std::size_t>(p), -1);
  for (int k = 0; k < p; ++k) {
    const auto it = std::find(priority.begin(), priority.end(), names[static_cast<std::size_t>(k)]);
    if (it == priority.end())
      throw input_error("screen_covariates: '" + names[static_cast<std::size_t>(k)] +
                        "' missing from the priority list");
    rank[static_cast<std::size_t>(k)] = static_cast<int>(it - priority.begin());
  }

  // pairwise pearson correlations
  const Eigen::MatrixXd centered = grid_sample.rowwise() - grid_sample.colwise().mean();
  const Eigen::VectorXd norms = centered.colwise().norm();
  Eigen::MatrixXd corr(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b)
      corr(a, b) = centered.col(a).dot(centered.col(b)) / (norms[a] * norms[b]);

  std::vector<bool> kept(static_cast<std::size_t>(p), true);
  while (true) {
    int drop = -1;
    for (int a = 0; a < p; ++a) {
      if (!kept[static_cast<std::size_t>(a)]) continue;
      for (int b = a + 1; b < p; ++b) {
        if (!kept[static_cast<std::size_t>(b)]) continue;
        if (std::abs(corr(a, b)) <= threshold) continue;
        const int lower = rank[static_cast<std::size_t>(a)] > rank[static_cast<std::size_t>(b)] ? a : b;
        if (drop < 0 || rank[static_cast<std::size_t>(lower)] > rank[static_cast<std::size_t>(drop)])
          drop = lower;
      }
    }
    if (drop < 0) break;
    kept[static_cast<std::size_t>(drop)] = false;
  }
  std::vector<std::string> out;
  for (int k = 0; k < p; ++k)
    if (kept[static_cast<std::size_t>(k)]) out.push_back(names[static_cast<std::size_t>(k)]);
  return out;
}

void write_dataset_csv(const std::string& path, const SurveyDataset& data) {
  std::ofstream os(path);
  if (!os) throw input_error("cannot open dataset for writing: " + path);
  os << "site_id,x,y,country,source,mean_count\n";
  for (const auto& o : data.observations) {
    const auto& s = data.sites[static_cast<std::size_t>(o.site)];
    os << s.id << "," << fmt(s.pos.x) << "," << fmt(s.pos.y) << "," << s.country << ","
       << o.source << "," << fmt(o.y) << "\n";
  }
}

SurveyDataset read_dataset_csv(const std::string& path) {
  std::ifstream is = open_or_throw(path);
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  expect_header(line, "site_id,x,y,country,source,mean_count", path);
  SurveyDataset data;
  std::map<std::string, int> site_index;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw input_error("bad row in " + path + ": " + line);
    const std::string& id = f[0];
    auto it = site_index.find(id);
    if (it == site_index.end()) {
      SurveySite s;
      s.id = id;
      s.pos.x = parse_double(f[1], path);
      s.pos.y = parse_double(f[2], path);
      if (f[3] != "A" && f[3] != "B") throw input_error("country must be A or B in " + path);
      s.country = f[3][0];
      it = site_index.emplace(id, static_cast<int>(data.sites.size())).first;
      data.sites.push_back(s);
    }
    SurveyObs o;
    o.site = it->second;
    o.source = parse_int(f[4], path);
    o.y = parse_double(f[5], path);
    data.observations.push_back(o);
  }
  if (data.sites.empty()) throw input_error("no rows in " + path);
  data.covariates.resize(static_cast<Eigen::Index>(data.sites.size()), 0);
  return data;
}

}  // namespace countfuse
