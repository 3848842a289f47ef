#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "countfuse/common.hpp"
#include "countfuse/rng.hpp"
#include "countfuse/survey_io.hpp"

using namespace countfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("countfuse_test_" + std::to_string(Rng(std::random_device{}()).raw()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<SurveySite> two_sites() {
  return {{"n1", {100.0, 200.0}, 'A'}, {"s1", {900.0, 800.0}, 'B'}};
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("aggregation sums species within a year and averages over surveyed years") {
  const auto sites = two_sites();
  SUBCASE("one site, one year, species counts {3,2} sum to 5") {
    std::vector<RawRecord> recs = {{"n1", 2006, "sp1", 1, 3}, {"n1", 2006, "sp2", 1, 2}};
    const SurveyDataset d = aggregate_counts(sites, recs);
    REQUIRE(d.observations.size() == 1);
    CHECK(d.observations[0].y == doctest::Approx(5.0).epsilon(1e-15));
  }
  SUBCASE("yearly totals {4,6} average to 5") {
    std::vector<RawRecord> recs = {{"n1", 2006, "sp1", 1, 4}, {"n1", 2007, "sp1", 1, 6}};
    const SurveyDataset d = aggregate_counts(sites, recs);
    CHECK(d.observations[0].y == doctest::Approx(5.0).epsilon(1e-15));
  }
  SUBCASE("years with no survey do not enter the mean") {
    // site surveyed 2006 and 2008 only; 2007 absent
    std::vector<RawRecord> recs = {{"n1", 2006, "sp1", 1, 4}, {"n1", 2008, "sp1", 1, 6}};
    const SurveyDataset d = aggregate_counts(sites, recs);
    CHECK(d.observations[0].y == doctest::Approx(5.0).epsilon(1e-15));
  }
  SUBCASE("record order does not matter") {
    std::vector<RawRecord> recs = {{"n1", 2006, "sp1", 1, 4},
                                   {"s1", 2006, "sp1", 3, 9},
                                   {"n1", 2007, "sp2", 2, 1},
                                   {"n1", 2006, "sp2", 1, 1}};
    std::vector<RawRecord> rev(recs.rbegin(), recs.rend());
    const SurveyDataset a = aggregate_counts(sites, recs);
    const SurveyDataset b = aggregate_counts(sites, rev);
    REQUIRE(a.observations.size() == b.observations.size());
    for (std::size_t i = 0; i < a.observations.size(); ++i) {
      CHECK(a.observations[i].site == b.observations[i].site);
      CHECK(a.observations[i].source == b.observations[i].source);
      CHECK(a.observations[i].y == b.observations[i].y);
    }
  }
  SUBCASE("unknown site ids are listed") {
    std::vector<RawRecord> recs = {{"n1", 2006, "sp1", 1, 4}, {"ghost", 2006, "sp1", 1, 1}};
    try {
      aggregate_counts(sites, recs);
      FAIL("expected input_error");
    } catch (const input_error& e) {
      CHECK(std::string(e.what()).find("ghost") != std::string::npos);
    }
  }
}

TEST_CASE("esri ascii raster round trip and nearest-cell lookup") {
  TempDir tmp;
  CovariateRaster r;
  r.name = "ELEV";
  r.ncols = 3;
  r.nrows = 2;
  r.xll = 10.0;
  r.yll = 20.0;
  r.cell = 5.0;
  r.nodata = -9999.0;
  r.values.resize(2, 3);
  r.values << 1.0, 2.0, 3.0, 4.0, 5.5, 6.25;

  const std::string path = tmp.file("ELEV.asc");
  write_asc(path, r);
  const CovariateRaster back = read_asc(path);
  CHECK(back.name == "ELEV");
  CHECK(back.ncols == 3);
  CHECK(back.nrows == 2);
  CHECK((back.values - r.values).cwiseAbs().maxCoeff() == 0.0);

  // cell centers: bottom row is the last matrix row
  CHECK(r.value_at({12.5, 22.5}) == doctest::Approx(4.0));   // bottom-left center
  CHECK(r.value_at({22.5, 27.5}) == doctest::Approx(3.0));   // top-right center
  CHECK(r.value_at({13.0, 23.0}) == doctest::Approx(4.0));   // nearest cell
  CHECK_THROWS_AS(r.value_at({0.0, 0.0}), input_error);

  // byte-identical re-serialization
  const std::string again = tmp.file("ELEV2.asc");
  write_asc(again, back);
  CHECK(slurp(path) == slurp(again));
}

TEST_CASE("covariate extraction standardizes against grid statistics") {
  CovariateRaster r;
  r.name = "X";
  r.ncols = 10;
  r.nrows = 8;
  r.xll = 0.0;
  r.yll = 0.0;
  r.cell = 1.0;
  r.values.resize(8, 10);
  Rng rng(55);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 10; ++j) r.values(i, j) = 3.0 + 2.0 * rng.normal();

  // sites at every cell center: extracted column equals the standardized grid
  std::vector<SurveySite> sites;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 10; ++j)
      sites.push_back({"c" + std::to_string(i * 10 + j), r.cell_center(i, j), 'A'});
  Standardizer tf;
  const Eigen::MatrixXd X = extract_covariates({r}, sites, &tf);
  CHECK(std::abs(X.col(0).mean()) < 1e-10);
  const double sd = std::sqrt((X.col(0).array() - X.col(0).mean()).square().sum() / (X.rows() - 1));
  CHECK(sd == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(tf.names[0] == "X");

  SUBCASE("site exactly at a cell center gets the exact standardized value") {
    const std::vector<SurveySite> one = {{"p", r.cell_center(3, 4), 'A'}};
    const Eigen::MatrixXd Xe = extract_covariates({r}, one, nullptr);
    CHECK(Xe(0, 0) == doctest::Approx((r.values(3, 4) - tf.mean[0]) / tf.sd[0]).epsilon(1e-12));
  }

  SUBCASE("constant raster is rejected with a zero-variance error") {
    CovariateRaster flat = r;
    flat.name = "FLAT";
    flat.values.setConstant(2.0);
    try {
      extract_covariates({flat}, sites, nullptr);
      FAIL("expected zero-variance rejection");
    } catch (const input_error& e) {
      CHECK(std::string(e.what()).find("zero variance") != std::string::npos);
    }
  }

  SUBCASE("sites on nodata cells are reported") {
    CovariateRaster holed = r;
    holed.values(3, 4) = holed.nodata;
    const std::vector<SurveySite> one = {{"bad", r.cell_center(3, 4), 'A'}};
    try {
      extract_covariates({holed}, one, nullptr);
      FAIL("expected nodata rejection");
    } catch (const input_error& e) {
      CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }
  }
}

TEST_CASE("correlation screening drops the lower-priority member of each pair") {
  // build columns with controlled correlations
  const int n = 4000;
  Rng rng(808);
  Eigen::MatrixXd X(n, 4);
  for (int i = 0; i < n; ++i) {
    const double elev = rng.normal();
    const double forest = rng.normal();
    X(i, 0) = elev;
    X(i, 1) = -0.81 * elev + std::sqrt(1.0 - 0.81 * 0.81) * rng.normal();  // temperature
    X(i, 2) = forest;
    X(i, 3) = -0.83 * forest + std::sqrt(1.0 - 0.83 * 0.83) * rng.normal();  // open area
  }
  const std::vector<std::string> names = {"ELEV", "TEMP", "FOREST", "OPEN"};
  const std::vector<std::string> priority = {"ELEV", "FOREST", "TEMP", "OPEN"};

  const auto kept = screen_covariates(X, names, 0.7, priority);
  CHECK(kept == std::vector<std::string>{"ELEV", "FOREST"});

  SUBCASE("below-threshold pairs are all kept") {
    Eigen::MatrixXd W(n, 2);
    for (int i = 0; i < n; ++i) {
      W(i, 0) = rng.normal();
      W(i, 1) = 0.3 * W(i, 0) + rng.normal();
    }
    const auto all = screen_covariates(W, {"A", "B"}, 0.7, {"A", "B"});
    CHECK(all == std::vector<std::string>{"A", "B"});
  }

  SUBCASE("column order does not change the outcome") {
    Eigen::MatrixXd Xp(n, 4);
    Xp.col(0) = X.col(3);
    Xp.col(1) = X.col(2);
    Xp.col(2) = X.col(1);
    Xp.col(3) = X.col(0);
    const auto kept_p =
        screen_covariates(Xp, {"OPEN", "FOREST", "TEMP", "ELEV"}, 0.7, priority);
    CHECK(kept_p == std::vector<std::string>{"FOREST", "ELEV"});
  }

  SUBCASE("names missing from the priority list are rejected") {
    CHECK_THROWS_AS(screen_covariates(X, names, 0.7, {"ELEV"}), input_error);
  }
}

TEST_CASE("dataset csv round trip is bit exact") {
  TempDir tmp;
  SurveyDataset d;
  d.sites = two_sites();
  d.observations = {{0, 1, 107.0 / 3.0}, {0, 2, 4.25}, {1, 3, 61.0}, {1, 4, 179.5}};
  d.covariates.resize(2, 0);
  const std::string p1 = tmp.file("d1.csv");
  write_dataset_csv(p1, d);
  const SurveyDataset back = read_dataset_csv(p1);
  REQUIRE(back.observations.size() == d.observations.size());
  for (std::size_t i = 0; i < d.observations.size(); ++i)
    CHECK(back.observations[i].y == d.observations[i].y);
  const std::string p2 = tmp.file("d2.csv");
  write_dataset_csv(p2, back);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("csv headers are validated") {
  TempDir tmp;
  const std::string p = tmp.file("bad.csv");
  std::ofstream(p) << "id,x,y\n";
  CHECK_THROWS_AS(read_sites_csv(p), input_error);
  std::ofstream(tmp.file("bad2.csv")) << "site_id,x,y,country\nq,0,0,Q\n";
  CHECK_THROWS_AS(read_sites_csv(tmp.file("bad2.csv")), input_error);
}

TEST_CASE("sites csv round trip") {
  TempDir tmp;
  const auto sites = two_sites();
  write_sites_csv(tmp.file("s.csv"), sites);
  const auto back = read_sites_csv(tmp.file("s.csv"));
  REQUIRE(back.size() == sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    CHECK(back[i].id == sites[i].id);
    CHECK(back[i].pos.x == sites[i].pos.x);
    CHECK(back[i].country == sites[i].country);
  }
}
