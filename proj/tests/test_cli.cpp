#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string cli = CF_CLI_PATH;
const std::string src = CF_SOURCE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("cf_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
  int code = -1;
  std::string err;
};

RunResult run(const std::string& args, const TempDir& tmp) {
  const std::string err_file = tmp.file("stderr_capture.txt");
  const std::string cmd = "cd " + src + " && " + cli + " " + args + " 2> " + err_file;
  const int raw = std::system(cmd.c_str());
  RunResult res;
  res.code = WEXITSTATUS(raw);
  std::ifstream is(err_file);
  res.err = std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  return res;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  os << content;
}

std::string small_sim_config(int scenario, const std::string& extra = "") {
  std::ostringstream os;
  os << "seed = 910\n"
     << "[domain]\n"
     << "x0 = 0.0\ny0 = 0.0\nx1 = 30000.0\ny1 = 30000.0\n"
     << "max_edge_inner = 6000.0\nbuffer_width = 6000.0\n"
     << "[scenario]\n"
     << "scenario = " << scenario << "\n"
     << "n_sites_a = 8\nn_sites_b = 5\ncov_cell = 3000.0\n"
     << extra;
  return os.str();
}

}  // namespace

TEST_CASE("simulate is deterministic across runs and output directories") {
  TempDir a, b;
  write_file(a.file("cfg.toml"), small_sim_config(1));
  REQUIRE(run("simulate --config " + a.file("cfg.toml") + " --out " + a.str(), a).code == 0);
  REQUIRE(run("simulate --config " + a.file("cfg.toml") + " --out " + b.str(), b).code == 0);
  for (const char* name : {"dataset.csv", "sites.csv", "PREC.asc", "truth.json",
                           "run_manifest.json"}) {
    CHECK(slurp(a.file(name)) == slurp(b.file(name)));
  }
}

TEST_CASE("scenario 2 with unit psi reproduces scenario 1 outputs") {
  TempDir a, b;
  write_file(a.file("cfg.toml"), small_sim_config(1));
  write_file(b.file("cfg.toml"),
             small_sim_config(2, "psi_star = [1.0, 1.0, 1.0, 1.0]\n"));
  REQUIRE(run("simulate --config " + a.file("cfg.toml") + " --out " + a.str(), a).code == 0);
  REQUIRE(run("simulate --config " + b.file("cfg.toml") + " --out " + b.str(), b).code == 0);
  CHECK(slurp(a.file("dataset.csv")) == slurp(b.file("dataset.csv")));
  CHECK(slurp(a.file("truth.json")) != slurp(b.file("truth.json")));  // scenario is recorded
}

TEST_CASE("missing output directory exits 2 and names the path") {
  TempDir tmp;
  write_file(tmp.file("cfg.toml"), small_sim_config(1));
  const std::string missing = tmp.str() + "/no_such_dir";
  const RunResult res =
      run("simulate --config " + tmp.file("cfg.toml") + " --out " + missing, tmp);
  CHECK(res.code == 2);
  CHECK(res.err.find(missing) != std::string::npos);
}

TEST_CASE("malformed config exits 2 with the field path") {
  TempDir tmp;
  write_file(tmp.file("cfg.toml"), "seed = 1\n[domain]\nmax_edge_innr = 5.0\n");
  const RunResult res = run("simulate --config " + tmp.file("cfg.toml") + " --out " + tmp.str(), tmp);
  CHECK(res.code == 2);
  CHECK(res.err.find("domain.max_edge_innr") != std::string::npos);
}

TEST_CASE("a seed is mandatory") {
  TempDir tmp;
  write_file(tmp.file("cfg.toml"), "[domain]\nmax_edge_inner = 5.0\n");
  const RunResult res =
      run("simulate --config " + tmp.file("cfg.toml") + " --out " + tmp.str(), tmp);
  CHECK(res.code == 2);
}

TEST_CASE("smoke fit completes quickly and emits the posterior summary table") {
  TempDir tmp;
  const auto t0 = std::chrono::steady_clock::now();
  const RunResult res = run("fit --config configs/smoke.toml --out " + tmp.str(), tmp);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(res.code == 0);
  CHECK(secs < 10.0);
  const std::string fit_json = slurp(tmp.file("fit.json"));
  for (const char* key : {"Intercept", "PREC", "zeta2", "zeta3", "zeta4", "rho1", "sigma1",
                          "mean", "sd", "q025", "q50", "q975"}) {
    CHECK(fit_json.find(key) != std::string::npos);
  }
  CHECK(fs::exists(tmp.file("samples.bin")));

  SUBCASE("unknown flags are rejected") {
    const RunResult bad =
        run("assess --config configs/smoke.toml --out " + tmp.str() + " --nonsense x", tmp);
    CHECK(bad.code == 2);
  }

  SUBCASE("assess emits exactly the five performance rows") {
    const RunResult ares = run("assess --config configs/smoke.toml --out " + tmp.str(), tmp);
    REQUIRE(ares.code == 0);
    const std::string table = slurp(tmp.file("assessment.txt"));
    std::istringstream lines(table);
    std::string line;
    std::getline(lines, line);  // header
    std::vector<std::string> labels;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      labels.push_back(line.substr(0, line.find("  ")));
    }
    REQUIRE(labels.size() == 5);
    CHECK(labels[0] == "DIC");
    CHECK(labels[1] == "WAIC");
    CHECK(labels[2] == "RMSE");
    CHECK(labels[3] == "LMPL");
    CHECK(labels[4] == "Mean CRPS");
  }

  SUBCASE("predict refuses rasters that do not match the fit covariates") {
    // a raster named OTHER instead of PREC
    fs::copy_file(src + "/data/smoke/PREC.asc", tmp.file("OTHER.asc"));
    write_file(tmp.file("pred.toml"),
               "seed = 4242\n[domain]\nx0 = 0.0\ny0 = 0.0\nx1 = 10000.0\ny1 = 10000.0\n"
               "max_edge_inner = 3000.0\nmax_edge_outer = 3000.0\nbuffer_width = 2000.0\n"
               "[model]\nvariant = \"M1\"\ncovariates = [\"PREC\"]\n"
               "[paths]\nrasters = [\"" +
                   tmp.file("OTHER.asc") + "\"]\nfit_dir = \"" + tmp.str() + "\"\n");
    const RunResult pres =
        run("predict --config " + tmp.file("pred.toml") + " --out " + tmp.str(), tmp);
    CHECK(pres.code == 2);
    CHECK(pres.err.find("PREC") != std::string::npos);

    // and with the right raster it succeeds
    write_file(tmp.file("pred_ok.toml"),
               "seed = 4242\n[domain]\nx0 = 0.0\ny0 = 0.0\nx1 = 10000.0\ny1 = 10000.0\n"
               "max_edge_inner = 3000.0\nmax_edge_outer = 3000.0\nbuffer_width = 2000.0\n"
               "[model]\nvariant = \"M1\"\ncovariates = [\"PREC\"]\n"
               "[paths]\nrasters = [\"" +
                   src + "/data/smoke/PREC.asc\"]\nfit_dir = \"" + tmp.str() + "\"\n");
    const RunResult ok =
        run("predict --config " + tmp.file("pred_ok.toml") + " --out " + tmp.str(), tmp);
    REQUIRE(ok.code == 0);
    CHECK(fs::exists(tmp.file("mean.asc")));
    CHECK(fs::exists(tmp.file("sd.asc")));
  }
}

TEST_CASE("fit accepts raw records plus a site table") {
  TempDir tmp;
  write_file(tmp.file("sites.csv"),
             "site_id,x,y,country\n"
             "a1,2000,2000,A\na2,2500,7000,A\nb1,8000,3000,B\nb2,7500,8000,B\n");
  write_file(tmp.file("records.csv"),
             "site_id,year,species,source,count\n"
             "a1,2006,sp1,1,80\na1,2006,sp2,1,40\na1,2007,sp1,1,110\na1,2006,sp1,2,5\n"
             "a2,2006,sp1,1,90\na2,2006,sp1,2,4\n"
             "b1,2006,sp1,3,60\nb1,2006,sp1,4,170\n"
             "b2,2006,sp1,3,70\nb2,2007,sp1,4,160\n");
  fs::copy_file(src + "/data/smoke/PREC.asc", tmp.file("PREC.asc"));
  write_file(tmp.file("cfg.toml"),
             "seed = 31\n[domain]\nx0 = 0.0\ny0 = 0.0\nx1 = 10000.0\ny1 = 10000.0\n"
             "max_edge_inner = 3000.0\nbuffer_width = 2000.0\n"
             "[model]\nvariant = \"M1\"\ncovariates = [\"PREC\"]\n"
             "[inference]\nn_samples = 300\nnm_max_evals = 700\nnm_stall_window = 120\n"
             "[paths]\nsites = \"" + tmp.file("sites.csv") + "\"\nrecords = \"" +
                 tmp.file("records.csv") + "\"\nrasters = [\"" + tmp.file("PREC.asc") + "\"]\n");
  const RunResult res = run("fit --config " + tmp.file("cfg.toml") + " --out " + tmp.str(), tmp);
  REQUIRE(res.code == 0);
  // yearly aggregation feeds the model: a1 source 1 = mean(120, 110) = 115
  CHECK(fs::exists(tmp.file("fit.json")));
}

TEST_CASE("screen drops one member of a correlated raster pair") {
  TempDir tmp;
  // two anti-correlated surfaces plus an independent one, 12 x 12 cells
  std::ostringstream elev, temp, indep;
  const auto header = [](std::ostringstream& os) {
    os << "ncols 12\nnrows 12\nxllcorner 0\nyllcorner 0\ncellsize 1000\nNODATA_value -9999\n";
  };
  header(elev);
  header(temp);
  header(indep);
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int i = 0; i < 144; ++i) {
    const double e = unif(gen);
    const double noise = 0.35 * unif(gen);
    elev << e << " ";
    temp << -0.95 * e + noise << " ";
    indep << unif(gen) << " ";
  }
  write_file(tmp.file("ELEV.asc"), elev.str());
  write_file(tmp.file("TEMP.asc"), temp.str());
  write_file(tmp.file("WET.asc"), indep.str());
  write_file(tmp.file("cfg.toml"),
             "seed = 3\n[paths]\nrasters = [\"" + tmp.file("ELEV.asc") + "\", \"" +
                 tmp.file("TEMP.asc") + "\", \"" + tmp.file("WET.asc") +
                 "\"]\n[screen]\npriority = [\"ELEV\", \"WET\", \"TEMP\"]\n");
  const RunResult res =
      run("screen --config " + tmp.file("cfg.toml") + " --out " + tmp.str(), tmp);
  REQUIRE(res.code == 0);
  const std::string json = slurp(tmp.file("screen.json"));
  CHECK(json.find("\"kept\": [\n    \"ELEV\",\n    \"WET\"\n  ]") != std::string::npos);
  CHECK(json.find("\"dropped\": [\n    \"TEMP\"\n  ]") != std::string::npos);
}

TEST_CASE("manifests carry the config hash and seed") {
  TempDir tmp;
  write_file(tmp.file("cfg.toml"), small_sim_config(1));
  REQUIRE(run("simulate --config " + tmp.file("cfg.toml") + " --out " + tmp.str(), tmp).code == 0);
  const std::string manifest = slurp(tmp.file("run_manifest.json"));
  CHECK(manifest.find("config_hash") != std::string::npos);
  CHECK(manifest.find("\"seed\": 910") != std::string::npos);
  CHECK(manifest.find("artifact_version") != std::string::npos);
  CHECK(manifest.find("simulate") != std::string::npos);
}
