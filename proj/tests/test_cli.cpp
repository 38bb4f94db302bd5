#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "conflab/cli/experiments.hpp"

using namespace conflab;
using namespace conflab::cli;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir = CONFLAB_SOURCE_DIR;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("conflab_test_cli_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentConfig load(const std::string& name) {
  const auto r = parse_config(slurp(source_dir / "configs" / (name + ".json")));
  INFO(name);
  for (const auto& e : r.errors) UNSCOPED_INFO(e);
  REQUIRE(r.ok());
  return *r.config;
}

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  for (const auto& e : errors)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(CONFLAB_BINARY) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* minimal = R"({
  "experiment": "validate",
  "ifs": {"maps": [{"kind": "affine", "coefficients": [0, 0.5]},
                   {"kind": "affine", "coefficients": [[0.5, 0], [0.5, 0]]}]}
})";

}  // namespace

TEST_CASE("minimal config parses with defaults filled") {
  const auto r = parse_config(minimal);
  REQUIRE(r.ok());
  const auto& c = *r.config;
  CHECK(c.experiment() == "validate");
  CHECK(c.seed() == 1);
  CHECK(c.threads() == 1);
  CHECK(c.format() == "csv");
  CHECK(c.p() == std::vector<double>{0.5, 0.5});
  CHECK(c.params().at("boundary_samples") == 256);
  CHECK(c.params().at("margin") == 0.0);
  CHECK_FALSE(c.doc.contains("renewal"));
  const auto ifs = build_ifs(c);
  CHECK(ifs.size() == 2);
  CHECK(eval_map(ifs.map(1), 0.0).value == cplx(0.5, 0.0));
}

TEST_CASE("weights summing to 0.9 give a range error naming p") {
  json j = json::parse(minimal);
  j["p"] = {0.5, 0.4};
  const auto r = parse_config_json(j);
  CHECK_FALSE(r.ok());
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].rfind("p:", 0) == 0);
}

TEST_CASE("every error is reported") {
  const auto r = parse_config(R"({
    "experiment": "renewal",
    "seed": -3,
    "threads": 0,
    "format": "xml",
    "colour": "blue",
    "ifs": {"fixture": "no_such"},
    "p": [1.2, -0.2],
    "renewal": {"k_list": [], "trials": 2.5, "circle_unit": "degrees", "extra": 1},
    "model": {"N_min": 3, "N_max": 2}
  })");
  CHECK_FALSE(r.ok());
  for (const char* needle : {"seed", "threads", "format", "colour: unknown key", "ifs.fixture", "p[1]",
                             "renewal.k_list", "renewal.trials", "renewal.circle_unit", "renewal.extra: unknown key",
                             "model.N_max"})
    CHECK(mentions(r.errors, needle));
  CHECK(r.errors.size() >= 11);

  CHECK(mentions(parse_config("{not json").errors, "malformed"));
  CHECK(mentions(parse_config(R"({"ifs": {"fixture": "segment"}})").errors, "experiment: missing"));
  CHECK(mentions(parse_config(R"({"experiment": "sample"})").errors, "ifs: missing"));
  CHECK(mentions(parse_config(R"({"experiment": "sample", "ifs": {"fixture": "segment"}, "p": [1.0]})").errors,
                 "1 weights for 2 maps"));
  CHECK(mentions(parse_config(R"({"experiment": "sample", "ifs": {"maps": [{"kind": "affine", "coefficients": [1]}]}})")
                     .errors,
                 "needs 2 coefficients"));
}

TEST_CASE("parse, serialize, parse is the identity") {
  for (const auto& entry : fs::directory_iterator(source_dir / "configs")) {
    if (entry.path().filename() == "goldens.json") continue;
    const auto a = parse_config(slurp(entry.path()));
    INFO(entry.path().string());
    REQUIRE(a.ok());
    const std::string text = serialize_config(*a.config);
    const auto b = parse_config(text);
    REQUIRE(b.ok());
    CHECK(*a.config == *b.config);
    CHECK(serialize_config(*b.config) == text);
  }
}

TEST_CASE("validate on the segment exits 0 and reports valid") {
  const auto dir = scratch("validate");
  const auto res = run_experiment(load("validate_segment"), dir);
  CHECK(res.exit_code == 0);
  const auto v = json::parse(slurp(dir / "validation.json"));
  CHECK(v.at("valid") == true);
  CHECK(run_binary("validate --config " + (source_dir / "configs/validate_segment.json").string() + " --out " +
                   (dir / "bin").string()) == 0);
}

TEST_CASE("negative controls exit 2") {
  const auto dir = scratch("controls");
  const auto gap = run_experiment(load("spectral_gap_control"), dir / "gap");
  CHECK(gap.exit_code == 2);
  const auto fit = json::parse(slurp(dir / "gap" / "fit.json"));
  CHECK(fit.at("rows")[0].at("alpha_hat").get<double>() == Catch::Approx(1.0).margin(1e-3));
  CHECK(run_binary("spectral-gap --config " + (source_dir / "configs/spectral_gap_control.json").string() +
                   " --out " + (dir / "bin").string()) == 2);

  json uni = load("uni_planar").doc;
  uni["ifs"] = {{"fixture", "segment"}};
  const auto u = run_experiment(*parse_config_json(uni).config, dir / "uni");
  CHECK(u.exit_code == 2);
  CHECK(json::parse(slurp(dir / "uni" / "certificate.json")).at("m_hat") == 0.0);
}

TEST_CASE("binary reports errors with exit 1") {
  const auto dir = scratch("errors");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"experiment": "sample", "ifs": {"fixture": "segment"}, "bogus": 1})";
  CHECK(run_binary("sample --config " + (dir / "bad.json").string()) == 1);
  CHECK(run_binary("renewal --config " + (source_dir / "configs/validate_segment.json").string()) == 1);
  CHECK(run_binary("nonsense") == 1);
  // A contracting map that leaves the disc: the run completes with a finding.
  std::ofstream(dir / "outside.json")
      << R"({"experiment": "sample", "ifs": {"maps": [{"kind": "affine", "coefficients": [0.9, 0.5]}]}})";
  CHECK(run_binary("sample --config " + (dir / "outside.json").string() + " --out " + (dir / "o").string()) == 2);
}

TEST_CASE("reruns are byte-identical and the manifest hashes every file") {
  const auto dir = scratch("determinism");
  for (const std::string name : {"renewal_two_ratio", "fourier_segment", "sample_two_ratio"}) {
    auto cfg = load(name);
    const auto a = run_experiment(cfg, dir / (name + "_a"));
    const auto b = run_experiment(cfg, dir / (name + "_b"));
    CHECK(a.manifest_sha256 == b.manifest_sha256);
    const auto manifest = json::parse(slurp(dir / (name + "_a") / "manifest.json"));
    CHECK(manifest.at("config_sha256") == sha256_hex(serialize_config(cfg)));
    CHECK(manifest.at("seed") == cfg.seed());
    CHECK(manifest.at("config") == cfg.doc);
    CHECK_FALSE(manifest.contains("wall_time"));
    std::size_t listed = 0;
    for (const auto& f : manifest.at("files")) {
      const auto bytes = slurp(dir / (name + "_a") / f.at("file").get<std::string>());
      CHECK(sha256_hex(bytes) == f.at("sha256"));
      CHECK(bytes == slurp(dir / (name + "_b") / f.at("file").get<std::string>()));
      ++listed;
    }
    std::size_t on_disk = 0;
    for (const auto& e : fs::directory_iterator(dir / (name + "_a"))) on_disk += e.path().filename() != "manifest.json";
    CHECK(listed == on_disk);
  }

  // Thread count is not part of the results.
  auto cfg = load("sample_two_ratio");
  cfg.doc["threads"] = 3;
  run_experiment(cfg, dir / "threads");
  CHECK(slurp(dir / "threads" / "samples.csv") == slurp(dir / "sample_two_ratio_a" / "samples.csv"));
}

TEST_CASE("json format writes tables as arrays of objects") {
  const auto dir = scratch("format");
  auto cfg = load("sample_two_ratio");
  cfg.doc["format"] = "json";
  cfg.doc["svg"] = false;
  run_experiment(cfg, dir);
  const auto rows = json::parse(slurp(dir / "samples.json"));
  REQUIRE(rows.size() == 5000);
  CHECK(rows[0].contains("re"));
  CHECK_FALSE(fs::exists(dir / "samples.csv"));
}

TEST_CASE("golden runs reproduce the checked-in hashes") {
  const fs::path golden_path = source_dir / "configs" / "goldens.json";
  const bool update = std::getenv("CONFLAB_UPDATE_GOLDENS") != nullptr;
  json goldens = fs::exists(golden_path) ? json::parse(slurp(golden_path)) : json::object();
  const auto dir = scratch("goldens");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(source_dir / "configs"))
    if (entry.path().filename() != "goldens.json") names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const auto res = run_experiment(load(name), dir / name);
    json files = json::object();
    for (const auto& e : res.files) files[e.file] = e.sha256;
    json record{{"exit_code", res.exit_code}, {"files", files}};
    INFO(name);
    if (update)
      goldens[name] = record;
    else {
      REQUIRE(goldens.contains(name));
      CHECK(goldens.at(name) == record);
    }
  }
  if (update) std::ofstream(golden_path) << goldens.dump(2) << "\n";
}
