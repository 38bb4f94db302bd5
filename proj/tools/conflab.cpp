// conflab <experiment> --config PATH [--seed U64] [--out DIR] [--threads N] [--format csv|json]
//
// Exit codes: 0 success, 1 error, 2 finding (the experiment ran and the
// mathematics said no).

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "conflab/cli/experiments.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string fixture;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
  std::string format;
};

int run(const std::string& experiment, const Overrides& o, CLI::App& sub) {
  using namespace conflab::cli;
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream f(o.config_path);
    if (!f) {
      std::cerr << "conflab: cannot read config " << o.config_path << "\n";
      return 1;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    try {
      doc = json::parse(ss.str());
    } catch (const json::parse_error& e) {
      std::cerr << "config: malformed JSON: " << e.what() << "\n";
      return 1;
    }
  }
  if (!doc.is_object()) {
    std::cerr << "config: expected a top-level table\n";
    return 1;
  }
  if (doc.contains("experiment") && doc["experiment"] != experiment) {
    std::cerr << "config: experiment " << doc["experiment"].dump() << " does not match subcommand '" << experiment
              << "'\n";
    return 1;
  }
  doc["experiment"] = experiment;
  if (!o.fixture.empty()) doc["ifs"] = {{"fixture", o.fixture}};
  if (sub.count("--seed")) doc["seed"] = o.seed;
  if (sub.count("--out")) doc["output_dir"] = o.out;
  if (sub.count("--threads")) doc["threads"] = o.threads;
  if (sub.count("--format")) doc["format"] = o.format;

  const ParseResult parsed = parse_config_json(doc);
  if (!parsed.ok()) {
    for (const auto& e : parsed.errors) std::cerr << "config: " << e << "\n";
    return 1;
  }
  try {
    const RunResult r = run_experiment(*parsed.config);
    for (const auto& f : r.findings) std::cout << "finding: " << f << "\n";
    std::cout << "wrote " << r.files.size() + 1 << " files to " << parsed.config->output_dir()
              << " (manifest sha256 " << r.manifest_sha256 << ")\n";
    return r.exit_code;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experiments on self-conformal measures"};
  app.set_version_flag("--version", std::string(conflab::cli::version_string));
  app.require_subcommand(1);
  Overrides o;
  for (const auto& name : conflab::cli::experiment_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--fixture", o.fixture, "use a built-in IFS instead of the config's ifs block");
    sub->add_option("--seed", o.seed, "64-bit seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::Range(1, 1024));
    sub->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json"}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  for (CLI::App* sub : app.get_subcommands()) return run(sub->get_name(), o, *sub);
  return 1;
}
