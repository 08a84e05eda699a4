#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "relpose/commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string k;
  bool refine = false;
  std::optional<std::size_t> bins;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "root seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--k", f.k, "fusion top-k: positive integer or 'all'");
  app->add_flag("--refine", f.refine, "refine the streaming trajectory");
  app->add_option("--bins", f.bins, "confidence bins for diag")->check(CLI::PositiveNumber);
}

relpose::RunConfig resolve(const CommonFlags& f) {
  relpose::RunConfig c = f.config.empty() ? relpose::RunConfig{} : relpose::load_config(f.config);
  nlohmann::json overlay = nlohmann::json::object();
  if (f.seed) overlay["seed"] = *f.seed;
  if (!f.out.empty()) overlay["output"] = f.out;
  if (!f.k.empty()) {
    if (f.k == "all") {
      overlay["fusion"]["k"] = "all";
    } else {
      try {
        std::size_t pos = 0;
        const unsigned long long k = std::stoull(f.k, &pos);
        if (pos != f.k.size()) throw std::invalid_argument(f.k);
        overlay["fusion"]["k"] = k;
      } catch (const std::exception&) {
        throw relpose::Error(relpose::ErrorKind::InvalidConfig, "--k must be a positive integer or 'all'");
      }
    }
  }
  if (f.refine) overlay["refine"]["enabled"] = true;
  if (f.bins) overlay["diag"]["bins"] = *f.bins;
  relpose::apply_json(c, overlay);
  relpose::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relative-pose aggregation, streaming estimation and evaluation on synthetic scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", relpose::kVersion);

  CommonFlags flags;
  CLI::App* stream = app.add_subcommand("stream", "single streaming pass");
  CLI::App* offline = app.add_subcommand("offline", "all-pairs aggregation and refinement");
  CLI::App* robust = app.add_subcommand("robust", "distractor-injection sweep");
  CLI::App* diag = app.add_subcommand("diag", "confidence calibration bins");
  CLI::App* eval = app.add_subcommand("eval", "metrics for a TUM trajectory pair");
  for (CLI::App* sub : {stream, offline, robust, diag, eval}) add_common(sub, flags);

  bool assert_monotone = false;
  diag->add_flag("--assert-monotone", assert_monotone, "fail unless error strictly decreases with confidence");
  std::string est, ref;
  eval->add_option("--est", est, "estimated trajectory (TUM)")->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", ref, "reference trajectory (TUM)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? relpose::kExitOk : relpose::kExitUsage;
  }

  try {
    const relpose::RunConfig config = resolve(flags);
    const std::string name = app.get_subcommands().front()->get_name();
    const auto out = relpose::resolve_output(config, name);
    if (name == "stream") return relpose::cmd_stream(config, out, std::cout);
    if (name == "offline") return relpose::cmd_offline(config, out, std::cout);
    if (name == "robust") return relpose::cmd_robust(config, out, std::cout);
    if (name == "diag") return relpose::cmd_diag(config, assert_monotone, out, std::cout);
    return relpose::cmd_eval(config, est, ref, out, std::cout);
  } catch (const relpose::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == relpose::ErrorKind::InvalidConfig ? relpose::kExitUsage : relpose::kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return relpose::kExitFailure;
  }
}
