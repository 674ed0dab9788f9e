#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "deepwarp/cli.hpp"

namespace {

using deepwarp::cli::json;

int report_error(const std::string& code, const std::string& message, const json& extra = json::object()) {
  json err{{"code", code}, {"message", message}};
  err.update(extra);
  std::cerr << json{{"error", err}}.dump() << std::endl;
  return code == "usage" ? 64 : 1;
}

std::string require(const std::string& value, const char* option) {
  if (value.empty()) throw deepwarp::InvalidParameterError(std::string("missing required option ") + option);
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep compositional spatial models: simulate, fit, predict, diagnose, export warps"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Random seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory");

  auto* sim = app.add_subcommand("simulate", "Write data.csv and truth.csv for a simulated process");
  auto* fit = app.add_subcommand("fit", "Fit a model to data.csv; writes model.json and fit_report.json");
  std::string data_path;
  fit->add_option("--data", data_path, "Observation CSV with header s1[,s2],z");
  auto* predict = app.add_subcommand("predict", "Predict at locations; writes predictions.csv");
  std::string model_path, locations_path;
  predict->add_option("--model", model_path, "Fitted model file");
  predict->add_option("--locations", locations_path, "CSV with columns s1[,s2]");
  auto* diag = app.add_subcommand("diagnose", "Score predictions against truth; writes scores.json");
  std::string predictions_path, truth_path;
  std::vector<double> thresholds;
  diag->add_option("--predictions", predictions_path, "predictions.csv");
  diag->add_option("--truth", truth_path, "CSV with columns s1[,s2],y");
  diag->add_option("--thresholds", thresholds, "Threat-score thresholds")->delimiter(',');
  auto* exp = app.add_subcommand("warp-export", "Export the warp of a regular grid; writes warp.csv and warp.svg");
  std::optional<int> grid;
  exp->add_option("--model", model_path, "Fitted model file");
  exp->add_option("--grid", grid, "Grid lines per dimension");

  // global options may appear after the subcommand too
  for (auto* sub : {sim, fit, predict, diag, exp}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  try {
    deepwarp::cli::RunConfig config;
    if (!config_path.empty()) config = deepwarp::cli::load_config(config_path);
    if (seed) config.seed = *seed;
    if (!thresholds.empty()) config.thresholds = thresholds;
    if (grid) {
      if (*grid < 2) throw deepwarp::InvalidParameterError("--grid must be at least 2");
      config.warp_grid = *grid;
    }
    for (const auto& w : config.warnings) std::cerr << json{{"warning", w}}.dump() << std::endl;

    std::vector<std::string> written;
    if (*sim) {
      written = deepwarp::cli::cmd_simulate(config, out_dir);
    } else if (*fit) {
      written = deepwarp::cli::cmd_fit(config, require(data_path, "--data"), out_dir);
    } else if (*predict) {
      written = deepwarp::cli::cmd_predict(config, require(model_path, "--model"),
                                           require(locations_path, "--locations"), out_dir);
    } else if (*diag) {
      written = deepwarp::cli::cmd_diagnose(config, require(predictions_path, "--predictions"),
                                            require(truth_path, "--truth"), out_dir);
    } else {
      written = deepwarp::cli::cmd_warp_export(config, require(model_path, "--model"), out_dir);
    }
    std::cout << json{{"written", written}}.dump() << std::endl;
    return 0;
  } catch (const deepwarp::DegenerateWarpError& e) {
    return report_error(e.code(), e.what(), {{"layer", e.layer()}});
  } catch (const deepwarp::ParseError& e) {
    return report_error(e.code(), e.what(), e.line() >= 0 ? json{{"line", e.line()}} : json::object());
  } catch (const deepwarp::Error& e) {
    return report_error(e.code(), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
}
