#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "deepwarp/baseline.hpp"
#include "deepwarp/sdsp.hpp"
#include "deepwarp/simulate.hpp"

namespace deepwarp::cli {

using nlohmann::json;

/// One unit of a warping architecture as written in a config file.
struct UnitSpec {
  enum class Kind { Awu, SrRbf, Mobius };
  Kind kind = Kind::Awu;
  int axis = 0;
  Index r = 51;  // basis count: linear term plus r - 1 sigmoids
  double steepness = 200.0;
  int resolution = 1;
};

struct SimConfig {
  Process process = Process::Y11;
  Index n = 300;
  double noise_var = 0.01;
  int truth_per_dim = 0;
  std::optional<Domain> domain;
  MaternParams matern{1.0, 0.05, 0.0};
  std::optional<std::vector<UnitSpec>> architecture;  // defaults to the run architecture
  int top_per_dim = 20;
  double top_sigma2 = 1.0;
  double top_length_scale = 0.04;
  int scene_rows = 136;
  int scene_cols = 203;
  std::string scene_csv;  // pre-gridded scene with columns row,col,value; synthetic when empty
};

struct RunConfig {
  std::string model = "siwgp";  // siwgp | sdsp | gp | frk
  std::vector<UnitSpec> architecture;
  int top_per_dim = 0;  // 0: 50 in 1D, 20 in 2D
  std::optional<Domain> domain;
  Schedule schedule;
  std::optional<double> lr_warp;  // model default when unset
  double lr_top = 0.05;
  Index n_mc = 10;
  bool full_cholesky = false;
  double init_log_sd = -3.0;
  WeightPrior prior;
  Index knot_cap = kDefaultKnotCap;
  std::uint64_t seed = 0;
  int threads = 1;
  int gp_steps = 300;

  Index predict_n_mc = 10;
  Index per_component = 100;
  bool include_noise = false;

  SimConfig simulate;

  std::vector<double> thresholds;  // threat-score sweep, empty for none
  int warp_grid = 21;

  std::vector<std::string> warnings;
};

/// Parses a config object; unknown keys are rejected.
RunConfig parse_config(const json& j);
RunConfig load_config(const std::string& path);

WarpStack build_stack(const std::vector<UnitSpec>& units, const Domain& domain);

// ---------------------------------------------------------------------------
// CSV

struct Table {
  std::vector<std::string> header;
  MatrixXd values;  // rows x header.size()

  /// Column index of `name`, or -1.
  int column(const std::string& name) const;
};

Table read_csv(const std::string& path);
void write_csv(const std::string& path, const std::vector<std::string>& header, const MatrixXd& values);
/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

/// Columns s1[,s2],z.
Dataset read_data(const std::string& path);
/// Columns s1[,s2]; other columns are ignored.
LocationSet read_locations(const std::string& path);

/// Grid from columns row,col,value (0-based indices). Cells absent from the
/// file are NaN and are skipped by the split.
MatrixXd read_scene(const std::string& path);

// ---------------------------------------------------------------------------
// Fitted models

struct Model {
  std::string kind;  // siwgp | sdsp | gp | frk
  Dataset data;
  SiwgpFit siwgp;    // siwgp and frk
  SdspFit sdsp;
  MaternParams gp;
  Index predict_n_mc = 10;
  Index per_component = 100;
  bool include_noise = false;

  int dim() const { return data.dim(); }
  /// Warp used for export: the fitted stack, or the variational-mean stack.
  const WarpStack* stack() const;
};

json to_json(const WarpStack& stack);
WarpStack stack_from_json(const json& j);
json to_json(const Model& model);
Model model_from_json(const json& j);
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Commands. Each writes into `out_dir` and returns the paths written.

std::vector<std::string> cmd_simulate(const RunConfig& config, const std::string& out_dir);
std::vector<std::string> cmd_fit(const RunConfig& config, const std::string& data_path, const std::string& out_dir);
std::vector<std::string> cmd_predict(const RunConfig& config, const std::string& model_path,
                                     const std::string& locations_path, const std::string& out_dir);
std::vector<std::string> cmd_diagnose(const RunConfig& config, const std::string& predictions_path,
                                      const std::string& truth_path, const std::string& out_dir);
std::vector<std::string> cmd_warp_export(const RunConfig& config, const std::string& model_path,
                                         const std::string& out_dir);

/// Runs the configured simulation in memory (the work behind cmd_simulate).
Simulation run_simulation(const RunConfig& config);

/// Fits a model in memory (the work behind cmd_fit).
struct FitOutcome {
  Model model;
  json report;
};
FitOutcome fit_model(const RunConfig& config, const Dataset& data);
PredictiveSummary predict_model(const Model& model, const LocationSet& s_star, std::uint64_t seed);

/// Scores plus the optional threat-score curve, as written to scores.json.
json diagnose(const MatrixXd& predictions, const MatrixXd& truth, int dim, const std::vector<double>& thresholds);

/// SVG of a regular grid's image under the warp.
std::string warp_svg(const WarpStack& stack, int grid_per_dim);

}  // namespace deepwarp::cli
