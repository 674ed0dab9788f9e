#pragma once

#include <optional>

#include "deepwarp/baseline.hpp"
#include "deepwarp/sdsp.hpp"

namespace deepwarp {

/// Step process: 0.5 on |s| <= 0.2, -0.5 elsewhere.
double eval_y11(double s);
/// Smooth bump on (-0.5, 0), plateau 1 on [0.2, 0.3], -1 on (0.3, 0.4], 0 elsewhere.
double eval_y12(double s);

VectorXd sample_matern_field(const LocationSet& locations, const MaternParams& p, RngStream& rng);

/// w ~ Gau(0, Sigma_tau) and Y(s) = phi(f(s))' w.
VectorXd draw_siwgp(const WarpStack& stack, const ProcessLayer& process, const LocationSet& s, RngStream& rng);

VectorXd add_noise(const VectorXd& y, double noise_var, RngStream& rng);
LocationSet sample_uniform(const Domain& domain, Index n, RngStream& rng);

/// Draws every random weight of `stack` from `prior` and every Möbius
/// coefficient from Gau(0, 1), redrawing until the pole is admissible.
void draw_random_warp(WarpStack& stack, const WeightPrior& prior, RngStream& rng);

/// Nonstationary gridded test scene: a meandering sharp front, a localised
/// fine-scale disturbance and a smooth background; values lie roughly in [40, 260].
MatrixXd synthetic_scene(int rows, int cols, RngStream& rng);

enum class Process { Y11, Y12, Matern, SiwgpDraw, Scene };

struct SimSpec {
  Process process = Process::Y11;
  Index n = 300;
  double noise_var = 0.01;
  std::uint64_t seed = 0;
  Domain domain;                        // defaults: [-0.5, 0.5] for 1D processes, unit square otherwise
  MaternParams matern{1.0, 0.05, 0.0};  // Matern only
  std::optional<WarpStack> stack;       // SiwgpDraw: architecture, random weights drawn when `draw_weights`
  std::optional<ProcessLayer> top;      // SiwgpDraw
  bool draw_weights = true;
  WeightPrior prior;
  int truth_per_dim = 0;  // 0: 1001 in 1D, 100 in 2D
  int scene_rows = 136;   // Scene
  int scene_cols = 203;
};

struct Simulation {
  Dataset data;
  LocationSet truth_locations;
  VectorXd truth;
  std::optional<WarpStack> stack;  // the warp used, for SiwgpDraw
};

/// Noisy observations at uniform locations plus the noise-free process on a
/// regular grid. Matern fields are drawn jointly over data and grid. Scenes
/// use `n` training cells and hold out the rest.
Simulation simulate(const SimSpec& spec);

/// Cell (i, j) of a rows x cols grid sits at (j / (cols - 1), i / (rows - 1)).
/// A uniformly random `n_train` cells become noisy observations and the rest
/// the noise-free held-out truth. Non-finite cells (missing data) are dropped.
Simulation split_scene(const MatrixXd& grid, Index n_train, double noise_var, RngStream& rng);

}  // namespace deepwarp
