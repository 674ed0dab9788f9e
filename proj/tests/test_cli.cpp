#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "deepwarp/cli.hpp"
#include "random_stacks.hpp"

using namespace deepwarp;
using namespace deepwarp::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("deepwarp_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

RunConfig quick(const std::string& model, json arch = json::array()) {
  return parse_config({{"model", model},
                       {"architecture", arch},
                       {"schedule", {{"warp", 10}, {"top", 10}, {"joint", 10}}},
                       {"n_mc", 2},
                       {"predict", {{"n_mc", 3}, {"per_component", 20}}},
                       {"seed", 3}});
}

json awu1d() { return json::array({{{"type", "awu"}, {"axis", 0}, {"sigmoids", 10}}}); }

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig c = parse_config(json::parse(R"({
    "model": "sdsp",
    "architecture": [{"type": "awu", "axis": 0, "sigmoids": 50, "steepness": 200},
                     {"type": "awu", "axis": 1, "r": 51},
                     {"type": "sr_rbf", "l": 1},
                     {"type": "mobius"}],
    "top_layer": {"per_dim": 20},
    "n_mc": 10,
    "schedule": {"warp": 100, "top": 100, "joint": 100},
    "diagnose": {"thresholds": {"from": 50, "to": 250, "step": 50}}
  })"));
  CHECK(c.model == "sdsp");
  REQUIRE(c.architecture.size() == 4);
  CHECK(c.architecture[0].r == 51);
  CHECK(c.architecture[1].r == 51);
  CHECK(c.architecture[1].axis == 1);
  CHECK(c.architecture[2].kind == UnitSpec::Kind::SrRbf);
  CHECK(c.n_mc == 10);
  CHECK(c.thresholds == std::vector<double>{50, 100, 150, 200, 250});
  CHECK(c.warnings.empty());

  const WarpStack s = build_stack(c.architecture, Domain::unit(2));
  CHECK(s.size() == 2 + 9 + 1);

  const RunConfig twice = parse_config(json::parse(R"({"architecture": [{"type": "mobius"}, {"type": "mobius"}]})"));
  CHECK(twice.warnings.size() == 1);

  CHECK_THROWS_AS(parse_config(json::parse(R"({"modle": "siwgp"})")), ParseError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"model": "krige"})")), ParseError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"architecture": [{"type": "spline"}]})")), ParseError);
  CHECK_THROWS_AS(parse_config(json::parse(R"({"architecture": [{"type": "awu", "r": 5, "sigmoids": 4}]})")),
                  ParseError);
}

TEST_CASE("invalid JSON reports the line") {
  const fs::path dir = scratch("badjson");
  spit(dir / "c.json", "{\n  \"model\": \"siwgp\",\n  oops\n}\n");
  try {
    load_config((dir / "c.json").string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("CSV round trip and errors") {
  const fs::path dir = scratch("csv");
  RngStream rng(1);
  MatrixXd m(5, 3);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * 1e3;
  m(0, 0) = 0.1;
  m(1, 1) = 1.0 / 3.0;
  write_csv((dir / "a.csv").string(), {"s1", "s2", "z"}, m);
  const Table t = read_csv((dir / "a.csv").string());
  CHECK(t.header == std::vector<std::string>{"s1", "s2", "z"});
  CHECK(t.values == m);
  CHECK(format_double(0.1) == "0.1");

  spit(dir / "bad.csv", "s1,z\n0.1,1\n0.2,abc\n");
  try {
    read_csv((dir / "bad.csv").string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  spit(dir / "ragged.csv", "s1,z\n0.1,1\n\n0.2\n");
  try {
    read_csv((dir / "ragged.csv").string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  spit(dir / "one.csv", "s1,z\n0.1,1\n");
  CHECK_THROWS_AS(read_data((dir / "one.csv").string()), DegenerateDataError);
  CHECK_THROWS_AS(read_csv((dir / "missing.csv").string()), IoError);
}

TEST_CASE("simulate writes the 1D protocol reproducibly") {
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  RunConfig c = parse_config(json::parse(R"({"simulate": {"process": "y11", "n": 300, "noise_var": 0.01}})"));
  c.seed = 1;
  cmd_simulate(c, a.string());
  cmd_simulate(c, b.string());
  CHECK(read_csv((a / "data.csv").string()).values.rows() == 300);
  const Table truth = read_csv((a / "truth.csv").string());
  CHECK(truth.values.rows() == 1001);
  CHECK(truth.header == std::vector<std::string>{"s1", "y"});
  CHECK(slurp(a / "data.csv") == slurp(b / "data.csv"));
  CHECK(slurp(a / "truth.csv") == slurp(b / "truth.csv"));
}

TEST_CASE("simulate a 2D SIWGP draw") {
  const fs::path dir = scratch("sim2d");
  RunConfig c = parse_config(json::parse(R"({
    "simulate": {"process": "siwgp_draw", "n": 2000, "truth_per_dim": 20,
                 "architecture": [{"type": "awu", "axis": 0, "r": 51}, {"type": "awu", "axis": 1, "r": 51},
                                  {"type": "sr_rbf", "l": 1}],
                 "top_layer": {"per_dim": 20, "sigma2": 1, "length_scale": 0.04}}})"));
  cmd_simulate(c, dir.string());
  const Table t = read_csv((dir / "data.csv").string());
  CHECK(t.values.rows() == 2000);
  CHECK(t.header == std::vector<std::string>{"s1", "s2", "z"});
  CHECK(read_csv((dir / "truth.csv").string()).values.rows() == 400);
}

TEST_CASE("simulate splits a pre-gridded scene") {
  const fs::path dir = scratch("scene");
  std::ostringstream csv;
  csv << "row,col,value\n";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != 1 || j != 2) csv << i << "," << j << "," << 10 * i + j << "\n";
  spit(dir / "scene.csv", csv.str());
  const MatrixXd grid = read_scene((dir / "scene.csv").string());
  CHECK(grid.rows() == 3);
  CHECK(grid.cols() == 4);
  CHECK(std::isnan(grid(1, 2)));
  CHECK(grid(2, 3) == 23.0);

  RunConfig c = parse_config(
      {{"simulate", {{"process", "scene"}, {"n", 5}, {"noise_var", 0.0}, {"scene", {{"csv", (dir / "scene.csv").string()}}}}}});
  cmd_simulate(c, dir.string());
  const Table data = read_csv((dir / "data.csv").string());
  const Table truth = read_csv((dir / "truth.csv").string());
  CHECK(data.values.rows() == 5);
  CHECK(truth.values.rows() == 6);
  // (s1, s2) = (col / 3, row / 2)
  for (Index k = 0; k < truth.values.rows(); ++k)
    CHECK(truth.values(k, 2) == doctest::Approx(10 * std::lround(truth.values(k, 1) * 2) +
                                                std::lround(truth.values(k, 0) * 3)));
}

TEST_CASE("FRK is SIWGP with an empty architecture") {
  RngStream rng(2);
  const LocationSet s = testing_util::uniform_points(Domain::unit(1), 60, rng);
  const Dataset data(s, s.col(0).array().sin().matrix() + 0.1 * rng.normal_vector(60), 1.0);
  const FitOutcome frk = fit_model(quick("frk"), data);
  const FitOutcome empty = fit_model(quick("siwgp"), data);
  CHECK(frk.report["trace"] == empty.report["trace"]);
  CHECK(frk.report["estimates"] == empty.report["estimates"]);
}

TEST_CASE("fit, save, load and predict for every model kind") {
  RngStream rng(3);
  const LocationSet s = testing_util::uniform_points(Domain::unit(1), 60, rng);
  const Dataset data(s, (6.0 * s.col(0).array()).sin().matrix() + 0.1 * rng.normal_vector(60), 1.0);
  const fs::path dir = scratch("models");
  for (const std::string kind : {"siwgp", "sdsp", "gp", "frk"}) {
    CAPTURE(kind);
    const RunConfig c = quick(kind, kind == "gp" || kind == "frk" ? json::array() : awu1d());
    const FitOutcome a = fit_model(c, data);
    const FitOutcome b = fit_model(c, data);
    json ra = a.report, rb = b.report;
    ra.erase("wall_time_s");
    rb.erase("wall_time_s");
    CHECK(ra == rb);
    CHECK(a.report.contains("wall_time_s"));

    const std::string path = (dir / (kind + ".json")).string();
    save_model(path, a.model);
    const Model loaded = load_model(path);
    const PredictiveSummary p0 = predict_model(a.model, s, 5);
    const PredictiveSummary p1 = predict_model(loaded, s, 5);
    CHECK(p0.mean == p1.mean);
    CHECK(p0.sd == p1.sd);
    CHECK(p1.mean.allFinite());
    CHECK(p1.sd.allFinite());
    CHECK(to_json(loaded) == to_json(a.model));
  }
}

TEST_CASE("predict command edge cases") {
  const fs::path dir = scratch("predict");
  RunConfig c = parse_config(json::parse(R"({"simulate": {"process": "y12", "n": 50}})"));
  cmd_simulate(c, dir.string());
  RunConfig fc = quick("siwgp", awu1d());
  cmd_fit(fc, (dir / "data.csv").string(), dir.string());

  spit(dir / "empty.csv", "s1\n");
  cmd_predict(fc, (dir / "model.json").string(), (dir / "empty.csv").string(), (dir / "e").string());
  CHECK(slurp(dir / "e" / "predictions.csv") == "s1,pred_mean,pred_sd,lower95,upper95\n");

  spit(dir / "rep.csv", "s1\n0.1\n0.1\n-0.3\n0.1\n");
  cmd_predict(fc, (dir / "model.json").string(), (dir / "rep.csv").string(), (dir / "r").string());
  const Table t = read_csv((dir / "r" / "predictions.csv").string());
  REQUIRE(t.values.rows() == 4);
  CHECK(t.values.row(0) == t.values.row(1));
  CHECK(t.values.row(0) == t.values.row(3));

  spit(dir / "two.csv", "s1,s2\n0.1,0.2\n");
  CHECK_THROWS_AS(cmd_predict(fc, (dir / "model.json").string(), (dir / "two.csv").string(), dir.string()),
                  MismatchError);

  // training locations round trip
  cmd_predict(fc, (dir / "model.json").string(), (dir / "data.csv").string(), (dir / "t").string());
  const Table train = read_csv((dir / "t" / "predictions.csv").string());
  CHECK(train.values.rows() == 50);
  CHECK(train.values.allFinite());
}

TEST_CASE("diagnose scores") {
  MatrixXd truth(4, 2), pred(4, 5);
  truth << 0, 1, 1, 2, 2, 3, 3, 4;
  pred << 0, 1, 1e-9, 1, 1,  //
      1, 2, 1e-9, 2, 2,      //
      2, 3, 1e-9, 3, 3,      //
      3, 4, 1e-9, 4, 4;
  const json perfect = diagnose(pred, truth, 1, {});
  CHECK(perfect["mape"].get<double>() == 0.0);
  CHECK(perfect["rmspe"].get<double>() == 0.0);
  CHECK(perfect["crps"].get<double>() < 1e-9);
  CHECK(perfect["is95"].get<double>() == 0.0);
  CHECK(!perfect.contains("threat_scores"));

  // binary fields: predicted low at rows 0, 1, 2; truth low at rows 0, 1, 3
  MatrixXd t2(4, 2), p2(4, 5);
  t2 << 0, 0, 1, 0, 2, 1, 3, 0;
  p2 << 0, 0, 1, -1, 1,  //
      1, 0, 1, -1, 1,    //
      2, 0, 1, -1, 1,    //
      3, 1, 1, 0.5, 2.5;
  const json curve = diagnose(p2, t2, 1, {0.5, -1.0, 2.0});
  const auto& ts = curve["threat_scores"];
  CHECK(ts[0]["ts"].get<double>() == doctest::Approx(0.5));  // TP 2, FP 1, FN 1
  CHECK(ts[1]["ts"].get<double>() == 0.0);                   // nothing below -1
  CHECK(ts[2]["ts"].get<double>() == 1.0);                   // everything below 2
  // IS matches the scoring formula: widths 2, 2, 2, 2 and one miss of 0.5 below
  CHECK(curve["is95"].get<double>() == doctest::Approx((2 + 2 + 2 + 2 + 40.0 * 0.5) / 4.0));

  MatrixXd shifted = truth;
  shifted(2, 0) += 0.5;
  CHECK_THROWS_AS(diagnose(pred, shifted, 1, {}), MismatchError);
  CHECK_THROWS_AS(diagnose(pred.topRows(3), truth, 1, {}), MismatchError);
}

TEST_CASE("warp export") {
  const fs::path dir = scratch("export");
  RngStream rng(4);
  const LocationSet s = testing_util::uniform_points(Domain::unit(2), 100, rng);
  Model m;
  m.kind = "siwgp";
  m.data = Dataset(s, rng.normal_vector(100), 1.0);
  m.siwgp.data = m.data;
  m.siwgp.stack = WarpStack(Domain::unit(2));
  m.siwgp.process = place_centroids(Domain::unit(2), 4);
  save_model((dir / "id.json").string(), m);
  RunConfig c;
  c.warp_grid = 5;
  cmd_warp_export(c, (dir / "id.json").string(), (dir / "id").string());
  const Table id = read_csv((dir / "id" / "warp.csv").string());
  CHECK(id.header == std::vector<std::string>{"s1", "s2", "f1", "f2"});
  CHECK(id.values.leftCols(2) == id.values.rightCols(2));
  CHECK(slurp(dir / "id" / "warp.svg").find("<polyline") != std::string::npos);

  m.siwgp.stack.add_sr_rbf(1);
  m.siwgp.stack.set_knots(make_knots(s, 2000, 0).coords);
  testing_util::randomize_weights(m.siwgp.stack, rng);
  save_model((dir / "rbf.json").string(), m);
  cmd_warp_export(c, (dir / "rbf.json").string(), (dir / "rbf").string());
  const Table w = read_csv((dir / "rbf" / "warp.csv").string());
  CHECK((w.values.leftCols(2) - w.values.rightCols(2)).cwiseAbs().maxCoeff() > 1e-3);
  CHECK(w.values.rightCols(2) == warp_forward(m.siwgp.stack, w.values.leftCols(2)).warped);
  CHECK(injectivity_check(m.siwgp.stack, 41).injective);
}

#ifdef DEEPWARP_TOOL
TEST_CASE("command-line tool exit codes and machine-readable errors") {
  const fs::path dir = scratch("tool");
  const std::string tool = DEEPWARP_TOOL;
  auto run = [&](const std::string& args) {
    const std::string cmd = tool + " " + args + " >" + (dir / "out.txt").string() + " 2>" + (dir / "err.txt").string();
    return std::system(cmd.c_str());
  };
  spit(dir / "sim.json", R"({"simulate": {"process": "y11", "n": 40}})");
  CHECK(run("simulate --config " + (dir / "sim.json").string() + " --seed 1 --out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "data.csv"));
  CHECK(json::parse(slurp(dir / "out.txt"))["written"].size() == 2);

  spit(dir / "fit.json", R"({"model": "frk", "schedule": {"warp": 0, "top": 5, "joint": 0}})");
  CHECK(run("fit --config " + (dir / "fit.json").string() + " --data " + (dir / "data.csv").string() + " --out " +
            dir.string()) == 0);
  CHECK(run("predict --model " + (dir / "model.json").string() + " --locations " + (dir / "truth.csv").string() +
            " --out " + dir.string()) == 0);
  CHECK(run("diagnose --predictions " + (dir / "predictions.csv").string() + " --truth " +
            (dir / "truth.csv").string() + " --thresholds 0,0.5 --out " + dir.string()) == 0);
  CHECK(json::parse(slurp(dir / "scores.json"))["threat_scores"].size() == 2);
  CHECK(run("warp-export --model " + (dir / "model.json").string() + " --grid 3 --out " + dir.string()) == 0);

  spit(dir / "bad.csv", "s1,z\n0.1,1\nx,2\n");
  CHECK(run("fit --data " + (dir / "bad.csv").string() + " --out " + dir.string()) != 0);
  const json err = json::parse(slurp(dir / "err.txt"));
  CHECK(err["error"]["code"] == "parse_error");
  CHECK(err["error"]["line"] == 3);

  CHECK(run("fit --out " + dir.string()) != 0);
  CHECK(json::parse(slurp(dir / "err.txt"))["error"]["code"] == "invalid_parameter");
  CHECK(run("frobnicate") != 0);
  CHECK(json::parse(slurp(dir / "err.txt"))["error"]["code"] == "usage");
  CHECK(run("predict --model " + (dir / "nope.json").string() + " --locations x --out " + dir.string()) != 0);
  CHECK(json::parse(slurp(dir / "err.txt"))["error"]["code"] == "io_error");
}
#endif
