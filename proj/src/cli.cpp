#include "deepwarp/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "deepwarp/scoring.hpp"

namespace deepwarp::cli {

namespace {

namespace fs = std::filesystem;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ParseError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError("bad value for '" + key + "': " + e.what());
  }
}

json vec_json(const VectorXd& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i)))
      out.push_back(v(i));
    else if (v(i) < 0)
      out.push_back(nullptr);  // -inf, a zero Cholesky diagonal
    else
      throw InvalidParameterError("cannot serialise a non-finite value");
  }
  return out;
}

VectorXd json_vec(const json& j) {
  VectorXd v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i)
    v(i) = j[i].is_null() ? -std::numeric_limits<double>::infinity() : j[i].get<double>();
  return v;
}

json mat_json(const MatrixXd& m) {
  json out = json::array();
  for (Index i = 0; i < m.rows(); ++i) out.push_back(vec_json(m.row(i).transpose()));
  return out;
}

MatrixXd json_mat(const json& j, Index cols) {
  MatrixXd m(static_cast<Index>(j.size()), cols);
  for (Index i = 0; i < m.rows(); ++i) {
    if (static_cast<Index>(j[i].size()) != cols) throw ParseError("ragged matrix in model file");
    m.row(i) = json_vec(j[i]).transpose();
  }
  return m;
}

Domain parse_domain(const json& j) {
  check_keys(j, {"lower", "upper"}, "domain");
  const auto lo = j.at("lower").get<std::vector<double>>();
  const auto hi = j.at("upper").get<std::vector<double>>();
  if (lo.size() != hi.size() || lo.empty() || lo.size() > 2)
    throw ParseError("domain bounds must both have length 1 or 2");
  return Domain(Eigen::Map<const VectorXd>(lo.data(), static_cast<Index>(lo.size())),
                Eigen::Map<const VectorXd>(hi.data(), static_cast<Index>(hi.size())));
}

json domain_json(const Domain& d) { return {{"lower", vec_json(d.lower)}, {"upper", vec_json(d.upper)}}; }

std::vector<UnitSpec> parse_architecture(const json& j, std::vector<std::string>& warnings) {
  if (!j.is_array()) throw ParseError("architecture must be an array of units");
  std::vector<UnitSpec> out;
  for (const auto& u : j) {
    const std::string type = get_or<std::string>(u, "type", "");
    UnitSpec spec;
    if (type == "awu") {
      check_keys(u, {"type", "axis", "r", "sigmoids", "steepness"}, "awu unit");
      spec.kind = UnitSpec::Kind::Awu;
      spec.axis = get_or(u, "axis", 0);
      if (u.contains("r") && u.contains("sigmoids")) throw ParseError("awu unit takes r or sigmoids, not both");
      spec.r = u.contains("sigmoids") ? get_or<Index>(u, "sigmoids", 50) + 1 : get_or<Index>(u, "r", 51);
      spec.steepness = get_or(u, "steepness", 200.0);
    } else if (type == "sr_rbf") {
      check_keys(u, {"type", "l"}, "sr_rbf unit");
      spec.kind = UnitSpec::Kind::SrRbf;
      spec.resolution = get_or(u, "l", 1);
    } else if (type == "mobius") {
      check_keys(u, {"type"}, "mobius unit");
      spec.kind = UnitSpec::Kind::Mobius;
      if (!out.empty() && out.back().kind == UnitSpec::Kind::Mobius)
        warnings.push_back("consecutive Mobius units compose to a single Mobius map; the extra unit adds nothing");
    } else {
      throw ParseError("unknown unit type '" + type + "' (expected awu, sr_rbf or mobius)");
    }
    out.push_back(spec);
  }
  return out;
}

Process parse_process(const std::string& name) {
  if (name == "y11") return Process::Y11;
  if (name == "y12") return Process::Y12;
  if (name == "matern") return Process::Matern;
  if (name == "siwgp_draw") return Process::SiwgpDraw;
  if (name == "scene") return Process::Scene;
  throw ParseError("unknown process '" + name + "' (expected y11, y12, matern, siwgp_draw or scene)");
}

fs::path prepare_dir(const std::string& out_dir) {
  fs::path dir(out_dir.empty() ? "." : out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> coord_header(int dim) {
  std::vector<std::string> h{"s1"};
  if (dim == 2) h.push_back("s2");
  return h;
}

Domain default_sim_domain(int dim) {
  return dim == 1 ? Domain(VectorXd::Constant(1, -0.5), VectorXd::Constant(1, 0.5)) : Domain::unit(2);
}

int arch_dim(const std::vector<UnitSpec>& units) {
  for (const auto& u : units)
    if (u.kind != UnitSpec::Kind::Awu || u.axis == 1) return 2;
  return 1;
}

json process_json(const ProcessLayer& p) {
  json j{{"centroids", mat_json(p.centroids)},
         {"apertures", vec_json(p.apertures)},
         {"sigma2", p.sigma2},
         {"length_scale", p.length_scale}};
  if (p.grid)
    j["grid"] = {{"lower", vec_json(p.grid->lower)}, {"spacing", vec_json(p.grid->spacing)}, {"per_dim", p.grid->per_dim}};
  return j;
}

ProcessLayer process_from_json(const json& j, int dim) {
  ProcessLayer p;
  p.centroids = json_mat(j.at("centroids"), dim);
  p.apertures = json_vec(j.at("apertures"));
  p.sigma2 = j.at("sigma2").get<double>();
  p.length_scale = j.at("length_scale").get<double>();
  if (j.contains("grid")) {
    ProcessLayer::Grid g;
    g.lower = json_vec(j["grid"].at("lower"));
    g.spacing = json_vec(j["grid"].at("spacing"));
    g.per_dim = j["grid"].at("per_dim").get<int>();
    p.grid = g;
  }
  return p;
}

json data_json(const Dataset& d) {
  return {{"locations", mat_json(d.locations)}, {"z", vec_json(d.z)}, {"noise_var", d.noise_var}};
}

Dataset data_from_json(const json& j) {
  const auto& locs = j.at("locations");
  const Index dim = locs.empty() ? 1 : static_cast<Index>(locs[0].size());
  return Dataset(json_mat(locs, dim), json_vec(j.at("z")), j.at("noise_var").get<double>());
}

json prior_json(const WeightPrior& p) {
  return {{"awu_linear_mean", p.awu_linear_mean},
          {"awu_sigmoid_mean", p.awu_sigmoid_mean},
          {"rbf_mean", p.rbf_mean},
          {"variance", p.variance}};
}

WeightPrior prior_from_json(const json& j) {
  check_keys(j, {"awu_linear_mean", "awu_sigmoid_mean", "rbf_mean", "variance"}, "prior");
  WeightPrior p;
  p.awu_linear_mean = get_or(j, "awu_linear_mean", p.awu_linear_mean);
  p.awu_sigmoid_mean = get_or(j, "awu_sigmoid_mean", p.awu_sigmoid_mean);
  p.rbf_mean = get_or(j, "rbf_mean", p.rbf_mean);
  p.variance = get_or(j, "variance", p.variance);
  if (!(p.variance > 0.0)) throw ParseError("prior variance must be positive");
  return p;
}

json variational_json(const VariationalState& q) {
  json blocks = json::array();
  for (const auto& b : q.blocks)
    blocks.push_back({{"layer", b.block.layer},
                      {"offset", b.block.offset},
                      {"size", b.block.size},
                      {"mean", vec_json(b.mean)},
                      {"log_diag", vec_json(b.log_diag)},
                      {"lower", vec_json(b.lower)},
                      {"prior_mean", vec_json(b.prior_mean)}});
  return {{"full_cholesky", q.full_cholesky}, {"blocks", blocks}};
}

VariationalState variational_from_json(const json& j) {
  VariationalState q;
  q.full_cholesky = j.at("full_cholesky").get<bool>();
  for (const auto& b : j.at("blocks")) {
    VariationalBlock vb;
    vb.block.layer = b.at("layer").get<std::size_t>();
    vb.block.offset = b.at("offset").get<Index>();
    vb.block.size = b.at("size").get<Index>();
    vb.block.random_weights = true;
    vb.mean = json_vec(b.at("mean"));
    vb.log_diag = json_vec(b.at("log_diag"));
    vb.lower = json_vec(b.at("lower"));
    vb.prior_mean = json_vec(b.at("prior_mean"));
    q.blocks.push_back(std::move(vb));
  }
  return q;
}

double wall_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig parse_config(const json& j) {
  check_keys(j,
             {"model", "architecture", "top_layer", "domain", "schedule", "learning_rate", "n_mc", "full_cholesky",
              "init_log_sd", "prior", "knot_cap", "seed", "threads", "gp_steps", "predict", "simulate", "diagnose",
              "warp_export"},
             "config");
  RunConfig c;
  c.model = get_or<std::string>(j, "model", c.model);
  if (c.model != "siwgp" && c.model != "sdsp" && c.model != "gp" && c.model != "frk")
    throw ParseError("unknown model '" + c.model + "' (expected siwgp, sdsp, gp or frk)");
  if (j.contains("architecture")) c.architecture = parse_architecture(j["architecture"], c.warnings);
  if ((c.model == "frk" || c.model == "gp") && !c.architecture.empty())
    c.warnings.push_back("model " + c.model + " ignores the warping architecture");
  if (j.contains("top_layer")) {
    check_keys(j["top_layer"], {"per_dim"}, "top_layer");
    c.top_per_dim = get_or(j["top_layer"], "per_dim", 0);
    if (c.top_per_dim < 1) throw ParseError("top_layer.per_dim must be at least 1");
  }
  if (j.contains("domain")) c.domain = parse_domain(j["domain"]);
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, {"warp", "top", "joint"}, "schedule");
    c.schedule.warp_steps = get_or(s, "warp", c.schedule.warp_steps);
    c.schedule.top_steps = get_or(s, "top", c.schedule.top_steps);
    c.schedule.joint_steps = get_or(s, "joint", c.schedule.joint_steps);
    if (c.schedule.warp_steps < 0 || c.schedule.top_steps < 0 || c.schedule.joint_steps < 0)
      throw ParseError("schedule steps must be nonnegative");
  }
  if (j.contains("learning_rate")) {
    check_keys(j["learning_rate"], {"warp", "top"}, "learning_rate");
    if (j["learning_rate"].contains("warp")) c.lr_warp = get_or(j["learning_rate"], "warp", 0.0);
    c.lr_top = get_or(j["learning_rate"], "top", c.lr_top);
  }
  c.n_mc = get_or<Index>(j, "n_mc", c.n_mc);
  if (c.n_mc < 1) throw ParseError("n_mc must be at least 1");
  c.full_cholesky = get_or(j, "full_cholesky", c.full_cholesky);
  c.init_log_sd = get_or(j, "init_log_sd", c.init_log_sd);
  if (j.contains("prior")) c.prior = prior_from_json(j["prior"]);
  c.knot_cap = get_or<Index>(j, "knot_cap", c.knot_cap);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.threads = std::max(1, get_or(j, "threads", c.threads));
  c.gp_steps = get_or(j, "gp_steps", c.gp_steps);

  if (j.contains("predict")) {
    const auto& p = j["predict"];
    check_keys(p, {"n_mc", "per_component", "include_noise"}, "predict");
    c.predict_n_mc = get_or<Index>(p, "n_mc", c.predict_n_mc);
    c.per_component = get_or<Index>(p, "per_component", c.per_component);
    c.include_noise = get_or(p, "include_noise", c.include_noise);
    if (c.predict_n_mc < 1 || c.per_component < 2) throw ParseError("predict needs n_mc >= 1 and per_component >= 2");
  }
  if (j.contains("simulate")) {
    const auto& s = j["simulate"];
    check_keys(s,
               {"process", "n", "noise_var", "truth_per_dim", "domain", "matern", "architecture", "top_layer", "scene"},
               "simulate");
    SimConfig& sim = c.simulate;
    sim.process = parse_process(get_or<std::string>(s, "process", "y11"));
    sim.n = get_or<Index>(s, "n", sim.n);
    sim.noise_var = get_or(s, "noise_var", sim.noise_var);
    sim.truth_per_dim = get_or(s, "truth_per_dim", sim.truth_per_dim);
    if (s.contains("domain")) sim.domain = parse_domain(s["domain"]);
    if (s.contains("matern")) {
      check_keys(s["matern"], {"variance", "range"}, "simulate.matern");
      sim.matern.variance = get_or(s["matern"], "variance", sim.matern.variance);
      sim.matern.range = get_or(s["matern"], "range", sim.matern.range);
    }
    if (s.contains("architecture")) sim.architecture = parse_architecture(s["architecture"], c.warnings);
    if (s.contains("top_layer")) {
      check_keys(s["top_layer"], {"per_dim", "sigma2", "length_scale"}, "simulate.top_layer");
      sim.top_per_dim = get_or(s["top_layer"], "per_dim", sim.top_per_dim);
      sim.top_sigma2 = get_or(s["top_layer"], "sigma2", sim.top_sigma2);
      sim.top_length_scale = get_or(s["top_layer"], "length_scale", sim.top_length_scale);
    }
    if (s.contains("scene")) {
      check_keys(s["scene"], {"rows", "cols", "csv"}, "simulate.scene");
      sim.scene_rows = get_or(s["scene"], "rows", sim.scene_rows);
      sim.scene_cols = get_or(s["scene"], "cols", sim.scene_cols);
      sim.scene_csv = get_or<std::string>(s["scene"], "csv", "");
    }
  }
  if (j.contains("diagnose")) {
    const auto& d = j["diagnose"];
    check_keys(d, {"thresholds"}, "diagnose");
    if (d.contains("thresholds")) {
      const auto& t = d["thresholds"];
      if (t.is_array()) {
        c.thresholds = t.get<std::vector<double>>();
      } else {
        check_keys(t, {"from", "to", "step"}, "diagnose.thresholds");
        const double from = t.at("from").get<double>(), to = t.at("to").get<double>(), step = t.at("step").get<double>();
        if (!(step > 0.0) || to < from) throw ParseError("threshold sweep needs step > 0 and to >= from");
        const auto count = static_cast<long>(std::floor((to - from) / step + 1e-9));
        for (long k = 0; k <= count; ++k) c.thresholds.push_back(from + static_cast<double>(k) * step);
      }
    }
  }
  if (j.contains("warp_export")) {
    check_keys(j["warp_export"], {"grid_per_dim"}, "warp_export");
    c.warp_grid = get_or(j["warp_export"], "grid_per_dim", c.warp_grid);
    if (c.warp_grid < 2) throw ParseError("warp_export.grid_per_dim must be at least 2");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset to line number
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(path + ": invalid JSON", line);
  }
  return parse_config(j);
}

WarpStack build_stack(const std::vector<UnitSpec>& units, const Domain& domain) {
  WarpStack stack(domain);
  for (const auto& u : units) {
    switch (u.kind) {
      case UnitSpec::Kind::Awu: stack.add_awu(u.axis, u.r, u.steepness); break;
      case UnitSpec::Kind::SrRbf: stack.add_sr_rbf(u.resolution); break;
      case UnitSpec::Kind::Mobius: stack.add_mobius(); break;
    }
  }
  return stack;
}

// ---------------------------------------------------------------------------
// CSV

int Table::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k)
    if (header[k] == name) return static_cast<int>(k);
  return -1;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Table t;
  std::string line;
  int line_no = 0;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(path + ": expected " + std::to_string(t.header.size()) + " fields, found " +
                           std::to_string(cells.size()),
                       line_no);
    std::vector<double> row;
    for (const auto& c : cells) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size() || c.empty())
        throw ParseError(path + ": cannot parse '" + c + "' as a number", line_no);
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ParseError(path + ": missing header row", 1);
  t.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) t.values(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  return t;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw InvalidParameterError("cannot format number");
  return std::string(buf, ptr);
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const MatrixXd& values) {
  std::ostringstream out;
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
  out << "\n";
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index k = 0; k < values.cols(); ++k) out << (k ? "," : "") << format_double(values(i, k));
    out << "\n";
  }
  write_text(path, out.str());
}

LocationSet read_locations(const std::string& path) {
  const Table t = read_csv(path);
  const int c1 = t.column("s1"), c2 = t.column("s2");
  if (c1 < 0) throw ParseError(path + ": header must contain s1", 1);
  LocationSet s(t.values.rows(), c2 >= 0 ? 2 : 1);
  s.col(0) = t.values.col(c1);
  if (c2 >= 0) s.col(1) = t.values.col(c2);
  return s;
}

MatrixXd read_scene(const std::string& path) {
  const Table t = read_csv(path);
  const int cr = t.column("row"), cc = t.column("col"), cv = t.column("value");
  if (cr < 0 || cc < 0 || cv < 0) throw ParseError(path + ": header must contain row, col and value", 1);
  if (t.values.rows() == 0) throw DegenerateDataError(path + ": empty scene");
  const VectorXd rows = t.values.col(cr), cols = t.values.col(cc);
  for (Index i = 0; i < rows.size(); ++i)
    if (rows(i) < 0 || cols(i) < 0 || rows(i) != std::floor(rows(i)) || cols(i) != std::floor(cols(i)))
      throw ParseError(path + ": row and col must be nonnegative integers", static_cast<int>(i) + 2);
  MatrixXd grid = MatrixXd::Constant(static_cast<Index>(rows.maxCoeff()) + 1, static_cast<Index>(cols.maxCoeff()) + 1,
                                     std::numeric_limits<double>::quiet_NaN());
  for (Index i = 0; i < rows.size(); ++i)
    grid(static_cast<Index>(rows(i)), static_cast<Index>(cols(i))) = t.values(i, cv);
  return grid;
}

Dataset read_data(const std::string& path) {
  const Table t = read_csv(path);
  const int cz = t.column("z");
  if (cz < 0) throw ParseError(path + ": header must contain z", 1);
  if (t.values.rows() < 2) throw DegenerateDataError(path + ": need at least 2 observations");
  LocationSet s = read_locations(path);
  return Dataset(std::move(s), t.values.col(cz), 1.0);
}

// ---------------------------------------------------------------------------
// Model files

json to_json(const WarpStack& stack) {
  json layers = json::array();
  for (const auto& layer : stack.layers()) {
    if (const auto* a = std::get_if<AwuLayer>(&layer)) {
      layers.push_back({{"type", "awu"},
                        {"axis", a->axis},
                        {"steepness", a->steepness},
                        {"centers", vec_json(a->centers)},
                        {"tweights", vec_json(a->tweights)}});
    } else if (const auto* r = std::get_if<RbfLayer>(&layer)) {
      layers.push_back({{"type", "rbf"},
                        {"centroid", {r->centroid(0), r->centroid(1)}},
                        {"scale", r->scale},
                        {"tweight", r->tweight}});
    } else {
      const auto& m = std::get<MobiusLayer>(layer);
      layers.push_back({{"type", "mobius"}, {"a", m.a}, {"input", domain_json(m.input)}});
    }
  }
  return {{"domain", domain_json(stack.domain())}, {"layers", layers}, {"knots", mat_json(stack.knots())}};
}

WarpStack stack_from_json(const json& j) {
  WarpStack stack(parse_domain(j.at("domain")));
  const int d = stack.dim();
  for (const auto& l : j.at("layers")) {
    const std::string type = l.at("type").get<std::string>();
    if (type == "awu") {
      const VectorXd tw = json_vec(l.at("tweights"));
      AwuLayer a(l.at("axis").get<int>(), tw.size(), l.at("steepness").get<double>(), 0.0, 1.0);
      a.centers = json_vec(l.at("centers"));
      a.tweights = tw;
      stack.add(a);
    } else if (type == "rbf") {
      const auto c = l.at("centroid").get<std::vector<double>>();
      stack.add(RbfLayer(Eigen::Vector2d(c.at(0), c.at(1)), l.at("scale").get<double>(), l.at("tweight").get<double>()));
    } else if (type == "mobius") {
      MobiusLayer m(parse_domain(l.at("input")));
      m.a = l.at("a").get<std::array<double, 8>>();
      stack.add(m);
    } else {
      throw ParseError("unknown layer type '" + type + "' in model file");
    }
  }
  stack.set_knots(json_mat(j.at("knots"), d));
  return stack;
}

const WarpStack* Model::stack() const {
  if (kind == "siwgp" || kind == "frk") return &siwgp.stack;
  if (kind == "sdsp") return &sdsp.stack;
  return nullptr;
}

json to_json(const Model& model) {
  json j{{"format", "deepwarp-model"},
         {"version", 1},
         {"kind", model.kind},
         {"data", data_json(model.data)},
         {"predict",
          {{"n_mc", model.predict_n_mc}, {"per_component", model.per_component}, {"include_noise", model.include_noise}}}};
  if (model.kind == "gp") {
    j["gp"] = {{"variance", model.gp.variance}, {"range", model.gp.range}, {"noise", model.gp.noise}};
  } else if (model.kind == "sdsp") {
    const SdspFit& f = model.sdsp;
    j["stack"] = to_json(f.stack);
    j["process"] = process_json(f.process);
    j["noise_var"] = f.noise_var;
    j["variational"] = variational_json(f.q);
    j["prior"] = prior_json(f.prior);
    j["seed"] = f.seed;
  } else {
    j["stack"] = to_json(model.siwgp.stack);
    j["process"] = process_json(model.siwgp.process);
    j["noise_var"] = model.siwgp.noise_var;
  }
  return j;
}

Model model_from_json(const json& j) {
  try {
    if (j.value("format", "") != "deepwarp-model") throw ParseError("not a deepwarp model file");
    Model m;
    m.kind = j.at("kind").get<std::string>();
    m.data = data_from_json(j.at("data"));
    const auto& p = j.at("predict");
    m.predict_n_mc = p.at("n_mc").get<Index>();
    m.per_component = p.at("per_component").get<Index>();
    m.include_noise = p.at("include_noise").get<bool>();
    const int d = m.data.dim();
    if (m.kind == "gp") {
      const auto& g = j.at("gp");
      m.gp = MaternParams{g.at("variance").get<double>(), g.at("range").get<double>(), g.at("noise").get<double>()};
    } else if (m.kind == "sdsp") {
      SdspFit& f = m.sdsp;
      f.data = m.data;
      f.stack = stack_from_json(j.at("stack"));
      f.process = process_from_json(j.at("process"), d);
      f.noise_var = j.at("noise_var").get<double>();
      f.q = variational_from_json(j.at("variational"));
      f.prior = prior_from_json(j.at("prior"));
      f.seed = j.at("seed").get<std::uint64_t>();
    } else if (m.kind == "siwgp" || m.kind == "frk") {
      SiwgpFit& f = m.siwgp;
      f.data = m.data;
      f.stack = stack_from_json(j.at("stack"));
      f.process = process_from_json(j.at("process"), d);
      f.noise_var = j.at("noise_var").get<double>();
    } else {
      throw ParseError("unknown model kind '" + m.kind + "'");
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::string& path, const Model& model) { write_text(path, to_json(model).dump(1) + "\n"); }

Model load_model(const std::string& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": invalid JSON model file");
  }
  return model_from_json(j);
}

// ---------------------------------------------------------------------------
// Commands

Simulation run_simulation(const RunConfig& config) {
  const SimConfig& sc = config.simulate;
  SimSpec spec;
  spec.process = sc.process;
  spec.n = sc.n;
  spec.noise_var = sc.noise_var;
  spec.seed = config.seed;
  spec.truth_per_dim = sc.truth_per_dim;
  spec.matern = MaternParams{sc.matern.variance, sc.matern.range, 0.0};
  spec.prior = config.prior;
  spec.scene_rows = sc.scene_rows;
  spec.scene_cols = sc.scene_cols;
  if (sc.domain) spec.domain = *sc.domain;
  if (sc.process == Process::SiwgpDraw) {
    const auto& units = sc.architecture ? *sc.architecture : config.architecture;
    const Domain g = sc.domain ? *sc.domain : default_sim_domain(std::max(2, arch_dim(units)));
    spec.domain = g;
    spec.stack = build_stack(units, g);
    spec.top = place_centroids(Domain::unit(g.dim()), sc.top_per_dim, sc.top_sigma2, sc.top_length_scale);
  }
  if (sc.process == Process::Scene && !sc.scene_csv.empty()) {
    RngStream rng(config.seed);
    return split_scene(read_scene(sc.scene_csv), sc.n, sc.noise_var, rng);
  }
  return simulate(spec);
}

std::vector<std::string> cmd_simulate(const RunConfig& config, const std::string& out_dir) {
  const Simulation sim = run_simulation(config);
  const fs::path dir = prepare_dir(out_dir);
  const int d = sim.data.dim();

  auto header = coord_header(d);
  MatrixXd data(sim.data.size(), d + 1);
  data << sim.data.locations, sim.data.z;
  header.push_back("z");
  const std::string data_path = (dir / "data.csv").string();
  write_csv(data_path, header, data);

  auto theader = coord_header(d);
  theader.push_back("y");
  MatrixXd truth(sim.truth.size(), d + 1);
  truth << sim.truth_locations, sim.truth;
  const std::string truth_path = (dir / "truth.csv").string();
  write_csv(truth_path, theader, truth);
  return {data_path, truth_path};
}

FitOutcome fit_model(const RunConfig& config, const Dataset& raw) {
  const auto start = std::chrono::steady_clock::now();
  const int d = raw.dim();
  if (d > 2) throw InvalidParameterError("only 1D and 2D locations are supported");
  const Dataset data(raw.locations, raw.z, default_noise_var(raw));
  const int per_dim = config.top_per_dim > 0 ? config.top_per_dim : (d == 1 ? 50 : 20);
  const Domain domain = config.domain ? *config.domain : Domain::bounding_box(data.locations);
  if (domain.dim() != d) throw MismatchError("config domain dimension does not match the data");

  FitOutcome out;
  Model& m = out.model;
  m.kind = config.model;
  m.data = raw;
  m.predict_n_mc = config.predict_n_mc;
  m.per_component = config.per_component;
  m.include_noise = config.include_noise;
  json estimates;
  std::vector<double> trace;
  std::string objective = "log_likelihood";
  double final_value = 0.0;

  if (config.model == "gp") {
    GpOptions o;
    o.steps = config.gp_steps;
    o.learning_rate = config.lr_top;
    m.gp = gp_fit_ml(data, o);
    final_value = gp_loglik(m.gp, data);
    estimates = {{"variance", m.gp.variance}, {"range", m.gp.range}, {"noise_var", m.gp.noise}};
  } else {
    const WarpStack stack =
        build_stack(config.model == "frk" ? std::vector<UnitSpec>{} : config.architecture, domain);
    const ProcessLayer process = default_process_layer(data, stack, per_dim);
    if (config.model == "sdsp") {
      SdspOptions o;
      o.schedule = config.schedule;
      o.n_mc = config.n_mc;
      if (config.lr_warp) o.lr_warp = *config.lr_warp;
      o.lr_top = config.lr_top;
      o.full_cholesky = config.full_cholesky;
      o.init_log_sd = config.init_log_sd;
      o.prior = config.prior;
      o.knot_cap = config.knot_cap;
      o.seed = config.seed;
      o.threads = config.threads;
      m.sdsp = fit_sdsp(data, stack, process, o);
      m.sdsp.data = raw;
      trace = m.sdsp.trace;
      objective = "elbo_estimate";
      final_value = trace.empty() ? 0.0 : trace.back();
      json blocks = json::array();
      for (const auto& b : m.sdsp.q.blocks)
        blocks.push_back({{"layer", b.block.layer}, {"mean", vec_json(b.mean)}, {"log_sd", vec_json(b.log_diag)}});
      estimates = {{"sigma2", m.sdsp.process.sigma2},
                   {"length_scale", m.sdsp.process.length_scale},
                   {"noise_var", m.sdsp.noise_var},
                   {"warp_params", vec_json(m.sdsp.stack.params())},
                   {"variational", blocks}};
    } else {
      SiwgpOptions o;
      o.schedule = config.schedule;
      if (config.lr_warp) o.lr_warp = *config.lr_warp;
      o.lr_top = config.lr_top;
      o.knot_cap = config.knot_cap;
      o.seed = config.seed;
      m.siwgp = fit_siwgp(data, stack, process, o);
      m.siwgp.data = raw;
      trace = m.siwgp.trace;
      final_value = m.siwgp.best_loglik;
      estimates = {{"sigma2", m.siwgp.process.sigma2},
                   {"length_scale", m.siwgp.process.length_scale},
                   {"noise_var", m.siwgp.noise_var},
                   {"warp_params", vec_json(m.siwgp.stack.params())}};
    }
  }
  out.report = {{"model", config.model},
                {"n", raw.size()},
                {"dim", d},
                {"seed", config.seed},
                {"objective", objective},
                {"trace", trace},
                {"final_objective", final_value},
                {"estimates", estimates},
                {"warnings", config.warnings},
                {"wall_time_s", wall_seconds(start)}};
  return out;
}

std::vector<std::string> cmd_fit(const RunConfig& config, const std::string& data_path, const std::string& out_dir) {
  const Dataset data = read_data(data_path);
  const FitOutcome fit = fit_model(config, data);
  const fs::path dir = prepare_dir(out_dir);
  const std::string model_path = (dir / "model.json").string();
  const std::string report_path = (dir / "fit_report.json").string();
  save_model(model_path, fit.model);
  write_text(report_path, fit.report.dump(1) + "\n");
  return {model_path, report_path};
}

PredictiveSummary predict_model(const Model& model, const LocationSet& s_star, std::uint64_t seed) {
  if (s_star.cols() != model.dim())
    throw MismatchError("locations have " + std::to_string(s_star.cols()) + " columns but the model is " +
                        std::to_string(model.dim()) + "D");
  if (s_star.rows() == 0) return gaussian_summary(VectorXd(), VectorXd());
  if (model.kind == "gp") return gp_predict(model.gp, model.data, s_star, model.include_noise);
  if (model.kind == "sdsp")
    return predict_sdsp(model.sdsp, s_star, model.predict_n_mc, model.per_component, seed, model.include_noise).summary;
  return predict_siwgp(model.siwgp, s_star, model.include_noise);
}

std::vector<std::string> cmd_predict(const RunConfig& config, const std::string& model_path,
                                     const std::string& locations_path, const std::string& out_dir) {
  const Model model = load_model(model_path);
  const LocationSet s = read_locations(locations_path);
  if (s.rows() > 0 && s.cols() != model.dim())
    throw MismatchError("locations are " + std::to_string(s.cols()) + "D but the model is " +
                        std::to_string(model.dim()) + "D");
  LocationSet sp = s;
  if (s.rows() == 0) sp.resize(0, model.dim());
  const PredictiveSummary p = predict_model(model, sp, config.seed);
  const int d = model.dim();
  auto header = coord_header(d);
  for (const char* h : {"pred_mean", "pred_sd", "lower95", "upper95"}) header.push_back(h);
  MatrixXd out(sp.rows(), d + 4);
  if (sp.rows() > 0) out << sp, p.mean, p.sd, p.lower95, p.upper95;
  const fs::path dir = prepare_dir(out_dir);
  const std::string path = (dir / "predictions.csv").string();
  write_csv(path, header, out);
  return {path};
}

json diagnose(const MatrixXd& predictions, const MatrixXd& truth, int dim, const std::vector<double>& thresholds) {
  if (predictions.rows() != truth.rows())
    throw MismatchError("predictions have " + std::to_string(predictions.rows()) + " rows, truth has " +
                        std::to_string(truth.rows()));
  const Index n = truth.rows();
  for (Index i = 0; i < n; ++i)
    for (int k = 0; k < dim; ++k)
      if (std::abs(predictions(i, k) - truth(i, k)) > 1e-9 * (1.0 + std::abs(truth(i, k))))
        throw MismatchError("location mismatch at data row " + std::to_string(i + 1));
  PredictiveSummary p;
  p.mean = predictions.col(dim);
  p.sd = predictions.col(dim + 1);
  p.lower95 = predictions.col(dim + 2);
  p.upper95 = predictions.col(dim + 3);
  const VectorXd y = truth.col(dim);
  const ScoreReport r = score(p, y);
  json out{{"n", n}, {"mape", r.mape}, {"rmspe", r.rmspe}, {"crps", r.crps}, {"is95", r.is95}};
  if (!thresholds.empty()) {
    json curve = json::array();
    for (double t : thresholds) curve.push_back({{"threshold", t}, {"ts", threat_score(p.mean, y, t, t)}});
    out["threat_scores"] = curve;
  }
  return out;
}

std::vector<std::string> cmd_diagnose(const RunConfig& config, const std::string& predictions_path,
                                      const std::string& truth_path, const std::string& out_dir) {
  const Table pred = read_csv(predictions_path);
  const Table truth = read_csv(truth_path);
  const int dim = pred.column("s2") >= 0 ? 2 : 1;
  const auto need = [](const Table& t, const std::vector<std::string>& cols, const std::string& path) {
    MatrixXd out(t.values.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const int c = t.column(cols[k]);
      if (c < 0) throw ParseError(path + ": missing column " + cols[k], 1);
      out.col(static_cast<Index>(k)) = t.values.col(c);
    }
    return out;
  };
  auto pcols = coord_header(dim);
  for (const char* h : {"pred_mean", "pred_sd", "lower95", "upper95"}) pcols.push_back(h);
  auto tcols = coord_header(dim);
  tcols.push_back(truth.column("y") >= 0 ? "y" : "z");
  const json scores = diagnose(need(pred, pcols, predictions_path), need(truth, tcols, truth_path), dim,
                               config.thresholds);
  const fs::path dir = prepare_dir(out_dir);
  const std::string path = (dir / "scores.json").string();
  write_text(path, scores.dump(1) + "\n");
  return {path};
}

std::string warp_svg(const WarpStack& stack, int grid_per_dim) {
  const int d = stack.dim();
  const int fine = 8 * (grid_per_dim - 1) + 1;
  std::vector<std::pair<std::string, LocationSet>> lines;  // colour, warped polyline
  if (d == 1) {
    const LocationSet s = regular_grid(stack.domain(), fine);
    const LocationSet f = warp_forward(stack, s).warped;
    LocationSet curve(fine, 2);
    curve << s, f;
    lines.emplace_back("#1f4e79", curve);
  } else {
    const Domain& g = stack.domain();
    for (int axis = 0; axis < 2; ++axis) {
      for (int k = 0; k < grid_per_dim; ++k) {
        const double fixed = g.lower(1 - axis) + g.side(1 - axis) * k / (grid_per_dim - 1.0);
        LocationSet s(fine, 2);
        for (int i = 0; i < fine; ++i) {
          s(i, axis) = g.lower(axis) + g.side(axis) * i / (fine - 1.0);
          s(i, 1 - axis) = fixed;
        }
        lines.emplace_back(axis == 0 ? "#1f4e79" : "#b03a2e", warp_forward(stack, s).warped);
      }
    }
  }
  VectorXd lo = VectorXd::Constant(2, std::numeric_limits<double>::infinity());
  VectorXd hi = -lo;
  for (const auto& [c, pts] : lines) {
    lo = lo.cwiseMin(pts.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(pts.colwise().maxCoeff().transpose());
  }
  const double size = 600.0, margin = 20.0;
  const double span = std::max({hi(0) - lo(0), hi(1) - lo(1), 1e-12});
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& [colour, pts] : lines) {
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1\" points=\"";
    for (Index i = 0; i < pts.rows(); ++i) {
      const double x = margin + (pts(i, 0) - lo(0)) / span * (size - 2 * margin);
      const double y = size - margin - (pts(i, 1) - lo(1)) / span * (size - 2 * margin);
      svg << (i ? " " : "") << format_double(std::round(x * 100) / 100) << ","
          << format_double(std::round(y * 100) / 100);
    }
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::string> cmd_warp_export(const RunConfig& config, const std::string& model_path,
                                         const std::string& out_dir) {
  const Model model = load_model(model_path);
  const int d = model.dim();
  WarpStack identity(Domain::bounding_box(model.data.locations));
  const WarpStack& stack = model.stack() ? *model.stack() : identity;
  const LocationSet s = regular_grid(stack.domain(), config.warp_grid);
  const LocationSet f = warp_forward(stack, s).warped;
  auto header = coord_header(d);
  header.push_back("f1");
  if (d == 2) header.push_back("f2");
  MatrixXd table(s.rows(), 2 * d);
  table << s, f;
  const fs::path dir = prepare_dir(out_dir);
  const std::string csv_path = (dir / "warp.csv").string();
  const std::string svg_path = (dir / "warp.svg").string();
  write_csv(csv_path, header, table);
  write_text(svg_path, warp_svg(stack, config.warp_grid));
  return {csv_path, svg_path};
}

}  // namespace deepwarp::cli
