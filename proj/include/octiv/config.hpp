#pragma once

// Text configuration files. Format: one `key = value` per line, `#` starts a
// comment, blank lines ignored. Keys are dotted (`solver.step_size`); the
// `layer` key may repeat and its value is the six whitespace-separated layer
// fields `name thickness n mu_s mu_a g` (names must not contain whitespace).
// Unknown keys are rejected so typos fail loudly instead of silently keeping
// a default.

#include "octiv/ehf.hpp"
#include "octiv/field.hpp"
#include "octiv/losses.hpp"
#include "octiv/mc.hpp"
#include "octiv/phantom.hpp"
#include "octiv/solver.hpp"
#include "octiv/speckle.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace octiv {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

} // namespace detail

/// Parsed key-value file. Consumers pull keys they understand; finish()
/// rejects whatever is left.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
  }

  static ConfigFile parse_text(const std::string& text, const std::string& origin = "<config>") {
    ConfigFile cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos,
              origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      require(!key.empty(), origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.values_[key].push_back(value);
    }
    return cfg;
  }

  const std::string& origin() const { return origin_; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::optional<std::string> get(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    consumed_.insert(key);
    require(it->second.size() == 1, origin_ + ": key '" + key + "' given more than once");
    return it->second.front();
  }

  std::vector<std::string> get_all(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return {};
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double fallback) {
    const auto v = get(key);
    return v ? parse_double(key, *v) : fallback;
  }

  int get_int(const std::string& key, int fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    const double d = parse_double(key, *v);
    require(d == static_cast<int>(d), origin_ + ": key '" + key + "' must be an integer");
    return static_cast<int>(d);
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    try {
      size_t idx = 0;
      const uint64_t r = std::stoull(*v, &idx);
      require(idx == v->size(), "");
      return r;
    } catch (...) {
      throw std::invalid_argument(origin_ + ": key '" + key + "' is not an unsigned integer: " +
                                  *v);
    }
  }

  bool get_bool(const std::string& key, bool fallback) {
    const auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw std::invalid_argument(origin_ + ": key '" + key + "' must be true/false: " + *v);
  }

  /// Throws if any key was never consumed.
  void finish() const {
    std::string unknown;
    for (const auto& [k, _] : values_)
      if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    require(unknown.empty(), origin_ + ": unknown keys: " + unknown);
  }

  double parse_double(const std::string& key, const std::string& v) const {
    try {
      size_t idx = 0;
      const double r = std::stod(v, &idx);
      require(idx == v.size(), "");
      return r;
    } catch (...) {
      throw std::invalid_argument(origin_ + ": key '" + key + "' is not a number: " + v);
    }
  }

 private:
  std::string origin_;
  std::map<std::string, std::vector<std::string>> values_;
  std::set<std::string> consumed_;
};

// ---------------------------------------------------------------------------
// Scene files.

inline PhantomScene load_scene(const std::string& path) {
  ConfigFile cfg = ConfigFile::parse_file(path);
  PhantomScene s;
  s.width = cfg.get_int("width", 0);
  s.height = cfg.get_int("height", 0);
  s.pitch_x = cfg.get_double("pitch_x", 0.0);
  s.pitch_z = cfg.get_double("pitch_z", 0.0);
  s.curvature_radius = cfg.get_double("curvature_radius", 0.0);
  s.apex_depth = cfg.get_double("apex_depth", 0.0);
  s.seed = cfg.get_u64("seed", 0);
  for (const std::string& spec : cfg.get_all("layer")) {
    std::istringstream ls(spec);
    LayerSpec l;
    if (!(ls >> l.name >> l.thickness >> l.n >> l.mu_s >> l.mu_a >> l.g))
      throw std::invalid_argument(path + ": layer line needs 'name thickness n mu_s mu_a g': " +
                                  spec);
    std::string extra;
    require(!(ls >> extra), path + ": trailing tokens in layer line: " + spec);
    s.layers.push_back(std::move(l));
  }
  cfg.finish();
  s.validate();
  return s;
}

inline std::string dump_scene(const PhantomScene& s) {
  auto g = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "width = " << s.width << "\n";
  out << "height = " << s.height << "\n";
  out << "pitch_x = " << g(s.pitch_x) << "\n";
  out << "pitch_z = " << g(s.pitch_z) << "\n";
  out << "curvature_radius = " << g(s.curvature_radius) << "\n";
  out << "apex_depth = " << g(s.apex_depth) << "\n";
  out << "seed = " << s.seed << "\n";
  for (const auto& l : s.layers)
    out << "layer = " << l.name << " " << g(l.thickness) << " " << g(l.n) << " " << g(l.mu_s)
        << " " << g(l.mu_a) << " " << g(l.g) << "\n";
  return out.str();
}

inline void save_scene(const std::string& path, const PhantomScene& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << dump_scene(s);
  out.flush();
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Run configuration: everything a reconstruction or simulation run needs.
// The master seed fans out to the subsystems through fixed stream tags, so
// one --seed reproduces the whole pipeline.

struct RunConfig {
  ForwardConfig forward;
  LossWeights weights;
  SolverConfig solver;
  SpeckleConfig speckle;
  McConfig mc;
  NoiseSchedule schedule;
  bool tv_normalize = false;
  uint64_t seed = 0;
  int threads = 0; // 0 = all hardware threads

  /// Pushes the master seed into every subsystem seed.
  void reseed(uint64_t master) {
    seed = master;
    mc.seed = derive_stream(master, 0x6d63ULL);        // "mc"
    speckle.seed = derive_stream(master, 0x73706bULL); // "spk"
    solver.seed = derive_stream(master, 0x736c76ULL);  // "slv"
  }

  void propagate_threads() { solver.threads = resolve_threads(threads); }

  void validate() const {
    forward.beam.validate();
    weights.validate();
    solver.validate();
    speckle.validate();
    mc.validate();
    schedule.validate();
  }
};

inline RunConfig load_run_config_from(ConfigFile& cfg) {
  RunConfig rc;

  rc.forward.beam.w0 = cfg.get_double("forward.w0", rc.forward.beam.w0);
  rc.forward.beam.z_r = cfg.get_double("forward.z_r", rc.forward.beam.z_r);
  rc.forward.beam.z_f = cfg.get_double("forward.z_f", rc.forward.beam.z_f);
  if (const auto v = cfg.get("forward.gain")) {
    if (*v == "unit")
      rc.forward.gain_mode = GainMode::FixedUnit;
    else if (*v == "least_squares")
      rc.forward.gain_mode = GainMode::PerColumnLeastSquares;
    else
      throw std::invalid_argument(cfg.origin() +
                                  ": forward.gain must be unit|least_squares: " + *v);
  }
  if (const auto v = cfg.get("forward.depth_origin")) {
    if (*v == "auto")
      rc.forward.depth_origin.reset();
    else
      rc.forward.depth_origin = cfg.parse_double("forward.depth_origin", *v);
  }

  rc.weights.lambda1 = cfg.get_double("loss.lambda1", rc.weights.lambda1);
  rc.weights.lambda2 = cfg.get_double("loss.lambda2", rc.weights.lambda2);
  rc.weights.lambda3 = cfg.get_double("loss.lambda3", rc.weights.lambda3);
  rc.weights.lambda4 = cfg.get_double("loss.lambda4", rc.weights.lambda4);
  rc.weights.omega_n = cfg.get_double("loss.omega_n", rc.weights.omega_n);
  rc.weights.omega_mus = cfg.get_double("loss.omega_mus", rc.weights.omega_mus);
  rc.weights.omega_g = cfg.get_double("loss.omega_g", rc.weights.omega_g);
  rc.tv_normalize = cfg.get_bool("loss.tv_normalize", rc.tv_normalize);

  rc.solver.max_iters = cfg.get_int("solver.max_iters", rc.solver.max_iters);
  rc.solver.step_size = cfg.get_double("solver.step_size", rc.solver.step_size);
  rc.solver.step_scale_n = cfg.get_double("solver.step_scale_n", rc.solver.step_scale_n);
  rc.solver.step_scale_mus = cfg.get_double("solver.step_scale_mus", rc.solver.step_scale_mus);
  rc.solver.step_scale_g = cfg.get_double("solver.step_scale_g", rc.solver.step_scale_g);
  rc.solver.adam_beta1 = cfg.get_double("solver.beta1", rc.solver.adam_beta1);
  rc.solver.adam_beta2 = cfg.get_double("solver.beta2", rc.solver.adam_beta2);
  rc.solver.adam_eps = cfg.get_double("solver.eps", rc.solver.adam_eps);
  rc.solver.patience = cfg.get_int("solver.patience", rc.solver.patience);
  rc.solver.min_rel_improvement =
      cfg.get_double("solver.min_rel_improvement", rc.solver.min_rel_improvement);
  if (const auto v = cfg.get("solver.bounds")) {
    if (*v == "sigmoid")
      rc.solver.bounds_mode = BoundsMode::SigmoidReparam;
    else if (*v == "clamp")
      rc.solver.bounds_mode = BoundsMode::Clamp;
    else
      throw std::invalid_argument(cfg.origin() + ": solver.bounds must be sigmoid|clamp: " + *v);
  }
  rc.solver.init_n = cfg.get_double("solver.init_n", rc.solver.init_n);
  if (const auto v = cfg.get("solver.init_mus")) {
    if (*v == "auto")
      rc.solver.init_mus.reset();
    else
      rc.solver.init_mus = cfg.parse_double("solver.init_mus", *v);
  }
  rc.solver.init_g = cfg.get_double("solver.init_g", rc.solver.init_g);
  rc.solver.normalize_input = cfg.get_bool("solver.normalize_input", rc.solver.normalize_input);
  rc.solver.diff_draws = cfg.get_int("solver.diff_draws", rc.solver.diff_draws);

  if (const auto v = cfg.get("speckle.distribution")) {
    if (*v == "exponential")
      rc.speckle.distribution = SpeckleDistribution::ExponentialIntensity;
    else if (*v == "gamma")
      rc.speckle.distribution = SpeckleDistribution::GammaIntensity;
    else
      throw std::invalid_argument(cfg.origin() +
                                  ": speckle.distribution must be exponential|gamma: " + *v);
  }
  rc.speckle.looks = cfg.get_double("speckle.looks", rc.speckle.looks);

  rc.mc.photons = cfg.get_u64("mc.photons", rc.mc.photons);
  rc.mc.roulette_threshold = cfg.get_double("mc.roulette_threshold", rc.mc.roulette_threshold);
  rc.mc.roulette_survival = cfg.get_double("mc.roulette_survival", rc.mc.roulette_survival);
  rc.mc.record_na = cfg.get_double("mc.na", rc.mc.record_na);
  rc.mc.max_events = cfg.get_u64("mc.max_events", rc.mc.max_events);

  rc.schedule.sigma_min = cfg.get_double("diff.sigma_min", rc.schedule.sigma_min);
  rc.schedule.sigma_max = cfg.get_double("diff.sigma_max", rc.schedule.sigma_max);

  rc.reseed(cfg.get_u64("seed", rc.seed));
  rc.threads = cfg.get_int("threads", rc.threads);

  cfg.finish();
  rc.propagate_threads();
  rc.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  ConfigFile cfg = ConfigFile::parse_file(path);
  return load_run_config_from(cfg);
}

/// Round-trippable dump of the effective configuration (the run manifest).
inline std::string dump_run_config(const RunConfig& rc) {
  auto g = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "forward.w0 = " << g(rc.forward.beam.w0) << "\n";
  out << "forward.z_r = " << g(rc.forward.beam.z_r) << "\n";
  out << "forward.z_f = " << g(rc.forward.beam.z_f) << "\n";
  out << "forward.gain = "
      << (rc.forward.gain_mode == GainMode::FixedUnit ? "unit" : "least_squares") << "\n";
  out << "forward.depth_origin = "
      << (rc.forward.depth_origin ? g(*rc.forward.depth_origin) : std::string("auto")) << "\n";
  out << "loss.lambda1 = " << g(rc.weights.lambda1) << "\n";
  out << "loss.lambda2 = " << g(rc.weights.lambda2) << "\n";
  out << "loss.lambda3 = " << g(rc.weights.lambda3) << "\n";
  out << "loss.lambda4 = " << g(rc.weights.lambda4) << "\n";
  out << "loss.omega_n = " << g(rc.weights.omega_n) << "\n";
  out << "loss.omega_mus = " << g(rc.weights.omega_mus) << "\n";
  out << "loss.omega_g = " << g(rc.weights.omega_g) << "\n";
  out << "loss.tv_normalize = " << (rc.tv_normalize ? "true" : "false") << "\n";
  out << "solver.max_iters = " << rc.solver.max_iters << "\n";
  out << "solver.step_size = " << g(rc.solver.step_size) << "\n";
  out << "solver.step_scale_n = " << g(rc.solver.step_scale_n) << "\n";
  out << "solver.step_scale_mus = " << g(rc.solver.step_scale_mus) << "\n";
  out << "solver.step_scale_g = " << g(rc.solver.step_scale_g) << "\n";
  out << "solver.beta1 = " << g(rc.solver.adam_beta1) << "\n";
  out << "solver.beta2 = " << g(rc.solver.adam_beta2) << "\n";
  out << "solver.eps = " << g(rc.solver.adam_eps) << "\n";
  out << "solver.patience = " << rc.solver.patience << "\n";
  out << "solver.min_rel_improvement = " << g(rc.solver.min_rel_improvement) << "\n";
  out << "solver.bounds = "
      << (rc.solver.bounds_mode == BoundsMode::SigmoidReparam ? "sigmoid" : "clamp") << "\n";
  out << "solver.init_n = " << g(rc.solver.init_n) << "\n";
  out << "solver.init_mus = "
      << (rc.solver.init_mus ? g(*rc.solver.init_mus) : std::string("auto")) << "\n";
  out << "solver.init_g = " << g(rc.solver.init_g) << "\n";
  out << "solver.normalize_input = " << (rc.solver.normalize_input ? "true" : "false") << "\n";
  out << "solver.diff_draws = " << rc.solver.diff_draws << "\n";
  out << "speckle.distribution = "
      << (rc.speckle.distribution == SpeckleDistribution::ExponentialIntensity ? "exponential"
                                                                               : "gamma")
      << "\n";
  out << "speckle.looks = " << g(rc.speckle.looks) << "\n";
  out << "mc.photons = " << rc.mc.photons << "\n";
  out << "mc.roulette_threshold = " << g(rc.mc.roulette_threshold) << "\n";
  out << "mc.roulette_survival = " << g(rc.mc.roulette_survival) << "\n";
  out << "mc.na = " << g(rc.mc.record_na) << "\n";
  out << "mc.max_events = " << rc.mc.max_events << "\n";
  out << "diff.sigma_min = " << g(rc.schedule.sigma_min) << "\n";
  out << "diff.sigma_max = " << g(rc.schedule.sigma_max) << "\n";
  out << "seed = " << rc.seed << "\n";
  out << "threads = " << rc.threads << "\n";
  return out.str();
}

} // namespace octiv
