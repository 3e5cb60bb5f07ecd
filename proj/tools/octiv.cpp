// octiv: phantom synthesis, forward simulation, variational inversion,
// metrics and rendering for OCT parameter mapping.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
// One --seed reproduces a whole run bit-exactly; --threads never changes
// results, only wall time.

#include "octiv/octiv.hpp"

#include <CLI11.hpp>

#include <array>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonFlags {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  bool threads_given = false;
};

octiv::RunConfig make_run_config(const CommonFlags& flags) {
  octiv::RunConfig rc;
  if (!flags.config_path.empty()) {
    rc = octiv::load_run_config(flags.config_path);
  } else {
    rc.reseed(rc.seed);
  }
  if (flags.seed_given) rc.reseed(flags.seed);
  if (flags.threads_given) rc.threads = flags.threads;
  rc.propagate_threads();
  rc.validate();
  return rc;
}

void write_run_manifest(const std::string& path, const octiv::RunConfig& rc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << octiv::dump_run_config(rc);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());
}

int run_phantom(const std::string& scene_path, const std::string& out_dir,
                std::optional<uint64_t> photons, int count, const CommonFlags& flags) {
  octiv::RunConfig rc = make_run_config(flags);
  if (photons) rc.mc.photons = *photons;
  rc.validate();

  octiv::PhantomScene base = octiv::load_scene(scene_path);
  if (flags.seed_given) base.seed = octiv::derive_stream(rc.seed, 0x7363ULL);
  octiv::require(count >= 1, "phantom: --count must be >= 1");

  std::vector<octiv::PhantomScene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  if (count == 1) {
    scenes.push_back(base);
  } else {
    for (int i = 0; i < count; ++i)
      scenes.push_back(octiv::perturb_scene(base, static_cast<uint64_t>(i)));
  }

  ensure_dir(out_dir);
  const auto entries =
      octiv::generate_dataset(scenes, rc.mc, out_dir, octiv::resolve_threads(rc.threads));
  write_run_manifest(out_dir + "/run_config.txt", rc);
  std::cout << "wrote " << entries.size() << " pair(s) to " << out_dir << "\n";
  return 0;
}

int run_forward(const std::string& maps_path, const std::string& out_path,
                const CommonFlags& flags) {
  octiv::RunConfig rc = make_run_config(flags);
  octiv::require(rc.forward.gain_mode == octiv::GainMode::FixedUnit,
                 "forward: least_squares gain needs a measured B-scan; use forward.gain = unit");
  const octiv::ParameterMaps maps = octiv::read_octmap_maps(maps_path);
  const auto out =
      octiv::forward_bscan(maps, rc.forward, nullptr, octiv::resolve_threads(rc.threads));
  octiv::write_octmap(out_path, out.intensity);
  write_run_manifest(out_path + ".runcfg", rc);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

void write_inversion(const std::string& dir, const octiv::InversionResult& res,
                     const octiv::ParameterMaps* truth) {
  ensure_dir(dir);
  octiv::write_octmap(dir + "/maps.octmap", res.maps);
  octiv::write_octmap(dir + "/denoised.octmap", res.denoised_intensity);
  octiv::write_loss_csv(dir + "/loss.csv", res.loss_history);
  if (truth != nullptr)
    octiv::write_metrics_csv(dir + "/metrics.csv", octiv::evaluate_maps(res.maps, *truth));
}

int run_invert(const std::string& bscan_path, const std::string& out_dir,
               const std::string& truth_path, const std::string& init_path,
               const std::string& ablate_spec, const CommonFlags& flags) {
  octiv::RunConfig rc = make_run_config(flags);
  const octiv::ScalarField bscan = octiv::read_octmap_field(bscan_path);

  std::optional<octiv::ParameterMaps> truth;
  if (!truth_path.empty()) truth = octiv::read_octmap_maps(truth_path);
  std::optional<octiv::ParameterMaps> init;
  if (!init_path.empty()) {
    init = octiv::read_octmap_maps(init_path);
    rc.solver.init_mode = octiv::InitMode::FromMaps;
  }

  const octiv::GaussianScoreProvider standard_normal;
  const std::array<const octiv::ScoreProvider*, 3> providers{&standard_normal, &standard_normal,
                                                             &standard_normal};
  ensure_dir(out_dir);
  write_run_manifest(out_dir + "/run_config.txt", rc);

  if (ablate_spec.empty()) {
    const auto res =
        octiv::invert(bscan, rc.solver, rc.forward, rc.weights, truth ? &*truth : nullptr,
                      providers, nullptr, init ? &*init : nullptr);
    write_inversion(out_dir, res, truth ? &*truth : nullptr);
    std::cout << "iterations: " << res.iterations_run
              << (res.converged ? " (converged)" : " (max iters)")
              << ", final total loss: " << res.loss_history.back().total << "\n";
    return 0;
  }

  std::vector<octiv::AblationVariant> variants;
  std::string spec = ablate_spec;
  while (!spec.empty()) {
    const auto comma = spec.find(',');
    const std::string name = spec.substr(0, comma);
    spec = comma == std::string::npos ? "" : spec.substr(comma + 1);
    if (name.empty()) continue;
    variants.push_back({name, octiv::ablation_weights(name, rc.weights)});
  }
  octiv::AblationInputs in;
  in.measured = bscan;
  in.solver = rc.solver;
  in.forward = rc.forward;
  in.truth = truth ? &*truth : nullptr;
  in.providers = providers;
  const auto rows = octiv::ablate(variants, in);
  for (const auto& row : rows)
    write_inversion(out_dir + "/" + row.name, row.result, truth ? &*truth : nullptr);
  const std::string table = octiv::format_ablation_table(rows);
  std::ofstream tbl(out_dir + "/ablation.txt", std::ios::trunc);
  if (!tbl.good()) throw std::runtime_error("cannot write " + out_dir + "/ablation.txt");
  tbl << table;
  std::cout << table;
  return 0;
}

int run_eval(const std::string& a_path, const std::string& b_path, double range) {
  const int ch = octiv::octmap_channels(a_path);
  std::vector<octiv::MetricReport> reports;
  if (ch == 1) {
    reports.push_back(octiv::evaluate_channel(octiv::Channel::Intensity,
                                              octiv::read_octmap_field(a_path),
                                              octiv::read_octmap_field(b_path), range));
  } else {
    reports = octiv::evaluate_maps(octiv::read_octmap_maps(a_path),
                                   octiv::read_octmap_maps(b_path));
  }
  for (const auto& r : reports) {
    std::cout << "channel=" << octiv::channel_name(r.channel);
    if (std::isinf(r.psnr))
      std::cout << " psnr=inf";
    else
      std::cout << " psnr=" << r.psnr;
    std::cout << " ssim=" << r.ssim << " mse=" << r.mse << "\n";
  }
  return 0;
}

int run_render(const std::string& in_path, const std::string& out_path, bool log,
               double floor_db) {
  const octiv::ScalarField field = octiv::read_octmap_field(in_path);
  octiv::render_pgm(field, out_path,
                    log ? octiv::RenderScale::LogDb : octiv::RenderScale::Linear, floor_db);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"OCT parameter mapping: phantom synthesis, EHF forward model, "
               "regularized inversion, metrics, rendering"};
  app.require_subcommand(1);
  std::cout.precision(10);

  CommonFlags flags;
  auto add_common = [&](CLI::App* cmd, bool with_config = true) {
    if (with_config)
      cmd->add_option("--config", flags.config_path, "run configuration file");
    cmd->add_option("--seed", flags.seed, "master seed (reseeds every subsystem)")
        ->each([&](const std::string&) { flags.seed_given = true; });
    cmd->add_option("--threads", flags.threads, "worker threads (0 = all cores)")
        ->each([&](const std::string&) { flags.threads_given = true; });
  };

  auto* ph = app.add_subcommand("phantom", "synthesize phantom dataset(s) via photon transport");
  std::string scene_path, out_dir;
  std::optional<uint64_t> photons;
  int count = 1;
  ph->add_option("--scene", scene_path, "scene description file")->required();
  ph->add_option("--out", out_dir, "output directory")->required();
  ph->add_option("--photons", photons, "photons per B-scan");
  ph->add_option("--count", count, "number of randomized scene variants");
  add_common(ph);

  auto* fw = app.add_subcommand("forward", "evaluate the forward model on parameter maps");
  std::string maps_path, fw_out;
  fw->add_option("--maps", maps_path, "3-channel octmap of (n, mu_s, g)")->required();
  fw->add_option("--out", fw_out, "output intensity octmap")->required();
  add_common(fw);

  auto* iv = app.add_subcommand("invert", "recover parameter maps from a measured B-scan");
  std::string bscan_path, iv_out, truth_path, init_path, ablate_spec;
  iv->add_option("--bscan", bscan_path, "measured B-scan octmap")->required();
  iv->add_option("--out", iv_out, "output directory")->required();
  iv->add_option("--truth", truth_path, "ground-truth maps (enables metrics / supervised loss)");
  iv->add_option("--init", init_path, "initial maps octmap");
  iv->add_option("--ablate", ablate_spec,
                 "comma list of variants: full,no_tv,no_physics,no_diff,baseline");
  add_common(iv);

  auto* ev = app.add_subcommand("eval", "metrics between two octmap files");
  std::string a_path, b_path;
  double range = 1.0;
  ev->add_option("--a", a_path, "first octmap")->required();
  ev->add_option("--b", b_path, "second octmap")->required();
  ev->add_option("--range", range, "data range for 1-channel comparisons");

  auto* rd = app.add_subcommand("render", "export an octmap field as 8-bit PGM");
  std::string rd_in, rd_out;
  bool rd_log = false;
  double floor_db = -60.0;
  rd->add_option("--in", rd_in, "input 1-channel octmap")->required();
  rd->add_option("--out", rd_out, "output PGM path")->required();
  rd->add_flag("--log", rd_log, "dB scale instead of linear");
  rd->add_option("--floor-db", floor_db, "dB floor for --log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (ph->parsed()) return run_phantom(scene_path, out_dir, photons, count, flags);
    if (fw->parsed()) return run_forward(maps_path, fw_out, flags);
    if (iv->parsed())
      return run_invert(bscan_path, iv_out, truth_path, init_path, ablate_spec, flags);
    if (ev->parsed()) return run_eval(a_path, b_path, range);
    if (rd->parsed()) return run_render(rd_in, rd_out, rd_log, floor_db);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
