#pragma once

// Paired (measured B-scan, ground-truth maps) dataset synthesis: one photon
// transport run per scene plus the rasterized truth, written in the octmap
// format with a JSON-lines manifest.
//
// Each entry's transport seed is derived from (mc.seed, scene.seed), not the
// entry index, so identical scenes produce byte-identical B-scans wherever
// they appear in the list.

#include "octiv/config.hpp"
#include "octiv/io.hpp"
#include "octiv/mc.hpp"
#include "octiv/phantom.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

namespace octiv {

inline std::vector<ManifestEntry> generate_dataset(const std::vector<PhantomScene>& scenes,
                                                   const McConfig& mc, const std::string& out_dir,
                                                   int threads = 1) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir + ": " + ec.message());

  std::vector<ManifestEntry> entries;
  entries.reserve(scenes.size());
  for (size_t i = 0; i < scenes.size(); ++i) {
    const PhantomScene& scene = scenes[i];
    McConfig entry_mc = mc;
    entry_mc.seed = derive_stream(mc.seed, 0x64736574ULL, scene.seed);

    char stem[32];
    std::snprintf(stem, sizeof(stem), "entry_%04zu", i);
    ManifestEntry e;
    e.id = i;
    e.seed = entry_mc.seed;
    e.scene_file = std::string(stem) + ".scene";
    e.bscan_file = std::string(stem) + "_bscan.octmap";
    e.maps_file = std::string(stem) + "_maps.octmap";

    save_scene(out_dir + "/" + e.scene_file, scene);
    write_octmap(out_dir + "/" + e.maps_file, scene_to_maps(scene));
    write_octmap(out_dir + "/" + e.bscan_file, mc_bscan(scene, entry_mc, threads).bscan);
    entries.push_back(std::move(e));
  }
  write_manifest(out_dir + "/manifest.jsonl", entries);
  return entries;
}

} // namespace octiv
