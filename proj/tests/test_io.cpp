#include <octiv/io.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace octiv;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const auto dir = fs::temp_directory_path() / "octiv_io_tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<uint8_t> slurp(const fs::path& p) { return detail::read_file_bytes(p.string()); }

void spit(const fs::path& p, const std::vector<uint8_t>& bytes) {
  detail::write_file_bytes(p.string(), bytes);
}

std::string slurp_text(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

} // namespace

TEST_CASE("one-pixel octmap matches the golden byte sequence") {
  const auto path = tmp_dir() / "golden.octmap";
  auto f = ScalarField::from_data(1, 1, 1e-6, 2e-6, {1.0});
  write_octmap(path.string(), f);

  const std::vector<uint8_t> want = {
      0x4F, 0x43, 0x54, 0x4D,                         // "OCTM"
      0x01, 0x00,                                     // version 1
      0x01, 0x00, 0x00, 0x00,                         // width 1
      0x01, 0x00, 0x00, 0x00,                         // height 1
      0x01,                                           // channels 1
      0x00,                                           // dtype float32
      0x00, 0x00,                                     // reserved
      0x8D, 0xED, 0xB5, 0xA0, 0xF7, 0xC6, 0xB0, 0x3E, // pitch_x 1e-6
      0x8D, 0xED, 0xB5, 0xA0, 0xF7, 0xC6, 0xC0, 0x3E, // pitch_z 2e-6
      0x00, 0x00, 0x80, 0x3F,                         // 1.0f
  };
  CHECK(slurp(path) == want);
}

TEST_CASE("scalar field round trip narrows to float32 and keeps pitches exact") {
  Rng rng(derive_stream(501));
  auto f = oracle::random_field(7, 5, rng, -3.0, 3.0, 1.25e-5, 3.5e-6);
  const auto path = tmp_dir() / "field.octmap";
  write_octmap(path.string(), f);
  const auto back = read_octmap_field(path.string());
  REQUIRE(back.width() == 7);
  REQUIRE(back.height() == 5);
  CHECK(back.pitch_x() == 1.25e-5);
  CHECK(back.pitch_z() == 3.5e-6);
  for (size_t i = 0; i < f.size(); ++i)
    REQUIRE(back[i] == static_cast<double>(static_cast<float>(f[i])));
}

TEST_CASE("parameter maps round trip through disk, including the g bound") {
  ScalarField n(3, 2, 1e-5, 2e-6, 1.38), mu(3, 2, 1e-5, 2e-6, 5e4), g(3, 2, 1e-5, 2e-6, 0.9);
  n(0, 0) = 2.0;
  n(1, 0) = 1.0;
  g(0, 0) = 0.999; // nearest float32 overshoots the bound; read must snap back
  g(1, 0) = 0.0;
  ParameterMaps maps(n, mu, g);
  const auto path = tmp_dir() / "maps.octmap";
  write_octmap(path.string(), maps);
  const auto back = read_octmap_maps(path.string());
  CHECK_NOTHROW(back.validate());
  CHECK(back.g(0, 0) == 0.999);
  CHECK(back.n(0, 0) == 2.0);
  CHECK(back.mu_s(1, 1) == static_cast<double>(static_cast<float>(5e4)));
  CHECK(octmap_channels(path.string()) == 3);
}

TEST_CASE("reader rejects malformed files with precise messages") {
  const auto dir = tmp_dir();
  auto f = ScalarField::from_data(1, 1, 1e-6, 2e-6, {1.0});
  const auto good_path = dir / "good.octmap";
  write_octmap(good_path.string(), f);
  const auto good = slurp(good_path);

  auto expect_throw = [&](const std::vector<uint8_t>& bytes, const std::string& needle) {
    const auto p = dir / "bad.octmap";
    spit(p, bytes);
    try {
      read_octmap_field(p.string());
      FAIL("expected invalid_argument for " + needle);
    } catch (const std::invalid_argument& e) {
      const std::string what = e.what();
      INFO(what);
      CHECK(what.find(needle) != std::string::npos);
    }
  };

  auto corrupt = good;
  corrupt[0] = 'X';
  expect_throw(corrupt, "bad magic");

  corrupt = good;
  corrupt[4] = 2; // version 2
  expect_throw(corrupt, "unsupported version 2");

  corrupt = good;
  corrupt[15] = 1; // dtype 1
  expect_throw(corrupt, "unsupported dtype 1");

  corrupt = good;
  corrupt[14] = 2; // channels 2
  expect_throw(corrupt, "channels must be 1 or 3");

  std::vector<uint8_t> truncated(good.begin(), good.begin() + 20);
  expect_throw(truncated, "unexpected end of file at byte 20");

  // Payload shorter than width*height*channels.
  std::vector<uint8_t> short_payload(good.begin(), good.end() - 2);
  expect_throw(short_payload, "unexpected end of file");

  CHECK_THROWS_WITH(read_octmap_field((dir / "missing.octmap").string()),
                    Catch::Matchers::ContainsSubstring("cannot open"));

  // Channel-count mismatches at the typed readers.
  auto maps = ParameterMaps::filled(2, 2, 1e-6, 1e-6, 1.4, 1e3, 0.9);
  const auto maps_path = dir / "maps3.octmap";
  write_octmap(maps_path.string(), maps);
  CHECK_THROWS_WITH(read_octmap_field(maps_path.string()),
                    Catch::Matchers::ContainsSubstring("expected 1 channel"));
  CHECK_THROWS_WITH(read_octmap_maps(good_path.string()),
                    Catch::Matchers::ContainsSubstring("expected 3 channels"));
}

TEST_CASE("out-of-bounds values beyond the snap tolerance fail validation") {
  // Hand-build a 3-channel 1x1 file, then overwrite n with 0.5.
  ScalarField fn(1, 1, 1e-6, 1e-6, 1.4), fmu(1, 1, 1e-6, 1e-6, 1e3), fg(1, 1, 1e-6, 1e-6, 0.9);
  std::vector<uint8_t> bytes = detail::encode_octmap(1, 1, 3, 1e-6, 1e-6, {&fn, &fmu, &fg});
  // n plane starts at byte 34; overwrite with 0.5f.
  const uint32_t half = std::bit_cast<uint32_t>(0.5f);
  for (int i = 0; i < 4; ++i) bytes[34 + i] = static_cast<uint8_t>((half >> (8 * i)) & 0xFF);
  const auto p = tmp_dir() / "oob.octmap";
  spit(p, bytes);
  CHECK_THROWS_AS(read_octmap_maps(p.string()), std::invalid_argument);
}

TEST_CASE("pgm rendering covers linear, constant and log cases") {
  const auto dir = tmp_dir();

  auto ramp = ScalarField::from_data(2, 1, 1e-6, 1e-6, {0.0, 1.0});
  render_pgm(ramp, (dir / "ramp.pgm").string());
  auto bytes = slurp(dir / "ramp.pgm");
  const std::string header = "P5\n2 1\n255\n";
  REQUIRE(bytes.size() == header.size() + 2);
  CHECK(std::string(bytes.begin(), bytes.begin() + header.size()) == header);
  CHECK(bytes[header.size()] == 0);
  CHECK(bytes[header.size() + 1] == 255);

  ScalarField flat(3, 2, 1e-6, 1e-6, 0.7);
  render_pgm(flat, (dir / "flat.pgm").string());
  bytes = slurp(dir / "flat.pgm");
  const std::string h2 = "P5\n3 2\n255\n";
  for (size_t i = h2.size(); i < bytes.size(); ++i) REQUIRE(bytes[i] == 128);

  // Log mode: zero pixels sit on the dB floor, the max maps to white.
  auto spiky = ScalarField::from_data(3, 1, 1e-6, 1e-6, {0.0, 1e-3, 1.0});
  render_pgm(spiky, (dir / "log.pgm").string(), RenderScale::LogDb, -60.0);
  bytes = slurp(dir / "log.pgm");
  const std::string h3 = "P5\n3 1\n255\n";
  CHECK(bytes[h3.size()] == 0);        // 0 -> floor
  CHECK(bytes[h3.size() + 1] == 128);  // -30 dB of 60 dB span
  CHECK(bytes[h3.size() + 2] == 255);  // 0 dB

  CHECK_THROWS_AS(render_pgm(flat, (dir / "x.pgm").string(), RenderScale::LogDb, 0.0),
                  std::invalid_argument);
}

TEST_CASE("manifest round trips and keeps a stable key order") {
  const auto path = tmp_dir() / "manifest.jsonl";
  std::vector<ManifestEntry> entries;
  entries.push_back({3, 12, "a.scene", "b.octmap", "m.octmap"});
  entries.push_back({4, 99, "c.scene", "d.octmap", "e.octmap"});
  write_manifest(path.string(), entries);

  const auto text = slurp_text(path);
  CHECK(text ==
        "{\"id\":3,\"seed\":12,\"scene_file\":\"a.scene\",\"bscan_file\":\"b.octmap\","
        "\"maps_file\":\"m.octmap\"}\n"
        "{\"id\":4,\"seed\":99,\"scene_file\":\"c.scene\",\"bscan_file\":\"d.octmap\","
        "\"maps_file\":\"e.octmap\"}\n");

  const auto back = read_manifest(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].id == 3);
  CHECK(back[0].seed == 12);
  CHECK(back[1].scene_file == "c.scene");
  CHECK(back[1].maps_file == "e.octmap");
}

TEST_CASE("loss csv prints one row per iteration") {
  const auto path = tmp_dir() / "loss.csv";
  std::vector<LossBreakdown> history(2);
  history[0] = {0.5, 0.25, 0.0, 0.0, 0.75};
  history[1] = {0.25, 0.125, 0.0, 0.0, 0.375};
  write_loss_csv(path.string(), history);
  CHECK(slurp_text(path) ==
        "iter,mse,fwd,tv,diff,total\n"
        "0,0.5,0.25,0,0,0.75\n"
        "1,0.25,0.125,0,0,0.375\n");
}

TEST_CASE("metrics csv spells infinity as inf") {
  const auto path = tmp_dir() / "metrics.csv";
  MetricReport r;
  r.channel = Channel::Intensity;
  r.psnr = std::numeric_limits<double>::infinity();
  r.ssim = 1.0;
  r.mse = 0.0;
  write_metrics_csv(path.string(), {r});
  CHECK(slurp_text(path) ==
        "channel,psnr,ssim,mse\n"
        "intensity,inf,1,0\n");
}

TEST_CASE("ablation table lists variants with per-channel metric groups") {
  AblationRow a;
  a.name = "full";
  a.maps_tv = 12.5;
  MetricReport m;
  m.channel = Channel::N;
  m.psnr = 32.1234;
  m.ssim = 0.98764;
  m.mse = 1e-3;
  a.metrics = {m};
  AblationRow b = a;
  b.name = "no_tv";
  b.maps_tv = 20.0;
  b.metrics[0].psnr = std::numeric_limits<double>::infinity();

  const auto table = format_ablation_table({a, b});
  CHECK(table.find("variant") != std::string::npos);
  CHECK(table.find("n PSNR / SSIM / MSE") != std::string::npos);
  CHECK(table.find("maps TV") != std::string::npos);
  CHECK(table.find("full | 32.12 / 0.9876 / 0.001 | 12.5") != std::string::npos);
  CHECK(table.find("no_tv | inf / 0.9876 / 0.001 | 20") != std::string::npos);
}
