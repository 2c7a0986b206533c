#include <doctest.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "oracles.hpp"
#include "red/dataio.hpp"
#include "red/metrics.hpp"

using namespace red;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pgm(std::size_t w, std::size_t h, const std::string& payload, const std::string& maxval = "255") {
  return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + maxval + "\n" + payload;
}

Tensor<double> flat(std::size_t h, std::size_t w, double v) { return Tensor<double>(Shape{1, 1, h, w}, v); }

}  // namespace

TEST_SUITE("dataio") {
  TEST_CASE("read_pgm: 8-bit example, comments, 16-bit") {
    const auto dir = testutil::scratch_dir("pgm_read");
    write_bytes(dir / "a.pgm", pgm(2, 2, std::string("\x00\x80\xff\x40", 4)));
    const auto t = read_pgm(dir / "a.pgm");
    REQUIRE(t.shape() == Shape{1, 1, 2, 2});
    CHECK(t.at(0, 0, 0, 0) == 0.0);
    CHECK(t.at(0, 0, 0, 1) == 128.0 / 255.0);
    CHECK(t.at(0, 0, 1, 0) == 1.0);
    CHECK(t.at(0, 0, 1, 1) == 64.0 / 255.0);

    write_bytes(dir / "c.pgm", "P5\n# made by hand\n2 1\n# depth\n255\n" + std::string("\x0a\x14", 2));
    const auto c = read_pgm(dir / "c.pgm");
    CHECK(c.at(0, 0, 0, 1) == 20.0 / 255.0);

    write_bytes(dir / "w.pgm", pgm(2, 1, std::string("\x01\x00\xff\xff", 4), "65535"));
    const auto w = read_pgm(dir / "w.pgm");
    CHECK(w.at(0, 0, 0, 0) == 256.0 / 65535.0);
    CHECK(w.at(0, 0, 0, 1) == 1.0);
  }

  TEST_CASE("read_pgm: malformed inputs") {
    const auto dir = testutil::scratch_dir("pgm_bad");
    write_bytes(dir / "ascii.pgm", "P2\n2 2\n255\n0 1 2 3\n");
    write_bytes(dir / "short.pgm", pgm(4, 4, std::string(10, '\x01')));
    write_bytes(dir / "zero.pgm", pgm(2, 2, std::string(4, '\x00'), "0"));
    write_bytes(dir / "magic.pgm", "GIF89a");
    CHECK_THROWS_AS(read_pgm(dir / "ascii.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "zero.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "magic.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), DataError);
    try {
      read_pgm(dir / "ascii.pgm");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("P2") != std::string::npos);
    }
  }

  TEST_CASE("write_pgm: header, rounding, clamping, roundtrip") {
    const auto dir = testutil::scratch_dir("pgm_write");
    CHECK(write_pgm(flat(3, 4, 0.0), dir / "z.pgm") == 0);
    CHECK(read_bytes(dir / "z.pgm") == "P5\n4 3\n255\n" + std::string(12, '\0'));

    write_pgm(flat(1, 1, 0.5), dir / "h.pgm");
    CHECK(static_cast<unsigned char>(read_bytes(dir / "h.pgm").back()) == 128);

    Tensor<double> out_of_range(Shape{1, 1, 1, 3}, std::vector<double>{-0.2, 0.3, 1.7});
    CHECK(write_pgm(out_of_range, dir / "o.pgm") == 2);
    const auto o = read_pgm(dir / "o.pgm");
    CHECK(o[0] == 0.0);
    CHECK(o[2] == 1.0);

    Tensor<double> grid(Shape{1, 1, 4, 5});
    for (std::size_t k = 0; k < grid.numel(); ++k) grid[k] = double((k * 37) % 256) / 255.0;
    write_pgm(grid, dir / "g.pgm");
    const auto first = read_bytes(dir / "g.pgm");
    write_pgm(read_pgm(dir / "g.pgm"), dir / "g2.pgm");
    CHECK(read_bytes(dir / "g2.pgm") == first);
    CHECK(read_pgm(dir / "g.pgm") == grid);

    write_pgm(grid, dir / "g16.pgm", 65535);
    CHECK(read_bytes(dir / "g16.pgm").substr(0, 13) == "P5\n5 4\n65535\n");
    CHECK(testutil::max_abs_diff(read_pgm(dir / "g16.pgm"), grid) < 1e-5);
  }

  TEST_CASE("pair_dataset: intersection, order, warnings, mismatch") {
    const auto root = testutil::scratch_dir("pairs");
    fs::create_directories(root / "vis");
    fs::create_directories(root / "ir");
    for (const char* n : {"b", "a"}) write_pgm(flat(4, 4, 0.2), root / "vis" / (std::string(n) + ".pgm"));
    for (const char* n : {"b", "c"}) write_pgm(flat(4, 4, 0.6), root / "ir" / (std::string(n) + ".pgm"));
    write_bytes(root / "vis" / "notes.txt", "ignored");
    const auto scan = pair_dataset(root / "vis", root / "ir");
    REQUIRE(scan.pairs.size() == 1);
    CHECK(scan.pairs[0].name == "b");
    CHECK(scan.warnings.size() == 2);

    write_pgm(flat(4, 4, 0.2), root / "vis" / "c.pgm");
    write_pgm(flat(4, 4, 0.6), root / "ir" / "a.pgm");
    const auto all = pair_dataset(root / "vis", root / "ir");
    REQUIRE(all.pairs.size() == 3);
    CHECK(all.pairs[0].name == "a");
    CHECK(all.pairs[2].name == "c");
    CHECK(all.warnings.empty());

    write_pgm(flat(4, 6, 0.6), root / "ir" / "b.pgm");
    try {
      pair_dataset(root / "vis", root / "ir");
      FAIL("expected a shape mismatch");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find((root / "vis" / "b.pgm").string()) != std::string::npos);
      CHECK(msg.find((root / "ir" / "b.pgm").string()) != std::string::npos);
    }

    const auto empty = testutil::scratch_dir("pairs_empty");
    fs::create_directories(empty / "vis");
    fs::create_directories(empty / "ir");
    CHECK_THROWS_AS(pair_dataset(empty / "vis", empty / "ir"), DataError);
    CHECK_THROWS_AS(pair_dataset(empty / "nope", empty / "ir"), DataError);
  }

  TEST_CASE("sample_patches: determinism, full-size crop, direct slicing") {
    const auto pairs = synth_pairs(SynthKind::kGradientVsTexture, 24, 3, 5);
    const auto a = sample_patches(pairs, 8, 6, 42);
    const auto b = sample_patches(pairs, 8, 6, 42);
    CHECK(a.vis == b.vis);
    CHECK(a.ir == b.ir);
    CHECK(a.offsets == b.offsets);
    CHECK(a.sources == b.sources);
    CHECK_FALSE(sample_patches(pairs, 8, 6, 43).offsets == a.offsets);

    for (std::size_t n = 0; n < 6; ++n) {
      const auto& src = pairs[a.sources[n]];
      const auto [oy, ox] = a.offsets[n];
      CHECK(oy + 8 <= 24);
      CHECK(ox + 8 <= 24);
      bool same = true;
      for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
          same = same && a.vis.at(n, 0, y, x) == src.vis.at(0, 0, oy + y, ox + x) &&
                 a.ir.at(n, 0, y, x) == src.ir.at(0, 0, oy + y, ox + x);
        }
      }
      CHECK(same);
    }

    const auto full = sample_patches(pairs, 24, 2, 1);
    for (const auto& off : full.offsets) CHECK(off == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK_THROWS_AS(sample_patches(pairs, 25, 1, 1), DataError);
  }

  TEST_CASE("synthetic pairs") {
    CHECK(parse_synth_kind("step-edges") == SynthKind::kStepEdges);
    CHECK(synth_kind_name(parse_synth_kind("complementary-halves")) == "complementary-halves");
    CHECK_THROWS_AS(parse_synth_kind("noise"), UsageError);
    CHECK_THROWS_AS(synth_pairs(SynthKind::kStepEdges, 15, 1, 0), UsageError);

    for (auto kind : {SynthKind::kComplementaryHalves, SynthKind::kGradientVsTexture, SynthKind::kStepEdges}) {
      const auto a = synth_pairs(kind, 32, 4, 9);
      const auto b = synth_pairs(kind, 32, 4, 9);
      REQUIRE(a.size() == 4);
      for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].vis == b[k].vis);
        CHECK(a[k].ir == b[k].ir);
        CHECK(a[k].vis.shape() == Shape{1, 1, 32, 32});
        bool in_range = true;
        for (std::size_t q = 0; q < a[k].vis.numel(); ++q) {
          in_range = in_range && a[k].vis[q] >= 0.0 && a[k].vis[q] <= 1.0 && a[k].ir[q] >= 0.0 && a[k].ir[q] <= 1.0;
        }
        CHECK(in_range);
      }
    }

    const auto halves = synth_pairs(SynthKind::kComplementaryHalves, 32, 8, 3);
    for (const auto& p : halves) {
      double overlap = 0, energy = 0;
      for (std::size_t q = 0; q < p.vis.numel(); ++q) {
        overlap += p.vis[q] * p.ir[q];
        energy += p.vis[q] * p.vis[q] + p.ir[q] * p.ir[q];
      }
      CHECK(overlap <= 1e-3 * energy);
      const auto best = ops::maximum(p.vis, p.ir);
      CHECK(metric_sf(best) > metric_sf(p.vis));
      CHECK(metric_sf(best) > metric_sf(p.ir));
    }
  }
}
