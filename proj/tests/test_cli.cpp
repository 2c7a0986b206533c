// Runs the command-line tool as a subprocess.

#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("red_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run(const std::string& args) {
  const auto err = fs::temp_directory_path() / "red_cli_stderr.txt";
  const std::string cmd = std::string("'") + RED_CLI_PATH + "' " + args + " 2>'" + err.string() + "'";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

const std::string kTiny = "--synth complementary-halves --set synth_count=4 --patch 16 --batch 2 --set channels=8 ";

void write_pgm(const fs::path& p, std::size_t w, std::size_t h, unsigned seed) {
  std::ofstream out(p, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t k = 0; k < w * h; ++k) out.put(static_cast<char>((k * 31 + seed * 17) % 251));
}

// Two square pairs under <root>/{vis,ir}.
void write_dataset(const fs::path& root, std::size_t side) {
  fs::create_directories(root / "vis");
  fs::create_directories(root / "ir");
  for (unsigned k = 0; k < 2; ++k) {
    write_pgm(root / "vis" / ("p" + std::to_string(k) + ".pgm"), side, side, k);
    write_pgm(root / "ir" / ("p" + std::to_string(k) + ".pgm"), side, side, k + 7);
  }
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 1") {
    CHECK(run("").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("train --patch 30 --steps 0 --synth step-edges --out " + scratch("u1").string()).code == 1);
    const auto r = run("train --synth noise --steps 0 --out " + scratch("u2").string());
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error:usage:", 0) == 0);
    CHECK(run("train --set nokey --out " + scratch("u3").string()).code == 1);
    CHECK(run("train --precision half").code == 1);
    CHECK(run("--help").code == 0);
  }

  TEST_CASE("train, fuse, eval end to end") {
    const auto root = scratch("e2e");
    const auto out = root / "run";
    const auto t1 = run("train " + kTiny + "--steps 2 --quiet --out " + out.string());
    REQUIRE(t1.code == 0);
    CHECK(t1.out.empty());
    const auto ckpt = slurp(out / "checkpoint.redc");
    const auto t2 = run("train " + kTiny + "--steps 2 --out " + out.string());
    REQUIRE(t2.code == 0);
    CHECK(slurp(out / "checkpoint.redc") == ckpt);
    CHECK(std::count(t2.out.begin(), t2.out.end(), '\n') == 2);

    write_dataset(root / "data", 16);
    const std::string fuse = "fuse --checkpoint " + (out / "checkpoint.redc").string() + " --data " + (root / "data").string();
    REQUIRE(run(fuse + " --out " + (root / "f1").string()).code == 0);
    REQUIRE(run(fuse + " --out " + (root / "f2").string()).code == 0);
    CHECK(slurp(root / "f1" / "fused" / "p0.pgm") == slurp(root / "f2" / "fused" / "p0.pgm"));
    CHECK(slurp(root / "f1" / "fused" / "p1.pgm").rfind("P5\n16 16\n255\n", 0) == 0);

    const auto report = root / "report.json";
    const auto ev = run("eval --data " + (root / "data").string() + " --fused " + (root / "f1" / "fused").string() +
                        " --format both --report " + report.string());
    REQUIRE(ev.code == 0);
    const auto j = nlohmann::json::parse(slurp(report));
    CHECK(j["images"].size() == 2);
    CHECK(ev.out.find("mean") != std::string::npos);
    CHECK(ev.out.find("\"psnr_reference\"") != std::string::npos);

    const auto wide = run("eval --range255 --format json --data " + (root / "data").string() + " --fused " +
                          (root / "f1" / "fused").string());
    REQUIRE(wide.code == 0);
    const auto jw = nlohmann::json::parse(wide.out);
    CHECK(jw["range"] == "0-255");
    CHECK(jw["mean"]["SF"].get<double>() == doctest::Approx(255.0 * j["mean"]["SF"].get<double>()).epsilon(1e-12));
  }

  TEST_CASE("data errors exit 2") {
    const auto root = scratch("data_err");
    const auto out = root / "run";
    REQUIRE(run("train " + kTiny + "--steps 0 --out " + out.string()).code == 0);
    write_dataset(root / "odd", 13);
    const std::string ck = " --checkpoint " + (out / "checkpoint.redc").string();
    const auto odd = run("fuse" + ck + " --data " + (root / "odd").string() + " --out " + (root / "f").string());
    CHECK(odd.code == 2);
    CHECK(odd.err.find("--pad-to-even") != std::string::npos);
    CHECK(run("fuse --pad-to-even" + ck + " --data " + (root / "odd").string() + " --out " + (root / "f").string()).code ==
          0);
    CHECK(slurp(root / "f" / "fused" / "p0.pgm").rfind("P5\n13 13\n255\n", 0) == 0);

    auto bytes = slurp(out / "checkpoint.redc");
    bytes[bytes.size() / 2] ^= 0x10;
    std::ofstream(root / "bad.redc", std::ios::binary) << bytes;
    const auto bad = run("fuse --checkpoint " + (root / "bad.redc").string() + " --data " + (root / "odd").string() +
                         " --out " + (root / "g").string());
    CHECK(bad.code == 2);
    CHECK(bad.err.find("checksum") != std::string::npos);

    CHECK(run("eval --data " + (root / "nowhere").string() + " --fused " + (root / "f" / "fused").string()).code == 2);
  }
}
