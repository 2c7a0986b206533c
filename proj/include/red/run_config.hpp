#pragma once

// Flat key=value run configuration. Keys match the field names below; '#'
// starts a comment; blank lines are ignored.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "red/fusion_chain.hpp"

namespace red {

enum class Precision { kSingle, kDouble };

struct RunConfig {
  std::size_t T = 2;
  std::size_t patch = 32;
  std::size_t batch = 4;
  double lr = 1e-4;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  Precision precision = Precision::kSingle;
  bool reverse1 = true;
  bool reverse2 = true;
  bool ddim = true;
  std::string data_root;
  std::string output_root = "out";
  std::size_t channels = 16;
  std::size_t blocks = 2;
  std::string synth;             // synthetic kind; empty = read data_root
  std::size_t synth_count = 64;
  std::size_t synth_size = 0;    // 0 = same as patch
  std::size_t bench_steps = 3;   // timed steps per bench-mem cell

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "config");
  // One "key=value" line per key, in keys() order.
  std::string to_text() const;

  void validate() const;
  ModelConfig model_config() const;
  ModeFlags modes() const { return {reverse1, reverse2, ddim}; }
};

std::string precision_name(Precision p);

}  // namespace red
