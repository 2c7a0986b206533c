#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "red/rng.hpp"
#include "red/tensor.hpp"

namespace red {

struct ImagePair {
  std::string name;
  Tensor<double> vis;  // (1,1,H,W) in [0,1]
  Tensor<double> ir;
};

// Binary PGM ("P5"), 8- or 16-bit (big-endian). Values divided by maxval.
Tensor<double> read_pgm(const std::filesystem::path& path);

// Rounds half away from zero onto the maxval grid. Out-of-range values are
// clamped; the number clamped is returned.
std::size_t write_pgm(const Tensor<double>& img, const std::filesystem::path& path, unsigned maxval = 255);

struct PairScan {
  std::vector<ImagePair> pairs;  // sorted by name
  std::vector<std::string> warnings;
};

// Pairs <vis_dir>/*.pgm with <ir_dir>/*.pgm by filename stem.
PairScan pair_dataset(const std::filesystem::path& vis_dir, const std::filesystem::path& ir_dir);

struct PatchBatch {
  Tensor<double> vis;  // (N,1,P,P)
  Tensor<double> ir;
  std::vector<std::size_t> sources;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;  // (row, col)
};

// Draws, per item, a source index then a row and column offset from `rng`.
PatchBatch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t count, Rng& rng);
PatchBatch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t count,
                          std::uint64_t seed);

enum class SynthKind { kComplementaryHalves, kGradientVsTexture, kStepEdges };

SynthKind parse_synth_kind(const std::string& s);
std::string synth_kind_name(SynthKind kind);

// Square synthetic pairs of side `size` (even). complementary-halves: blobs on
// a zero background, visible in the left half only, infrared in the right.
std::vector<ImagePair> synth_pairs(SynthKind kind, std::size_t size, std::size_t count, std::uint64_t seed);

}  // namespace red
