#include "red/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>

namespace red {

namespace fs = std::filesystem;

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::string& path) : b_(bytes), path_(path) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space_and_comments();
    unsigned long v = 0;
    std::size_t digits = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000'000UL) throw DataError(path_ + ": " + what + " too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw DataError(path_ + ": malformed PGM header (expected " + what + ")");
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  bool at_space() const { return pos_ < b_.size() && std::isspace(b_[pos_]); }

 private:
  const std::vector<unsigned char>& b_;
  std::string path_;
  std::size_t pos_ = 2;
};

double blob(double y, double x, double cy, double cx, double sigma) {
  const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

ImagePair complementary_halves(std::size_t size, Rng& rng) {
  ImagePair p;
  p.vis = Tensor<double>(Shape{1, 1, size, size});
  p.ir = Tensor<double>(Shape{1, 1, size, size});
  const double half = static_cast<double>(size) / 2.0;
  for (int side = 0; side < 2; ++side) {
    auto& img = side == 0 ? p.vis : p.ir;
    const double x0 = side == 0 ? 0.0 : half;
    const std::size_t n_blobs = 1 + rng.below(2);
    for (std::size_t k = 0; k < n_blobs; ++k) {
      const double sigma = rng.uniform(1.0, 2.5);
      const double cy = rng.uniform(0.0, static_cast<double>(size));
      const double cx = x0 + rng.uniform(0.0, half);
      const double amp = rng.uniform(0.5, 1.0);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const bool inside = side == 0 ? (static_cast<double>(x) < half) : (static_cast<double>(x) >= half);
          if (!inside) continue;
          double& v = img.at(0, 0, y, x);
          v = std::max(v, amp * blob(static_cast<double>(y), static_cast<double>(x), cy, cx, sigma));
        }
      }
    }
  }
  return p;
}

ImagePair gradient_vs_texture(std::size_t size, Rng& rng) {
  ImagePair p;
  p.vis = Tensor<double>(Shape{1, 1, size, size});
  p.ir = Tensor<double>(Shape{1, 1, size, size});
  const double lo = rng.uniform(0.1, 0.3);
  const double hi = rng.uniform(0.7, 0.9);
  const double freq = rng.uniform(0.5, 1.2);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double n = static_cast<double>(size - 1);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      p.vis.at(0, 0, y, x) = lo + (hi - lo) * static_cast<double>(x) / n;
      p.ir.at(0, 0, y, x) = 0.5 + 0.35 * std::sin(freq * static_cast<double>(x) + phase) *
                                      std::cos(freq * static_cast<double>(y) - phase);
    }
  }
  return p;
}

ImagePair step_edges(std::size_t size, Rng& rng) {
  ImagePair p;
  p.vis = Tensor<double>(Shape{1, 1, size, size});
  p.ir = Tensor<double>(Shape{1, 1, size, size});
  const std::size_t col = 1 + rng.below(size - 1);
  const std::size_t row = 1 + rng.below(size - 1);
  const double a = rng.uniform(0.0, 0.4);
  const double b = rng.uniform(0.6, 1.0);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      p.vis.at(0, 0, y, x) = x < col ? a : b;
      p.ir.at(0, 0, y, x) = y < row ? b : a;
    }
  }
  return p;
}

std::map<std::string, fs::path> list_pgm(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

}  // namespace

Tensor<double> read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P') throw DataError(name + ": not a PGM file (bad magic)");
  if (bytes[1] != '5') {
    throw DataError(name + ": unsupported PGM format 'P" + std::string(1, static_cast<char>(bytes[1])) +
                    "' (only binary P5 is supported)");
  }
  HeaderReader hr(bytes, name);
  const auto w = hr.number("width");
  const auto h = hr.number("height");
  const auto maxval = hr.number("maxval");
  if (w == 0 || h == 0) throw DataError(name + ": zero image dimension");
  if (maxval == 0) throw DataError(name + ": maxval is 0");
  if (maxval > 65535) throw DataError(name + ": maxval " + std::to_string(maxval) + " exceeds 65535");
  if (!hr.at_space()) throw DataError(name + ": malformed PGM header (missing separator before payload)");
  hr.advance();
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * bpp;
  if (bytes.size() - hr.pos() < need) {
    throw DataError(name + ": truncated payload (" + std::to_string(bytes.size() - hr.pos()) + " of " +
                    std::to_string(need) + " bytes)");
  }
  Tensor<double> out(Shape{1, 1, h, w});
  const unsigned char* p = bytes.data() + hr.pos();
  for (std::size_t k = 0; k < out.numel(); ++k) {
    const unsigned v = bpp == 1 ? p[k] : (static_cast<unsigned>(p[2 * k]) << 8) | p[2 * k + 1];
    out[k] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
  }
  return out;
}

std::size_t write_pgm(const Tensor<double>& img, const fs::path& path, unsigned maxval) {
  const auto& s = img.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1) throw ShapeError("write_pgm: expected (1,1,H,W), got " + shape_str(s));
  if (maxval == 0 || maxval > 65535) throw UsageError("write_pgm: maxval must be in [1, 65535]");
  std::string data = "P5\n" + std::to_string(s[3]) + " " + std::to_string(s[2]) + "\n" + std::to_string(maxval) + "\n";
  std::size_t clamped = 0;
  for (std::size_t k = 0; k < img.numel(); ++k) {
    double v = img[k];
    if (!(v >= 0.0 && v <= 1.0)) {
      ++clamped;
      v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    }
    const auto q = static_cast<unsigned>(std::round(v * maxval));
    if (maxval > 255) data.push_back(static_cast<char>(q >> 8));
    data.push_back(static_cast<char>(q & 0xFF));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
  return clamped;
}

PairScan pair_dataset(const fs::path& vis_dir, const fs::path& ir_dir) {
  const auto vis = list_pgm(vis_dir);
  const auto ir = list_pgm(ir_dir);
  PairScan scan;
  for (const auto& [stem, path] : vis) {
    if (!ir.count(stem)) scan.warnings.push_back("skipping '" + stem + "': no infrared counterpart");
  }
  for (const auto& [stem, path] : ir) {
    if (!vis.count(stem)) scan.warnings.push_back("skipping '" + stem + "': no visible counterpart");
  }
  for (const auto& [stem, vpath] : vis) {
    auto it = ir.find(stem);
    if (it == ir.end()) continue;
    ImagePair p{stem, read_pgm(vpath), read_pgm(it->second)};
    if (p.vis.shape() != p.ir.shape()) {
      throw DataError("shape mismatch for pair '" + stem + "': " + vpath.string() + " is " + shape_str(p.vis.shape()) +
                      ", " + it->second.string() + " is " + shape_str(p.ir.shape()));
    }
    scan.pairs.push_back(std::move(p));
  }
  if (scan.pairs.empty()) {
    throw DataError("no image pairs found under " + vis_dir.string() + " and " + ir_dir.string());
  }
  return scan;
}

PatchBatch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t count, Rng& rng) {
  if (pairs.empty()) throw DataError("sample_patches: no image pairs");
  if (patch == 0 || count == 0) throw UsageError("sample_patches: patch size and count must be positive");
  for (const auto& p : pairs) {
    if (patch > p.vis.dim(2) || patch > p.vis.dim(3)) {
      throw DataError("patch size " + std::to_string(patch) + " exceeds image '" + p.name + "' " +
                      shape_str(p.vis.shape()));
    }
  }
  PatchBatch b;
  b.vis = Tensor<double>(Shape{count, 1, patch, patch});
  b.ir = Tensor<double>(Shape{count, 1, patch, patch});
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t src = rng.below(pairs.size());
    const auto& p = pairs[src];
    const std::size_t oy = rng.below(p.vis.dim(2) - patch + 1);
    const std::size_t ox = rng.below(p.vis.dim(3) - patch + 1);
    for (std::size_t y = 0; y < patch; ++y) {
      for (std::size_t x = 0; x < patch; ++x) {
        b.vis.at(n, 0, y, x) = p.vis.at(0, 0, oy + y, ox + x);
        b.ir.at(n, 0, y, x) = p.ir.at(0, 0, oy + y, ox + x);
      }
    }
    b.sources.push_back(src);
    b.offsets.emplace_back(oy, ox);
  }
  return b;
}

PatchBatch sample_patches(const std::vector<ImagePair>& pairs, std::size_t patch, std::size_t count,
                          std::uint64_t seed) {
  Rng rng(seed);
  return sample_patches(pairs, patch, count, rng);
}

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "complementary-halves") return SynthKind::kComplementaryHalves;
  if (s == "gradient-vs-texture") return SynthKind::kGradientVsTexture;
  if (s == "step-edges") return SynthKind::kStepEdges;
  throw UsageError("unknown synthetic kind '" + s +
                   "' (expected complementary-halves, gradient-vs-texture or step-edges)");
}

std::string synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::kComplementaryHalves:
      return "complementary-halves";
    case SynthKind::kGradientVsTexture:
      return "gradient-vs-texture";
    case SynthKind::kStepEdges:
      return "step-edges";
  }
  return "?";
}

std::vector<ImagePair> synth_pairs(SynthKind kind, std::size_t size, std::size_t count, std::uint64_t seed) {
  if (size < 2 || size % 2 != 0) throw UsageError("synthetic image size must be even and at least 2");
  Rng rng(seed);
  std::vector<ImagePair> out;
  char name[32];
  for (std::size_t k = 0; k < count; ++k) {
    ImagePair p;
    switch (kind) {
      case SynthKind::kComplementaryHalves:
        p = complementary_halves(size, rng);
        break;
      case SynthKind::kGradientVsTexture:
        p = gradient_vs_texture(size, rng);
        break;
      case SynthKind::kStepEdges:
        p = step_edges(size, rng);
        break;
    }
    std::snprintf(name, sizeof name, "synth_%04zu", k);
    p.name = name;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace red
