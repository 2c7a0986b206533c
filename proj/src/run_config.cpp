#include "red/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace red {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw UsageError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw UsageError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw UsageError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string precision_name(Precision p) { return p == Precision::kSingle ? "single" : "double"; }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "T",        "patch",       "batch",    "lr",       "steps",    "seed",      "precision",
      "reverse1", "reverse2",    "ddim",     "data_root", "output_root", "channels", "blocks",
      "synth",    "synth_count", "synth_size", "bench_steps"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "T") T = parse_u64(key, v);
  else if (key == "patch") patch = parse_u64(key, v);
  else if (key == "batch") batch = parse_u64(key, v);
  else if (key == "lr") lr = parse_real(key, v);
  else if (key == "steps") steps = parse_u64(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "precision") {
    if (v == "single" || v == "float" || v == "f32") precision = Precision::kSingle;
    else if (v == "double" || v == "f64") precision = Precision::kDouble;
    else throw UsageError("config: precision must be 'single' or 'double', got '" + v + "'");
  }
  else if (key == "reverse1") reverse1 = parse_bool(key, v);
  else if (key == "reverse2") reverse2 = parse_bool(key, v);
  else if (key == "ddim") ddim = parse_bool(key, v);
  else if (key == "data_root") data_root = v;
  else if (key == "output_root") output_root = v;
  else if (key == "channels") channels = parse_u64(key, v);
  else if (key == "blocks") blocks = parse_u64(key, v);
  else if (key == "synth") synth = v;
  else if (key == "synth_count") synth_count = parse_u64(key, v);
  else if (key == "synth_size") synth_size = parse_u64(key, v);
  else if (key == "bench_steps") bench_steps = parse_u64(key, v);
  else throw UsageError("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  if (key == "T") return std::to_string(T);
  if (key == "patch") return std::to_string(patch);
  if (key == "batch") return std::to_string(batch);
  if (key == "lr") return fmt_real(lr);
  if (key == "steps") return std::to_string(steps);
  if (key == "seed") return std::to_string(seed);
  if (key == "precision") return precision_name(precision);
  if (key == "reverse1") return reverse1 ? "true" : "false";
  if (key == "reverse2") return reverse2 ? "true" : "false";
  if (key == "ddim") return ddim ? "true" : "false";
  if (key == "data_root") return data_root;
  if (key == "output_root") return output_root;
  if (key == "channels") return std::to_string(channels);
  if (key == "blocks") return std::to_string(blocks);
  if (key == "synth") return synth;
  if (key == "synth_count") return std::to_string(synth_count);
  if (key == "synth_size") return std::to_string(synth_size);
  if (key == "bench_steps") return std::to_string(bench_steps);
  throw UsageError("config: unknown key '" + key + "'");
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + "=" + get(k) + "\n";
  return out;
}

void RunConfig::validate() const {
  if (T < 1) throw UsageError("config: T must be at least 1");
  if (patch == 0 || patch % 4 != 0) {
    throw UsageError("config: patch must be a positive multiple of 4 (two 2x unshuffle levels), got " +
                     std::to_string(patch));
  }
  if (batch == 0) throw UsageError("config: batch must be positive");
  if (!(lr >= 0.0)) throw UsageError("config: lr must be non-negative");
  if (synth_count == 0) throw UsageError("config: synth_count must be positive");
  if (synth_size != 0 && (synth_size % 2 != 0 || synth_size < patch)) {
    throw UsageError("config: synth_size must be even and at least the patch size");
  }
  if (bench_steps == 0) throw UsageError("config: bench_steps must be positive");
  red::validate(model_config());
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.T = T;
  m.channels = channels;
  m.blocks = blocks;
  m.modes = modes();
  return m;
}

}  // namespace red
