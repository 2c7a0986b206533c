#include "red/app.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "red/checkpoint.hpp"

namespace red {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- model ----------------------------------------------------------------

double Model::w() const {
  return std::visit([](const auto& m) { return m.w(); }, impl);
}

std::vector<double> Model::alpha_bars() const {
  return std::visit([](const auto& m) { return m.alpha_bars(); }, impl);
}

Model make_model(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.precision == Precision::kSingle) return Model{cfg, FusionModel<float>(cfg.model_config(), cfg.seed)};
  return Model{cfg, FusionModel<double>(cfg.model_config(), cfg.seed)};
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  const auto text = model.config.to_text();
  return std::visit([&](const auto& m) { return encode_checkpoint(text, m.params()); }, model.impl);
}

Model decode_model(const std::vector<std::uint8_t>& bytes) {
  auto data = decode_checkpoint(bytes);
  RunConfig cfg;
  try {
    cfg.load_text(data.config_text, "checkpoint config");
    cfg.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint carries an invalid config: ") + e.what());
  }
  if (std::holds_alternative<ParameterStore<float>>(data.params)) {
    if (cfg.precision != Precision::kSingle) throw DataError("checkpoint config says double but tensors are f32");
    return Model{cfg, FusionModel<float>(cfg.model_config(), std::get<ParameterStore<float>>(std::move(data.params)))};
  }
  if (cfg.precision != Precision::kDouble) throw DataError("checkpoint config says single but tensors are f64");
  return Model{cfg, FusionModel<double>(cfg.model_config(), std::get<ParameterStore<double>>(std::move(data.params)))};
}

void save_model(const Model& model, const fs::path& path) { write_file_bytes(path, encode_model(model)); }

Model load_model(const fs::path& path) {
  try {
    return decode_model(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

bool same_parameters(const Model& a, const Model& b) {
  if (a.impl.index() != b.impl.index()) return false;
  return std::visit(
      [&](const auto& ma) {
        using M = std::decay_t<decltype(ma)>;
        return ma.params() == std::get<M>(b.impl).params();
      },
      a.impl);
}

// ---- training ---------------------------------------------------------------

std::vector<ImagePair> training_pairs(const RunConfig& cfg, std::vector<std::string>* warnings) {
  if (!cfg.synth.empty()) {
    const std::size_t size = cfg.synth_size ? cfg.synth_size : cfg.patch;
    return synth_pairs(parse_synth_kind(cfg.synth), size, cfg.synth_count, cfg.seed + 1);
  }
  if (cfg.data_root.empty()) throw UsageError("no data: set data_root or choose a synthetic kind (--synth)");
  auto scan = pair_dataset(fs::path(cfg.data_root) / "vis", fs::path(cfg.data_root) / "ir");
  if (warnings) warnings->insert(warnings->end(), scan.warnings.begin(), scan.warnings.end());
  return std::move(scan.pairs);
}

std::string step_log_line(std::size_t step, const StepReport& r, const std::vector<double>& alpha_bars) {
  json j;
  j["step"] = step;
  j["loss"] = {{"ssim", r.loss.l_ssim}, {"l1", r.loss.l_1}, {"grad", r.loss.l_grad}, {"total", r.loss.total}};
  j["w"] = r.w;
  j["alpha_bar"] = alpha_bars;
  j["memory"] = {{"live_bytes", r.memory.live_bytes},
                 {"peak_bytes", r.memory.peak_bytes},
                 {"retained_node_count", r.memory.retained_node_count}};
  return j.dump();
}

namespace {

template <Real T>
TrainSummary train_impl(Model& holder, FusionModel<T>& model, const RunConfig& cfg, const LineSink& on_line,
                        const LineSink& on_warning) {
  std::vector<std::string> warnings;
  const auto pairs = training_pairs(cfg, &warnings);
  for (const auto& w : warnings) {
    if (on_warning) on_warning(w);
  }

  TrainSummary s;
  const fs::path out(cfg.output_root);
  fs::create_directories(out);
  s.checkpoint = out / "checkpoint.redc";
  s.log = out / "train_log.jsonl";
  std::ofstream log(s.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + s.log.string());

  Adam<T> opt(AdamConfig{cfg.lr});
  Rng sampler(cfg.seed + 2);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = sample_patches(pairs, cfg.patch, cfg.batch, sampler);
    const auto vis = convert<T>(batch.vis);
    const auto ir = convert<T>(batch.ir);
    StepReport r;
    try {
      r = train_step(model, opt, vis, ir);
    } catch (const NumericError& e) {
      // Parameters are untouched when the episode fails, so they are the last good state.
      save_model(holder, s.checkpoint);
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) + "; last good checkpoint saved to " +
                         s.checkpoint.string());
    }
    if (step == 0) s.first = r.loss;
    s.last = r.loss;
    const auto line = step_log_line(step, r, model.alpha_bars());
    log << line << '\n';
    if (on_line) on_line(line);
    s.steps = step + 1;
  }
  log.close();
  s.w = model.w();
  save_model(holder, s.checkpoint);
  return s;
}

}  // namespace

TrainSummary run_train(Model& model, const RunConfig& cfg, const LineSink& on_line, const LineSink& on_warning) {
  cfg.validate();
  return std::visit([&](auto& m) { return train_impl(model, m, cfg, on_line, on_warning); }, model.impl);
}

// ---- fusion -----------------------------------------------------------------

Tensor<double> reflect_pad(const Tensor<double>& x, std::size_t pad_h, std::size_t pad_w) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto mirror = [](std::size_t i, std::size_t len) {
    if (len == 1) return std::size_t{0};
    const std::size_t period = 2 * (len - 1);
    i %= period;
    return i < len ? i : period - i;
  };
  Tensor<double> out(Shape{n, c, h + pad_h, w + pad_w});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < c; ++b) {
      for (std::size_t y = 0; y < h + pad_h; ++y) {
        for (std::size_t q = 0; q < w + pad_w; ++q) out.at(a, b, y, q) = x.at(a, b, mirror(y, h), mirror(q, w));
      }
    }
  }
  return out;
}

Tensor<double> fuse_image(const Model& model, const Tensor<double>& vis, const Tensor<double>& ir, bool pad_to_even,
                          const std::string& name) {
  if (vis.shape() != ir.shape()) {
    throw DataError(name + ": shape mismatch " + shape_str(vis.shape()) + " vs " + shape_str(ir.shape()));
  }
  const std::size_t h = vis.dim(2);
  const std::size_t w = vis.dim(3);
  const std::size_t ph = (4 - h % 4) % 4;
  const std::size_t pw = (4 - w % 4) % 4;
  if ((ph || pw) && !pad_to_even) {
    throw DataError(name + ": size " + std::to_string(w) + "x" + std::to_string(h) +
                    " is not divisible by 4; rerun with --pad-to-even to pad reflectively and crop the result");
  }
  const auto v = (ph || pw) ? reflect_pad(vis, ph, pw) : vis;
  const auto i = (ph || pw) ? reflect_pad(ir, ph, pw) : ir;
  const auto fused = std::visit(
      [&](const auto& m) {
        using T = typename std::decay_t<decltype(m.params())>::value_type;
        return convert<double>(fuse(convert<T>(v), convert<T>(i), m));
      },
      model.impl);
  if (!ph && !pw) return fused;
  Tensor<double> out(Shape{1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out.at(0, 0, y, x) = fused.at(0, 0, y, x);
  }
  return out;
}

namespace {

// Runs body(k) for k in [0, n) on up to hardware_concurrency threads. The
// first exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        body(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

FuseSummary run_fuse(const Model& model, const fs::path& data_root, const fs::path& out_root, bool pad_to_even,
                     const LineSink& on_warning) {
  auto scan = pair_dataset(data_root / "vis", data_root / "ir");
  for (const auto& w : scan.warnings) {
    if (on_warning) on_warning(w);
  }
  const fs::path dir = out_root / "fused";
  fs::create_directories(dir);
  FuseSummary s;
  s.outputs.resize(scan.pairs.size());
  std::vector<std::size_t> clamped(scan.pairs.size(), 0);
  parallel_for(scan.pairs.size(), [&](std::size_t k) {
    const auto& p = scan.pairs[k];
    auto fused = fuse_image(model, p.vis, p.ir, pad_to_even, p.name);
    for (std::size_t q = 0; q < fused.numel(); ++q) {
      if (!std::isfinite(fused[q])) throw NumericError(p.name + ": fused image has a non-finite value");
      if (fused[q] < 0.0 || fused[q] > 1.0) ++clamped[k];
    }
    fused = ops::clamp(fused, 0.0, 1.0);
    s.outputs[k] = dir / (p.name + ".pgm");
    write_pgm(fused, s.outputs[k]);
  });
  for (std::size_t k = 0; k < clamped.size(); ++k) {
    s.clamped_pixels += clamped[k];
    if (clamped[k] && on_warning) {
      on_warning(scan.pairs[k].name + ": " + std::to_string(clamped[k]) + " pixels clamped into [0,1]");
    }
  }
  return s;
}

// ---- evaluation -------------------------------------------------------------

MetricsReport run_eval(const fs::path& data_root, const fs::path& fused_root, bool range_255) {
  if (!fs::is_directory(fused_root)) throw DataError("fused directory " + fused_root.string() + " does not exist");
  std::vector<fs::path> fused_files;
  for (const auto& e : fs::directory_iterator(fused_root)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") fused_files.push_back(e.path());
  }
  std::sort(fused_files.begin(), fused_files.end());
  if (fused_files.empty()) throw DataError("no fused .pgm files in " + fused_root.string());

  const fs::path vis_dir = data_root / "vis";
  const fs::path ir_dir = data_root / "ir";
  for (const auto& f : fused_files) {
    const auto stem = f.stem().string();
    if (!fs::exists(vis_dir / (stem + ".pgm")) || !fs::exists(ir_dir / (stem + ".pgm"))) {
      throw DataError("fused file " + f.string() + " has no source pair under " + data_root.string());
    }
  }

  MetricsReport report;
  report.range_255 = range_255;
  report.images.resize(fused_files.size());
  std::vector<std::vector<std::string>> warnings(fused_files.size());
  parallel_for(fused_files.size(), [&](std::size_t k) {
    const auto stem = fused_files[k].stem().string();
    const auto vis = read_pgm(vis_dir / (stem + ".pgm"));
    const auto ir = read_pgm(ir_dir / (stem + ".pgm"));
    const auto fused = read_pgm(fused_files[k]);
    if (vis.shape() != fused.shape() || ir.shape() != fused.shape()) {
      throw DataError(fused_files[k].string() + " is " + shape_str(fused.shape()) + " but its sources are " +
                      shape_str(vis.shape()) + " and " + shape_str(ir.shape()));
    }
    report.images[k] = evaluate_triple(stem, vis, ir, fused, range_255, &warnings[k]);
  });
  for (auto& w : warnings) report.warnings.insert(report.warnings.end(), w.begin(), w.end());
  report.finalize();
  return report;
}

// ---- memory benchmark ------------------------------------------------------

template <Real T>
double relative_linf(const ad::GradientSet<T>& a, const ad::GradientSet<T>& b) {
  double diff = 0;
  double scale = 0;
  auto visit = [&](const Tensor<T>* got, const Tensor<T>* ref) {
    const std::size_t n = ref ? ref->numel() : got->numel();
    if (got && ref && got->shape() != ref->shape()) diff = INFINITY;
    for (std::size_t k = 0; k < n && std::isfinite(diff); ++k) {
      const double g = got ? double((*got)[k]) : 0.0;
      const double r = ref ? double((*ref)[k]) : 0.0;
      diff = std::max(diff, std::abs(g - r));
      scale = std::max(scale, std::abs(r));
    }
  };
  for (const auto& [name, ref] : b) visit(a.contains(name) ? &a.at(name) : nullptr, &ref);
  for (const auto& [name, got] : a) {
    if (!b.contains(name)) visit(&got, nullptr);
  }
  if (diff == 0) return 0;
  return scale > 0 ? diff / scale : INFINITY;
}

namespace {

// One training step of a bench cell, ready to be timed.
using TimedStep = std::function<void()>;

template <Real T>
BenchCell bench_cell(const RunConfig& base, std::size_t steps_T, ModeFlags modes, std::string label,
                     const Tensor<double>& vis_d, const Tensor<double>& ir_d, TimedStep* step) {
  auto mc = base.model_config();
  mc.T = steps_T;
  mc.modes = modes;
  FusionModel<T> model(mc, base.seed);
  const auto vis = convert<T>(vis_d);
  const auto ir = convert<T>(ir_d);

  BenchCell cell;
  cell.label = std::move(label);
  cell.T = steps_T;
  cell.modes = modes;
  const auto g = compute_gradients(model, vis, ir, tape_mode_for(modes));
  cell.peak_bytes = g.memory.peak_bytes;
  cell.retained_node_count = g.memory.retained_node_count;
  const auto ref = compute_gradients(model, vis, ir, ad::TapeMode::kStoreAll);
  cell.grad_residual = relative_linf(g.grads, ref.grads);

  if (step) {
    struct State {
      FusionModel<T> model;
      Adam<T> opt;
      Tensor<T> vis, ir;
    };
    auto st = std::make_shared<State>(State{std::move(model), Adam<T>(AdamConfig{base.lr}), vis, ir});
    *step = [st] { train_step(st->model, st->opt, st->vis, st->ir); };
  }
  return cell;
}

json cell_json(const BenchCell& c) {
  return {{"label", c.label},
          {"T", c.T},
          {"reverse1", c.modes.reverse1},
          {"reverse2", c.modes.reverse2},
          {"ddim", c.modes.ddim},
          {"peak_bytes", c.peak_bytes},
          {"retained_node_count", c.retained_node_count},
          {"seconds_per_step", c.seconds_per_step},
          {"grad_residual", c.grad_residual}};
}

}  // namespace

BenchReport run_bench(const RunConfig& cfg, const BenchOptions& opts, const LineSink& progress) {
  cfg.validate();
  const std::size_t size = cfg.synth_size ? cfg.synth_size : cfg.patch;
  const auto kind = cfg.synth.empty() ? SynthKind::kComplementaryHalves : parse_synth_kind(cfg.synth);
  const auto pairs = synth_pairs(kind, size, std::max(cfg.batch, cfg.synth_count), cfg.seed + 1);
  const auto batch = sample_patches(pairs, cfg.patch, cfg.batch, cfg.seed + 2);

  BenchReport report;
  report.config = cfg;
  std::vector<std::pair<BenchCell*, TimedStep>> timed;
  auto cell = [&](std::size_t T, ModeFlags m, std::string label) {
    if (progress) progress("bench: " + label + " T=" + std::to_string(T));
    TimedStep step;
    TimedStep* want = opts.time_steps ? &step : nullptr;
    auto c = cfg.precision == Precision::kSingle
                 ? bench_cell<float>(cfg, T, m, std::move(label), batch.vis, batch.ir, want)
                 : bench_cell<double>(cfg, T, m, std::move(label), batch.vis, batch.ir, want);
    timed.emplace_back(nullptr, std::move(step));
    return c;
  };
  const bool ddim = cfg.ddim;
  report.mode_table.push_back(cell(cfg.T, {false, true, true}, "w/o reverse1"));
  report.mode_table.push_back(cell(cfg.T, {true, false, true}, "w/o reverse2"));
  report.mode_table.push_back(cell(cfg.T, {true, true, false}, "w/o ddim"));
  report.mode_table.push_back(cell(cfg.T, {true, true, true}, "full"));
  report.mode_table.push_back(cell(cfg.T, {false, false, true}, "store-all (reference)"));
  for (std::size_t T : opts.sweep) {
    report.t_sweep.push_back(cell(T, {true, true, ddim}, "reversible"));
    report.t_sweep.push_back(cell(T, {false, false, ddim}, "store-all"));
  }
  if (!opts.time_steps) return report;

  // Round-robin over cells, keeping each cell's fastest step, so a slow
  // stretch on a shared machine hits every cell instead of one.
  std::size_t k = 0;
  for (auto& c : report.mode_table) timed[k++].first = &c;
  for (auto& c : report.t_sweep) timed[k++].first = &c;
  for (auto& [c, step] : timed) c->seconds_per_step = cfg.bench_steps > 0 ? INFINITY : 0.0;
  for (std::size_t round = 0; round < cfg.bench_steps; ++round) {
    if (progress) progress("bench: timing round " + std::to_string(round + 1));
    for (auto& [c, step] : timed) {
      const auto t0 = std::chrono::steady_clock::now();
      step();
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      c->seconds_per_step = std::min(c->seconds_per_step, dt);
    }
  }
  return report;
}

std::string BenchReport::to_json() const {
  json j;
  j["precision"] = precision_name(config.precision);
  j["patch"] = config.patch;
  j["batch"] = config.batch;
  j["channels"] = config.channels;
  j["blocks"] = config.blocks;
  j["seed"] = config.seed;
  j["timed_steps_per_cell"] = config.bench_steps;
  j["mode_table"] = json::array();
  for (const auto& c : mode_table) j["mode_table"].push_back(cell_json(c));
  j["t_sweep"] = json::array();
  for (const auto& c : t_sweep) j["t_sweep"].push_back(cell_json(c));
  return j.dump(2);
}

std::string BenchReport::to_table() const {
  std::ostringstream os;
  char buf[256];
  auto section = [&](const char* title, const std::vector<BenchCell>& cells) {
    os << title << '\n';
    std::snprintf(buf, sizeof buf, "%-22s %3s %4s %4s %4s %12s %10s %12s\n", "row", "T", "rev1", "rev2", "ddim",
                  "peak_bytes", "s/step", "grad_resid");
    os << buf;
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof buf, "%-22s %3zu %4d %4d %4d %12zu %10.4f %12.3g\n", c.label.c_str(), c.T,
                    c.modes.reverse1, c.modes.reverse2, c.modes.ddim, c.peak_bytes, c.seconds_per_step,
                    c.grad_residual);
      os << buf;
    }
  };
  section("mode table", mode_table);
  os << '\n';
  section("step sweep", t_sweep);
  return os.str();
}

template double relative_linf(const ad::GradientSet<float>&, const ad::GradientSet<float>&);
template double relative_linf(const ad::GradientSet<double>&, const ad::GradientSet<double>&);

}  // namespace red
