#pragma once

// Command-level workflows shared by the C API and the tests: training runs,
// directory fusion, evaluation and the memory benchmark.

#include <filesystem>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "red/dataio.hpp"
#include "red/fusion_chain.hpp"
#include "red/metrics.hpp"
#include "red/run_config.hpp"

namespace red {

using LineSink = std::function<void(const std::string&)>;

// A model of either precision plus the configuration it was built from.
struct Model {
  RunConfig config;
  std::variant<FusionModel<float>, FusionModel<double>> impl;

  double w() const;
  std::vector<double> alpha_bars() const;
};

Model make_model(const RunConfig& cfg);
std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(const std::vector<std::uint8_t>& bytes);
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
bool same_parameters(const Model& a, const Model& b);  // bitwise

// Synthetic pairs when cfg.synth is set, otherwise <data_root>/{vis,ir}.
std::vector<ImagePair> training_pairs(const RunConfig& cfg, std::vector<std::string>* warnings);

struct TrainSummary {
  std::size_t steps = 0;
  LossBreakdown first, last;
  double w = 1.0;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
};

// Trains `model` for cfg.steps steps. Writes <output_root>/checkpoint.redc and
// <output_root>/train_log.jsonl (one JSON object per step, also sent to
// `on_line`). A non-finite loss or gradient saves the last good parameters and
// rethrows.
TrainSummary run_train(Model& model, const RunConfig& cfg, const LineSink& on_line, const LineSink& on_warning);

std::string step_log_line(std::size_t step, const StepReport& r, const std::vector<double>& alpha_bars);

struct FuseSummary {
  std::vector<std::filesystem::path> outputs;
  std::size_t clamped_pixels = 0;
};

// Fuses every pair under <data_root>/{vis,ir} at full resolution into
// <out_root>/fused/<name>.pgm.
FuseSummary run_fuse(const Model& model, const std::filesystem::path& data_root, const std::filesystem::path& out_root,
                     bool pad_to_even, const LineSink& on_warning);

// Fuses one image pair (1,1,H,W) at full resolution, optional reflective pad
// to a multiple of 4 then crop. Values are not clamped.
Tensor<double> fuse_image(const Model& model, const Tensor<double>& vis, const Tensor<double>& ir, bool pad_to_even,
                          const std::string& name = "image");

// Mirror padding (edge pixel not repeated) on the bottom and right.
Tensor<double> reflect_pad(const Tensor<double>& x, std::size_t pad_h, std::size_t pad_w);

// Scores every <fused_root>/*.pgm against its source pair.
MetricsReport run_eval(const std::filesystem::path& data_root, const std::filesystem::path& fused_root, bool range_255);

struct BenchCell {
  std::string label;
  std::size_t T = 2;
  ModeFlags modes;
  std::size_t peak_bytes = 0;
  std::size_t retained_node_count = 0;
  double seconds_per_step = 0;  // fastest of the timed steps
  double grad_residual = 0;  // relative L-inf vs store-all
};

struct BenchReport {
  std::vector<BenchCell> mode_table;
  std::vector<BenchCell> t_sweep;
  RunConfig config;

  std::string to_json() const;
  std::string to_table() const;
};

struct BenchOptions {
  std::vector<std::size_t> sweep = {2, 4, 6, 8};
  bool time_steps = true;
};

BenchReport run_bench(const RunConfig& cfg, const BenchOptions& opts = {}, const LineSink& progress = {});

// |a - b|_inf / |b|_inf over the concatenation of every parameter gradient
// (a missing entry counts as zero; 0 when both vanish).
template <Real T>
double relative_linf(const ad::GradientSet<T>& a, const ad::GradientSet<T>& b);

}  // namespace red
