// Command-line front end: train, fuse, eval, bench-mem. Talks to the library
// only through the C interface.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "red/red.h"

namespace {

int exit_code(red_status s) {
  switch (s) {
    case RED_OK:
      return 0;
    case RED_ERR_USAGE:
      return 1;
    case RED_ERR_NUMERIC:
      return 3;
    default:
      return 2;  // data, shape, io and anything unexpected
  }
}

int fail(red_status s) {
  std::string msg = red_last_error();
  for (auto& c : msg) {
    if (c == '\n') c = ' ';
  }
  std::fprintf(stderr, "error:%s: %s\n", red_status_name(s), msg.c_str());
  return exit_code(s);
}

struct ConfigFlags {
  std::string config_path;
  std::optional<unsigned long long> seed;
  std::optional<unsigned long long> T;
  std::optional<unsigned long long> steps;
  std::optional<unsigned long long> patch;
  std::optional<unsigned long long> batch;
  std::optional<std::string> lr;
  std::optional<std::string> precision;
  std::optional<std::string> synth;
  std::optional<std::string> data;
  std::optional<std::string> out;
  bool no_reverse1 = false;
  bool no_reverse2 = false;
  bool no_ddim = false;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd, bool with_paths) {
    cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--t", T, "number of chain steps T");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--patch", patch, "patch size (multiple of 4)");
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--precision", precision, "single or double")->check(CLI::IsMember({"single", "double"}));
    cmd->add_option("--synth", synth, "synthetic data kind (complementary-halves, gradient-vs-texture, step-edges)");
    if (with_paths) {
      cmd->add_option("--data", data, "data root holding vis/ and ir/");
      cmd->add_option("--out", out, "output root");
    }
    cmd->add_flag("--no-reverse1", no_reverse1, "store every chain state");
    cmd->add_flag("--no-reverse2", no_reverse2, "store every coupling activation");
    cmd->add_flag("--no-ddim", no_ddim, "use the raw estimator output as the step update");
    cmd->add_option("--set", sets, "extra key=value overrides");
  }

  red_status build(red_config* cfg) const {
    red_status s = RED_OK;
    auto set = [&](const char* k, const std::string& v) {
      if (s == RED_OK) s = red_config_set(cfg, k, v.c_str());
    };
    if (!config_path.empty()) s = red_config_load_file(cfg, config_path.c_str());
    if (seed) set("seed", std::to_string(*seed));
    if (T) set("T", std::to_string(*T));
    if (steps) set("steps", std::to_string(*steps));
    if (patch) set("patch", std::to_string(*patch));
    if (batch) set("batch", std::to_string(*batch));
    if (lr) set("lr", *lr);
    if (precision) set("precision", *precision);
    if (synth) set("synth", *synth);
    if (data) set("data_root", *data);
    if (out) set("output_root", *out);
    if (no_reverse1) set("reverse1", "false");
    if (no_reverse2) set("reverse2", "false");
    if (no_ddim) set("ddim", "false");
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        if (s == RED_OK) {
          // Route through the library so the message lands in red_last_error.
          s = red_config_set(cfg, ("--set '" + kv + "' (expected key=value)").c_str(), "");
        }
        continue;
      }
      set(kv.substr(0, eq).c_str(), kv.substr(eq + 1));
    }
    return s;
  }
};

void print_line(const char* line, void*) { std::printf("%s\n", line); }
void print_text(const char* text, void*) { std::fputs(text, stdout); }
void print_warning(const char* line, void*) { std::fprintf(stderr, "warning: %s\n", line); }

struct ConfigHandle {
  red_config* p = nullptr;
  ~ConfigHandle() { red_config_destroy(p); }
};
struct ModelHandle {
  red_model* p = nullptr;
  ~ModelHandle() { red_model_destroy(p); }
};

int write_report(const std::string& path, const std::string& json) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << json << '\n')) {
    std::fprintf(stderr, "error:io: cannot write %s\n", path.c_str());
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reversible diffusion-chain image fusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(red_version()));

  ConfigFlags train_flags;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint plus a JSON-lines log");
  train_flags.attach(train, true);
  train->add_flag("--quiet", quiet, "do not echo log lines");

  std::string checkpoint, fuse_data, fuse_out;
  bool pad = false;
  auto* fuse = app.add_subcommand("fuse", "fuse every image pair at full resolution");
  fuse->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  fuse->add_option("--data", fuse_data, "data root holding vis/ and ir/")->required();
  fuse->add_option("--out", fuse_out, "output root; images go to <out>/fused")->required();
  fuse->add_flag("--pad-to-even", pad, "reflect-pad odd sizes to a multiple of 4, then crop");

  std::string eval_data, eval_fused, eval_report, eval_format = "table";
  bool range255 = false;
  auto* eval = app.add_subcommand("eval", "score fused images against their sources");
  eval->add_option("--data", eval_data, "data root holding vis/ and ir/")->required();
  eval->add_option("--fused", eval_fused, "directory of fused .pgm files")->required();
  eval->add_option("--report", eval_report, "write the JSON report here");
  eval->add_option("--format", eval_format, "stdout format")->check(CLI::IsMember({"table", "json", "both"}));
  eval->add_flag("--range255", range255, "report EI, AG and SF on the 0-255 scale");

  ConfigFlags bench_flags;
  std::string bench_report, bench_format = "table";
  auto* bench = app.add_subcommand("bench-mem", "measure peak activation memory and step time across modes and T");
  bench_flags.attach(bench, false);
  bench->add_option("--report", bench_report, "write the JSON report here");
  bench->add_option("--format", bench_format, "stdout format")->check(CLI::IsMember({"table", "json", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "error:usage: %s\n", msg.c_str());
    return 1;
  }

  if (train->parsed()) {
    ConfigHandle cfg;
    if (auto s = red_config_create(&cfg.p); s != RED_OK) return fail(s);
    if (auto s = train_flags.build(cfg.p); s != RED_OK) return fail(s);
    ModelHandle model;
    if (auto s = red_model_create(cfg.p, &model.p); s != RED_OK) return fail(s);
    if (auto s = red_train(model.p, cfg.p, quiet ? nullptr : print_line, print_warning, nullptr); s != RED_OK) {
      return fail(s);
    }
    return 0;
  }

  if (fuse->parsed()) {
    ModelHandle model;
    if (auto s = red_model_load(checkpoint.c_str(), &model.p); s != RED_OK) return fail(s);
    if (auto s = red_fuse_directory(model.p, fuse_data.c_str(), fuse_out.c_str(), pad ? 1 : 0, print_warning, nullptr);
        s != RED_OK) {
      return fail(s);
    }
    return 0;
  }

  if (eval->parsed()) {
    struct Out {
      std::string json, table;
    } out;
    auto s = red_eval_directory(
        eval_data.c_str(), eval_fused.c_str(), range255 ? 1 : 0,
        [](const char* t, void* u) { static_cast<Out*>(u)->json = t; },
        [](const char* t, void* u) { static_cast<Out*>(u)->table = t; }, print_warning, &out);
    if (s != RED_OK) return fail(s);
    if (eval_format != "json") std::fputs(out.table.c_str(), stdout);
    if (eval_format != "table") std::printf("%s\n", out.json.c_str());
    return eval_report.empty() ? 0 : write_report(eval_report, out.json);
  }

  if (bench->parsed()) {
    ConfigHandle cfg;
    if (auto s = red_config_create(&cfg.p); s != RED_OK) return fail(s);
    if (auto s = bench_flags.build(cfg.p); s != RED_OK) return fail(s);
    struct Out {
      std::string json, table;
    } out;
    auto s = red_bench_mem(
        cfg.p, [](const char* t, void* u) { static_cast<Out*>(u)->json = t; },
        [](const char* t, void* u) { static_cast<Out*>(u)->table = t; },
        [](const char* t, void*) { std::fprintf(stderr, "%s\n", t); }, &out);
    if (s != RED_OK) return fail(s);
    if (bench_format != "json") std::fputs(out.table.c_str(), stdout);
    if (bench_format != "table") std::printf("%s\n", out.json.c_str());
    return bench_report.empty() ? 0 : write_report(bench_report, out.json);
  }
  return 1;
}
