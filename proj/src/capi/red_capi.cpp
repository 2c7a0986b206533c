#include "red/red.h"

#include <cstring>
#include <exception>
#include <new>
#include <optional>
#include <string>

#include "red/app.hpp"

struct red_config {
  red::RunConfig cfg;
};

struct red_model {
  red::Model model;
};

namespace {

thread_local std::string g_last_error;

red_status status_for(red::ErrorKind kind) {
  switch (kind) {
    case red::ErrorKind::kUsage:
      return RED_ERR_USAGE;
    case red::ErrorKind::kShape:
      return RED_ERR_SHAPE;
    case red::ErrorKind::kData:
      return RED_ERR_DATA;
    case red::ErrorKind::kNumeric:
      return RED_ERR_NUMERIC;
    case red::ErrorKind::kIo:
      return RED_ERR_IO;
  }
  return RED_ERR_INTERNAL;
}

template <typename F>
red_status guarded(F&& body) {
  try {
    body();
    return RED_OK;
  } catch (const red::Error& e) {
    g_last_error = e.what();
    return status_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return RED_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return RED_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RED_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return RED_ERR_INTERNAL;
  }
}

red::LineSink wrap(red_sink sink, void* user) {
  if (!sink) return {};
  return [sink, user](const std::string& line) { sink(line.c_str(), user); };
}

void require(const void* p, const char* what) {
  if (!p) throw red::UsageError(std::string(what) + " must not be null");
}

}  // namespace

extern "C" {

const char* red_last_error(void) { return g_last_error.c_str(); }

const char* red_status_name(red_status status) {
  switch (status) {
    case RED_OK:
      return "ok";
    case RED_ERR_USAGE:
      return "usage";
    case RED_ERR_DATA:
      return "data";
    case RED_ERR_NUMERIC:
      return "numeric";
    case RED_ERR_IO:
      return "io";
    case RED_ERR_SHAPE:
      return "shape";
    case RED_ERR_INTERNAL:
      return "internal";
  }
  return "internal";
}

const char* red_version(void) { return "0.1.0"; }

red_status red_config_create(red_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new red_config{};
  });
}

void red_config_destroy(red_config* cfg) { delete cfg; }

red_status red_config_set(red_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

red_status red_config_load_file(red_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "config");
    require(path, "path");
    cfg->cfg.load_file(path);
  });
}

red_status red_config_get(const red_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    require(cfg, "config");
    require(key, "key");
    const auto v = cfg->cfg.get(key);
    if (needed) *needed = v.size() + 1;
    if (buf && cap) {
      const std::size_t n = std::min(cap - 1, v.size());
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

red_status red_model_create(const red_config* cfg, red_model** out) {
  return guarded([&] {
    require(cfg, "config");
    require(out, "out");
    *out = new red_model{red::make_model(cfg->cfg)};
  });
}

red_status red_model_load(const char* path, red_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new red_model{red::load_model(path)};
  });
}

red_status red_model_save(const red_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    red::save_model(model->model, path);
  });
}

void red_model_destroy(red_model* model) { delete model; }

red_status red_model_w(const red_model* model, double* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model.w();
  });
}

red_status red_train(red_model* model, const red_config* cfg, red_sink on_line, red_sink on_warning, void* user) {
  return guarded([&] {
    require(model, "model");
    require(cfg, "config");
    red::run_train(model->model, cfg->cfg, wrap(on_line, user), wrap(on_warning, user));
  });
}

red_status red_fuse_directory(const red_model* model, const char* data_root, const char* out_root, int pad_to_even,
                              red_sink on_warning, void* user) {
  return guarded([&] {
    require(model, "model");
    require(data_root, "data_root");
    require(out_root, "out_root");
    red::run_fuse(model->model, data_root, out_root, pad_to_even != 0, wrap(on_warning, user));
  });
}

red_status red_eval_directory(const char* data_root, const char* fused_root, int range_255, red_sink on_json,
                              red_sink on_table, red_sink on_warning, void* user) {
  return guarded([&] {
    require(data_root, "data_root");
    require(fused_root, "fused_root");
    const auto report = red::run_eval(data_root, fused_root, range_255 != 0);
    if (on_warning) {
      for (const auto& w : report.warnings) on_warning(w.c_str(), user);
    }
    if (on_json) on_json(report.to_json().c_str(), user);
    if (on_table) on_table(report.to_table().c_str(), user);
  });
}

red_status red_bench_mem(const red_config* cfg, red_sink on_json, red_sink on_table, red_sink on_progress,
                         void* user) {
  return guarded([&] {
    require(cfg, "config");
    const auto report = red::run_bench(cfg->cfg, {}, wrap(on_progress, user));
    if (on_json) on_json(report.to_json().c_str(), user);
    if (on_table) on_table(report.to_table().c_str(), user);
  });
}

}  // extern "C"
