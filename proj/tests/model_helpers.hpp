#pragma once

#include "red/fusion_chain.hpp"
#include "red/rng.hpp"

namespace testutil {

// Adds U(-scale, scale) to every estimator entry so no sub-network is the
// identity, and jitters the schedule logits. w is left alone.
template <red::Real T>
void perturb_model(red::FusionModel<T>& model, std::uint64_t seed, double scale = 0.2) {
  red::Rng rng(seed);
  for (const auto& [name, t] : model.params()) {
    if (name == red::kWeightW) continue;
    const double s = name == red::kAlphaLogits ? 0.3 : scale;
    for (std::size_t k = 0; k < t->numel(); ++k) (*t)[k] = static_cast<T>((*t)[k] + rng.uniform(-s, s));
  }
}

template <red::Real T>
void zero_estimator(red::FusionModel<T>& model) {
  for (const auto& [name, t] : model.params()) {
    if (name == red::kWeightW || name == red::kAlphaLogits) continue;
    for (std::size_t k = 0; k < t->numel(); ++k) (*t)[k] = T(0);
  }
}

inline red::ModelConfig small_config(std::size_t T, red::ModeFlags modes = {}) {
  red::ModelConfig c;
  c.T = T;
  c.channels = 8;
  c.blocks = 2;
  c.modes = modes;
  return c;
}

}  // namespace testutil
