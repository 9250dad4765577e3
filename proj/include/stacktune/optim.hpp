#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "stacktune/nn.hpp"
#include "stacktune/tensor.hpp"

namespace stacktune {

/// BERT-Adam hyperparameters. Bias correction is off by default, which is
/// what distinguishes BERT-Adam from textbook Adam.
struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double weight_decay = 0.01;
  bool bias_correction = false;
  double global_lr = 1e-3;

  void validate() const {
    auto fail = [](const std::string& what) { throw Error("optimizer config: " + what); };
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(global_lr >= 0.0)) fail("global_lr must be non-negative");
  }
};

/// A named set of parameters that is frozen, scaled and decayed as a unit.
/// Moment buffers are created on the first real update, so a group that has
/// only ever been frozen holds no optimizer state.
template <class T>
struct ParamGroup {
  std::string name;
  std::vector<BasicTensor<T>> params;
  std::vector<std::string> param_names;
  bool frozen = false;
  double lr_scale = 1.0;
  bool apply_decay = true;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step_count = 0;

  ParamGroup() = default;
  ParamGroup(std::string group_name, const ParamList<T>& list, bool decay = true)
      : name(std::move(group_name)), apply_decay(decay) {
    for (const auto& p : list) {
      params.push_back(p.tensor);
      param_names.push_back(p.name);
    }
  }

  bool has_state() const { return !m.empty(); }
};

/// Freezing also switches off gradient tracking for the group's tensors, so
/// no backward work is spent on them. Moment buffers are kept either way.
template <class T>
void set_frozen(ParamGroup<T>& group, bool frozen) {
  group.frozen = frozen;
  for (auto& p : group.params) p.set_requires_grad(!frozen);
}

/// One BERT-Adam update over every unfrozen group:
///   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (sqrt(v) + eps) + wd * p),   lr = global_lr * lr_scale
template <class T>
void step(std::span<ParamGroup<T>> groups, const OptimizerConfig& cfg) {
  cfg.validate();
  for (auto& group : groups) {
    if (group.frozen) continue;
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      if (!group.params[i].has_grad()) {
        throw Error("optimizer step: parameter '" + group.param_names[i] + "' in group '" +
                    group.name + "' has no gradient");
      }
    }
    if (!group.has_state()) {
      for (const auto& p : group.params) {
        group.m.emplace_back(p.numel(), T(0));
        group.v.emplace_back(p.numel(), T(0));
      }
    }
    ++group.step_count;
    const double lr = cfg.global_lr * group.lr_scale;
    const double decay = group.apply_decay ? cfg.weight_decay : 0.0;
    double m_corr = 1.0, v_corr = 1.0;
    if (cfg.bias_correction) {
      m_corr = 1.0 - std::pow(cfg.beta1, static_cast<double>(group.step_count));
      v_corr = 1.0 - std::pow(cfg.beta2, static_cast<double>(group.step_count));
    }
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      auto values = group.params[i].data();
      const auto grads = group.params[i].grad();
      auto& m = group.m[i];
      auto& v = group.v[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double g = grads[j];
        const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
        const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update =
            (mj / m_corr) / (std::sqrt(vj / v_corr) + cfg.epsilon) + decay * values[j];
        values[j] = static_cast<T>(values[j] - lr * update);
      }
    }
  }
}

template <class T>
void step(std::vector<ParamGroup<T>>& groups, const OptimizerConfig& cfg) {
  step(std::span<ParamGroup<T>>(groups), cfg);
}

template <class T>
void zero_grad(std::vector<ParamGroup<T>>& groups) {
  for (auto& g : groups) zero_grad(g.params);
}

/// FNV-1a over the raw bytes of every tensor, in order.
template <class T>
std::uint64_t checksum(std::span<const BasicTensor<T>> tensors) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& t : tensors) {
    const auto values = t.data();
    const auto* bytes = reinterpret_cast<const unsigned char*>(values.data());
    for (std::size_t i = 0; i < values.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

template <class T>
std::uint64_t checksum(const std::vector<BasicTensor<T>>& tensors) {
  return checksum(std::span<const BasicTensor<T>>(tensors));
}

template <class T>
std::uint64_t checksum(const ParamList<T>& params) {
  std::vector<BasicTensor<T>> tensors;
  for (const auto& p : params) tensors.push_back(p.tensor);
  return checksum(tensors);
}

/// Splits a parameter list into a decayed group and a no-decay group
/// (layer-norm gains and biases).
template <class T>
std::vector<ParamGroup<T>> make_groups(const std::string& name, const ParamList<T>& params) {
  ParamList<T> decayed, plain;
  for (const auto& p : params) (p.no_decay ? plain : decayed).push_back(p);
  std::vector<ParamGroup<T>> groups;
  groups.emplace_back(name, decayed, true);
  groups.emplace_back(name + ".no_decay", plain, false);
  return groups;
}

}  // namespace stacktune
