#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "jsdmp/autodiff.hpp"
#include "jsdmp/dataset.hpp"
#include "jsdmp/models.hpp"
#include "jsdmp/training.hpp"

namespace jsdmp {

struct GradCheckEntry {
  std::string model;
  std::string group;
  std::string parameter;
  std::size_t entries = 0;
  /// max_i |analytic_i - numeric_i| / s, where s is the largest |analytic| or
  /// |numeric| entry over the parameter's whole group.
  double max_rel_error = 0.0;
};

/// "layer0.gamma" -> "layer0"; ungrouped names are their own group.
inline std::string parameter_group(const std::string& name) {
  const auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

/// Compare tape gradients of `loss_fn` with central differences for every
/// trainable parameter in `params`.
inline std::vector<GradCheckEntry> check_gradients(const std::string& label, const std::vector<Parameter*>& params,
                                                   const std::function<Tensor(Tape&)>& loss_fn, double h = 1e-6) {
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  auto loss_value = [&] {
    Tape tape;
    return loss_fn(tape).scalar();
  };

  struct Raw {
    std::size_t index;
    double max_diff;
    double scale;
  };
  std::vector<Raw> raw;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    const Matrix analytic = p.grad;
    double max_diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss_value();
      p.value[i] = orig - h;
      const double down = loss_value();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
    }
    raw.push_back({k, max_diff, scale});
  }

  std::map<std::string, double> group_scale;
  for (const auto& r : raw) {
    auto& s = group_scale[parameter_group(params[r.index]->name)];
    s = std::max(s, r.scale);
  }
  std::vector<GradCheckEntry> out;
  for (const auto& r : raw) {
    const Parameter& p = *params[r.index];
    const std::string group = parameter_group(p.name);
    const double s = group_scale[group];
    out.push_back({label, group, p.name, p.value.size(), s > 1e-12 ? r.max_diff / s : r.max_diff});
  }
  return out;
}

/// Random n-node instance: Erdos-Renyi edges (p = 0.5), non-negative
/// features in [0, 1), C classes, every node labelled for training.
inline Dataset make_gradcheck_instance(std::size_t n, std::uint64_t seed, std::size_t feature_dim = 8,
                                       std::size_t classes = 3) {
  if (n < 2) throw ConfigError("gradient check needs at least 2 nodes");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (unit(rng) < 0.5) edges.emplace_back(i, j);
  Dataset ds;
  ds.name = "gradcheck";
  ds.graph = build_graph(n, edges);
  ds.features = uniform_matrix(n, feature_dim, 0.0, 1.0, rng);
  ds.num_classes = classes;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % classes);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
  ds.train_mask.assign(n, 1);
  ds.val_mask.assign(n, 0);
  ds.test_mask.assign(n, 0);
  return ds;
}

/// Perturb every parameter away from its initial value so no gradient is
/// evaluated at a symmetric or saturated point.
inline void jitter_parameters(Model& model, Rng& rng, double amplitude = 0.3) {
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  for (auto* p : model.all_parameters())
    for (auto& v : p->value.values()) v += u(rng);
}

/// Gradient check of the full training loss (eval mode, no dropout) of both
/// DMPGCN and DMPPRG on a random n-node instance.
inline std::vector<GradCheckEntry> gradcheck_models(std::size_t n, std::uint64_t seed, double h = 1e-6) {
  const Dataset ds = make_gradcheck_instance(n, seed);
  const SparseMatrix lap = normalized_laplacian(ds.graph);
  std::vector<GradCheckEntry> all;
  for (ModelKind kind : {ModelKind::DmpGcn, ModelKind::DmpPrg}) {
    ModelSpec spec = ModelSpec::defaults(kind);
    spec.num_nodes = n;
    spec.input_dim = ds.feature_dim();
    spec.num_classes = ds.num_classes;
    spec.hidden = 4;
    spec.propagation_steps = 3;
    Rng rng(seed + 1);
    auto model = make_model(spec, rng);
    jitter_parameters(*model, rng);
    const Matrix inputs = ds.features;
    auto loss_fn = [&](Tape& tape) {
      Rng unused(0);
      const auto fwd = model->forward(tape, inputs, ds.graph, false, unused);
      return total_loss(fwd.logits, ds.labels, ds.train_mask, fwd.latent, lap).total;
    };
    auto part = check_gradients(std::string(to_string(kind)), model->trainable_parameters(), loss_fn, h);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace jsdmp
