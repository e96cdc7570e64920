#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsdmp/adam.hpp"
#include "jsdmp/autodiff.hpp"
#include "jsdmp/dataset.hpp"
#include "jsdmp/error.hpp"
#include "jsdmp/graph.hpp"
#include "jsdmp/metrics.hpp"
#include "jsdmp/models.hpp"

namespace jsdmp {

/// tr(X^T L X) + || X^T X / n - I ||_F^2
inline Tensor structural_regularizer(const Tensor& x, const SparseMatrix& laplacian) {
  if (laplacian.rows != x.rows() || laplacian.cols != x.rows()) {
    throw DimensionError("regularizer: Laplacian " + std::to_string(laplacian.rows) + "x" +
                         std::to_string(laplacian.cols) + " vs positions " + x.value().shape_string());
  }
  Tape& t = *x.tape();
  const Tensor smooth = sum(hadamard(x, sparse_matmul(laplacian, x)));
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  const Tensor gram = scale(matmul(transpose(x), x), inv_n);
  const Tensor dev = sub(gram, t.constant(Matrix::identity(x.cols())));
  return add(smooth, sum(hadamard(dev, dev)));
}

struct LossTerms {
  Tensor total;
  Tensor cross_entropy;
  std::optional<Tensor> regularizer;
};

/// Masked softmax cross-entropy plus the unweighted latent regulariser.
inline LossTerms total_loss(const Tensor& logits, std::span<const int> labels, std::span<const std::uint8_t> train_mask,
                            const std::optional<Tensor>& latent, const SparseMatrix& laplacian) {
  if (std::none_of(train_mask.begin(), train_mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw ConfigError("training mask is empty");
  }
  const Tensor ce = masked_softmax_cross_entropy(logits, labels, train_mask);
  if (!latent) return {ce, ce, std::nullopt};
  const Tensor reg = structural_regularizer(*latent, laplacian);
  return {add(ce, reg), ce, reg};
}

/// Divide each row by its sum (rows summing to zero are left as is).
inline Matrix row_normalize(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double s = 0.0;
    for (double v : row) s += v;
    if (s > 0.0)
      for (auto& v : row) v /= s;
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t patience = 50;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  ModelSpec model = ModelSpec::defaults(ModelKind::DmpGcn);

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"patience", patience},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"model", model.to_json()}};
  }
};

struct EpochRecord {
  double train_loss = 0.0;
  double regularizer = 0.0;
  double val_acc = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::string dataset;
  nlohmann::json config;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  double test_nmi = 0.0;
  double wall_seconds = 0.0;

  /// Equality over every reproducible field (wall-clock time excluded).
  bool same_results(const TrainReport& o) const {
    return dataset == o.dataset && config == o.config && epochs == o.epochs && best_epoch == o.best_epoch &&
           best_val_acc == o.best_val_acc && test_acc == o.test_acc && test_nmi == o.test_nmi;
  }

  /// "key<TAB>value" per line; floats carry 17 significant digits.
  std::string to_text(bool include_timing = true) const {
    std::ostringstream os;
    auto num = [](double v) { return detail::format_double(v); };
    os << "dataset\t" << dataset << '\n';
    os << "config\t" << config.dump() << '\n';
    os << "epochs_run\t" << epochs.size() << '\n';
    os << "best_epoch\t" << best_epoch << '\n';
    os << "best_val_acc\t" << num(best_val_acc) << '\n';
    os << "test_acc\t" << num(test_acc) << '\n';
    os << "test_nmi\t" << num(test_nmi) << '\n';
    if (include_timing) os << "wall_seconds\t" << num(wall_seconds) << '\n';
    for (std::size_t e = 0; e < epochs.size(); ++e) {
      os << "epoch." << e + 1 << ".train_loss\t" << num(epochs[e].train_loss) << '\n';
      os << "epoch." << e + 1 << ".regularizer\t" << num(epochs[e].regularizer) << '\n';
      os << "epoch." << e + 1 << ".val_acc\t" << num(epochs[e].val_acc) << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs) {
      ep.push_back({{"train_loss", e.train_loss}, {"regularizer", e.regularizer}, {"val_acc", e.val_acc}});
    }
    return {{"dataset", dataset},     {"config", config},         {"epochs_run", epochs.size()},
            {"best_epoch", best_epoch}, {"best_val_acc", best_val_acc}, {"test_acc", test_acc},
            {"test_nmi", test_nmi},   {"wall_seconds", wall_seconds}, {"epochs", ep}};
  }

  static TrainReport from_json(const nlohmann::json& j) {
    TrainReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.config = j.at("config");
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.best_val_acc = j.at("best_val_acc").get<double>();
    r.test_acc = j.at("test_acc").get<double>();
    r.test_nmi = j.at("test_nmi").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& e : j.at("epochs")) {
      r.epochs.push_back({e.at("train_loss").get<double>(), e.at("regularizer").get<double>(),
                          e.at("val_acc").get<double>()});
    }
    return r;
  }
};

struct Evaluation {
  double acc = 0.0;
  double nmi = 0.0;
  bool operator==(const Evaluation&) const = default;
};

/// Features as the model sees them.
inline Matrix model_inputs(const Dataset& ds, const ModelSpec& spec) {
  return spec.row_normalize_inputs ? row_normalize(ds.features) : ds.features;
}

/// Eval-mode forward pass (no dropout) and both metrics on `mask`.
inline Evaluation evaluate(Model& model, const Matrix& inputs, const Dataset& ds, const Mask& mask) {
  Tape tape;
  Rng unused(0);
  const auto fwd = model.forward(tape, inputs, ds.graph, false, unused);
  const auto pred = argmax_rows(fwd.logits.value());
  return {accuracy(pred, ds.labels, mask), nmi(pred, ds.labels, mask)};
}

inline void check_splits(const Dataset& ds) {
  const std::size_t n = ds.num_nodes();
  if (ds.train_mask.size() != n || ds.val_mask.size() != n || ds.test_mask.size() != n) {
    throw ConfigError("dataset has no train/val/test split");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.train_mask[i] + ds.val_mask[i] + ds.test_mask[i] > 1) {
      throw ConfigError("node " + std::to_string(i) + " belongs to more than one split");
    }
  }
  if (mask_count(ds.train_mask) == 0 || mask_count(ds.val_mask) == 0 || mask_count(ds.test_mask) == 0) {
    throw ConfigError("train, val and test splits must all be non-empty");
  }
}

/// Full-batch training with Adam and early stopping on validation accuracy.
/// The parameters of the best validation epoch are restored before the test
/// evaluation, so `model` ends in that state.
inline TrainReport train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  check_splits(ds);
  const auto start = std::chrono::steady_clock::now();

  const Matrix inputs = model_inputs(ds, model.spec());
  const SparseMatrix laplacian = normalized_laplacian(ds.graph);
  AdamState adam(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const auto params = model.trainable_parameters();
  Rng dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);

  TrainReport report;
  report.dataset = ds.name;
  report.config = cfg.to_json();
  auto best = model.snapshot();
  report.best_val_acc = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    {
      Tape tape;
      const auto fwd = model.forward(tape, inputs, ds.graph, true, dropout_rng);
      const auto loss = total_loss(fwd.logits, ds.labels, ds.train_mask, fwd.latent, laplacian);
      rec.train_loss = loss.total.scalar();
      rec.regularizer = loss.regularizer ? loss.regularizer->scalar() : 0.0;
      if (!std::isfinite(rec.train_loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " (cross-entropy " +
                           std::to_string(loss.cross_entropy.scalar()) + ", regulariser " +
                           std::to_string(rec.regularizer) + ")");
      }
      tape.backward(loss.total);
      try {
        adam.step(params);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    rec.val_acc = evaluate(model, inputs, ds, ds.val_mask).acc;
    report.epochs.push_back(rec);
    if (rec.val_acc > report.best_val_acc) {
      report.best_val_acc = rec.val_acc;
      report.best_epoch = epoch;
      best = model.snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      break;
    }
  }

  model.restore(best);
  const auto test = evaluate(model, inputs, ds, ds.test_mask);
  report.test_acc = test.acc;
  report.test_nmi = test.nmi;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Build the model described by cfg.model (sized to `ds`) with seed cfg.seed.
inline std::unique_ptr<Model> build_model_for(const Dataset& ds, const TrainConfig& cfg) {
  ModelSpec spec = cfg.model;
  spec.num_nodes = ds.num_nodes();
  spec.input_dim = ds.feature_dim();
  spec.num_classes = ds.num_classes;
  Rng rng(cfg.seed);
  return make_model(spec, rng);
}

struct TrainedModel {
  std::unique_ptr<Model> model;
  TrainReport report;
};

inline TrainedModel run_training(const Dataset& ds, TrainConfig cfg) {
  auto model = build_model_for(ds, cfg);
  cfg.model = model->spec();
  auto report = train(*model, ds, cfg);
  return {std::move(model), std::move(report)};
}

}  // namespace jsdmp
