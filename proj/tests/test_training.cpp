#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "support.hpp"

using namespace jsdmp;
using namespace jsdmp::testing;

namespace {

/// Labels realising a contingency table (rows truth, columns prediction).
void labels_from_table(const std::vector<std::vector<int>>& t, std::vector<int>& truth, std::vector<int>& pred) {
  truth.clear();
  pred.clear();
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < t[i].size(); ++j)
      for (int k = 0; k < t[i][j]; ++k) {
        truth.push_back(static_cast<int>(i));
        pred.push_back(static_cast<int>(j));
      }
}

TrainConfig quick_config(ModelKind kind, std::uint64_t seed, std::size_t epochs = 40) {
  TrainConfig cfg;
  cfg.model = ModelSpec::defaults(kind);
  cfg.model.hidden = 8;
  cfg.model.propagation_steps = 3;
  cfg.epochs = epochs;
  cfg.patience = 10;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(Regularizer, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = build_graph(8, random_edges(8, 0.4, seed));
    const Matrix x = random_matrix(8, 3, seed + 50);
    Tape t;
    const double got = structural_regularizer(t.constant(x), normalized_laplacian(g)).scalar();
    const double ref = oracle::regularizer(x, g.dense_adjacency());
    EXPECT_NEAR(got, ref, 1e-12 * std::abs(ref));
  }
}

TEST(Regularizer, GradientMatchesFiniteDifferences) {
  const Graph g = build_graph(6, random_edges(6, 0.5, 3));
  const SparseMatrix l = normalized_laplacian(g);
  const double err = fd_relative_error({random_matrix(6, 3, 4)},
                                       [&](Tape&, auto& in) { return structural_regularizer(in[0], l); });
  EXPECT_LT(err, 1e-6);
}

TEST(Regularizer, OrthonormalConstantColumnOnConnectedGraphIsZero) {
  const Graph g = build_graph(4, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  Tape t;
  EXPECT_NEAR(structural_regularizer(t.constant(Matrix(4, 1, 1.0)), normalized_laplacian(g)).scalar(), 0.0, 1e-14);
}

TEST(Loss, UniformLogitsGiveLogC) {
  Tape t;
  const Tensor logits = t.constant(Matrix(5, 4, 0.3));
  const std::vector<int> labels{0, 1, 2, 3, 1};
  const Mask mask{1, 0, 1, 1, 0};
  const Graph g = build_graph(5, std::vector<Edge>{});
  const auto loss = total_loss(logits, labels, mask, std::nullopt, normalized_laplacian(g));
  EXPECT_NEAR(loss.total.scalar(), std::log(4.0), 1e-14);
  EXPECT_FALSE(loss.regularizer.has_value());
  EXPECT_THROW(total_loss(logits, labels, Mask(5, 0), std::nullopt, normalized_laplacian(g)), ConfigError);
}

TEST(Loss, AddsRegularizerWhenLatentIsPresent) {
  const Graph g = build_graph(4, std::vector<Edge>{{0, 1}, {2, 3}});
  const Matrix x = random_matrix(4, 2, 9);
  Tape t;
  const Tensor logits = t.constant(random_matrix(4, 2, 10));
  const std::vector<int> labels{0, 1, 1, 0};
  const Mask mask(4, 1);
  const auto loss = total_loss(logits, labels, mask, t.constant(x), normalized_laplacian(g));
  EXPECT_NEAR(loss.total.scalar(), loss.cross_entropy.scalar() + oracle::regularizer(x, g.dense_adjacency()), 1e-12);
}

TEST(Metrics, AccuracyAndArgmaxTies) {
  EXPECT_EQ(argmax_rows(Matrix{{0.5, 0.5, 0.1}, {0.0, 0.2, 0.2}, {-1.0, -2.0, -3.0}}), (std::vector<int>{0, 1, 0}));
  const std::vector<int> pred{0, 1, 1, 2}, truth{0, 1, 2, 2};
  EXPECT_DOUBLE_EQ(accuracy(pred, truth, Mask{1, 1, 1, 1}), 0.75);
  EXPECT_DOUBLE_EQ(accuracy(pred, truth, Mask{0, 0, 1, 1}), 0.5);
  EXPECT_THROW(accuracy(pred, truth, Mask(4, 0)), ConfigError);
  EXPECT_THROW(accuracy(pred, truth, Mask(3, 1)), DimensionError);
}

TEST(Metrics, NmiHandExample) {
  std::vector<int> truth, pred;
  labels_from_table({{2, 0}, {1, 1}}, truth, pred);
  const double mi = 0.5 * std::log(4.0 / 3.0) + 0.25 * std::log(2.0 / 3.0) + 0.25 * std::log(2.0);
  const double hp = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  EXPECT_NEAR(nmi(pred, truth, Mask(4, 1)), 2.0 * mi / (std::numbers::ln2 + hp), 1e-12);
}

TEST(Metrics, NmiExtremes) {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  const std::vector<int> relabelled{2, 2, 0, 0, 1, 1};
  EXPECT_NEAR(nmi(relabelled, a, Mask(6, 1)), 1.0, 1e-12);
  std::vector<int> truth, pred;
  labels_from_table({{3, 3}, {3, 3}}, truth, pred);
  EXPECT_NEAR(nmi(pred, truth, Mask(truth.size(), 1)), 0.0, 1e-12);
  const std::vector<int> one(5, 0);
  EXPECT_EQ(nmi(one, one, Mask(5, 1)), 1.0);
}

TEST(Metrics, NmiMatchesTableOracle) {
  Rng rng(77);
  std::uniform_int_distribution<int> cell(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<int>> t(2 + trial % 4, std::vector<int>(2 + trial % 3));
    std::vector<std::vector<double>> td(t.size(), std::vector<double>(t[0].size()));
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t j = 0; j < t[i].size(); ++j) td[i][j] = t[i][j] = cell(rng) + (i == j ? 1 : 0);
    std::vector<int> truth, pred;
    labels_from_table(t, truth, pred);
    EXPECT_NEAR(nmi(pred, truth, Mask(truth.size(), 1)), oracle::nmi_table(td), 1e-12);
  }
}

TEST(Training, RejectsBadConfiguration) {
  const Dataset ds = small_dataset(40, 0.8, 1);
  TrainConfig cfg = quick_config(ModelKind::DmpGcn, 0);
  cfg.learning_rate = -0.01;
  EXPECT_THROW(run_training(ds, cfg), ConfigError);
  Dataset no_split = ds;
  no_split.val_mask.assign(ds.num_nodes(), 0);
  EXPECT_THROW(run_training(no_split, quick_config(ModelKind::DmpGcn, 0)), ConfigError);
}

TEST(Training, IsDeterministicForFixedSeed) {
  const Dataset ds = small_dataset(80, 0.7, 2);
  for (ModelKind kind : {ModelKind::DmpGcn, ModelKind::DmpPrg}) {
    const auto a = run_training(ds, quick_config(kind, 5));
    const auto b = run_training(ds, quick_config(kind, 5));
    EXPECT_TRUE(a.report.same_results(b.report));
    EXPECT_EQ(a.report.to_text(false), b.report.to_text(false));
    const auto c = run_training(ds, quick_config(kind, 6));
    EXPECT_FALSE(a.report.same_results(c.report));
  }
}

TEST(Training, RestoresBestValidationEpoch) {
  const Dataset ds = small_dataset(80, 0.8, 3);
  auto run = run_training(ds, quick_config(ModelKind::DmpPrg, 1, 60));
  const Matrix inputs = model_inputs(ds, run.model->spec());
  EXPECT_EQ(evaluate(*run.model, inputs, ds, ds.val_mask).acc, run.report.best_val_acc);
  EXPECT_EQ(evaluate(*run.model, inputs, ds, ds.test_mask).acc, run.report.test_acc);
  double best = 0.0;
  for (const auto& e : run.report.epochs) best = std::max(best, e.val_acc);
  EXPECT_EQ(best, run.report.best_val_acc);
  EXPECT_EQ(run.report.epochs[run.report.best_epoch - 1].val_acc, best);
}

TEST(Training, EarlyStoppingHonoursPatience) {
  const Dataset ds = small_dataset(60, 0.8, 4);
  TrainConfig cfg = quick_config(ModelKind::DmpGcn, 2, 300);
  cfg.patience = 5;
  const auto r = run_training(ds, cfg).report;
  EXPECT_LE(r.epochs.size(), r.best_epoch + 5);
  EXPECT_LT(r.epochs.size(), 300u);
}

TEST(Training, FitsTrainingLabelsOfASmallGraph) {
  const Dataset ds = small_dataset(60, 0.9, 5);
  TrainConfig cfg = quick_config(ModelKind::DmpPrg, 3, 200);
  cfg.model.dropout = 0.0;
  cfg.model.hidden = 32;
  cfg.patience = 0;
  cfg.weight_decay = 0.0;
  auto run = run_training(ds, cfg);
  EXPECT_EQ(run.report.epochs.size(), 200u);
  EXPECT_LT(run.report.epochs.back().train_loss, run.report.epochs.front().train_loss);
  const Matrix inputs = model_inputs(ds, run.model->spec());
  EXPECT_GE(evaluate(*run.model, inputs, ds, ds.train_mask).acc, 0.95);
}

TEST(Training, AblationNoneIgnoresLatentInitialisation) {
  const Dataset ds = small_dataset(50, 0.6, 6);
  TrainConfig cfg = quick_config(ModelKind::DmpGcn, 4);
  cfg.model.ablation = Ablation::None;
  auto m1 = build_model_for(ds, cfg);
  auto m2 = build_model_for(ds, cfg);
  m2->find_parameter("x_base")->value = random_matrix(ds.num_nodes(), ds.num_classes, 99);
  const auto r1 = train(*m1, ds, cfg), r2 = train(*m2, ds, cfg);
  EXPECT_TRUE(r1.same_results(r2));
  for (const auto& e : r1.epochs) EXPECT_EQ(e.regularizer, 0.0);
}

TEST(Training, ReportJsonRoundTrip) {
  const Dataset ds = small_dataset(40, 0.8, 7);
  const auto r = run_training(ds, quick_config(ModelKind::DmpGcn, 0, 5)).report;
  const auto back = TrainReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_TRUE(back.same_results(r));
  EXPECT_NE(r.to_text().find("wall_seconds"), std::string::npos);
  EXPECT_EQ(r.to_text(false).find("wall_seconds"), std::string::npos);
}

TEST(Training, LossFallsOverFirstTenEpochsOnEasyGraph) {
  const Dataset ds = small_dataset(300, 0.9, 8, 4, 50);
  for (ModelKind kind : {ModelKind::DmpGcn, ModelKind::DmpPrg}) {
    TrainConfig cfg;
    cfg.model = ModelSpec::defaults(kind);
    cfg.epochs = 10;
    cfg.patience = 0;
    const auto r = run_training(ds, cfg).report;
    ASSERT_EQ(r.epochs.size(), 10u);
    EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss) << to_string(kind);
  }
}

TEST(Training, OverfitsFiveNodeGraph) {
  Dataset ds;
  ds.graph = build_graph(5, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  ds.features = random_matrix(5, 6, 21, 0.0, 1.0);
  ds.labels = {0, 1, 0, 2, 1};
  ds.num_classes = 3;
  const Mask all(5, 1);
  ModelSpec spec = ModelSpec::defaults(ModelKind::DmpPrg);
  spec.num_nodes = 5;
  spec.input_dim = 6;
  spec.num_classes = 3;
  spec.dropout = 0.0;
  Rng rng(22);
  auto model = make_model(spec, rng);
  const Matrix inputs = model_inputs(ds, spec);
  const SparseMatrix laplacian = normalized_laplacian(ds.graph);
  AdamState adam(AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  const auto params = model->trainable_parameters();
  double ce = 0.0;
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    Rng unused(0);
    const auto fwd = model->forward(tape, inputs, ds.graph, true, unused);
    const auto loss = total_loss(fwd.logits, ds.labels, all, fwd.latent, laplacian);
    ce = loss.cross_entropy.scalar();
    tape.backward(loss.total);
    adam.step(params);
  }
  EXPECT_LT(ce, 1e-2);
  EXPECT_EQ(evaluate(*model, inputs, ds, all).acc, 1.0);
}

TEST(Training, FullAblationKeepsUpWithNoneOnHomophilousGraph) {
  const Dataset ds = small_dataset(400, 0.9, 9, 4, 60);
  double full = 0.0, none = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 150;
    full += run_training(ds, cfg).report.test_acc / 3.0;
    cfg.model.ablation = Ablation::None;
    none += run_training(ds, cfg).report.test_acc / 3.0;
  }
  EXPECT_GE(full, none - 0.02) << "full " << full << " none " << none;
}
