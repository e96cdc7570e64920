#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace jsdmp;
using namespace jsdmp::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("jsdmp_data_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

void write_tiny(const fs::path& dir) {
  write_file(dir / "manifest.tsv", "3\t2\t2\n");
  write_file(dir / "edges.tsv", "0\t1\n1\t2\n");
  write_file(dir / "features.tsv", "1\t0\n0.5\t2\n0\t3\n");
  write_file(dir / "labels.tsv", "0\n1\n1\n");
}

std::string load_error(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

bool disjoint(const Dataset& ds) {
  for (std::size_t i = 0; i < ds.num_nodes(); ++i)
    if (ds.train_mask[i] + ds.val_mask[i] + ds.test_mask[i] > 1) return false;
  return true;
}

Dataset synth(std::size_t n, std::size_t c, double h, std::uint64_t seed, std::size_t d = 30) {
  SynthConfig cfg;
  cfg.num_nodes = n;
  cfg.num_classes = c;
  cfg.feature_dim = d;
  cfg.homophily = h;
  Rng rng(seed);
  return synthesize_graph(cfg, rng);
}

}  // namespace

TEST(LoadDataset, ReadsTinyDirectory) {
  TempDir dir("tiny");
  write_tiny(dir.path());
  const Dataset ds = load_dataset(dir.path());
  EXPECT_EQ(ds.num_nodes(), 3u);
  EXPECT_EQ(ds.feature_dim(), 2u);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(ds.graph.raw_edge_count(), 2u);
  EXPECT_EQ(ds.graph.num_edges(), 7u);
  EXPECT_EQ(ds.features(1, 0), 0.5);
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 1}));
  EXPECT_FALSE(ds.has_splits());
  EXPECT_EQ(ds.name, "jsdmp_data_tiny");
}

TEST(LoadDataset, ErrorsNameFileAndLine) {
  TempDir dir("bad");
  write_tiny(dir.path());
  write_file(dir.path() / "edges.tsv", "0\t1\n1\t7\n");
  std::string msg = load_error(dir.path());
  EXPECT_NE(msg.find("edges.tsv:2"), std::string::npos) << msg;

  write_tiny(dir.path());
  write_file(dir.path() / "features.tsv", "1\t0\n0.5\n0\t3\n");
  msg = load_error(dir.path());
  EXPECT_NE(msg.find("features.tsv:2"), std::string::npos) << msg;

  write_tiny(dir.path());
  write_file(dir.path() / "features.tsv", "1\t0\n0.5\t-2\n0\t3\n");
  EXPECT_NE(load_error(dir.path()).find("features.tsv:2"), std::string::npos);

  write_tiny(dir.path());
  write_file(dir.path() / "labels.tsv", "0\n1\n2\n");
  msg = load_error(dir.path());
  EXPECT_NE(msg.find("labels.tsv:3"), std::string::npos) << msg;

  write_tiny(dir.path());
  write_file(dir.path() / "labels.tsv", "0\nx\n1\n");
  EXPECT_NE(load_error(dir.path()).find("labels.tsv:2"), std::string::npos);

  write_tiny(dir.path());
  write_file(dir.path() / "splits.tsv", "train\nval\nmaybe\n");
  msg = load_error(dir.path());
  EXPECT_NE(msg.find("splits.tsv:3"), std::string::npos) << msg;

  write_file(dir.path() / "splits.tsv", "train\nval\n");
  EXPECT_NE(load_error(dir.path()).find("splits.tsv"), std::string::npos);

  EXPECT_FALSE(load_error(dir.path() / "missing").empty());
}

TEST(LoadDataset, RoundTripsThroughWriter) {
  TempDir dir("roundtrip");
  Dataset ds = synth(60, 3, 0.5, 1);
  prepare_splits(ds, SplitMode::Fractional, 3);
  write_dataset(dir.path(), ds);
  const Dataset back = load_dataset(dir.path());
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(edge_endpoints(back.graph), edge_endpoints(ds.graph));
  EXPECT_EQ(back.train_mask, ds.train_mask);
  EXPECT_EQ(back.val_mask, ds.val_mask);
  EXPECT_EQ(back.test_mask, ds.test_mask);
}

TEST(Splits, PlanetoidOnCoraSizedGraph) {
  Dataset ds = synth(2708, 7, 0.8, 2, 10);
  ds.name = "Cora";
  prepare_splits(ds, SplitMode::Auto, 0);
  EXPECT_EQ(mask_count(ds.train_mask), 140u);
  EXPECT_EQ(mask_count(ds.val_mask), 500u);
  EXPECT_EQ(mask_count(ds.test_mask), 1000u);
  EXPECT_TRUE(disjoint(ds));
  std::vector<int> per_class(7, 0);
  for (std::size_t i = 0; i < ds.num_nodes(); ++i)
    if (ds.train_mask[i]) ++per_class[static_cast<std::size_t>(ds.labels[i])];
  for (int c : per_class) EXPECT_EQ(c, 20);
}

TEST(Splits, FractionalIsStratifiedSixtyTwentyTwenty) {
  Dataset ds = synth(1000, 5, 0.5, 3);
  prepare_splits(ds, SplitMode::Auto, 1);
  EXPECT_NEAR(static_cast<double>(mask_count(ds.train_mask)), 600.0, 1.0);
  EXPECT_NEAR(static_cast<double>(mask_count(ds.val_mask)), 200.0, 1.0);
  EXPECT_EQ(mask_count(ds.train_mask) + mask_count(ds.val_mask) + mask_count(ds.test_mask), 1000u);
  EXPECT_TRUE(disjoint(ds));
  for (int c = 0; c < 5; ++c) {
    std::size_t members = 0, train = 0;
    for (std::size_t i = 0; i < ds.num_nodes(); ++i)
      if (ds.labels[i] == c) ++members, train += ds.train_mask[i];
    EXPECT_NEAR(static_cast<double>(train), 0.6 * static_cast<double>(members), 1.0);
  }
}

TEST(Splits, DependOnlyOnSeed) {
  Dataset a = synth(300, 3, 0.5, 4), b = a, c = a;
  prepare_splits(a, SplitMode::Fractional, 9);
  prepare_splits(b, SplitMode::Fractional, 9);
  prepare_splits(c, SplitMode::Fractional, 10);
  EXPECT_EQ(a.train_mask, b.train_mask);
  EXPECT_EQ(a.test_mask, b.test_mask);
  EXPECT_NE(a.train_mask, c.train_mask);
}

TEST(Splits, ModesAndErrors) {
  Dataset ds = synth(100, 2, 0.5, 5);
  EXPECT_THROW(prepare_splits(ds, SplitMode::File, 0), ConfigError);
  EXPECT_THROW(prepare_splits(ds, SplitMode::Planetoid, 0), ConfigError);
  prepare_splits(ds, SplitMode::Fractional, 0);
  const Mask kept = ds.train_mask;
  prepare_splits(ds, SplitMode::Auto, 42);
  EXPECT_EQ(ds.train_mask, kept);
  EXPECT_EQ(split_mode_from_string("planetoid"), SplitMode::Planetoid);
  EXPECT_THROW(split_mode_from_string("random"), ConfigError);
  EXPECT_TRUE(is_citation_benchmark("PubMed"));
  EXPECT_FALSE(is_citation_benchmark("chameleon"));
}

TEST(Synth, HomophilyMatchesTarget) {
  for (double h : {0.1, 0.5, 0.9}) {
    const Dataset ds = synth(2000, 5, h, 6);
    EXPECT_NEAR(edge_homophily(ds.graph, ds.labels), h, 0.03) << h;
  }
}

TEST(Synth, ShapeDegreeAndDeterminism) {
  const Dataset a = synth(2000, 5, 0.3, 7, 200), b = synth(2000, 5, 0.3, 7, 200);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(edge_endpoints(a.graph), edge_endpoints(b.graph));
  EXPECT_EQ(a.feature_dim(), 200u);
  const double mean_degree = 2.0 * static_cast<double>(a.graph.undirected_edge_count()) / 2000.0;
  EXPECT_NEAR(mean_degree, 10.0, 0.5);
  std::vector<int> counts(5, 0);
  for (int y : a.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) EXPECT_EQ(c, 400);
  for (std::size_t i = 0; i < 2000; ++i) {
    double row = 0.0;
    for (double v : a.features.row(i)) row += v;
    EXPECT_EQ(row, 30.0);
  }
  EXPECT_THROW(synth(10, 3, 1.5, 0), ConfigError);
}

TEST(Splits, MasksAreDisjointAcrossSeeds) {
  const Dataset base = small_dataset(120, 0.5, 3, 4);
  for (SplitMode mode : {SplitMode::Fractional, SplitMode::Planetoid}) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Dataset ds = base;
      if (mode == SplitMode::Planetoid) {
        Rng rng(seed);
        SplitPolicy p = SplitPolicy::planetoid();
        p.val_count = 15;
        p.test_count = 20;
        const auto s = make_splits(ds, p, rng);
        ds.train_mask = s.train;
        ds.val_mask = s.val;
        ds.test_mask = s.test;
      } else {
        prepare_splits(ds, mode, seed);
      }
      EXPECT_NO_THROW(check_splits(ds)) << seed;
    }
  }
}
