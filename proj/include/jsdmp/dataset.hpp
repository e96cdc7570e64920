#pragma once

// On-disk dataset directory:
//   manifest.tsv  one line "n<TAB>D<TAB>C"
//   edges.tsv     "u<TAB>v" per line, 0-indexed
//   features.tsv  line i holds the D non-negative feature values of node i
//   labels.tsv    line i holds the integer class of node i
//   splits.tsv    optional; line i is one of train|val|test|none

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "jsdmp/error.hpp"
#include "jsdmp/graph.hpp"
#include "jsdmp/matrix.hpp"

namespace jsdmp {

using Mask = std::vector<std::uint8_t>;

struct Dataset {
  std::string name;
  Graph graph;
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Mask train_mask;
  Mask val_mask;
  Mask test_mask;

  std::size_t num_nodes() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }
  bool has_splits() const noexcept { return !train_mask.empty(); }
};

inline std::size_t mask_count(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), std::uint8_t{1}));
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(std::string_view tok, const std::string& where) {
  T v{};
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || tok.empty()) {
    throw LoadError(where + ": cannot parse '" + std::string(tok) + "' as a number");
  }
  return v;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw LoadError("cannot open " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  while (!lines.empty() && trim_cr(lines.back()).empty()) lines.pop_back();
  return lines;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Read one split tag per node ("train", "val", "test" or "none") into the
/// masks of `ds`.
inline void read_split_file(const std::filesystem::path& path, Dataset& ds) {
  const std::size_t n = ds.num_nodes();
  const auto lines = detail::read_lines(path);
  if (lines.size() != n) {
    throw LoadError(path.string() + ": " + std::to_string(lines.size()) + " rows but the dataset has n = " +
                    std::to_string(n));
  }
  Mask train(n, 0), val(n, 0), test(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tag = detail::trim_cr(lines[i]);
    if (tag == "train") train[i] = 1;
    else if (tag == "val") val[i] = 1;
    else if (tag == "test") test[i] = 1;
    else if (tag != "none") {
      throw LoadError(path.string() + ":" + std::to_string(i + 1) + ": unknown split tag '" + std::string(tag) + "'");
    }
  }
  ds.train_mask = std::move(train);
  ds.val_mask = std::move(val);
  ds.test_mask = std::move(test);
}

inline void write_split_file(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw LoadError("cannot write " + path.string());
  for (std::size_t i = 0; i < ds.num_nodes(); ++i) {
    os << (ds.train_mask[i] ? "train" : ds.val_mask[i] ? "val" : ds.test_mask[i] ? "test" : "none") << '\n';
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LoadError("dataset directory " + dir.string() + " does not exist");

  const auto manifest_path = dir / "manifest.tsv";
  const auto manifest = detail::read_lines(manifest_path);
  if (manifest.size() != 1) throw LoadError(manifest_path.string() + ": expected a single line n<TAB>D<TAB>C");
  const auto head = detail::split_tabs(detail::trim_cr(manifest[0]));
  if (head.size() != 3) throw LoadError(manifest_path.string() + ":1: expected 3 fields");
  const std::string mwhere = manifest_path.string() + ":1";
  const auto n = detail::parse_number<std::size_t>(head[0], mwhere);
  const auto d = detail::parse_number<std::size_t>(head[1], mwhere);
  const auto c = detail::parse_number<std::size_t>(head[2], mwhere);
  if (n == 0 || d == 0 || c == 0) throw LoadError(mwhere + ": n, D and C must be positive");

  Dataset ds;
  ds.name = fs::absolute(dir).lexically_normal().filename().string();
  if (ds.name.empty()) ds.name = fs::absolute(dir).lexically_normal().parent_path().filename().string();
  ds.num_classes = c;

  // edges
  const auto edge_path = dir / "edges.tsv";
  const auto edge_lines = detail::read_lines(edge_path);
  std::vector<Edge> edges;
  edges.reserve(edge_lines.size());
  for (std::size_t k = 0; k < edge_lines.size(); ++k) {
    const std::string where = edge_path.string() + ":" + std::to_string(k + 1);
    const auto toks = detail::split_tabs(detail::trim_cr(edge_lines[k]));
    if (toks.size() != 2) throw LoadError(where + ": expected u<TAB>v");
    const auto u = detail::parse_number<std::size_t>(toks[0], where);
    const auto v = detail::parse_number<std::size_t>(toks[1], where);
    if (u >= n || v >= n) {
      throw LoadError(where + ": node index " + std::to_string(std::max(u, v)) + " >= n = " + std::to_string(n));
    }
    edges.emplace_back(u, v);
  }
  ds.graph = build_graph(n, edges);

  // features
  const auto feat_path = dir / "features.tsv";
  const auto feat_lines = detail::read_lines(feat_path);
  if (feat_lines.size() != n) {
    throw LoadError(feat_path.string() + ": " + std::to_string(feat_lines.size()) + " rows but manifest declares n = " +
                    std::to_string(n));
  }
  ds.features = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string where = feat_path.string() + ":" + std::to_string(i + 1);
    const auto toks = detail::split_tabs(detail::trim_cr(feat_lines[i]));
    if (toks.size() != d) {
      throw LoadError(where + ": " + std::to_string(toks.size()) + " values but manifest declares D = " +
                      std::to_string(d));
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double v = detail::parse_number<double>(toks[j], where);
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw LoadError(where + ": feature " + std::to_string(j) + " must be a finite non-negative frequency");
      }
      ds.features(i, j) = v;
    }
  }

  // labels
  const auto label_path = dir / "labels.tsv";
  const auto label_lines = detail::read_lines(label_path);
  if (label_lines.size() != n) {
    throw LoadError(label_path.string() + ": " + std::to_string(label_lines.size()) +
                    " labels but manifest declares n = " + std::to_string(n));
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string where = label_path.string() + ":" + std::to_string(i + 1);
    const auto y = detail::parse_number<long long>(detail::trim_cr(label_lines[i]), where);
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw LoadError(where + ": label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    ds.labels[i] = static_cast<int>(y);
  }

  // optional splits
  const auto split_path = dir / "splits.tsv";
  if (fs::exists(split_path)) read_split_file(split_path, ds);
  return ds;
}

/// Write `ds` in the directory format. Raw edges are written as the unique
/// undirected non-loop pairs (u < v) of the graph.
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds, bool include_splits = true) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::size_t n = ds.num_nodes();
  {
    std::ofstream os(dir / "manifest.tsv");
    os << n << '\t' << ds.feature_dim() << '\t' << ds.num_classes << '\n';
  }
  {
    std::ofstream os(dir / "edges.tsv");
    for (std::size_t e = 0; e < ds.graph.num_edges(); ++e) {
      const auto u = ds.graph.src()[e], v = ds.graph.dst()[e];
      if (u < v) os << u << '\t' << v << '\n';
    }
  }
  {
    std::ofstream os(dir / "features.tsv");
    for (std::size_t i = 0; i < n; ++i) {
      auto row = ds.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (j) os << '\t';
        os << detail::format_double(row[j]);
      }
      os << '\n';
    }
  }
  {
    std::ofstream os(dir / "labels.tsv");
    for (int y : ds.labels) os << y << '\n';
  }
  if (include_splits && ds.has_splits()) write_split_file(dir / "splits.tsv", ds);
}

// ---------------------------------------------------------------------------
// Splits

struct SplitPolicy {
  enum class Kind { Planetoid, Fractional };
  Kind kind = Kind::Planetoid;
  /// Planetoid: labelled nodes per class, used when train_total == 0.
  std::size_t train_per_class = 20;
  /// Planetoid: total labelled nodes drawn at random regardless of class.
  std::size_t train_total = 0;
  std::size_t val_count = 500;
  std::size_t test_count = 1000;
  double train_fraction = 0.6;
  double val_fraction = 0.2;

  static SplitPolicy planetoid() { return {}; }
  static SplitPolicy fractional() {
    SplitPolicy p;
    p.kind = Kind::Fractional;
    return p;
  }
};

struct Splits {
  Mask train, val, test;
};

template <class Rng>
Splits make_splits(const Dataset& ds, const SplitPolicy& policy, Rng& rng) {
  const std::size_t n = ds.num_nodes();
  Splits s{Mask(n, 0), Mask(n, 0), Mask(n, 0)};
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

  if (policy.kind == SplitPolicy::Kind::Planetoid) {
    std::vector<std::size_t> rest;
    if (policy.train_total > 0) {
      if (policy.train_total > n) throw ConfigError("train_total exceeds node count");
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      for (std::size_t k = 0; k < n; ++k) {
        if (k < policy.train_total) s.train[all[k]] = 1;
        else rest.push_back(all[k]);
      }
    } else {
      for (std::size_t c = 0; c < by_class.size(); ++c) {
        const auto& members = by_class[c];
        if (members.size() < policy.train_per_class) {
          throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " nodes, fewer than " + std::to_string(policy.train_per_class) + " training labels");
        }
        for (std::size_t k = 0; k < members.size(); ++k) {
          if (k < policy.train_per_class) s.train[members[k]] = 1;
        }
      }
      for (std::size_t i = 0; i < n; ++i)
        if (!s.train[i]) rest.push_back(i);
      std::shuffle(rest.begin(), rest.end(), rng);
    }
    if (policy.val_count + policy.test_count > rest.size()) {
      throw ConfigError("cannot draw " + std::to_string(policy.val_count) + " validation and " +
                        std::to_string(policy.test_count) + " test nodes from " + std::to_string(rest.size()) +
                        " unlabelled nodes");
    }
    for (std::size_t k = 0; k < policy.val_count; ++k) s.val[rest[k]] = 1;
    for (std::size_t k = 0; k < policy.test_count; ++k) s.test[rest[policy.val_count + k]] = 1;
  } else {
    if (!(policy.train_fraction > 0.0 && policy.val_fraction >= 0.0 &&
          policy.train_fraction + policy.val_fraction < 1.0)) {
      throw ConfigError("fractional split needs train > 0, val >= 0 and train + val < 1");
    }
    for (const auto& members : by_class) {
      const auto m = static_cast<double>(members.size());
      const auto n_train = static_cast<std::size_t>(std::llround(policy.train_fraction * m));
      const auto n_val = static_cast<std::size_t>(std::llround(policy.val_fraction * m));
      for (std::size_t k = 0; k < members.size(); ++k) {
        if (k < n_train) s.train[members[k]] = 1;
        else if (k < n_train + n_val) s.val[members[k]] = 1;
        else s.test[members[k]] = 1;
      }
    }
  }
  if (mask_count(s.train) == 0 || mask_count(s.test) == 0) {
    throw ConfigError("split policy produced an empty train or test set");
  }
  return s;
}

template <class Rng>
void apply_splits(Dataset& ds, const SplitPolicy& policy, Rng& rng) {
  auto s = make_splits(ds, policy, rng);
  ds.train_mask = std::move(s.train);
  ds.val_mask = std::move(s.val);
  ds.test_mask = std::move(s.test);
}

enum class SplitMode { Auto, File, Planetoid, Fractional };

inline SplitMode split_mode_from_string(std::string_view s) {
  if (s == "auto") return SplitMode::Auto;
  if (s == "file") return SplitMode::File;
  if (s == "planetoid") return SplitMode::Planetoid;
  if (s == "fractional") return SplitMode::Fractional;
  throw ConfigError("unknown split mode '" + std::string(s) + "' (expected auto|file|planetoid|fractional)");
}

/// Citation benchmarks use the 20-per-class / 500 / 1000 protocol; every
/// other dataset gets the stratified 60/20/20 split.
inline bool is_citation_benchmark(std::string_view name) {
  std::string lower(name);
  for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return lower == "cora" || lower == "citeseer" || lower == "pubmed";
}

/// Fill the masks of `ds` according to `mode`. Auto keeps a split read from
/// disk and otherwise picks by dataset name. Sampled splits depend only on
/// `seed`.
inline void prepare_splits(Dataset& ds, SplitMode mode, std::uint64_t seed) {
  if (mode == SplitMode::Auto) {
    if (ds.has_splits()) return;
    mode = is_citation_benchmark(ds.name) ? SplitMode::Planetoid : SplitMode::Fractional;
  }
  if (mode == SplitMode::File) {
    if (!ds.has_splits()) throw ConfigError("dataset '" + ds.name + "' has no splits.tsv");
    return;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5E11u};
  std::mt19937_64 rng(seq);
  apply_splits(ds, mode == SplitMode::Planetoid ? SplitPolicy::planetoid() : SplitPolicy::fractional(), rng);
}

// ---------------------------------------------------------------------------
// Synthetic graphs with controlled homophily

struct SynthConfig {
  std::size_t num_nodes = 2000;
  std::size_t num_classes = 5;
  std::size_t feature_dim = 200;
  double homophily = 0.5;
  /// Target mean degree (excluding self-loops) of the symmetrised graph.
  double avg_degree = 10.0;
  /// Tokens drawn per node for its word-frequency row.
  std::size_t words_per_node = 30;
  /// Probability that a token is drawn from the shared background instead of
  /// the node's class profile.
  double feature_noise = 0.75;
};

/// Planted-partition generator. Labels are balanced over C. Each node
/// proposes avg_degree / 2 neighbours (so the symmetrised mean degree is about
/// avg_degree); each proposal is same-class with probability h and otherwise
/// uniform over the other classes. Features are token counts from a
/// class-specific multinomial mixed with a shared background.
template <class Rng>
Dataset synthesize_graph(const SynthConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.num_nodes, c = cfg.num_classes, d = cfg.feature_dim;
  if (n < 2 || c == 0 || d == 0) throw ConfigError("synthetic graph needs n >= 2, C >= 1, D >= 1");
  if (!(cfg.homophily >= 0.0 && cfg.homophily <= 1.0)) throw ConfigError("homophily must lie in [0, 1]");
  if (!(cfg.avg_degree > 0.0)) throw ConfigError("average degree must be positive");
  if (!(cfg.feature_noise >= 0.0 && cfg.feature_noise <= 1.0)) throw ConfigError("feature noise must lie in [0, 1]");
  if (cfg.words_per_node == 0) throw ConfigError("words per node must be positive");
  if (c == 1 && cfg.homophily < 1.0) throw ConfigError("a single class cannot produce cross-class edges");
  if (n < 2 * c) throw ConfigError("need at least two nodes per class");

  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = c;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % c);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

  std::vector<std::vector<std::size_t>> members(c);
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double per_node = cfg.avg_degree / 2.0;
  const auto base = static_cast<std::size_t>(std::floor(per_node));
  const double frac = per_node - static_cast<double>(base);

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(std::ceil(per_node)) * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto yi = static_cast<std::size_t>(ds.labels[i]);
    const std::size_t draws = base + (unit(rng) < frac ? 1 : 0);
    for (std::size_t k = 0; k < draws; ++k) {
      std::size_t j;
      if (unit(rng) < cfg.homophily) {
        const auto& same = members[yi];
        std::uniform_int_distribution<std::size_t> pick(0, same.size() - 2);
        j = same[pick(rng)];
        if (j == i) j = same.back();
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, n - members[yi].size() - 1);
        std::size_t r = pick(rng);
        std::size_t cls = 0;
        for (;; ++cls) {
          if (cls == yi) continue;
          if (r < members[cls].size()) break;
          r -= members[cls].size();
        }
        j = members[cls][r];
      }
      edges.emplace_back(i, j);
    }
  }
  ds.graph = build_graph(n, edges);

  // Class profiles: a Gamma(0.5) draw per word, normalised.
  std::gamma_distribution<double> gamma(0.5, 1.0);
  std::vector<std::discrete_distribution<std::size_t>> profile;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> w(d);
    for (auto& v : w) v = gamma(rng) + 1e-9;
    profile.emplace_back(w.begin(), w.end());
  }
  std::uniform_int_distribution<std::size_t> background(0, d - 1);
  ds.features = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto& prof = profile[static_cast<std::size_t>(ds.labels[i])];
    for (std::size_t t = 0; t < cfg.words_per_node; ++t) {
      const std::size_t w = unit(rng) < cfg.feature_noise ? background(rng) : prof(rng);
      ds.features(i, w) += 1.0;
    }
  }
  return ds;
}

}  // namespace jsdmp
