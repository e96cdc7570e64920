#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsdmp/autodiff.hpp"
#include "jsdmp/error.hpp"
#include "jsdmp/graph.hpp"
#include "jsdmp/jsdmp_layer.hpp"

namespace jsdmp {

using Rng = std::mt19937_64;

enum class ModelKind { DmpGcn, DmpPrg, Gcn };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::DmpGcn: return "dmpgcn";
    case ModelKind::DmpPrg: return "dmpprg";
    case ModelKind::Gcn: return "gcn";
  }
  return "dmpgcn";
}

inline ModelKind model_kind_from_string(std::string_view s) {
  if (s == "dmpgcn") return ModelKind::DmpGcn;
  if (s == "dmpprg") return ModelKind::DmpPrg;
  if (s == "gcn") return ModelKind::Gcn;
  throw ConfigError("unknown model '" + std::string(s) + "' (expected dmpgcn|dmpprg|gcn)");
}

/// Everything needed to rebuild a model's parameter layout.
struct ModelSpec {
  ModelKind kind = ModelKind::DmpGcn;
  std::size_t num_nodes = 0;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  /// Width of the latent positions X; 0 means "same as num_classes".
  std::size_t latent_dim = 0;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  double dropout = 0.75;
  std::size_t propagation_steps = 10;
  double ppr_alpha = 0.1;
  bool recompute_weights_per_step = false;
  /// Divide each feature row by its sum before the first layer.
  bool row_normalize_inputs = true;
  Ablation ablation = Ablation::Full;
  DivergenceMode divergence = DivergenceMode::Normalized;

  std::size_t latent_width() const { return latent_dim == 0 ? num_classes : latent_dim; }

  /// Defaults per architecture: hidden 32 / dropout 0.75 for DMPGCN,
  /// hidden 64 / dropout 0.5 for DMPPRG.
  static ModelSpec defaults(ModelKind kind) {
    ModelSpec s;
    s.kind = kind;
    if (kind == ModelKind::DmpPrg) {
      s.hidden = 64;
      s.dropout = 0.5;
    }
    if (kind == ModelKind::Gcn) s.ablation = Ablation::None;
    return s;
  }

  void validate() const {
    if (num_nodes == 0 || input_dim == 0 || num_classes == 0) {
      throw ConfigError("model needs positive node count, input dimension and class count");
    }
    if (kind != ModelKind::DmpPrg && layers == 0) throw ConfigError("layer count must be >= 1");
    if (hidden == 0) throw ConfigError("hidden width must be >= 1");
    if (latent_width() == 0) throw ConfigError("latent dimension C must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (kind == ModelKind::Gcn && ablation != Ablation::None) {
      throw ConfigError("the gcn model kind is the 'none' ablation");
    }
  }

  nlohmann::json to_json() const {
    return {{"kind", to_string(kind)},
            {"num_nodes", num_nodes},
            {"input_dim", input_dim},
            {"num_classes", num_classes},
            {"latent_dim", latent_dim},
            {"hidden", hidden},
            {"layers", layers},
            {"dropout", dropout},
            {"propagation_steps", propagation_steps},
            {"ppr_alpha", ppr_alpha},
            {"recompute_weights_per_step", recompute_weights_per_step},
            {"row_normalize_inputs", row_normalize_inputs},
            {"ablation", to_string(ablation)},
            {"divergence", to_string(divergence)}};
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.kind = model_kind_from_string(j.at("kind").get<std::string>());
    s.num_nodes = j.at("num_nodes").get<std::size_t>();
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::size_t>();
    s.layers = j.at("layers").get<std::size_t>();
    s.dropout = j.at("dropout").get<double>();
    s.propagation_steps = j.at("propagation_steps").get<std::size_t>();
    s.ppr_alpha = j.at("ppr_alpha").get<double>();
    s.recompute_weights_per_step = j.at("recompute_weights_per_step").get<bool>();
    s.row_normalize_inputs = j.at("row_normalize_inputs").get<bool>();
    s.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    s.divergence = divergence_mode_from_string(j.at("divergence").get<std::string>());
    return s;
  }
};

/// One-hot rows with the hot column drawn uniformly from [0, C).
template <class R>
Matrix init_latent_positions(std::size_t n, std::size_t c, R& rng) {
  if (c == 0) throw ConfigError("latent dimension C must be >= 1");
  Matrix x(n, c);
  std::uniform_int_distribution<std::size_t> pick(0, c - 1);
  for (std::size_t i = 0; i < n; ++i) x(i, pick(rng)) = 1.0;
  return x;
}

struct ForwardResult {
  Tensor logits;
  /// The latent-position leaf, when it is a trainable part of the model.
  std::optional<Tensor> latent;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual ForwardResult forward(Tape& tape, const Matrix& features, const Graph& g, bool training,
                                Rng& rng) = 0;

  /// All parameters, trainable or not, in a fixed order.
  virtual std::vector<Parameter*> all_parameters() = 0;

  const ModelSpec& spec() const noexcept { return spec_; }

  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out;
    for (auto* p : all_parameters())
      if (p->trainable) out.push_back(p);
    return out;
  }

  Parameter* find_parameter(std::string_view name) {
    for (auto* p : all_parameters())
      if (p->name == name) return p;
    return nullptr;
  }

  /// Value snapshot of every parameter (for best-epoch restore).
  std::vector<Matrix> snapshot() {
    std::vector<Matrix> out;
    for (auto* p : all_parameters()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Matrix>& values) {
    auto ps = all_parameters();
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = values[k];
  }

 protected:
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}

  void check_inputs(const Matrix& features, const Graph& g) const {
    if (features.cols() != spec_.input_dim) {
      throw ConfigError("model expects " + std::to_string(spec_.input_dim) + " input features, got " +
                        std::to_string(features.cols()));
    }
    if (features.rows() != g.num_nodes() || g.num_nodes() != spec_.num_nodes) {
      throw ConfigError("model built for " + std::to_string(spec_.num_nodes) + " nodes, got features " +
                        features.shape_string() + " on a " + std::to_string(g.num_nodes()) + "-node graph");
    }
  }

  // Freeze parameters that the ablation never reads.
  static void apply_ablation(JsdmpLayerParams& p, Ablation a) {
    const bool att = a == Ablation::Full || a == Ablation::ContextOnly;
    const bool latent = a == Ablation::Full || a == Ablation::StructureOnly;
    p.attention.trainable = att;
    p.w_x.trainable = latent;
    p.beta_raw.trainable = a == Ablation::Full;
    p.gamma.trainable = a != Ablation::None;
  }

  ModelSpec spec_;
};

/// Stacked divergence-weighted graph convolutions; `gcn` kind is the
/// ablation with all edge weights fixed to 1.
class DmpGcnModel final : public Model {
 public:
  DmpGcnModel(ModelSpec spec, Rng& rng) : Model(std::move(spec)) {
    spec_.validate();
    const std::size_t c = spec_.latent_width();
    for (std::size_t k = 0; k < spec_.layers; ++k) {
      const std::size_t in = k == 0 ? spec_.input_dim : spec_.hidden;
      const std::size_t out = k + 1 == spec_.layers ? spec_.num_classes : spec_.hidden;
      layers_.push_back(JsdmpLayerParams::make("layer" + std::to_string(k), in, out, c, rng));
      apply_ablation(layers_.back(), spec_.ablation);
    }
    latent_ = Parameter("x_base", init_latent_positions(spec_.num_nodes, c, rng),
                        spec_.ablation != Ablation::None);
  }

  std::vector<JsdmpLayerParams>& layers() noexcept { return layers_; }
  Parameter& latent() noexcept { return latent_; }

  ForwardResult forward(Tape& tape, const Matrix& features, const Graph& g, bool training, Rng& rng) override {
    check_inputs(features, g);
    const bool uses_latent = spec_.ablation == Ablation::Full || spec_.ablation == Ablation::StructureOnly;
    std::optional<Tensor> x_base;
    if (latent_.trainable) x_base = tape.parameter(latent_);

    Tensor h = tape.constant(features);
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      auto& p = layers_[k];
      h = dropout(h, spec_.dropout, training, rng);
      const Tensor f = matmul(h, tape.parameter(p.w_f));
      Tensor x;
      if (uses_latent) x = matmul(*x_base, tape.parameter(p.w_x));
      const EdgeWeights w = compute_edge_weights(f, x, g, tape, p, spec_.ablation, spec_.divergence);
      h = propagate(w.normalized, f, g);
      if (k + 1 < layers_.size()) h = relu(h);
    }
    return {h, x_base};
  }

  std::vector<Parameter*> all_parameters() override {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
      for (auto* p : l.all()) out.push_back(p);
    out.push_back(&latent_);
    return out;
  }

 private:
  std::vector<JsdmpLayerParams> layers_;
  Parameter latent_;
};

/// MLP followed by K steps of divergence-weighted propagation, fused with
/// learnable per-depth coefficients lambda_0..lambda_K.
class DmpPrgModel final : public Model {
 public:
  DmpPrgModel(ModelSpec spec, Rng& rng) : Model(std::move(spec)) {
    spec_.validate();
    const std::size_t c = spec_.latent_width();
    w1_ = Parameter("mlp.w1", glorot_uniform(spec_.input_dim, spec_.hidden, rng));
    b1_ = Parameter("mlp.b1", Matrix(1, spec_.hidden));
    w2_ = Parameter("mlp.w2", glorot_uniform(spec_.hidden, spec_.num_classes, rng));
    b2_ = Parameter("mlp.b2", Matrix(1, spec_.num_classes));
    edge_ = JsdmpLayerParams::make("edge", spec_.num_classes, spec_.num_classes, c, rng);
    apply_ablation(edge_, spec_.ablation);
    if (spec_.propagation_steps == 0) edge_.w_f.trainable = false;

    const std::size_t k_max = spec_.propagation_steps;
    Matrix lambda(k_max + 1, 1);
    const double a = spec_.ppr_alpha;
    for (std::size_t k = 0; k < k_max; ++k) lambda[k] = a * std::pow(1.0 - a, static_cast<double>(k));
    lambda[k_max] = std::pow(1.0 - a, static_cast<double>(k_max));
    lambda_ = Parameter("lambda", std::move(lambda));
    latent_ = Parameter("x_base", init_latent_positions(spec_.num_nodes, c, rng),
                        spec_.ablation != Ablation::None);
    if (k_max == 0) std::clog << "note: dmpprg with K = 0 reduces to a plain MLP\n";
  }

  JsdmpLayerParams& edge_params() noexcept { return edge_; }
  Parameter& lambda() noexcept { return lambda_; }
  Parameter& latent() noexcept { return latent_; }

  /// F^0 = MLP(features).
  Tensor mlp(Tape& tape, const Matrix& features, bool training, Rng& rng) {
    Tensor h = dropout(tape.constant(features), spec_.dropout, training, rng);
    h = relu(add_bias(matmul(h, tape.parameter(w1_)), tape.parameter(b1_)));
    h = dropout(h, spec_.dropout, training, rng);
    return add_bias(matmul(h, tape.parameter(w2_)), tape.parameter(b2_));
  }

  ForwardResult forward(Tape& tape, const Matrix& features, const Graph& g, bool training, Rng& rng) override {
    check_inputs(features, g);
    std::optional<Tensor> x_base;
    if (latent_.trainable) x_base = tape.parameter(latent_);
    const Tensor h0 = mlp(tape, features, training, rng);
    const Tensor lambda = tape.parameter(lambda_);

    Tensor out = mul_scalar(h0, element(lambda, 0, 0));
    if (spec_.propagation_steps == 0) return {out, x_base};

    const bool uses_latent = spec_.ablation == Ablation::Full || spec_.ablation == Ablation::StructureOnly;
    std::optional<Tensor> w_x;
    if (uses_latent) w_x = tape.parameter(edge_.w_x);
    const Tensor w_f = tape.parameter(edge_.w_f);
    auto weights_from = [&](const Tensor& h) {
      Tensor x;
      if (uses_latent) x = matmul(*x_base, *w_x);
      return compute_edge_weights(matmul(h, w_f), x, g, tape, edge_, spec_.ablation, spec_.divergence);
    };

    EdgeWeights w = weights_from(h0);
    Tensor h = h0;
    for (std::size_t k = 1; k <= spec_.propagation_steps; ++k) {
      if (spec_.recompute_weights_per_step && k > 1) w = weights_from(h);
      h = propagate(w.normalized, h, g);
      out = add(out, mul_scalar(h, element(lambda, k, 0)));
    }
    return {out, x_base};
  }

  std::vector<Parameter*> all_parameters() override {
    std::vector<Parameter*> out{&w1_, &b1_, &w2_, &b2_};
    for (auto* p : edge_.all()) out.push_back(p);
    out.push_back(&lambda_);
    out.push_back(&latent_);
    return out;
  }

 private:
  Parameter w1_, b1_, w2_, b2_;
  JsdmpLayerParams edge_;
  Parameter lambda_;
  Parameter latent_;
};

inline std::unique_ptr<Model> make_model(const ModelSpec& spec, Rng& rng) {
  if (spec.kind == ModelKind::DmpPrg) return std::make_unique<DmpPrgModel>(spec, rng);
  return std::make_unique<DmpGcnModel>(spec, rng);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary layout, little-endian:
//   8 bytes  magic "JSDMPCKP"
//   u32      format version
//   u64      length L of the model spec, then L bytes of JSON
//   u64      parameter count P
//   P times: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64
// A sidecar "<path>.manifest.tsv" lists "name<TAB>rows<TAB>cols" per parameter.

inline constexpr char kCheckpointMagic[8] = {'J', 'S', 'D', 'M', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError("checkpoint truncated while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot open checkpoint '" + path + "' for writing");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  const std::string spec = model.spec().to_json().dump();
  detail::write_le<std::uint64_t>(os, spec.size());
  os.write(spec.data(), static_cast<std::streamsize>(spec.size()));
  const auto params = model.all_parameters();
  detail::write_le<std::uint64_t>(os, params.size());
  std::ofstream manifest(path + ".manifest.tsv");
  for (const auto* p : params) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::write_le<std::uint64_t>(os, p->value.rows());
    detail::write_le<std::uint64_t>(os, p->value.cols());
    for (double v : p->value.values()) detail::write_le<double>(os, v);
    manifest << p->name << '\t' << p->value.rows() << '\t' << p->value.cols() << '\n';
  }
  if (!os) throw LoadError("failed writing checkpoint '" + path + "'");
}

inline std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint '" + path + "'");
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto spec_len = detail::read_le<std::uint64_t>(is, "spec length");
  if (spec_len > (1u << 20)) throw FormatError("implausible model spec length " + std::to_string(spec_len));
  std::string spec_text(spec_len, '\0');
  if (!is.read(spec_text.data(), static_cast<std::streamsize>(spec_len))) {
    throw FormatError("checkpoint truncated inside model spec");
  }
  ModelSpec spec;
  try {
    spec = ModelSpec::from_json(nlohmann::json::parse(spec_text));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt model spec: ") + e.what());
  }
  Rng rng(0);
  auto model = make_model(spec, rng);
  const auto count = detail::read_le<std::uint64_t>(is, "parameter count");
  const auto params = model->all_parameters();
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(params.size()));
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = detail::read_le<std::uint32_t>(is, "parameter name length");
    if (name_len > 4096) throw FormatError("implausible parameter name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("checkpoint truncated in parameter name");
    Parameter* p = model->find_parameter(name);
    if (p == nullptr) throw FormatError("checkpoint parameter '" + name + "' unknown to the model");
    const auto rows = detail::read_le<std::uint64_t>(is, name + " rows");
    const auto cols = detail::read_le<std::uint64_t>(is, name + " cols");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw FormatError("parameter '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " in the checkpoint but " + p->value.shape_string() + " in the model");
    }
    for (auto& v : p->value.values()) v = detail::read_le<double>(is, name + " values");
  }
  return model;
}

}  // namespace jsdmp
