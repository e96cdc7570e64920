// jsdmp: train, evaluate, ablate and gradient-check JSDMP models.
//
// Exit codes: 0 success, 1 verification or training failure, 2 usage error.
// Every error is reported on one stderr line starting with its code.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsdmp/jsdmp.hpp"

namespace fs = std::filesystem;
using namespace jsdmp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// A bare name such as "cora" is looked up under $JSDMP_DATA_DIR when it is
// not itself a directory.
fs::path resolve_dataset(const std::string& arg) {
  const fs::path p(arg);
  if (fs::is_directory(p)) return p;
  if (const char* root = std::getenv("JSDMP_DATA_DIR")) {
    const fs::path alt = fs::path(root) / arg;
    if (fs::is_directory(alt)) return alt;
  }
  return p;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError("cannot write " + path.string());
  os << text;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  for (double x : xs) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(xs.size()));
  return r;
}

struct ModelFlags {
  std::string model = "dmpgcn";
  std::optional<std::size_t> hidden;
  std::optional<double> dropout;
  std::optional<std::size_t> layers;
  std::optional<std::size_t> steps;
  std::optional<std::string> ablation;
  std::string divergence = "normalized";
  bool recompute = false;
  bool raw_features = false;

  void attach(CLI::App& cmd, bool with_model) {
    if (with_model) {
      cmd.add_option("--model", model, "Architecture")
          ->check(CLI::IsMember({"dmpgcn", "dmpprg", "gcn"}))
          ->capture_default_str();
    }
    cmd.add_option("--hidden", hidden, "Hidden width (default 32 for dmpgcn/gcn, 64 for dmpprg)");
    cmd.add_option("--dropout", dropout, "Dropout rate (default 0.75 for dmpgcn/gcn, 0.5 for dmpprg)");
    cmd.add_option("--layers", layers, "Number of propagation layers (dmpgcn/gcn)");
    cmd.add_option("--steps", steps, "Propagation steps K (dmpprg)");
    if (with_model) {
      cmd.add_option("--ablation", ablation, "Edge-weight terms to keep")
          ->check(CLI::IsMember({"full", "context_only", "structure_only", "none"}));
    }
    cmd.add_option("--divergence-mode", divergence, "Jensen-Shannon variant")
        ->check(CLI::IsMember({"normalized", "literal"}))
        ->capture_default_str();
    cmd.add_flag("--recompute-weights", recompute, "dmpprg: recompute edge weights at every step");
    cmd.add_flag("--raw-features", raw_features, "Skip per-row feature normalisation");
  }

  ModelSpec spec() const {
    ModelSpec s = ModelSpec::defaults(model_kind_from_string(model));
    if (hidden) s.hidden = *hidden;
    if (dropout) s.dropout = *dropout;
    if (layers) s.layers = *layers;
    if (steps) s.propagation_steps = *steps;
    if (ablation) s.ablation = ablation_from_string(*ablation);
    s.divergence = divergence_mode_from_string(divergence);
    s.recompute_weights_per_step = recompute;
    s.row_normalize_inputs = !raw_features;
    return s;
  }
};

struct TrainFlags {
  std::string dataset;
  std::string split = "auto";
  std::size_t epochs = 300;
  std::size_t patience = 50;
  double lr = 0.01;
  double weight_decay = 5e-4;

  void attach(CLI::App& cmd) {
    cmd.add_option("--dataset", dataset, "Dataset directory (or a name under $JSDMP_DATA_DIR)")->required();
    cmd.add_option("--split", split, "Split source")
        ->check(CLI::IsMember({"auto", "file", "planetoid", "fractional"}))
        ->capture_default_str();
    cmd.add_option("--epochs", epochs, "Maximum epochs")->capture_default_str();
    cmd.add_option("--patience", patience, "Early-stopping patience on validation accuracy (0 disables)")
        ->capture_default_str();
    cmd.add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    cmd.add_option("--weight-decay", weight_decay, "Decoupled weight decay")->capture_default_str();
  }

  TrainConfig config(const ModelSpec& spec, std::uint64_t seed) const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.patience = patience;
    cfg.learning_rate = lr;
    cfg.weight_decay = weight_decay;
    cfg.seed = seed;
    cfg.model = spec;
    return cfg;
  }
};

Dataset load_with_splits(const std::string& arg, const std::string& split, std::uint64_t seed) {
  Dataset ds = load_dataset(resolve_dataset(arg));
  prepare_splits(ds, split_mode_from_string(split), seed);
  return ds;
}

// ---------------------------------------------------------------------------

struct TrainCmd {
  ModelFlags model;
  TrainFlags train;
  std::uint64_t seed = 0;
  std::size_t runs = 1;
  std::string out;
  std::string json_out;
  std::string checkpoint;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("train", "Train a model and report test ACC/NMI");
    model.attach(*cmd, true);
    train.attach(*cmd);
    cmd->add_option("--seed", seed, "Seed for initialisation, dropout and sampled splits")->capture_default_str();
    cmd->add_option("--runs", runs, "Train with seeds seed, seed+1, ... and report mean +- std")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--out", out, "Write the tab-separated report here");
    cmd->add_option("--json", json_out, "Write the JSON report here");
    cmd->add_option("--checkpoint", checkpoint, "Write the best-epoch parameters here");
    cmd->callback([this] { status = run(); });
  }

  int status = kExitOk;

  int run() {
    std::vector<TrainReport> reports;
    std::vector<double> accs, nmis;
    for (std::size_t r = 0; r < runs; ++r) {
      const std::uint64_t s = seed + r;
      Dataset ds = load_with_splits(train.dataset, train.split, s);
      auto trained = run_training(ds, train.config(model.spec(), s));
      const auto& rep = trained.report;
      std::cout << "seed " << s << "  " << to_string(trained.model->spec().kind) << " on " << ds.name
                << "  epochs " << rep.epochs.size() << " (best " << rep.best_epoch << ")  val ACC "
                << fixed(rep.best_val_acc) << "  test ACC " << fixed(rep.test_acc) << "  test NMI "
                << fixed(rep.test_nmi) << "  " << fixed(rep.wall_seconds, 1) << "s\n";
      if (!checkpoint.empty()) {
        const fs::path path = runs == 1 ? fs::path(checkpoint) : fs::path(checkpoint + ".seed" + std::to_string(s));
        save_checkpoint(path, *trained.model);
        write_split_file(path.string() + ".splits.tsv", ds);
      }
      accs.push_back(rep.test_acc);
      nmis.push_back(rep.test_nmi);
      reports.push_back(rep);
    }
    if (runs > 1) {
      const auto a = mean_std(accs), n = mean_std(nmis);
      std::cout << "mean over " << runs << " runs  test ACC " << fixed(a.mean) << " +- " << fixed(a.std)
                << "  test NMI " << fixed(n.mean) << " +- " << fixed(n.std) << '\n';
    }
    if (!out.empty()) {
      std::string text;
      if (runs == 1) {
        text = reports.front().to_text();
      } else {
        const auto a = mean_std(accs), n = mean_std(nmis);
        text += "runs\t" + std::to_string(runs) + '\n';
        text += "mean_test_acc\t" + detail::format_double(a.mean) + '\n';
        text += "std_test_acc\t" + detail::format_double(a.std) + '\n';
        text += "mean_test_nmi\t" + detail::format_double(n.mean) + '\n';
        text += "std_test_nmi\t" + detail::format_double(n.std) + '\n';
        for (std::size_t r = 0; r < runs; ++r) {
          std::istringstream lines(reports[r].to_text());
          for (std::string line; std::getline(lines, line);) {
            text += "run." + std::to_string(seed + r) + '.' + line + '\n';
          }
        }
      }
      write_file(out, text);
    }
    if (!json_out.empty()) {
      nlohmann::json j;
      if (runs == 1) {
        j = reports.front().to_json();
      } else {
        j["runs"] = nlohmann::json::array();
        for (const auto& r : reports) j["runs"].push_back(r.to_json());
        j["mean_test_acc"] = mean_std(accs).mean;
        j["std_test_acc"] = mean_std(accs).std;
        j["mean_test_nmi"] = mean_std(nmis).mean;
        j["std_test_nmi"] = mean_std(nmis).std;
      }
      write_file(json_out, j.dump(2) + '\n');
    }
    return kExitOk;
  }
};

struct EvalCmd {
  std::string dataset;
  std::string checkpoint;
  std::string split = "test";
  std::string split_file;
  int status = kExitOk;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    cmd->add_option("--dataset", dataset, "Dataset directory (or a name under $JSDMP_DATA_DIR)")->required();
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
    cmd->add_option("--split", split, "Which mask to score")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();
    cmd->add_option("--split-file", split_file,
                    "Split tags to use (default: <checkpoint>.splits.tsv, then the dataset's splits.tsv)");
    cmd->callback([this] { status = run(); });
  }

  int run() {
    Dataset ds = load_dataset(resolve_dataset(dataset));
    fs::path tags = split_file;
    if (tags.empty() && fs::exists(checkpoint + ".splits.tsv")) tags = checkpoint + ".splits.tsv";
    if (!tags.empty()) read_split_file(tags, ds);
    if (!ds.has_splits()) throw ConfigError("no split available: pass --split-file or keep <checkpoint>.splits.tsv");

    auto model = load_checkpoint(checkpoint);
    const auto& spec = model->spec();
    if (spec.num_nodes != ds.num_nodes() || spec.input_dim != ds.feature_dim() ||
        spec.num_classes != ds.num_classes) {
      throw ConfigError("checkpoint expects n=" + std::to_string(spec.num_nodes) + " D=" +
                        std::to_string(spec.input_dim) + " C=" + std::to_string(spec.num_classes) +
                        ", dataset has n=" + std::to_string(ds.num_nodes()) + " D=" +
                        std::to_string(ds.feature_dim()) + " C=" + std::to_string(ds.num_classes));
    }
    const Mask& mask = split == "train" ? ds.train_mask : split == "val" ? ds.val_mask : ds.test_mask;
    const auto ev = evaluate(*model, model_inputs(ds, spec), ds, mask);
    std::cout << split << " ACC " << detail::format_double(ev.acc) << "  NMI " << detail::format_double(ev.nmi)
              << "  (" << mask_count(mask) << " nodes)\n";
    return kExitOk;
  }
};

struct AblateCmd {
  ModelFlags model;
  TrainFlags train;
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
  std::size_t jobs = 1;
  std::string out;
  int status = kExitOk;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("ablate", "Train DMPGCN under every ablation mode and tabulate ACC");
    model.attach(*cmd, false);
    train.attach(*cmd);
    cmd->add_option("--seeds", seeds, "Seeds per mode")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--first-seed", first_seed, "Seeds are first-seed, first-seed+1, ...")->capture_default_str();
    cmd->add_option("--jobs", jobs, "Concurrent training runs")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--out", out, "Write the tab-separated table here");
    cmd->callback([this] { status = run(); });
  }

  int run() {
    const std::vector<Ablation> modes = {Ablation::Full, Ablation::ContextOnly, Ablation::StructureOnly,
                                         Ablation::None};
    struct Job {
      Ablation mode;
      std::uint64_t seed;
    };
    std::vector<Job> all;
    for (auto m : modes)
      for (std::size_t k = 0; k < seeds; ++k) all.push_back({m, first_seed + k});

    auto run_one = [this](const Job& job) {
      Dataset ds = load_with_splits(train.dataset, train.split, job.seed);
      ModelSpec spec = model.spec();
      spec.kind = ModelKind::DmpGcn;
      spec.ablation = job.mode;
      return run_training(ds, train.config(spec, job.seed)).report;
    };

    std::vector<TrainReport> results(all.size());
    for (std::size_t start = 0; start < all.size(); start += jobs) {
      std::vector<std::future<TrainReport>> batch;
      const std::size_t stop = std::min(all.size(), start + jobs);
      for (std::size_t k = start; k < stop; ++k) {
        batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, run_one, all[k]));
      }
      for (std::size_t k = start; k < stop; ++k) {
        results[k] = batch[k - start].get();
        std::cout << "  " << std::left << std::setw(15) << to_string(all[k].mode) << " seed " << all[k].seed
                  << "  test ACC " << fixed(results[k].test_acc) << '\n';
      }
    }

    std::string table = "mode\tmean_acc\tstd_acc\tmean_nmi\tstd_nmi\truns\n";
    std::cout << '\n' << std::left << std::setw(16) << "mode" << "ACC (mean +- std)\n";
    for (std::size_t m = 0; m < modes.size(); ++m) {
      std::vector<double> accs, nmis;
      for (std::size_t k = 0; k < seeds; ++k) {
        accs.push_back(results[m * seeds + k].test_acc);
        nmis.push_back(results[m * seeds + k].test_nmi);
      }
      const auto a = mean_std(accs), n = mean_std(nmis);
      table += std::string(to_string(modes[m])) + '\t' + detail::format_double(a.mean) + '\t' +
               detail::format_double(a.std) + '\t' + detail::format_double(n.mean) + '\t' +
               detail::format_double(n.std) + '\t' + std::to_string(seeds) + '\n';
      std::cout << std::left << std::setw(16) << to_string(modes[m]) << fixed(a.mean) << " +- " << fixed(a.std)
                << '\n';
    }
    if (!out.empty()) write_file(out, table);
    return kExitOk;
  }
};

struct GradcheckCmd {
  std::size_t size = 5;
  std::uint64_t seed = 0;
  double tolerance = 1e-5;
  std::string inject;
  int status = kExitOk;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("gradcheck", "Compare backpropagated gradients with central differences");
    cmd->add_option("--size", size, "Nodes in the random instance")->check(CLI::Range(2, 64))->capture_default_str();
    cmd->add_option("--seed", seed, "Instance seed")->capture_default_str();
    cmd->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();
    cmd->add_option("--inject-sign-flip", inject, "Negate the backward rule of one op (self-test of the checker)");
    cmd->callback([this] { status = run(); });
  }

  int run() {
    if (!inject.empty()) {
      const auto op = op_from_name(inject);
      if (!op) throw ConfigError("unknown op '" + inject + "' for --inject-sign-flip");
      inject_backward_sign_flip(op);
    }
    const auto entries = gradcheck_models(size, seed);
    inject_backward_sign_flip(std::nullopt);

    std::map<std::pair<std::string, std::string>, double> by_group;
    std::vector<const GradCheckEntry*> failing;
    for (const auto& e : entries) {
      auto& g = by_group[{e.model, e.group}];
      g = std::max(g, e.max_rel_error);
      if (!(e.max_rel_error < tolerance)) failing.push_back(&e);
    }
    std::cout << "gradient check: " << size << " nodes, seed " << seed << ", h = 1e-6\n";
    for (const auto& [key, err] : by_group) {
      std::cout << "  " << std::left << std::setw(8) << key.first << std::setw(10) << key.second
                << std::scientific << std::setprecision(3) << err << std::defaultfloat
                << (err < tolerance ? "" : "  FAIL") << '\n';
    }
    if (failing.empty()) {
      std::cout << "all " << entries.size() << " parameters within " << tolerance << '\n';
      return kExitOk;
    }
    std::cout << failing.size() << " parameter(s) exceed " << tolerance << ":\n";
    for (const auto* e : failing) {
      std::cout << "  " << e->model << ' ' << e->parameter << ' ' << std::scientific << std::setprecision(3)
                << e->max_rel_error << std::defaultfloat << '\n';
    }
    return kExitFailure;
  }
};

struct SynthCmd {
  SynthConfig cfg;
  std::uint64_t seed = 0;
  std::string out;
  std::string split = "fractional";
  std::string name;
  int status = kExitOk;

  void attach(CLI::App& app) {
    auto* cmd = app.add_subcommand("synth", "Write a synthetic dataset with controlled homophily");
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--nodes", cfg.num_nodes, "Node count")->capture_default_str();
    cmd->add_option("--classes", cfg.num_classes, "Class count")->capture_default_str();
    cmd->add_option("--features", cfg.feature_dim, "Vocabulary size D")->capture_default_str();
    cmd->add_option("--homophily", cfg.homophily, "Same-class edge probability h")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option("--avg-degree", cfg.avg_degree, "Mean degree")->capture_default_str();
    cmd->add_option("--words", cfg.words_per_node, "Tokens per node")->capture_default_str();
    cmd->add_option("--noise", cfg.feature_noise, "Background-token probability")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option("--seed", seed, "Generator seed")->capture_default_str();
    cmd->add_option("--split", split, "Also write splits.tsv")
        ->check(CLI::IsMember({"fractional", "planetoid", "none"}))
        ->capture_default_str();
    cmd->callback([this] { status = run(); });
  }

  int run() {
    Rng rng(seed);
    Dataset ds = synthesize_graph(cfg, rng);
    if (split != "none") prepare_splits(ds, split_mode_from_string(split), seed);
    write_dataset(out, ds, split != "none");
    std::cout << "wrote " << out << ": n " << ds.num_nodes() << ", D " << ds.feature_dim() << ", C "
              << ds.num_classes << ", undirected edges " << ds.graph.undirected_edge_count()
              << ", edge homophily " << fixed(edge_homophily(ds.graph, ds.labels)) << '\n';
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"JSDMP: Jensen-Shannon divergence message passing for node classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "jsdmp 1.0.0");

  TrainCmd train;
  EvalCmd eval;
  AblateCmd ablate;
  GradcheckCmd gradcheck;
  SynthCmd synth;
  train.attach(app);
  eval.attach(app);
  ablate.attach(app);
  gradcheck.attach(app);
  synth.attach(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "E_USAGE: " << e.what() << " (run with --help for usage)\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kExitFailure;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "E_FORMAT: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "E_INTERNAL: " << e.what() << '\n';
    return kExitFailure;
  }
  for (int s : {train.status, eval.status, ablate.status, gradcheck.status, synth.status}) {
    if (s != kExitOk) return s;
  }
  return kExitOk;
}
