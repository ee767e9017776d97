// eli: data generation, training, evaluation and analysis from the shell.
// Exit codes: 0 ok, 2 usage/config/IO, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "eli/analysis.hpp"
#include "eli/config.hpp"
#include "eli/gradcheck.hpp"
#include "eli/io.hpp"
#include "eli/sim.hpp"

namespace fs = std::filesystem;
using namespace eli;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kNumeric = 3;

// Thrown for bad arguments detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a numerical check fails.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t thread_cap() {
  const char* env = std::getenv("IL_THREADS");
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (!env || !*env) return hw;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw UsageError("IL_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(v);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw io::IoError(p.string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Lines prefixed with '#', for embedding provenance into CSV output.
std::string comment_block(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    std::istringstream in(l);
    std::string part;
    while (std::getline(in, part)) out += "# " + part + "\n";
  }
  return out;
}

void write_ppm(const fs::path& p, std::vector<std::uint8_t> ppm, const std::vector<std::string>& lines) {
  // PPM allows comments after the magic number
  const std::string c = comment_block(lines);
  ppm.insert(ppm.begin() + 3, c.begin(), c.end());
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(ppm.data()), static_cast<std::streamsize>(ppm.size()));
  if (!out) throw io::IoError(p.string() + ": write failed");
}

std::string checkpoint_config(const io::Checkpoint& c) {
  if (c.meta.contains("config")) return c.meta.at("config").get<std::string>();
  return io::policy_config_to_json(c.policy.config).dump();
}

std::vector<double> slots_or_default(const std::vector<double>& slots) {
  return slots.empty() ? sim::SlotGrid{}.eval : slots;
}

void print_checks(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (r.skipped) {
      std::printf("skip  %-40s (not available on this machine)\n", r.name.c_str());
    } else {
      std::printf("%s  %-40s %.3e <= %.0e\n", r.pass() ? "ok  " : "FAIL", r.name.c_str(), r.error,
                  r.tolerance);
    }
  }
}

// ---- gen-data ----

struct GenArgs {
  std::string out;
  std::size_t episodes = 5;
  std::uint64_t seed = 0;
};

int cmd_gen_data(const GenArgs& a) {
  if (a.episodes < 2) {
    throw UsageError("--episodes-per-slot must be at least 2 (one train and one val per slot)");
  }
  const io::Manifest m = io::generate_dataset(a.out, a.episodes, a.seed);
  std::size_t train = 0;
  for (const auto& e : m.entries) train += e.train;
  std::printf("wrote %zu trajectories (%zu train, %zu val) to %s, seed %llu\n", m.entries.size(),
              train, m.entries.size() - train, a.out.c_str(),
              static_cast<unsigned long long>(a.seed));
  return kOk;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  bool dry_run = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  std::vector<std::string> defaulted;
  const std::string text = a.config.empty() ? std::string() : read_file(a.config);
  const RunConfig cfg = parse_run_config(text, &defaulted);
  const std::string resolved = format_run_config(cfg);

  // echo what the file left unset
  {
    std::istringstream in(resolved);
    std::string line;
    while (std::getline(in, line)) {
      const std::string key = line.substr(0, line.find(' '));
      if (std::find(defaulted.begin(), defaulted.end(), key) != defaulted.end()) {
        std::printf("default: %s\n", line.c_str());
      }
    }
  }
  const io::Manifest manifest = io::read_manifest(a.data);
  if (a.dry_run) {
    std::printf("%s", resolved.c_str());
    std::size_t train = 0;
    for (const auto& e : manifest.entries) train += e.train;
    std::printf("# data: %s (%zu train, %zu val)\n", a.data.c_str(), train,
                manifest.entries.size() - train);
    std::printf("# parameters: %zu\n", init_policy_params(cfg.policy, cfg.train.seed).parameter_count());
    return kOk;
  }

  const train::Dataset data = io::load_dataset(a.data);
  train::TrainResult result;
  try {
    result = train::train(cfg.train, cfg.policy, data, [&](const train::EpochLoss& e) {
      if (!a.quiet) {
        std::printf("epoch %zu train %.6g val %.6g\n", e.epoch, e.train_mse, e.val_mse);
        std::fflush(stdout);
      }
    });
  } catch (const train::DivergenceError& e) {
    throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(e.epoch()) + ")");
  }

  nlohmann::json meta;
  meta["config"] = resolved;
  meta["seed"] = cfg.train.seed;
  meta["data"] = a.data;
  meta["data_seed"] = manifest.creation_seed;
  meta["best_epoch"] = result.best_epoch;
  meta["best_val_mse"] = result.best_val_mse;
  meta["final_train_mse"] = result.curve.back().train_mse;
  meta["final_val_mse"] = result.curve.back().val_mse;
  meta["pad_length"] = result.pad_length;
  io::save_checkpoint(a.out, result.policy, meta);
  const std::string loss_path = a.out + ".loss.csv";
  io::write_text(loss_path, comment_block({resolved, "data: " + a.data}) + train::loss_csv(result.curve));

  const auto& last = result.curve.back();
  std::printf("final train_mse %.6g val_mse %.6g (epoch %zu)\n", last.train_mse, last.val_mse,
              last.epoch);
  std::printf("best val_mse %.6g at epoch %zu -> %s\n", result.best_val_mse, result.best_epoch,
              a.out.c_str());
  std::printf("loss curve -> %s\n", loss_path.c_str());
  return kOk;
}

// ---- eval ----

struct EvalArgs {
  std::string ckpt;
  std::size_t trials = 5;
  std::uint64_t seed = 0;
  std::vector<double> slots;
  std::string csv;
};

int cmd_eval(const EvalArgs& a) {
  if (a.trials == 0) throw UsageError("--trials must be positive");
  const io::Checkpoint c = io::load_checkpoint(a.ckpt);
  const Policy& policy = c.policy;
  const sim::SuccessTable table = sim::evaluate(
      [&] { return std::make_unique<PolicyController>(policy); }, slots_or_default(a.slots), a.trials,
      a.seed, thread_cap());
  std::printf("%s", table.format().c_str());
  const std::string path = a.csv.empty() ? a.ckpt + ".eval.csv" : a.csv;
  io::write_text(path, comment_block({"checkpoint: " + a.ckpt, "seed: " + std::to_string(a.seed),
                                      "trials: " + std::to_string(a.trials), checkpoint_config(c)}) +
                           table.csv());
  std::printf("table -> %s\n", path.c_str());
  return kOk;
}

// ---- analyze ----

int cmd_gradcheck(std::uint64_t seed, std::size_t fd_cases) {
  std::vector<CheckResult> results = run_gradcheck(seed);
  if (fd_cases > 0) {
    const FdSuiteResult fd = run_fd_suite(seed, fd_cases);
    results.insert(results.end(), fd.per_kind.begin(), fd.per_kind.end());
  }
  print_checks(results);
  for (const auto& r : results) {
    if (!r.pass()) throw NumericError("check failed: " + r.name);
  }
  std::printf("all %zu checks passed\n", results.size());
  return kOk;
}

struct DecomposeArgs {
  std::string ckpt;
  double slot = 2.0;
  std::uint64_t seed = 0;
  std::size_t step = 50;
  std::string out;
};

int cmd_decompose(const DecomposeArgs& a) {
  const io::Checkpoint c = io::load_checkpoint(a.ckpt);
  const Policy& p = c.policy;
  const Trajectory demo = train::downsample(sim::teacher_demonstrate(a.slot, a.seed), p.config.control_rate);
  if (a.step >= demo.frames.size()) {
    throw UsageError("--step " + std::to_string(a.step) + " is past the demonstration (" +
                     std::to_string(demo.frames.size()) + " steps)");
  }
  LstmState state = init_state(p.config);
  for (std::size_t t = 0; t < a.step; ++t) {
    state = policy_step(p, frame_to_tensor(demo.frames[t]), demo.follower[t], state).state;
  }
  const std::vector<double> joints = p.input_norm->normalize(demo.follower[a.step].packed());
  const analysis::DecompositionReport r = analysis::each_layer_decomposition(
      analysis::policy_step_model(p, Tensor({joints.size()}, joints), state),
      frame_to_tensor(demo.frames[a.step]));

  Tensor upper = Tensor::zeros(r.direct.shape());
  for (std::size_t j = 1; j < r.terms.size(); ++j) upper = upper + r.terms[j];
  std::printf("direct |dy/dx| %.6g, residual %.3e\n", frobenius_norm(r.direct), r.residual);
  for (std::size_t j = 0; j < r.terms.size(); ++j) {
    std::printf("  term %zu: %.6g\n", j + 1, frobenius_norm(r.terms[j]));
  }
  std::printf("  head: %.6g\n", frobenius_norm(r.head_term));
  std::printf("|sum of terms 2..L| %.6g\n", frobenius_norm(upper));

  fs::create_directories(a.out);
  const std::vector<std::string> prov = {"checkpoint: " + a.ckpt, "slot: " + std::to_string(a.slot),
                                         "seed: " + std::to_string(a.seed),
                                         "step: " + std::to_string(a.step), checkpoint_config(c)};
  io::write_text(fs::path(a.out) / "decomposition.csv", comment_block(prov) + r.csv());
  std::vector<double> norms = r.row_norms();
  const std::size_t cols = r.terms.size() + 1;
  analysis::normalize_rows(norms, cols);
  write_ppm(fs::path(a.out) / "decomposition.ppm",
            analysis::heatmap_ppm(norms, r.direct.dim(0), cols), prov);
  if (r.residual > 1e-9 * std::max(1.0, frobenius_norm(r.direct))) {
    throw NumericError("decomposition residual " + std::to_string(r.residual) + " too large");
  }
  return kOk;
}

void write_attribution(const fs::path& dir, const std::string& stem,
                       const analysis::AttributionMatrix& m, const std::vector<std::string>& prov) {
  const analysis::AttributionReport r = analysis::attribution_report(m);
  std::vector<std::string> lines = prov;
  lines.push_back("trials: " + std::to_string(m.trials) + ", steps: " + std::to_string(m.steps) +
                  ", inputs: normalized");
  std::string zero;
  for (std::size_t i = 0; i < r.rows; ++i) {
    if (r.zero_rows[i]) zero += (zero.empty() ? "" : " ") + r.row_labels[i];
  }
  lines.push_back("zero rows: " + (zero.empty() ? std::string("none") : zero));
  io::write_text(dir / (stem + ".csv"), comment_block(lines) + r.csv());

  std::ostringstream raw;
  raw.precision(10);
  raw << "row,column,value\n";
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      raw << m.row_labels[i] << ',' << m.col_labels[j] << ',' << m.at(i, j) << '\n';
    }
  }
  io::write_text(dir / (stem + "_raw.csv"), comment_block(lines) + raw.str());
  write_ppm(dir / (stem + ".ppm"), r.heatmap(), lines);
  std::printf("%s: z mass %.4f, zero rows: %s -> %s\n", stem.c_str(), r.z_mass(),
              zero.empty() ? "none" : zero.c_str(), (dir / (stem + ".csv")).c_str());
}

struct AttributeArgs {
  std::string ckpt;
  std::string trajectory;
  std::size_t trials = 5;
  std::uint64_t seed = 0;
  std::vector<double> slots;
  std::string out;
};

analysis::AttributionMatrix attribute(const Policy& p, const AttributeArgs& a) {
  if (!a.trajectory.empty()) return analysis::attribution_matrix(p, io::read_trajectory(a.trajectory));
  if (a.trials == 0) throw UsageError("--trials must be positive");
  return analysis::evaluate_attribution(p, slots_or_default(a.slots), a.trials, a.seed, thread_cap());
}

std::vector<std::string> attribute_provenance(const AttributeArgs& a) {
  if (!a.trajectory.empty()) return {"trajectory: " + a.trajectory};
  return {"seed: " + std::to_string(a.seed), "trials per slot: " + std::to_string(a.trials)};
}

int cmd_attribute(const AttributeArgs& a) {
  const io::Checkpoint c = io::load_checkpoint(a.ckpt);
  const analysis::AttributionMatrix m = attribute(c.policy, a);
  fs::create_directories(a.out);
  std::vector<std::string> prov = attribute_provenance(a);
  prov.insert(prov.begin(), "checkpoint: " + a.ckpt);
  prov.push_back(checkpoint_config(c));
  write_attribution(a.out, "attribution", m, prov);
  return kOk;
}

struct CompareArgs {
  std::string with;
  std::string without;
  AttributeArgs common;
};

int cmd_compare(const CompareArgs& a) {
  const io::Checkpoint w = io::load_checkpoint(a.with);
  const io::Checkpoint wo = io::load_checkpoint(a.without);
  const PolicyConfig& cw = w.policy.config;
  const PolicyConfig& co = wo.policy.config;
  if (cw.joint_count != co.joint_count || cw.feature_dim != co.feature_dim ||
      cw.encoder.kind != co.encoder.kind) {
    throw UsageError("compare: checkpoints have mismatched configs (joints, features or encoder)");
  }
  const analysis::AttributionMatrix mw = attribute(w.policy, a.common);
  const analysis::AttributionMatrix mo = attribute(wo.policy, a.common);
  const analysis::AttributionComparison cmp = analysis::attribution_compare(mw, mo);
  fs::create_directories(a.common.out);
  const fs::path dir = a.common.out;
  std::vector<std::string> prov = attribute_provenance(a.common);
  write_attribution(dir, "with", mw, [&] {
    auto p = prov;
    p.insert(p.begin(), "checkpoint: " + a.with);
    p.push_back(checkpoint_config(w));
    return p;
  }());
  write_attribution(dir, "without", mo, [&] {
    auto p = prov;
    p.insert(p.begin(), "checkpoint: " + a.without);
    p.push_back(checkpoint_config(wo));
    return p;
  }());
  std::ostringstream csv;
  csv.precision(10);
  csv << comment_block({"with: " + a.with, "without: " + a.without})
      << comment_block(prov) << "model,z_mass\nwith," << cmp.z_mass_with << "\nwithout,"
      << cmp.z_mass_without << "\nratio," << cmp.ratio << '\n';
  io::write_text(dir / "compare.csv", csv.str());
  std::printf("z mass with %.4f, without %.4f, ratio %.3f\n", cmp.z_mass_with, cmp.z_mass_without,
              cmp.ratio);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eli: imitation learning with each-layer image features"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "write teacher demonstrations and a manifest");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--episodes-per-slot", gen.episodes, "episodes per training slot (last is val)")
      ->capture_default_str();
  g->add_option("--seed", gen.seed, "dataset seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a policy on a dataset");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--config", tr.config, "key = value config file");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_flag("--dry-run", tr.dry_run, "print the resolved config and stop");
  t->add_flag("--quiet", tr.quiet, "no per-epoch lines");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "closed-loop success table");
  e->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  e->add_option("--trials", ev.trials, "trials per slot")->capture_default_str();
  e->add_option("--seed", ev.seed, "environment seed")->capture_default_str();
  e->add_option("--slots", ev.slots, "slots (default: the 11 evaluation slots)")->delimiter(',');
  e->add_option("--csv", ev.csv, "CSV path (default: <ckpt>.eval.csv)");

  auto* an = app.add_subcommand("analyze", "gradient and attribution diagnostics");
  an->require_subcommand(1);
  std::uint64_t gc_seed = 1;
  auto* gc = an->add_subcommand("gradcheck", "run the numerical oracle suites");
  gc->add_option("--seed", gc_seed)->capture_default_str();
  std::size_t gc_fd_cases = 160;
  gc->add_option("--fd-cases", gc_fd_cases, "seeded finite-difference cases over every layer")
      ->capture_default_str();

  DecomposeArgs dc;
  auto* d = an->add_subcommand("decompose", "per-layer Jacobian paths of one policy step");
  d->add_option("--ckpt", dc.ckpt)->required();
  d->add_option("--slot", dc.slot, "demonstration slot")->capture_default_str();
  d->add_option("--seed", dc.seed, "demonstration seed")->capture_default_str();
  d->add_option("--step", dc.step, "control step to analyze")->capture_default_str();
  d->add_option("--out", dc.out, "output directory")->required();

  auto add_attribute_opts = [](CLI::App* s, AttributeArgs& a) {
    s->add_option("--trajectory", a.trajectory, "use one recorded trajectory instead of rollouts");
    s->add_option("--trials", a.trials, "rollouts per slot")->capture_default_str();
    s->add_option("--seed", a.seed, "environment seed")->capture_default_str();
    s->add_option("--slots", a.slots, "slots (default: the 11 evaluation slots)")->delimiter(',');
    s->add_option("--out", a.out, "output directory")->required();
  };
  AttributeArgs at;
  auto* ab = an->add_subcommand("attribute", "attribution matrix over closed-loop rollouts");
  ab->add_option("--ckpt", at.ckpt)->required();
  add_attribute_opts(ab, at);

  CompareArgs cp;
  auto* cm = an->add_subcommand("compare", "image-feature attribution of two checkpoints");
  cm->add_option("--with", cp.with, "each-layer-input checkpoint")->required();
  cm->add_option("--without", cp.without, "baseline checkpoint")->required();
  add_attribute_opts(cm, cp.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    thread_cap();  // reject a bad IL_THREADS up front
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*gc) return cmd_gradcheck(gc_seed, gc_fd_cases);
    if (*d) return cmd_decompose(dc);
    if (*ab) return cmd_attribute(at);
    if (*cm) return cmd_compare(cp);
  } catch (const NumericError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kNumeric;
  } catch (const std::exception& err) {
    // config, IO, usage and invalid input
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  }
  return kUsage;
}
