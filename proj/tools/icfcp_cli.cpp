// SPDX-License-Identifier: Apache-2.0
//
// icfcp: train, evaluate and compare conformal schemes on QPSK task streams.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "icfcp/bench/bench.hpp"
#include "icfcp/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace icfcp;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string scheme;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha;
  bool deterministic = false;
};

bench::BenchConfig load(const Common& o) {
  auto c = o.config.empty() ? bench::BenchConfig{} : bench::load_config(o.config);
  if (o.alpha) {
    c.eval.alpha = *o.alpha;
    c.train.hyper.alpha = *o.alpha;
  }
  if (o.seed) {
    c.seeds.train = *o.seed;
    c.seeds.test = *o.seed;
  }
  c.train.seed = c.seeds.train;
  if (o.deterministic) c.eval.threads = 1;
  c.validate();
  return c;
}

int cmd_gen_config(const std::string& preset, const std::string& out) {
  bench::BenchConfig c;
  if (preset == "desk") {
    c = bench::desk_pretrain();
  } else if (preset == "desk-finetune") {
    c = bench::desk_finetune();
  } else if (preset != "full") {
    throw CLI::ValidationError("--preset", "must be full, desk or desk-finetune");
  }
  const auto text = bench::to_json(c).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write " + out);
    os << text;
  }
  return 0;
}

int cmd_train(const Common& o) {
  auto c = load(o);
  const auto scheme = bench::scheme_from_string(o.scheme);
  const tasks::TaskStream tr(tasks::TaskFamily::qpsk, c.seeds.train, tasks::StreamDomain::train);
  const tasks::TaskStream va(tasks::TaskFamily::qpsk, c.seeds.train, tasks::StreamDomain::validation);
  const nlohmann::json meta{{"config_hash", bench::config_hash(c)}, {"scheme", o.scheme}};
  fs::create_directories(o.out);
  auto progress = [](const train::EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.loss << " val " << r.val_metric << (r.best ? " *" : "") << '\n';
  };

  std::vector<train::EpochRecord> log;
  if (scheme == bench::Scheme::jl_scp) {
    auto res = train::train_jl<double>(c.train, c.jl_model, tr, va, progress);
    model::save_checkpoint(fs::path(o.out) / "model.ckpt",
                           model::make_checkpoint(res.weights, c.seeds.train, bench::required_objective(scheme), meta));
    log = std::move(res.log);
  } else {
    c.train.objective = train::objective_from_string(bench::required_objective(scheme));
    std::optional<model::TransformerWeights<double>> init;
    if (!o.checkpoint.empty()) init = model::transformer_from<double>(model::load_checkpoint(o.checkpoint), true);
    auto res = train::train<double>(c.train, c.model, tr, va, init ? &*init : nullptr, progress);
    model::save_checkpoint(fs::path(o.out) / "model.ckpt",
                           model::make_checkpoint(res.weights, c.seeds.train, bench::required_objective(scheme), meta));
    log = std::move(res.log);
  }
  std::ofstream os(fs::path(o.out) / "train_log.ndjson");
  train::write_log(os, log);
  return 0;
}

int cmd_eval(const Common& o) {
  const auto c = load(o);
  const auto scheme = bench::scheme_from_string(o.scheme);
  if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
  const auto rep = bench::run_eval(scheme, model::load_checkpoint(o.checkpoint), c);
  bench::write_report(o.out, rep);
  std::cout << bench::to_string(scheme) << ": coverage " << rep.coverage() << " (floor " << rep.coverage_floor()
            << "), mean set size " << rep.mean_size() << ", prediction evals " << rep.prediction_evals() << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<bench::EvalReport> reports;
  for (const auto& d : dirs) reports.push_back(bench::read_report(d));
  const auto rows = bench::compare(reports);
  bench::write_csv(std::cout, rows);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream os(fs::path(out) / "table.csv");
    bench::write_csv(os, rows);
  }
  for (const auto& r : rows)
    if (r.below_floor) std::cerr << "warning: " << bench::to_string(r.scheme) << " is below its coverage floor\n";
  return 0;
}

int cmd_oracle_check(const Common& o) {
  const auto c = load(o);
  bool ok = true;
  for (const auto& s : bench::run_oracle_checks(o.seed.value_or(1), c.model)) {
    std::cout << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << '\n';
    ok = ok && s.passed;
  }
  return ok ? 0 : 1;
}

void add_common(CLI::App* app, Common& o, bool scheme, bool checkpoint) {
  app->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Override every seed in the config");
  app->add_option("--alpha", o.alpha, "Override the miscoverage level")->check(CLI::Range(0.0, 1.0));
  app->add_flag("--deterministic", o.deterministic, "Evaluate on a single thread");
  if (scheme) app->add_option("--scheme", o.scheme, "JL_SCP, ICL_SCP, E_ICL_SCP, ICL_FCP or E_ICL_FCP")->required();
  if (checkpoint) app->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context full conformal prediction laboratory"};
  app.require_subcommand(1);

  Common train_o, eval_o, oracle_o;
  std::string preset = "full", gen_out, cmp_out;
  std::vector<std::string> cmp_dirs;

  auto* gen = app.add_subcommand("gen-config", "Print a config with every key at its default");
  gen->add_option("--preset", preset, "full, desk or desk-finetune")->capture_default_str();
  gen->add_option("--out", gen_out, "Write to a file instead of stdout");

  auto* tr = app.add_subcommand("train", "Meta-train the model a scheme needs");
  add_common(tr, train_o, true, true);
  tr->get_option("--checkpoint")->description("Warm-start checkpoint (Transformer schemes)");
  tr->add_option("--out", train_o.out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a scheme on the test stream");
  add_common(ev, eval_o, true, true);
  ev->add_option("--out", eval_o.out, "Output directory")->required();

  auto* cmp = app.add_subcommand("compare", "Tabulate reports against ICL_FCP");
  cmp->add_option("reports", cmp_dirs, "Report directories")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--out", cmp_out, "Directory for table.csv");

  auto* orc = app.add_subcommand("oracle-check", "Run the brute-force equivalence suites");
  add_common(orc, oracle_o, false, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_config(preset, gen_out);
    if (*tr) return cmd_train(train_o);
    if (*ev) return cmd_eval(eval_o);
    if (*cmp) return cmd_compare(cmp_dirs, cmp_out);
    if (*orc) return cmd_oracle_check(oracle_o);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
