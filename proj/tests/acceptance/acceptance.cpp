// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run. Trains the desk-scale models, evaluates every
// scheme on the QPSK test stream and prints one PASS/FAIL line per criterion.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include "icfcp/bench/bench.hpp"
#include "icfcp/train/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace icfcp;
using bench::Scheme;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  failures += !ok;
}

void note(const std::string& s) { std::cout << "  " << s << std::endl; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Models {
  std::map<Scheme, model::Checkpoint> checkpoints;
};

Models train_models(const bench::BenchConfig& pre, const bench::BenchConfig& fine) {
  const tasks::TaskStream tr(tasks::TaskFamily::qpsk, pre.seeds.train, tasks::StreamDomain::train);
  const tasks::TaskStream va(tasks::TaskFamily::qpsk, pre.seeds.train, tasks::StreamDomain::validation);
  Models m;
  auto t0 = std::chrono::steady_clock::now();

  auto stage_one = pre.train;
  stage_one.objective = train::Objective::log_loss;
  const auto base = train::train<double>(stage_one, pre.model, tr, va).weights;
  note("log-loss pre-training: " + fmt(seconds_since(t0), 3) + " s");

  // Every Transformer scheme gets the same second-stage budget from the same start.
  auto stage_two = [&](train::Objective obj) {
    t0 = std::chrono::steady_clock::now();
    auto cfg = fine.train;
    cfg.objective = obj;
    const auto w = train::train<double>(cfg, fine.model, tr, va, &base).weights;
    note(std::string(train::to_string(obj)) + " stage two: " + fmt(seconds_since(t0), 3) + " s");
    return model::make_checkpoint(w, cfg.seed, train::to_string(obj));
  };
  const auto icl = stage_two(train::Objective::log_loss);
  m.checkpoints.emplace(Scheme::icl_fcp, icl);
  m.checkpoints.emplace(Scheme::icl_scp, icl);
  m.checkpoints.emplace(Scheme::e_icl_fcp, stage_two(train::Objective::cp_aware_fcp));
  m.checkpoints.emplace(Scheme::e_icl_scp, stage_two(train::Objective::cp_aware_scp));

  t0 = std::chrono::steady_clock::now();
  const auto jl = train::train_jl<double>(pre.train, pre.jl_model, tr, va).weights;
  m.checkpoints.emplace(Scheme::jl_scp, model::make_checkpoint(jl, pre.train.seed, "joint_learning"));
  note("joint learning: " + fmt(seconds_since(t0), 3) + " s");
  return m;
}

}  // namespace

int main() {
  const auto pre = bench::desk_pretrain();
  const auto fine = bench::desk_finetune();
  const auto& ev = fine.eval;
  const fs::path out = fs::current_path() / "acceptance_reports";
  fs::create_directories(out);

  std::cout << "desk model: " << pre.model.num_layers << " layers, d=" << pre.model.model_dim
            << ", ffn=" << pre.model.ffn_dim << "; test stream " << ev.test_tasks << " tasks x " << ev.realizations
            << " realizations x " << ev.test_inputs << " inputs, alpha=" << ev.alpha << std::endl;

  const auto models = train_models(pre, fine);
  std::map<Scheme, bench::EvalReport> reports;
  for (const auto s : {Scheme::jl_scp, Scheme::icl_scp, Scheme::e_icl_scp, Scheme::icl_fcp, Scheme::e_icl_fcp}) {
    const auto t0 = std::chrono::steady_clock::now();
    reports[s] = bench::run_eval(s, models.checkpoints.at(s), fine);
    bench::write_report(out / bench::to_string(s), reports[s]);
    note(std::string(bench::to_string(s)) + ": coverage " + fmt(reports[s].coverage()) + ", mean size " +
         fmt(reports[s].mean_size(), 5) + " (" + fmt(seconds_since(t0), 3) + " s)");
  }
  {
    std::vector<bench::EvalReport> all;
    for (const auto& [_, r] : reports) all.push_back(r);
    std::ofstream os(out / "table.csv");
    bench::write_csv(os, bench::compare(all));
  }

  // 1. Coverage within [1 − α − 3σ, 1] for every scheme.
  {
    bool ok = true;
    std::string detail;
    for (const auto& [s, r] : reports) {
      const double p = 1.0 - ev.alpha;
      const double floor = p - 3.0 * std::sqrt(ev.alpha * p / static_cast<double>(r.points()));
      ok = ok && r.coverage() >= floor && r.coverage() <= 1.0;
      detail += std::string(bench::to_string(s)) + "=" + fmt(r.coverage()) + " ";
    }
    detail += "(floor " + fmt(reports.begin()->second.coverage_floor()) + ")";
    verdict(1, "coverage", ok, detail);
  }

  // 2. ICL_FCP ≤ ICL_SCP and E_ICL_FCP ≤ ICL_FCP, one-sided paired tests at 0.05.
  {
    const auto& icl_fcp = reports.at(Scheme::icl_fcp);
    const auto fcp_vs_scp = bench::paired_smaller(reports.at(Scheme::icl_scp), icl_fcp);
    const auto e_vs_icl = bench::paired_smaller(icl_fcp, reports.at(Scheme::e_icl_fcp));
    const double reduction = 100.0 * e_vs_icl.mean_diff / icl_fcp.mean_size();
    const bool ok = fcp_vs_scp.p_value < 0.05 && e_vs_icl.p_value < 0.05;
    verdict(2, "efficiency ordering", ok,
            "ICL_FCP " + fmt(icl_fcp.mean_size(), 5) + " vs ICL_SCP " + fmt(reports.at(Scheme::icl_scp).mean_size(), 5) +
                " (p=" + fmt(fcp_vs_scp.p_value, 3) + "); E_ICL_FCP " +
                fmt(reports.at(Scheme::e_icl_fcp).mean_size(), 5) + " is " + fmt(reduction, 3) +
                "% smaller than ICL_FCP (p=" + fmt(e_vs_icl.p_value, 3) + ", " + std::to_string(e_vs_icl.pairs) +
                " tasks)");
  }

  // 3-5. Brute-force equivalence suites.
  {
    const auto r = bench::check_fcp_oracle(11, 1000);
    verdict(3, "FCP oracle equivalence", r.passed && r.compared == 1000, r.detail);
  }
  {
    const auto r = bench::check_soft_hard(12, 1000, 1e-5);
    verdict(4, "soft-to-hard consistency", r.passed, r.detail + " of 1000");
  }
  {
    const auto r = bench::check_permutation(13, pre.model, 100, 1e-10);
    verdict(5, "permutation invariance", r.passed, r.detail);
  }

  // 6. Finite differences of the CP-aware loss through a tiny Transformer.
  {
    const model::ModelConfig tiny{.num_layers = 1, .model_dim = 4, .num_heads = 2, .ffn_dim = 8, .num_classes = 2,
                                  .input_dim = 2};
    auto w = model::TransformerWeights<double>::init(tiny, 21);
    tasks::Rng rng(22);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (auto& p : w.parameters())
      for (auto& v : p.mutable_data()) v += noise(rng);
    const Dataset d{{{0.4, -0.7}, 0}, {{-0.2, 0.9}, 1}, {{1.3, 0.1}, 0}};
    const std::vector<Point> tests{{0.5, 0.2}, {-0.8, -0.3}};
    const int labels[] = {1, 0};
    const soft::SoftCpHyper h{.alpha = 0.25, .c_q = 0.1, .kappa = 0.1, .lambda = 1.0};
    const auto r = icfcp::testing::grad_check(
        [&] {
          std::vector<num::Tensor<double>> s;
          for (const auto& x : tests) s.push_back(cp::fcp_score_tensor(w, d, x));
          return soft::loss_total(s, labels, h);
        },
        w.parameters());
    verdict(6, "gradient fidelity", r.max_rel_error < 1e-4,
            "max relative error " + fmt(r.max_rel_error, 3) + " over " + std::to_string(r.entries) + " entries");
  }

  // 7. Counters against the declared formulas.
  {
    const std::uint64_t T = ev.test_tasks, R = ev.realizations, r = ev.test_inputs, K = fine.model.num_classes,
                        n = fine.train.n, m = fine.train.m, l = fine.train.l;
    bool ok = true;
    std::string detail;
    for (const auto& [s, rep] : reports) {
      std::uint64_t dist = 0, total = 0;
      if (bench::is_fcp(s)) {
        dist = T * R * K * r * (n + 1);
        total = 2 * dist;
      } else if (s == Scheme::jl_scp) {
        dist = total = T * R * (n + r);
      } else {
        dist = T * R * (m + r);
        total = T * R * (m + r + l);
      }
      const bool match = rep.distributions == dist && rep.prediction_evals() == total;
      ok = ok && match;
      detail += std::string(bench::to_string(s)) + "=" + std::to_string(rep.prediction_evals() / (T * R)) + " ";
    }
    verdict(7, "complexity counters", ok,
            detail + "per realization (SCP family n+r=" + std::to_string(n + r) + ", FCP distributions K*r*(n+1)=" +
                std::to_string(K * r * (n + 1)) + " plus as many context encodings)");
  }

  // 8. Two full evaluations, the second on four workers, write identical bytes.
  {
    auto threaded = fine;
    threaded.eval.threads = 4;
    const auto a = out / "determinism_a", b = out / "determinism_b";
    bool ok = true;
    for (const auto s : {Scheme::e_icl_fcp, Scheme::icl_scp}) {
      bench::write_report(a / bench::to_string(s), bench::run_eval(s, models.checkpoints.at(s), fine));
      bench::write_report(b / bench::to_string(s), bench::run_eval(s, models.checkpoints.at(s), threaded));
      for (const char* f : {"summary.json", "per_task.ndjson"}) {
        const auto x = slurp(a / bench::to_string(s) / f), y = slurp(b / bench::to_string(s) / f);
        ok = ok && !x.empty() && x == y;
      }
    }
    verdict(8, "determinism", ok, "E_ICL_FCP and ICL_SCP reports byte-identical across two runs (1 and 4 workers)");
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
