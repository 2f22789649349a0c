// qfopt: fit / validate / optimize / toy-experiment front end.

#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "qf/cli/commands.hpp"
#include "qf/format.hpp"
#include "qf/log.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, sim, streams, kernel, transform, bundle, truth, truth_cache, design;
  std::optional<double> p, validate_p, stop_rel_tol;
  std::optional<std::size_t> iters, reps, n, k, m, n_mc, threads, refit_every, candidates, worst, gp_starts;
  bool raw_best = false;
  bool save_draws = false;
  bool verbose = false;
  bool quiet = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "JSON config file");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--out", out, "output directory");
    app.add_option("--sim", sim, "toy | replay:<path> | external:<command>");
    app.add_option("--p", p, "quantile level of the objective");
    app.add_option("--iters", iters, "QFEI iterations");
    app.add_option("--reps", reps, "toy-experiment repetitions");
    app.add_option("--n", n, "initial design size");
    app.add_option("--k", k, "basis size");
    app.add_option("--m", m, "probability grid size");
    app.add_option("--n-mc", n_mc, "simulator runs per input");
    app.add_option("--validate-p", validate_p, "level of the validation objective error");
    app.add_option("--streams", streams, "per-input | common");
    app.add_option("--kernel", kernel, "matern52 | squared_exponential");
    app.add_option("--transform", transform, "identity | log-shift");
    app.add_option("--bundle", bundle, "metamodel bundle directory");
    app.add_option("--truth", truth, "truth curve table x1..xd,p,value");
    app.add_option("--truth-cache", truth_cache, "toy truth table cache file");
    app.add_option("--design", design, "initial design CSV x1..xd");
    app.add_option("--candidates", candidates, "restricted candidate-set size for large E");
    app.add_option("--refit-every", refit_every, "refit the metamodel every N iterations");
    app.add_option("--stop-rel-tol", stop_rel_tol, "stop when EI < tol * range of U_D");
    app.add_option("--worst", worst, "worst points listed by validate");
    app.add_option("--gp-starts", gp_starts, "likelihood multi-starts");
    app.add_option("--threads", threads, "worker threads (0 = all cores)");
    app.add_flag("--raw-best", raw_best, "use empirical quantiles for U_D");
    app.add_flag("--save-draws", save_draws, "fit: also write the raw learning draws");
    app.add_flag("-v,--verbose", verbose, "info-level logging");
    app.add_flag("-q,--quiet", quiet, "errors only");
  }

  qf::cli::RunConfig resolve() const {
    qf::cli::RunConfig c = config.empty() ? qf::cli::RunConfig{} : qf::cli::load_config(config);
    if (seed) c.seed = *seed;
    if (out) c.out = *out;
    if (sim) c.sim = *sim;
    if (p) c.p = *p;
    if (iters) c.iterations = *iters;
    if (reps) c.reps = *reps;
    if (n) c.n = *n;
    if (k) c.k = *k;
    if (m) c.m = *m;
    if (n_mc) c.n_mc = *n_mc;
    if (validate_p) c.validate_p = *validate_p;
    if (streams) c.streams = *streams;
    if (kernel) c.kernel = *kernel;
    if (transform) c.transform = *transform;
    if (bundle) c.bundle = *bundle;
    if (truth) c.truth = *truth;
    if (truth_cache) c.truth_cache = *truth_cache;
    if (design) c.design_file = *design;
    if (candidates) c.candidates = *candidates;
    if (refit_every) c.refit_every = *refit_every;
    if (stop_rel_tol) c.stop_rel_tol = *stop_rel_tol;
    if (worst) c.worst = *worst;
    if (gp_starts) c.gp_starts = *gp_starts;
    if (threads) c.threads = *threads;
    if (raw_best) c.raw_best = true;
    if (save_draws) c.save_draws = true;
    return c;
  }
};

std::string coords(const qf::InputPoint& x) { return qf::to_string(x); }
std::string num(double v) { return qf::format_double(v); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantile-function metamodel and QFEI optimizer for stochastic simulators"};
  app.require_subcommand(1);
  Overrides o;
  auto* fit = app.add_subcommand("fit", "simulate a random design and fit the metamodel bundle");
  auto* validate = app.add_subcommand("validate", "error of a bundle against a truth table");
  auto* optimize = app.add_subcommand("optimize", "QFEI enrichment from a bundle or a fresh design");
  auto* toy = app.add_subcommand("toy-experiment", "repeated QFEI study on the toy simulator");
  for (auto* sub : {fit, validate, optimize, toy}) o.attach(*sub);
  CLI11_PARSE(app, argc, argv);

  qf::log::set_level(o.quiet ? qf::log::Level::Off : o.verbose ? qf::log::Level::Info : qf::log::Level::Warn);
  try {
    const auto cfg = o.resolve();
    if (fit->parsed()) {
      const auto r = qf::cli::cmd_fit(cfg);
      std::cout << "err1 " << num(r.err1) << "  n " << r.n << "  k " << r.k << "\n";
    } else if (validate->parsed()) {
      const auto r = qf::cli::cmd_validate(cfg);
      std::cout << "err2 " << num(r.err2) << "  err3 " << num(r.err3) << "  objective_error(p=" << num(cfg.validate_p)
                << ") " << num(r.objective_error) << "  err3_learning " << num(r.err3_learning) << "\n";
    } else if (optimize->parsed()) {
      const auto r = qf::cli::cmd_optimize(cfg);
      std::cout << "x_hat " << coords(r.x_hat) << "  U " << num(r.u_hat) << "  Q_emp(p) " << num(r.q_hat)
                << "  simulator_calls " << r.simulator_calls << "  iterations " << r.iterations_run
                << (r.exhausted ? "  (candidate set exhausted)" : "") << "\n";
    } else if (toy->parsed()) {
      const auto r = qf::cli::cmd_toy_experiment(cfg);
      std::cout << "x* " << coords(r.truth.x_star) << "  Q* " << num(r.truth.q_star) << "  reps " << r.reps.size()
                << "  exact " << r.exact_hits << "  top2 " << r.top2_hits << "  beats_baseline " << r.beats_baseline
                << "  direct_below " << r.direct_below << "\n";
      if (!r.warnings.empty()) std::cout << r.warnings.size() << " warnings, see summary.json\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "qfopt: " << e.what() << "\n";
    return qf::cli::exit_code_for(e);
  }
  return 0;
}
