// abft: run fault-tolerant matrix multiplications on the simulated grid,
// soak them under a random process killer, emit model tables, verify results.
#include <iostream>

#include <CLI11.hpp>

#include "abft/harness.hpp"

namespace {

void add_problem_flags(CLI::App* sub, abft::RunConfig& cfg) {
  auto* n = sub->add_option("--n", cfg.n, "matrix order");
  auto* nloc = sub->add_option("--nloc", cfg.nloc, "local order per compute rank");
  n->excludes(nloc);
  sub->add_option("--q", cfg.q, "grid side, checksum row and column included")->capture_default_str();
  sub->add_option("--nb", cfg.nb, "block size")->capture_default_str();
  sub->add_option("--seed", cfg.seed, "random seed")->capture_default_str();
  sub->add_option("--fault", cfg.faults,
                  "rank=R,C@step=K | rank=R,C@event=N | random:rate=F,seed=S (repeatable)");
  sub->add_option("--out", cfg.out, "output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ABFT outer-product matrix multiply on a simulated process grid"};
  app.set_config("--config", "", "TOML/INI file with default flag values; flags win");
  app.require_subcommand(1);

  abft::RunConfig cfg;

  auto* run = app.add_subcommand("run", "one multiplication with optional scripted faults");
  add_problem_flags(run, cfg);

  auto* stress = app.add_subcommand("stress", "repeated runs under a random process killer");
  add_problem_flags(stress, cfg);
  stress->add_option("--iterations", cfg.iterations, "number of runs")->capture_default_str();

  auto* model = app.add_subcommand("model", "emit performance model tables as CSV");
  model->add_option("--params", cfg.params_file, "JSON machine parameters");
  model->add_option("--strong-n", cfg.strong_n, "matrix order of the strong-scaling sweep")
      ->capture_default_str();
  model->add_option("--out", cfg.out, "output directory")->capture_default_str();

  auto* verify = app.add_subcommand("verify", "residual check of C against A*B from text files");
  verify->add_option("files", cfg.inputs, "A B C")->expected(3);
  verify->add_option("--seed", cfg.seed, "seed of the probe vector")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : abft::kExitUsage;
  }

  if (run->parsed()) cfg.command = abft::Command::run;
  else if (stress->parsed()) cfg.command = abft::Command::stress;
  else if (model->parsed()) cfg.command = abft::Command::model;
  else cfg.command = abft::Command::verify;

  try {
    return abft::dispatch(cfg, std::cout);
  } catch (const abft::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return abft::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
