#include "abft/harness.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "abft/checksum.hpp"
#include "abft/perf_model.hpp"
#include "abft/random.hpp"

namespace abft {

namespace {

namespace fs = std::filesystem;

template <typename T>
T parse_number(std::string_view s, std::string_view what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw InvalidArgument("bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

bool consume(std::string_view& s, std::string_view prefix) {
  if (!s.starts_with(prefix)) return false;
  s.remove_prefix(prefix.size());
  return true;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot write " + path.string());
  f << text;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Recovery constants for the one-failure model when no params file gives
// them: fitted to the reference one-failure rates at 121 and 484 processes.
PerfParams calibrated(PerfParams p) {
  if (p.t_restart && p.t_reduce_per_word) return p;
  const Observation ref[] = {{RunKind::abft_1f, kTableNloc, 11, 2.53},
                             {RunKind::abft_1f, kTableNloc, 22, 2.74}};
  FitOptions opts;
  opts.fixed_gamma = p.gamma;
  opts.fixed_beta = p.beta;
  opts.base = p;
  return fit_params(ref, opts);
}

}  // namespace

FaultSpec parse_fault_spec(std::string_view text) {
  FaultSpec spec;
  std::string_view s = text;
  if (consume(s, "random:")) {
    RandomKiller k;
    bool have_rate = false;
    while (!s.empty()) {
      const auto comma = s.find(',');
      std::string_view item = s.substr(0, comma);
      s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
      if (consume(item, "rate=")) {
        k.rate = parse_number<double>(item, "kill rate");
        if (!(k.rate >= 0.0)) throw InvalidArgument("kill rate must be non-negative");
        have_rate = true;
      } else if (consume(item, "seed=")) {
        k.seed = parse_number<std::uint64_t>(item, "killer seed");
      } else {
        throw InvalidArgument("bad fault spec '" + std::string(text) + "'");
      }
    }
    if (!have_rate) throw InvalidArgument("random fault spec needs rate=F");
    spec.random = k;
    return spec;
  }
  if (!consume(s, "rank=")) {
    throw InvalidArgument("bad fault spec '" + std::string(text) +
                          "' (expected rank=R,C@step=K or random:rate=F,seed=S)");
  }
  const auto at = s.find('@');
  const auto comma = s.find(',');
  if (at == std::string_view::npos || comma == std::string_view::npos || comma > at) {
    throw InvalidArgument("bad fault spec '" + std::string(text) + "'");
  }
  ScriptedFault f;
  f.row = parse_number<std::size_t>(s.substr(0, comma), "rank row");
  f.col = parse_number<std::size_t>(s.substr(comma + 1, at - comma - 1), "rank column");
  std::string_view when = s.substr(at + 1);
  if (consume(when, "step=")) {
    f.trigger = {Trigger::Kind::step, parse_number<std::uint64_t>(when, "step")};
  } else if (consume(when, "event=")) {
    f.trigger = {Trigger::Kind::event, parse_number<std::uint64_t>(when, "event")};
  } else {
    throw InvalidArgument("bad fault trigger in '" + std::string(text) + "'");
  }
  spec.scripted.push_back(f);
  return spec;
}

FaultSpec parse_fault_specs(const std::vector<std::string>& texts) {
  FaultSpec all;
  for (const auto& t : texts) {
    FaultSpec one = parse_fault_spec(t);
    all.scripted.insert(all.scripted.end(), one.scripted.begin(), one.scripted.end());
    if (one.random) {
      if (all.random) throw InvalidArgument("at most one random fault spec");
      all.random = one.random;
    }
  }
  return all;
}

FaultPlan make_fault_plan(const FaultSpec& spec, std::size_t q) {
  FaultPlan plan;
  for (const auto& f : spec.scripted) {
    if (f.row >= q || f.col >= q) {
      throw InvalidArgument("fault rank (" + std::to_string(f.row) + "," + std::to_string(f.col) +
                            ") outside the " + std::to_string(q) + "x" + std::to_string(q) + " grid");
    }
    plan.injections.push_back({f.row * q + f.col, f.trigger});
  }
  plan.killer = spec.random;
  return plan;
}

std::string describe(const FaultSpec& spec) {
  std::string out;
  for (const auto& f : spec.scripted) {
    if (!out.empty()) out += ';';
    out += "rank=" + std::to_string(f.row) + "," + std::to_string(f.col) +
           (f.trigger.kind == Trigger::Kind::step ? "@step=" : "@event=") +
           std::to_string(f.trigger.value);
  }
  if (spec.random) {
    if (!out.empty()) out += ';';
    out += "random:rate=" + format_double(spec.random->rate) + ",seed=" + std::to_string(spec.random->seed);
  }
  return out.empty() ? "none" : out;
}

std::string to_string(Command c) {
  switch (c) {
    case Command::run: return "run";
    case Command::stress: return "stress";
    case Command::model: return "model";
    case Command::verify: return "verify";
  }
  return "?";
}

void RunConfig::validate() const {
  if (command == Command::run || command == Command::stress) {
    if (n.has_value() == nloc.has_value()) throw InvalidArgument("give exactly one of --n and --nloc");
    if (q < 2) throw InvalidArgument("--q must be at least 2 (one checksum row and column)");
    if (nb < 1) throw InvalidArgument("--nb must be at least 1");
    if (order() == 0) throw InvalidArgument("matrix order must be positive");
    if (command == Command::stress && iterations < 1) {
      throw InvalidArgument("--iterations must be at least 1");
    }
  }
  if (command == Command::verify && inputs.size() != 3) {
    throw InvalidArgument("verify needs three matrix files: A B C");
  }
  if (command == Command::model && strong_n == 0) throw InvalidArgument("--strong-n must be positive");
}

std::size_t RunConfig::order() const {
  if (n) return *n;
  return nloc ? *nloc * (q - 1) : 0;
}

RunOutcome execute_run(std::size_t n, std::size_t q, std::size_t nb, std::uint64_t seed,
                       const FaultSpec& faults, std::string_view fault_text) {
  Rng rng(seed);
  const DenseMatrix a = random_matrix(n, n, rng);
  const DenseMatrix b = random_matrix(n, n, rng);
  GridWorld world(q, make_fault_plan(faults, q), seed);
  const FtMatrix fa = distribute(a, world, nb, "A");
  const FtMatrix fb = distribute(b, world, nb, "B");
  SummaEngine engine(world, fa, fb);
  const FtResult res = engine.run();

  RunOutcome out;
  out.degraded = res.degraded;
  out.recoveries = res.recoveries;
  for (const auto& e : world.events()) out.kills += e.kind == EventKind::fail;
  if (!res.degraded) {
    const DenseMatrix c = res.c.gather(world);
    std::vector<double> x(n);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    out.residual = residual_check(a, b, c, x);
    out.consistent = is_consistent(res.c.assemble(world), res.c.rows_scheme, res.c.cols_scheme);
  }
  if (out.degraded) out.exit_code = kExitUnrecoverable;
  else if (!out.residual->passed) out.exit_code = kExitResidual;
  else if (!out.consistent) out.exit_code = kExitInconsistent;

  std::ostringstream m;
  m << "command run\n"
    << "n " << n << "\n"
    << "nb " << nb << "\n"
    << "q " << q << "\n"
    << "seed " << seed << "\n"
    << "fault " << fault_text << "\n"
    << "steps " << engine.steps() << "\n"
    << "status " << (res.degraded ? "degraded" : "ok") << "\n";
  if (out.residual) {
    m << "residual " << format_double(out.residual->residual) << "\n"
      << "residual_threshold " << format_double(out.residual->threshold) << "\n"
      << "residual_passed " << (out.residual->passed ? "true" : "false") << "\n"
      << "consistency " << (out.consistent ? "consistent" : "inconsistent") << "\n";
  } else {
    m << "residual none\n"
      << "consistency unknown\n";
    m << "failure " << res.failure << "\n";
  }
  m << "kills " << out.kills << "\n"
    << "recoveries " << res.recoveries.size() << "\n";
  for (std::size_t i = 0; i < res.recoveries.size(); ++i) {
    const RecoveryReport& r = res.recoveries[i];
    const std::string k = "recovery." + std::to_string(i) + ".";
    m << k << "detected_at_step " << r.detected_at_step << "\n";
    m << k << "failed";
    for (RankId f : r.failed) m << ' ' << f;
    m << "\n";
    m << k << "success " << (r.success ? "true" : "false") << "\n";
    if (!r.success) {
      m << k << "detail " << r.detail << "\n";
      continue;
    }
    m << k << "recovered_rank " << r.recovered_rank << "\n"
      << k << "resume_step " << r.resume_step << "\n"
      << k << "ranks_ahead " << r.ranks_ahead << "\n"
      << k << "laggards " << r.laggards << "\n"
      << k << "rebuilt_panels " << r.rebuilt_panels << "\n";
    for (const PhaseStats& ph : r.phases) {
      m << k << "phase." << ph.name << " events=" << ph.events << " messages=" << ph.messages
        << " words=" << ph.words << "\n";
    }
  }
  m << "events " << world.events().size() << "\n"
    << "messages_sent " << world.messages_sent() << "\n"
    << "messages_delivered " << world.messages_delivered() << "\n"
    << "messages_discarded " << world.messages_discarded() << "\n"
    << "words_sent " << world.words_sent() << "\n"
    << "exit_code " << out.exit_code << "\n";
  out.manifest = m.str();
  out.event_log = world.export_log();
  return out;
}

int cmd_run(const RunConfig& config, std::ostream& log) {
  config.validate();
  const FaultSpec faults = parse_fault_specs(config.faults);
  const RunOutcome out =
      execute_run(config.order(), config.q, config.nb, config.seed, faults, describe(faults));
  fs::create_directories(config.out);
  write_file(fs::path(config.out) / "manifest.txt", out.manifest);
  write_file(fs::path(config.out) / "events.log", out.event_log);
  log << out.manifest;
  return out.exit_code;
}

int cmd_stress(const RunConfig& config, std::ostream& log) {
  config.validate();
  FaultSpec base = parse_fault_specs(config.faults);
  if (!base.random && base.scripted.empty()) base.random = RandomKiller{1.0, config.seed};

  std::size_t passed = 0, recovered = 0, unrecoverable = 0, kills = 0;
  int code = kExitOk;
  for (std::size_t i = 0; i < config.iterations; ++i) {
    FaultSpec spec = base;
    if (spec.random) spec.random->seed += i;
    const std::uint64_t seed = config.seed + i;
    const RunOutcome out = execute_run(config.order(), config.q, config.nb, seed, spec, describe(spec));
    kills += out.kills;
    if (!out.recoveries.empty() && !out.degraded) ++recovered;
    if (out.exit_code == kExitOk) {
      ++passed;
    } else if (out.exit_code == kExitUnrecoverable) {
      ++unrecoverable;
      if (code == kExitOk) code = kExitUnrecoverable;
    } else {
      fs::create_directories(config.out);
      write_file(fs::path(config.out) / "failed_manifest.txt", out.manifest);
      write_file(fs::path(config.out) / "failed_events.log", out.event_log);
      log << "iteration " << i << " failed verification\n" << out.manifest;
      return out.exit_code;
    }
  }
  std::ostringstream s;
  s << "command stress\n"
    << "n " << config.order() << "\n"
    << "nb " << config.nb << "\n"
    << "q " << config.q << "\n"
    << "seed " << config.seed << "\n"
    << "fault " << describe(base) << "\n"
    << "iterations " << config.iterations << "\n"
    << "passed " << passed << "\n"
    << "recovered " << recovered << "\n"
    << "unrecoverable " << unrecoverable << "\n"
    << "kills " << kills << "\n"
    << "exit_code " << code << "\n";
  fs::create_directories(config.out);
  write_file(fs::path(config.out) / "stress_summary.txt", s.str());
  log << s.str();
  return code;
}

int cmd_model(const RunConfig& config, std::ostream& log) {
  config.validate();
  PerfParams params;
  if (config.params_file) params = read_params_json(read_file(*config.params_file));
  params = calibrated(params);

  std::ostringstream table, weak, strong;
  write_table_csv(table, weak_scaling_table(params));
  write_weak_family_csv(weak, params);
  write_strong_scaling_csv(strong, params, config.strong_n);

  fs::create_directories(config.out);
  const fs::path dir(config.out);
  write_file(dir / "weak_scaling_table.csv", table.str());
  write_file(dir / "weak_scaling_family.csv", weak.str());
  write_file(dir / "strong_scaling.csv", strong.str());
  write_file(dir / "params.json", params_json(params) + "\n");
  log << table.str();
  return kExitOk;
}

int cmd_verify(const RunConfig& config, std::ostream& log) {
  config.validate();
  auto load = [](const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot read " + path);
    return read_matrix(f);
  };
  const DenseMatrix a = load(config.inputs[0]);
  const DenseMatrix b = load(config.inputs[1]);
  const DenseMatrix c = load(config.inputs[2]);
  Rng rng(config.seed);
  std::vector<double> x(b.cols());
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  const ResidualReport r = residual_check(a, b, c, x);
  log << "residual " << format_double(r.residual) << "\n"
      << "residual_threshold " << format_double(r.threshold) << "\n"
      << "residual_passed " << (r.passed ? "true" : "false") << "\n";
  return r.passed ? kExitOk : kExitResidual;
}

int dispatch(const RunConfig& config, std::ostream& log) {
  switch (config.command) {
    case Command::run: return cmd_run(config, log);
    case Command::stress: return cmd_stress(config, log);
    case Command::model: return cmd_model(config, log);
    case Command::verify: return cmd_verify(config, log);
  }
  return kExitUsage;
}

}  // namespace abft
