#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "abft/dense.hpp"
#include "abft/grid.hpp"
#include "abft/summa.hpp"

namespace abft {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitResidual = 3,
  kExitUnrecoverable = 4,
  kExitInconsistent = 5,
};

/// One scripted kill as written on the command line (grid coordinates).
struct ScriptedFault {
  std::size_t row = 0;
  std::size_t col = 0;
  Trigger trigger;
};

struct FaultSpec {
  std::vector<ScriptedFault> scripted;
  std::optional<RandomKiller> random;
};

/// "rank=R,C@step=K", "rank=R,C@event=N" or "random:rate=F,seed=S".
/// Throws InvalidArgument on anything else.
FaultSpec parse_fault_spec(std::string_view text);
/// Merges several specs; at most one may be random.
FaultSpec parse_fault_specs(const std::vector<std::string>& texts);
/// Resolves coordinates against a q x q grid.
FaultPlan make_fault_plan(const FaultSpec& spec, std::size_t q);
std::string describe(const FaultSpec& spec);

enum class Command { run, stress, model, verify };
std::string to_string(Command c);

struct RunConfig {
  Command command = Command::run;
  std::optional<std::size_t> n;
  std::optional<std::size_t> nloc;
  std::size_t q = 3;
  std::size_t nb = 64;
  std::uint64_t seed = 1;
  std::vector<std::string> faults;
  std::string out = ".";
  std::size_t iterations = 30;
  std::optional<std::string> params_file;
  std::size_t strong_n = 24000;      // model: fixed order of the strong-scaling sweep
  std::vector<std::string> inputs;   // verify: A, B, C matrix files

  /// Throws InvalidArgument on contradictory or out-of-range settings.
  void validate() const;
  /// Order of the data matrices.
  std::size_t order() const;
};

struct RunOutcome {
  int exit_code = kExitOk;
  bool degraded = false;
  std::optional<ResidualReport> residual;
  bool consistent = false;
  std::vector<RecoveryReport> recoveries;
  std::size_t kills = 0;
  std::string manifest;
  std::string event_log;
};

/// One ft_pdgemm on fresh random operands drawn from `seed`.
RunOutcome execute_run(std::size_t n, std::size_t q, std::size_t nb, std::uint64_t seed,
                       const FaultSpec& faults, std::string_view fault_text);

/// The subcommands. Each writes its artifacts under config.out, a short
/// human summary to `log`, and returns the process exit code.
int cmd_run(const RunConfig& config, std::ostream& log);
int cmd_stress(const RunConfig& config, std::ostream& log);
int cmd_model(const RunConfig& config, std::ostream& log);
int cmd_verify(const RunConfig& config, std::ostream& log);
int dispatch(const RunConfig& config, std::ostream& log);

}  // namespace abft
