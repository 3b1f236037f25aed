#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace abft {

/// Machine constants of the alpha-beta-gamma cost model.
struct PerfParams {
  double gamma = 1.0 / 3.75e9;     // seconds per flop
  double beta = 8.0 / 52.5e6;      // seconds per 8-byte word
  double alpha = 0.0;              // seconds per message
  std::size_t nb = 64;             // block size of one local update; 0 drops the detection term
  std::optional<double> t_restart;          // seconds per process to respawn
  std::optional<double> t_reduce_per_word;  // seconds per word rebuilt

  void validate() const;
};

enum class FlopForm {
  simplified,  // 2 n^3 / p
  exact,       // 2 n^2 (n + 1) / p
};

struct PerfPrediction {
  std::size_t procs = 0;
  std::size_t nloc = 0;
  std::size_t n = 0;  // useful (data) matrix order
  double time_total = 0.0;
  double time_compute = 0.0;
  double time_comm = 0.0;
  double time_recovery = 0.0;
  double gflops_per_proc = 0.0;
  double gflops_cumulative = 0.0;
  double overhead_pct = 100.0;  // vs the plain SUMMA run on the same grid
};

/// Plain pipelined SUMMA on a sqrt(p) x sqrt(p) grid.
PerfPrediction summa_time(std::size_t n, std::size_t procs, const PerfParams& params,
                          FlopForm form = FlopForm::simplified);

/// Checksum-carrying SUMMA on a q x q grid, data on (q-1) x (q-1).
/// n = (q-1) nloc; rates count all q^2 processes.
PerfPrediction abft_time_0f(std::size_t nloc, std::size_t q, const PerfParams& params);

/// As above plus one failure: detection, restart, pushdata and checksum.
/// Throws FitError when the recovery constants are unset.
PerfPrediction abft_time_1f(std::size_t nloc, std::size_t q, const PerfParams& params);

/// Plain SUMMA at the same grid and nloc (n = q nloc).
PerfPrediction pblas_weak(std::size_t nloc, std::size_t q, const PerfParams& params);

/// Time ratio to the plain run expressed as rate ratio x 100.
double overhead_pct(const PerfPrediction& baseline, const PerfPrediction& candidate);

enum class RunKind { pblas, abft_0f, abft_1f };
std::string to_string(RunKind kind);
RunKind parse_run_kind(std::string_view s);

struct Observation {
  RunKind kind = RunKind::pblas;
  std::size_t nloc = 0;
  std::size_t q = 0;
  double gflops_per_proc = 0.0;
};

struct FitOptions {
  std::optional<double> fixed_gamma;
  std::optional<double> fixed_beta;
  PerfParams base;  // alpha and nb are taken from here
};

/// Least squares on relative time residuals. gamma and beta come from the
/// failure-free observations; the two recovery constants (non-negative)
/// from the one-failure ones.
PerfParams fit_params(std::span<const Observation> obs, const FitOptions& opts = {});

struct TableRow {
  std::size_t procs = 0;
  RunKind kind = RunKind::pblas;
  PerfPrediction pred;
};

inline constexpr std::size_t kTableProcs[] = {64, 81, 100, 121, 256, 484};
inline constexpr std::size_t kTableNloc = 3000;

/// Weak-scaling table at fixed nloc; 1-failure rows only when fitted.
std::vector<TableRow> weak_scaling_table(const PerfParams& params, std::size_t nloc = kTableNloc);
void write_table_csv(std::ostream& os, const std::vector<TableRow>& rows);

/// Plot data: weak scaling over several nloc, and strong scaling at fixed n.
void write_weak_family_csv(std::ostream& os, const PerfParams& params);
void write_strong_scaling_csv(std::ostream& os, const PerfParams& params, std::size_t n);

/// Reads a JSON object with any of gamma, beta, alpha, nb, t_restart,
/// t_reduce_per_word; other keys are rejected.
PerfParams read_params_json(const std::string& text);
std::string params_json(const PerfParams& params);

}  // namespace abft
