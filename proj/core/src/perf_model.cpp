#include "abft/perf_model.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "abft/dense.hpp"
#include "abft/errors.hpp"

namespace abft {

namespace {

// time = gamma * flops + beta * words + alpha * messages
struct CostTerms {
  double flops = 0.0;
  double words = 0.0;
  double messages = 0.0;
};

std::size_t grid_side(std::size_t procs) {
  const auto q = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(procs))));
  if (procs == 0 || q * q != procs) {
    throw InvalidArgument("process count " + std::to_string(procs) + " is not a perfect square");
  }
  return q;
}

CostTerms summa_terms(double n, double q, FlopForm form) {
  const double p = q * q;
  CostTerms t;
  t.flops = form == FlopForm::exact ? 2.0 * n * n * (n + 1.0) / p : 2.0 * n * n * n / p;
  t.messages = 2.0 * (n + 2.0 * q - 3.0);
  t.words = t.messages * n / q;
  return t;
}

// n data rows spread over (q-1)^2 ranks, the extended matrix has order n + n/(q-1).
CostTerms abft_terms(double n, double q) {
  const double p = q * q;
  const double ext = n + n / (q - 1.0);
  CostTerms t;
  t.flops = 2.0 * ext * ext * n / p;
  t.messages = 2.0 * (n + 2.0 * q - 3.0);
  t.words = t.messages * ext / q;
  return t;
}

// Recovery terms that do not depend on the fitted constants.
CostTerms recovery_fixed_terms(double n, double q, std::size_t nb) {
  const double nloc = n / (q - 1.0);
  const double ext = n + nloc;
  CostTerms t;
  t.flops = 2.0 * nloc * nloc * static_cast<double>(nb);  // one local rank-nb update
  t.messages = 2.0 * (2.0 * q - 2.0);                      // one pipeline fill and drain
  t.words = t.messages * ext / q;
  return t;
}

double restart_units(double q) { return q * q; }
double reduce_units(double n, double q) {
  const double nloc = n / (q - 1.0);
  return 3.0 * nloc * nloc;  // A, B and C blocks of the lost rank
}

double eval(const CostTerms& t, const PerfParams& p) {
  return p.gamma * t.flops + p.beta * t.words + p.alpha * t.messages;
}

PerfPrediction finish(std::size_t procs, std::size_t nloc, double n, double compute, double comm,
                      double recovery) {
  PerfPrediction r;
  r.procs = procs;
  r.nloc = nloc;
  r.n = static_cast<std::size_t>(std::llround(n));
  r.time_compute = compute;
  r.time_comm = comm;
  r.time_recovery = recovery;
  r.time_total = compute + comm + recovery;
  const double useful = 2.0 * n * n * n;
  r.gflops_per_proc = useful / (static_cast<double>(procs) * r.time_total) / 1e9;
  r.gflops_cumulative = r.gflops_per_proc * static_cast<double>(procs);
  return r;
}

PerfPrediction abft_prediction(double n, std::size_t nloc, std::size_t q, const PerfParams& p,
                               bool with_failure) {
  p.validate();
  if (q < 2) throw InvalidArgument("checksum grid needs q >= 2");
  const auto qd = static_cast<double>(q);
  const CostTerms t = abft_terms(n, qd);
  double recovery = 0.0;
  if (with_failure) {
    if (!p.t_restart || !p.t_reduce_per_word) {
      throw FitError("unfitted: the one-failure model needs t_restart and t_reduce_per_word");
    }
    recovery = eval(recovery_fixed_terms(n, qd, p.nb), p) + *p.t_restart * restart_units(qd) +
               *p.t_reduce_per_word * reduce_units(n, qd);
  }
  return finish(q * q, nloc, n, p.gamma * t.flops, p.beta * t.words + p.alpha * t.messages,
                recovery);
}

// Weighted least squares on the given columns; columns are rescaled to unit
// norm first so the solve does not see the 1e-10 scale of gamma.
struct LsResult {
  std::vector<double> x;
  double sse = 0.0;
  double cond = 0.0;
};

LsResult least_squares(const std::vector<std::vector<double>>& rows, const std::vector<double>& y,
                       const std::vector<std::size_t>& cols) {
  const std::size_t k = cols.size();
  LsResult out;
  out.x.assign(rows.empty() ? 0 : rows.front().size(), 0.0);
  if (k > 0) {
    std::vector<double> scale(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      for (const auto& r : rows) scale[j] += r[cols[j]] * r[cols[j]];
      scale[j] = std::sqrt(scale[j]);
      if (scale[j] == 0.0) scale[j] = 1.0;
    }
    DenseMatrix normal(k, k);
    DenseMatrix rhs(k, 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t a = 0; a < k; ++a) {
        const double va = rows[i][cols[a]] / scale[a];
        rhs(a, 0) += va * y[i];
        for (std::size_t b = 0; b < k; ++b) normal(a, b) += va * rows[i][cols[b]] / scale[b];
      }
    }
    out.cond = condition_number(normal);
    if (!std::isfinite(out.cond) || out.cond > 1e12) return out;
    const DenseMatrix sol = solve(normal, rhs);
    for (std::size_t j = 0; j < k; ++j) out.x[cols[j]] = sol(j, 0) / scale[j];
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double r = -y[i];
    for (std::size_t j = 0; j < out.x.size(); ++j) r += rows[i][j] * out.x[j];
    out.sse += r * r;
  }
  return out;
}

double observed_time(const Observation& o) {
  if (!(o.gflops_per_proc > 0.0)) throw InvalidArgument("observed rate must be positive");
  if (o.q < 2) throw InvalidArgument("observation grid needs q >= 2");
  const double q = static_cast<double>(o.q);
  const double n = static_cast<double>(o.nloc) * (o.kind == RunKind::pblas ? q : q - 1.0);
  return 2.0 * n * n * n / (q * q * o.gflops_per_proc * 1e9);
}

double data_order(const Observation& o) {
  const double q = static_cast<double>(o.q);
  return static_cast<double>(o.nloc) * (o.kind == RunKind::pblas ? q : q - 1.0);
}

std::string fmt(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

void PerfParams::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be positive");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidArgument("beta must be non-negative");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be non-negative");
  if (t_restart && !(*t_restart >= 0.0)) throw InvalidArgument("t_restart must be non-negative");
  if (t_reduce_per_word && !(*t_reduce_per_word >= 0.0)) {
    throw InvalidArgument("t_reduce_per_word must be non-negative");
  }
}

PerfPrediction summa_time(std::size_t n, std::size_t procs, const PerfParams& params,
                          FlopForm form) {
  params.validate();
  const std::size_t q = grid_side(procs);
  if (n < q) throw InvalidArgument("matrix order " + std::to_string(n) + " smaller than grid side");
  const auto nd = static_cast<double>(n);
  const CostTerms t = summa_terms(nd, static_cast<double>(q), form);
  PerfPrediction r = finish(procs, n / q, nd, params.gamma * t.flops,
                            params.beta * t.words + params.alpha * t.messages, 0.0);
  return r;
}

PerfPrediction pblas_weak(std::size_t nloc, std::size_t q, const PerfParams& params) {
  return summa_time(q * nloc, q * q, params);
}

double overhead_pct(const PerfPrediction& baseline, const PerfPrediction& candidate) {
  return baseline.gflops_per_proc / candidate.gflops_per_proc * 100.0;
}

PerfPrediction abft_time_0f(std::size_t nloc, std::size_t q, const PerfParams& params) {
  PerfPrediction r =
      abft_prediction(static_cast<double>((q < 2 ? 1 : q - 1) * nloc), nloc, q, params, false);
  r.overhead_pct = overhead_pct(pblas_weak(nloc, q, params), r);
  return r;
}

PerfPrediction abft_time_1f(std::size_t nloc, std::size_t q, const PerfParams& params) {
  PerfPrediction r =
      abft_prediction(static_cast<double>((q < 2 ? 1 : q - 1) * nloc), nloc, q, params, true);
  r.overhead_pct = overhead_pct(pblas_weak(nloc, q, params), r);
  return r;
}

std::string to_string(RunKind kind) {
  switch (kind) {
    case RunKind::pblas: return "pblas";
    case RunKind::abft_0f: return "abft_0f";
    case RunKind::abft_1f: return "abft_1f";
  }
  return "?";
}

RunKind parse_run_kind(std::string_view s) {
  if (s == "pblas") return RunKind::pblas;
  if (s == "abft_0f") return RunKind::abft_0f;
  if (s == "abft_1f") return RunKind::abft_1f;
  throw InvalidArgument("unknown run kind '" + std::string(s) + "'");
}

PerfParams fit_params(std::span<const Observation> obs, const FitOptions& opts) {
  PerfParams out = opts.base;
  std::vector<const Observation*> clean;
  std::vector<const Observation*> failed;
  for (const auto& o : obs) (o.kind == RunKind::abft_1f ? failed : clean).push_back(&o);

  const std::size_t free_machine = (opts.fixed_gamma ? 0 : 1) + (opts.fixed_beta ? 0 : 1);
  std::string missing;
  if (clean.size() < free_machine) {
    missing += "need " + std::to_string(free_machine) + " failure-free observations (pblas or abft_0f), got " +
               std::to_string(clean.size());
  }
  if (failed.size() == 1 || (failed.empty() && free_machine == 0)) {
    if (!missing.empty()) missing += "; ";
    missing += "need 2 one-failure observations (abft_1f), got " + std::to_string(failed.size());
  }
  if (!missing.empty()) throw FitError("underdetermined: " + missing);

  if (opts.fixed_gamma) out.gamma = *opts.fixed_gamma;
  if (opts.fixed_beta) out.beta = *opts.fixed_beta;

  // Stage 1: relative residual (gamma F + beta W + alpha M) / T - 1.
  if (free_machine > 0) {
    std::vector<std::vector<double>> rows;
    std::vector<double> y;
    for (const Observation* o : clean) {
      const double t_obs = observed_time(*o);
      const double q = static_cast<double>(o->q);
      const CostTerms t = o->kind == RunKind::pblas ? summa_terms(data_order(*o), q, FlopForm::simplified)
                                                    : abft_terms(data_order(*o), q);
      double known = out.alpha * t.messages;
      if (opts.fixed_gamma) known += out.gamma * t.flops;
      if (opts.fixed_beta) known += out.beta * t.words;
      rows.push_back({t.flops / t_obs, t.words / t_obs});
      y.push_back(1.0 - known / t_obs);
    }
    std::vector<std::size_t> cols;
    if (!opts.fixed_gamma) cols.push_back(0);
    if (!opts.fixed_beta) cols.push_back(1);
    const LsResult ls = least_squares(rows, y, cols);
    if (!std::isfinite(ls.cond) || ls.cond > 1e12) {
      throw FitError("underdetermined: failure-free observations cannot separate gamma from beta");
    }
    if (!opts.fixed_gamma) out.gamma = ls.x[0];
    if (!opts.fixed_beta) out.beta = ls.x[1];
    if (!(out.gamma > 0.0) || !(out.beta > 0.0)) {
      throw FitError("fit gave non-positive gamma or beta (gamma=" + format_double(out.gamma) +
                     ", beta=" + format_double(out.beta) + "); pin one of them");
    }
  }

  if (failed.empty()) return out;

  // Stage 2: recovery constants, constrained non-negative by trying every
  // active set and keeping the best feasible one.
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (const Observation* o : failed) {
    const double t_obs = observed_time(*o);
    const double q = static_cast<double>(o->q);
    const double n = data_order(*o);
    const double known = eval(abft_terms(n, q), out) + eval(recovery_fixed_terms(n, q, out.nb), out);
    rows.push_back({restart_units(q) / t_obs, reduce_units(n, q) / t_obs});
    y.push_back(1.0 - known / t_obs);
  }
  const std::vector<std::vector<std::size_t>> active{{0, 1}, {0}, {1}, {}};
  std::optional<LsResult> best;
  for (const auto& cols : active) {
    LsResult ls = least_squares(rows, y, cols);
    if (cols.size() > 0 && (!std::isfinite(ls.cond) || ls.cond > 1e12)) continue;
    if (ls.x[0] < 0.0 || ls.x[1] < 0.0) continue;
    if (!best || ls.sse < best->sse) best = std::move(ls);
  }
  if (!best) {
    throw FitError("underdetermined: one-failure observations cannot separate the recovery constants");
  }
  out.t_restart = best->x[0];
  out.t_reduce_per_word = best->x[1];
  return out;
}

std::vector<TableRow> weak_scaling_table(const PerfParams& params, std::size_t nloc) {
  std::vector<TableRow> rows;
  const bool fitted = params.t_restart && params.t_reduce_per_word;
  for (RunKind kind : {RunKind::pblas, RunKind::abft_0f, RunKind::abft_1f}) {
    if (kind == RunKind::abft_1f && !fitted) continue;
    for (std::size_t procs : kTableProcs) {
      const std::size_t q = grid_side(procs);
      TableRow row{procs, kind, {}};
      switch (kind) {
        case RunKind::pblas: row.pred = pblas_weak(nloc, q, params); break;
        case RunKind::abft_0f: row.pred = abft_time_0f(nloc, q, params); break;
        case RunKind::abft_1f: row.pred = abft_time_1f(nloc, q, params); break;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_table_csv(std::ostream& os, const std::vector<TableRow>& rows) {
  os << "procs,kind,nloc,n,gflops_per_proc_model,gflops_cumulative_model,overhead_pct\n";
  for (const auto& r : rows) {
    os << r.procs << ',' << to_string(r.kind) << ',' << r.pred.nloc << ',' << r.pred.n << ','
       << fmt(r.pred.gflops_per_proc, 4) << ',' << fmt(r.pred.gflops_cumulative, 2) << ','
       << fmt(r.pred.overhead_pct, 2) << '\n';
  }
}

void write_weak_family_csv(std::ostream& os, const PerfParams& params) {
  os << "procs,kind,nloc,n,gflops_per_proc_model\n";
  for (std::size_t nloc : {1000u, 2000u, 3000u, 4000u}) {
    for (RunKind kind : {RunKind::pblas, RunKind::abft_0f}) {
      for (std::size_t q = 8; q <= 22; ++q) {
        const PerfPrediction p =
            kind == RunKind::pblas ? pblas_weak(nloc, q, params) : abft_time_0f(nloc, q, params);
        os << q * q << ',' << to_string(kind) << ',' << nloc << ',' << p.n << ','
           << fmt(p.gflops_per_proc, 4) << '\n';
      }
    }
  }
}

void write_strong_scaling_csv(std::ostream& os, const PerfParams& params, std::size_t n) {
  params.validate();
  os << "procs,n,gflops_per_proc_pblas,gflops_per_proc_abft_0f,overhead_pct\n";
  for (std::size_t q = 8; q <= 22; ++q) {
    const PerfPrediction base = summa_time(n, q * q, params);
    const PerfPrediction ft =
        abft_prediction(static_cast<double>(n), n / (q - 1), q, params, false);
    os << q * q << ',' << n << ',' << fmt(base.gflops_per_proc, 4) << ','
       << fmt(ft.gflops_per_proc, 4) << ',' << fmt(overhead_pct(base, ft), 2) << '\n';
  }
}

PerfParams read_params_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("params: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("params: expected a JSON object");
  PerfParams p;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw InvalidArgument("params: '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "gamma") p.gamma = v;
    else if (key == "beta") p.beta = v;
    else if (key == "alpha") p.alpha = v;
    else if (key == "nb") p.nb = value.get<std::size_t>();
    else if (key == "t_restart") p.t_restart = v;
    else if (key == "t_reduce_per_word") p.t_reduce_per_word = v;
    else throw InvalidArgument("params: unknown key '" + key + "'");
  }
  p.validate();
  return p;
}

std::string params_json(const PerfParams& params) {
  nlohmann::ordered_json j;
  j["gamma"] = params.gamma;
  j["beta"] = params.beta;
  j["alpha"] = params.alpha;
  j["nb"] = params.nb;
  if (params.t_restart) j["t_restart"] = *params.t_restart;
  if (params.t_reduce_per_word) j["t_reduce_per_word"] = *params.t_reduce_per_word;
  return j.dump(2);
}

}  // namespace abft
