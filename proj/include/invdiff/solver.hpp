#pragma once

// Accelerated proximal gradient for
//   min_{a >= 0}  ||A a - d||_w^2 + lambda * sum_{m,n} || a_{m,n,K'} ||_2
// where K' is the regularizer support of the sigma grid.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "invdiff/grid.hpp"
#include "invdiff/operator.hpp"
#include "invdiff/parallel.hpp"

namespace invdiff {

struct SolverConfig {
  double lambda = 4000.0;
  int max_iters = 500;
  double rel_tol = 1e-7;
  double step_safety = 0.95;
  bool restart = true;
  int norm_iters = 50;  // power iterations for the Lipschitz estimate
  int window = 5;       // consecutive small changes needed to stop

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("solver: lambda must be finite and >= 0");
    if (max_iters < 1) throw std::invalid_argument("solver: max_iters must be positive");
    if (!(rel_tol > 0.0)) throw std::invalid_argument("solver: rel_tol must be positive");
    if (!(step_safety > 0.0 && step_safety <= 1.0)) throw std::invalid_argument("solver: step_safety must be in (0, 1]");
    if (norm_iters < 20) throw std::invalid_argument("solver: norm_iters must be >= 20");
    if (window < 1) throw std::invalid_argument("solver: window must be positive");
  }
};

struct TraceEntry {
  int iter = 0;
  double cost = 0.0;
  double data = 0.0;
  double reg = 0.0;
  double step = 0.0;
  bool restart = false;
};

struct SolveTrace {
  std::vector<TraceEntry> entries;
  int iterations = 0;
  bool converged = false;
  double lipschitz = 0.0;  // 2 * ||A||^2 as estimated

  void write_csv(std::ostream& os) const {
    os << "iter,cost,data,reg,step,restart\n";
    char buf[160];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%d\n", e.iter, e.cost, e.data, e.reg, e.step,
                    e.restart ? 1 : 0);
      os << buf;
    }
  }
};

class SolveError : public std::runtime_error {
 public:
  SolveError(const std::string& what, SolveTrace trace) : std::runtime_error(what), trace_(std::move(trace)) {}
  [[nodiscard]] const SolveTrace& trace() const { return trace_; }

 private:
  SolveTrace trace_;
};

struct CostTerms {
  double total = 0.0;
  double data = 0.0;
  double reg = 0.0;
};

/// sum over pixels of the Euclidean norm of the supported bins.
inline double group_regularizer(const PsdrTensor& a, const SigmaGrid& grid) {
  const std::size_t P = a.plane_size();
  double reg = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.bins(); ++k) {
      if (!grid.in_support(k)) continue;
      const double v = a.values()[k * P + i];
      s += v * v;
    }
    reg += std::sqrt(s);
  }
  return reg;
}

/// Cost from a precomputed prediction A a. Infeasible a gives total = +inf.
inline CostTerms cost_from_prediction(const PsdrTensor& a, const Image& prediction, const Observation& obs,
                                      const SigmaGrid& grid, double lambda) {
  CostTerms c;
  c.data = DiffusionOperator::residual_norm_sq(prediction, obs);
  c.reg = group_regularizer(a, grid);
  c.total = a.non_negative() ? c.data + lambda * c.reg : std::numeric_limits<double>::infinity();
  return c;
}

inline CostTerms cost(const PsdrTensor& a, const Observation& obs, const DiffusionOperator& op,
                      const SolverConfig& cfg) {
  return cost_from_prediction(a, op.forward(a), obs, op.bank().grid, cfg.lambda);
}

inline CostTerms cost(const PsdrTensor& a, const Observation& obs, const KernelBank& bank, const SolverConfig& cfg) {
  return cost(a, obs, DiffusionOperator(bank, obs.rows(), obs.cols()), cfg);
}

/// 2 A*(A a - d) from a precomputed prediction A a.
inline PsdrTensor grad_from_prediction(const Image& prediction, const Observation& obs, const DiffusionOperator& op) {
  Image r(obs.rows(), obs.cols());
  auto rv = r.values();
  const auto pv = prediction.values();
  const auto dv = obs.data.values();
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] = 2.0 * (pv[i] - dv[i]);
  return op.adjoint(r, obs);
}

inline PsdrTensor grad_data(const PsdrTensor& a, const Observation& obs, const DiffusionOperator& op) {
  return grad_from_prediction(op.forward(a), obs, op);
}

inline PsdrTensor grad_data(const PsdrTensor& a, const Observation& obs, const KernelBank& bank) {
  return grad_data(a, obs, DiffusionOperator(bank, obs.rows(), obs.cols()));
}

/// argmin_{x >= 0} 1/2 ||x - v||^2 + threshold * ||x_S||_2 for one pixel.
inline std::vector<double> prox_group_nonneg(std::span<const double> v, double threshold,
                                             const std::vector<bool>& support) {
  if (!(threshold >= 0.0)) throw std::invalid_argument("prox_group_nonneg: threshold must be >= 0");
  if (support.size() != v.size()) throw std::invalid_argument("prox_group_nonneg: support size mismatch");
  std::vector<double> x(v.size());
  double norm_sq = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    x[k] = std::max(v[k], 0.0);
    if (support[k]) norm_sq += x[k] * x[k];
  }
  const double norm = std::sqrt(norm_sq);
  const double shrink = norm > threshold ? 1.0 - threshold / norm : 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (support[k]) x[k] *= shrink;
  }
  return x;
}

/// Pixel-wise prox of a whole tensor, in place.
inline void prox_group_nonneg(PsdrTensor& v, double threshold, const SigmaGrid& grid) {
  const std::size_t P = v.plane_size();
  const std::size_t K = v.bins();
  auto data = v.values();
  for (std::size_t i = 0; i < P; ++i) {
    double norm_sq = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      double& x = data[k * P + i];
      x = std::max(x, 0.0);
      if (grid.in_support(k)) norm_sq += x * x;
    }
    const double norm = std::sqrt(norm_sq);
    const double shrink = norm > threshold ? 1.0 - threshold / norm : 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      if (grid.in_support(k)) data[k * P + i] *= shrink;
    }
  }
}

/// Smallest lambda for which a = 0 satisfies the optimality condition on the
/// supported bins: max over pixels of || [-grad f(0)]_+ restricted to K' ||.
/// Useful as the unit of a lambda sweep.
inline double lambda_scale(const Observation& obs, const DiffusionOperator& op) {
  const PsdrTensor g = grad_from_prediction(Image(obs.rows(), obs.cols()), obs, op);
  const SigmaGrid& grid = op.bank().grid;
  const std::size_t P = g.plane_size();
  double best = 0.0;
  for (std::size_t i = 0; i < P; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < g.bins(); ++k) {
      if (!grid.in_support(k)) continue;
      const double v = std::max(-g.values()[k * P + i], 0.0);
      s += v * v;
    }
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

namespace detail {

// x <- a + c (b - a), element-wise.
inline void extrapolate(std::span<const double> a, std::span<const double> b, double c, std::span<double> x) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = a[i] + c * (b[i] - a[i]);
}

}  // namespace detail

/// Refuses problems for which the discrete minimizer is not guaranteed to exist.
inline void check_existence(const Observation& obs, const SigmaGrid& grid, const SolverConfig& cfg) {
  if (cfg.lambda != 0.0 || grid.full_support()) return;
  const auto w = obs.weights.values();
  if (std::any_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
    throw std::invalid_argument(
        "solver: lambda = 0 with zero weights and a partial regularizer support; a minimizer is not guaranteed to "
        "exist");
  }
}

inline std::pair<PsdrTensor, SolveTrace> fista_solve(const Observation& obs, const DiffusionOperator& op,
                                                     const SolverConfig& cfg,
                                                     const std::optional<PsdrTensor>& init = std::nullopt) {
  cfg.validate();
  obs.validate();
  const SigmaGrid& grid = op.bank().grid;
  check_existence(obs, grid, cfg);
  if (obs.rows() != op.rows() || obs.cols() != op.cols()) throw std::invalid_argument("fista_solve: dimension mismatch");

  SolveTrace trace;
  const double L = op.norm_estimate(obs, cfg.norm_iters);
  trace.lipschitz = 2.0 * L * L;
  const double step = trace.lipschitz > 0.0 ? cfg.step_safety / trace.lipschitz : 1.0;
  const double threshold = step * cfg.lambda;

  PsdrTensor x = init ? *init : PsdrTensor(obs.rows(), obs.cols(), op.bins());
  if (x.rows() != obs.rows() || x.cols() != obs.cols() || x.bins() != op.bins()) {
    throw std::invalid_argument("fista_solve: initial tensor has the wrong shape");
  }
  if (!x.non_negative()) throw std::invalid_argument("fista_solve: initial tensor must be non-negative");

  Image Ax = op.forward(x);
  CostTerms F = cost_from_prediction(x, Ax, obs, grid, cfg.lambda);
  if (!std::isfinite(F.total)) throw SolveError("fista_solve: non-finite initial cost", trace);

  PsdrTensor y = x;
  Image Ay = Ax;
  double t = 1.0;
  int small_changes = 0;

  auto prox_grad_step = [&](const PsdrTensor& from, const Image& A_from) {
    PsdrTensor g = grad_from_prediction(A_from, obs, op);
    PsdrTensor v = from;
    auto vv = v.values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < vv.size(); ++i) vv[i] -= step * gv[i];
    prox_group_nonneg(v, threshold, grid);
    return v;
  };

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    PsdrTensor x_new = prox_grad_step(y, Ay);
    Image Ax_new = op.forward(x_new);
    CostTerms F_new = cost_from_prediction(x_new, Ax_new, obs, grid, cfg.lambda);
    bool restarted = false;

    if (cfg.restart && !(F_new.total <= F.total)) {
      // Drop the momentum and take a plain step from the current iterate.
      restarted = true;
      t = 1.0;
      x_new = prox_grad_step(x, Ax);
      Ax_new = op.forward(x_new);
      F_new = cost_from_prediction(x_new, Ax_new, obs, grid, cfg.lambda);
      if (std::isfinite(F_new.total) && F_new.total > F.total) {
        // Round-off level increase: keep the current iterate.
        x_new = x;
        Ax_new = Ax;
        F_new = F;
      }
    }

    if (!std::isfinite(F_new.total)) {
      trace.iterations = iter;
      throw SolveError("fista_solve: non-finite cost at iteration " + std::to_string(iter), trace);
    }
    trace.entries.push_back({iter, F_new.total, F_new.data, F_new.reg, step, restarted});
    trace.iterations = iter;

    const bool fixed_point = x_new == x && (restarted || x == y);
    const double rel = std::abs(F.total - F_new.total) / std::max(std::abs(F.total), std::numeric_limits<double>::min());
    small_changes = rel < cfg.rel_tol ? small_changes + 1 : 0;

    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double c = 1.0 + (t - 1.0) / t_new;  // y = x + c (x_new - x)
    detail::extrapolate(x.values(), x_new.values(), c, y.values());
    detail::extrapolate(Ax.values(), Ax_new.values(), c, Ay.values());
    t = t_new;
    x = std::move(x_new);
    Ax = std::move(Ax_new);
    F = F_new;

    if (fixed_point || small_changes >= cfg.window) {
      trace.converged = true;
      break;
    }
  }
  return {std::move(x), std::move(trace)};
}

inline std::pair<PsdrTensor, SolveTrace> fista_solve(const Observation& obs, const KernelBank& bank,
                                                     const SolverConfig& cfg,
                                                     const std::optional<PsdrTensor>& init = std::nullopt) {
  return fista_solve(obs, DiffusionOperator(bank, obs.rows(), obs.cols()), cfg, init);
}

}  // namespace invdiff
