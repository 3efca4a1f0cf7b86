#pragma once

// Finite-difference gradient checking and the CMI oracle self-checks used by
// the test suites and the `gradcheck` / `oracle` CLI commands.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "infosculpt/autodiff.hpp"

namespace infosculpt {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  /// Floor of the relative-error denominator, so that entries where both
  /// gradients are near zero are judged on absolute discrepancy.
  double abs_tol = 1e-6;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  bool passed = true;
};

/// Builds a scalar from differentiable leaves holding `inputs`.
using ScalarGraph = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences for every
/// entry of every input.
GradCheckResult check_gradient(std::string name, const ScalarGraph& f, const std::vector<Matrix>& inputs,
                               const GradCheckOptions& options = {});

/// Folds several results of the same check (different random points) into one.
GradCheckResult merge_results(std::string name, std::span<const GradCheckResult> parts);

/// Every autodiff operator, loss term and model head at `instances` random
/// points each (K <= 5, batch <= 8).
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, std::size_t instances,
                                                const GradCheckOptions& options = {});

struct OracleCheckResult {
  std::size_t instances = 0;
  /// max |estimator - joint expansion| over instances.
  double max_route_gap = 0.0;
  /// max |loss_cmi(raw targets, exact centroids) - oracle|.
  double max_loss_gap = 0.0;
  bool passed = false;
};

/// Random strictly positive instances; passes when both gaps are <= tol.
OracleCheckResult run_oracle_suite(std::uint64_t seed, std::size_t instances, double tol = 1e-10);

}  // namespace infosculpt
