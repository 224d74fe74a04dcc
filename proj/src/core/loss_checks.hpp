#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fmreg {

struct LossCheckOptions {
  double gamma = 10.0;
  double step = 1e-5;
  double tolerance = 1e-4;  ///< max relative gradient error
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossCheckRow {
  std::string name;
  double value = 0.0;
  double expected = 0.0;
  std::optional<double> grad_rel_error;
  bool passed = false;
  std::string note;
};

/// Constructed cases with known values plus finite-difference gradient checks.
std::vector<LossCheckRow> run_loss_checks(const LossCheckOptions& options);

std::string loss_checks_table(const std::vector<LossCheckRow>& rows);
/// {"all_passed": bool, "rows": [{name, value, expected, grad_max_rel_err|null, passed, note}]}
std::string loss_checks_json(const std::vector<LossCheckRow>& rows);

}  // namespace fmreg
