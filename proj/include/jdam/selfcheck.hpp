#ifndef JDAM_SELFCHECK_HPP
#define JDAM_SELFCHECK_HPP

#include <string>
#include <vector>

namespace jdam {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelfCheckOptions {
  double snr = 0.16;
};

/// Names of the analytic-score checks, in execution order.
std::vector<std::string> selfcheck_names();

/// Runs one named check; throws ConfigError for unknown names.
CheckResult run_selfcheck(const std::string& name, const SelfCheckOptions& opt = {});

/// Runs all checks.
std::vector<CheckResult> run_all_selfchecks(const SelfCheckOptions& opt = {});

}  // namespace jdam

#endif  // JDAM_SELFCHECK_HPP
