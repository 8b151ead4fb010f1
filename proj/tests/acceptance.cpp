// Runs every acceptance criterion and prints one PASS/FAIL/SKIP line each.
// Set VRGCN_CORA_DIR to a dataset directory to include the Cora criterion.
#include <cstdlib>
#include <iostream>

#include "vrgcn/kernels.hpp"
#include "vrgcn/verify.hpp"

int main() {
  vrgcn::kernels::configure_threads_from_env();
  vrgcn::AcceptanceOptions opts;
  if (const char* cora = std::getenv("VRGCN_CORA_DIR")) opts.cora_dir = cora;
  const vrgcn::SuiteReport report = vrgcn::run_acceptance(opts);
  vrgcn::print_report(std::cout, report);
  return report.passed() ? 0 : 1;
}
