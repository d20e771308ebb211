#pragma once

// Verification suites behind `breen verify` and reused by the acceptance
// tests: independent oracles (finite differences, nested-loop pooling) run
// against the production paths.

#include <map>
#include <string>
#include <vector>

namespace breen::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<CheckResult> grad_suite();    // 64-bit finite-difference checks incl. the full tiny model
std::vector<CheckResult> pool_suite();    // pooling vs nested-loop oracle
std::vector<CheckResult> route_suite();   // expert routing isolation
std::vector<CheckResult> freeze_suite();  // stage-1 freeze policy

std::vector<CheckResult> run_suite(const std::string& name);  // grad|pool|route|freeze|all

bool all_pass(const std::vector<CheckResult>& results);

// Full-model gradient check at the f64 test geometry (d_model 16, 2 layers,
// teacher grid 12, strides {3,4}). Reports max rel err per parameter,
// finite-differencing a seeded sample of coordinates in each.
struct FullGradCheck {
    std::map<std::string, double> group_max_rel;
    double max_rel = 0.0;
    bool pass = false;
};
FullGradCheck full_model_gradcheck(std::uint64_t seed = 7, int coords_per_param = 24, double tol = 1e-3);

// max abs err of pool_grid vs the double-precision loop oracle
double pooling_oracle_max_err(int grids, std::uint64_t seed);

}  // namespace breen::verify
