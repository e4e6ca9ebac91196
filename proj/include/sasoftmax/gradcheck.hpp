#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sasoftmax/core_types.hpp"

namespace sas {

// Central differences of a scalar function of a matrix.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& at, double h);

// ||a - n|| / max(||a||, ||n||), 0 when both vanish.
double relative_error(const Matrix& analytic, const Matrix& numeric);

struct GradcheckOptions {
    std::uint64_t first_seed = 1;
    int seeds = 20;
    double tolerance = 1e-6;
    double pipeline_tolerance = 1e-5;
    double step = 1e-5;
    // Test hook: the analytic gradient of the named check (or "all") is
    // scaled by 1.001 before comparison.
    std::string corrupt;
};

struct GradcheckRow {
    std::string check;
    std::uint64_t seed = 0;
    double rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradcheckSummary {
    std::string check;
    int runs = 0;
    int failures = 0;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckRow> rows;

    bool all_passed() const;
    std::vector<GradcheckSummary> summary() const;
};

// Names of every check run by run_gradcheck, in order.
std::vector<std::string> gradcheck_names();

// Instances are drawn per seed with d in [2, 8], N in [2, 6], B in [2, 12].
GradcheckReport run_gradcheck(const GradcheckOptions& options);

// `check,seed,rel_err,tolerance,passed`
std::string gradcheck_csv(const GradcheckReport& report);
std::string gradcheck_markdown(const GradcheckReport& report);

}  // namespace sas
