#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sasoftmax/core_types.hpp"

namespace sas {

// Softmax failure witness: every sample is classified correctly by the
// prototypes (v1 and n1 prefer W1, n2 prefers W2), yet the cross-modality
// retrieval for v1 ranks the impostor n2 above the true match n1.
struct SoftmaxWitness {
    Vector v1, n1, n2, w1, w2;
};

struct WitnessVerdict {
    double v1_margin;         // cos<v1,W1> - cos<v1,W2>
    double n1_margin;         // cos<n1,W1> - cos<n1,W2>
    double n2_margin;         // cos<n2,W2> - cos<n2,W1>
    double retrieval_margin;  // cos<v1,n2> - cos<v1,n1>

    bool holds() const {
        return v1_margin > 0.0 && n1_margin > 0.0 && n2_margin > 0.0 && retrieval_margin > 0.0;
    }
};

WitnessVerdict verify_witness(const SoftmaxWitness& w);

struct WitnessSearch {
    SoftmaxWitness witness;
    WitnessVerdict verdict;
    std::uint64_t attempts = 0;
};

// Random search over Gaussian instances; throws NumericError when the budget
// runs out without a witness.
WitnessSearch check_softmax_failure_mode(std::uint64_t seed = 1, std::uint64_t budget = 1000000,
                                         int dim = 2);

std::string witness_json(const WitnessSearch& search);
SoftmaxWitness witness_from_json(const std::string& text);

// One gradient step on a single VIS embedding x of identity 0 (N = 2) under
// the unmasked and masked feature-side loss. `pair` is a fixed NIR sample of
// the same identity; distances are Euclidean.
struct AmbiguityInstance {
    std::uint64_t seed = 0;
    Matrix prototypes;  // d x 4
    Vector x;
    Vector pair;
    double step_size = 0.0;
    double distance_before = 0.0;          // d1
    double distance_after_unmasked = 0.0;  // d2
    double distance_after_masked = 0.0;
    double loss_before_unmasked = 0.0;
    double loss_after_unmasked = 0.0;
    double loss_before_masked = 0.0;
    double loss_after_masked = 0.0;
    double masked_own_column_coefficient = 0.0;  // must be exactly 0

    bool ambiguous() const {
        return distance_after_unmasked > distance_before && loss_after_unmasked < loss_before_unmasked;
    }
};

AmbiguityInstance fm_ambiguity_instance(std::uint64_t seed, int dim = 2);

struct AmbiguityReport {
    std::vector<AmbiguityInstance> instances;
    int ambiguous_count = 0;
    // Seed of the first ambiguous instance, or -1.
    long first_ambiguous_seed = -1;
    bool masked_coefficients_zero = true;
};

AmbiguityReport check_fm_ambiguity(std::uint64_t first_seed, int count, int dim = 2);

std::string ambiguity_json(const AmbiguityReport& report);

struct AngularProbeRow {
    double theta_i, theta_j, scale;
    double first, mixed;
    double fd_first, fd_mixed;
    double rel_err_first, rel_err_mixed;
};

struct AngularProbeReport {
    std::vector<AngularProbeRow> rows;
    int positive_first = 0;
    int negative_mixed = 0;
    double max_rel_err = 0.0;

    bool all_signs_hold() const {
        const auto n = static_cast<int>(rows.size());
        return positive_first == n && negative_mixed == n;
    }
};

// theta_i, theta_j over {0.2, 0.4, ..., 2.8}, scale over {1, 8, 16}.
AngularProbeReport check_eq3_grid();

std::string angular_probe_csv(const AngularProbeReport& report);

}  // namespace sas
