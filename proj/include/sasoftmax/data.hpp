#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sasoftmax/core_types.hpp"

namespace sas {

struct SynthConfig {
    int num_identities = 60;
    int samples_per_identity_per_modality = 20;
    int input_dim = 32;
    double modality_gap = 1.2;
    double noise_sigma = 0.25;
    std::uint64_t seed = 1;
    // One modality direction shared by every identity instead of one per identity.
    bool shared_offset = false;
    // Project each offset orthogonal to its identity center before normalizing.
    bool orthogonal_offset = false;
    // Offsets are drawn uniformly from the unit sphere of a shared random
    // subspace of this rank; 0 (or input_dim) means the whole input space.
    int offset_rank = 8;

    void validate() const;
};

// Identity k: unit center c_k and unit offset u_k. VIS samples are
// c_k + gap/2 u_k + noise, NIR samples c_k - gap/2 u_k + noise. Samples are
// ordered by identity, then VIS before NIR.
Dataset generate_synthetic(const SynthConfig& config);

// Identity-disjoint split; labels are re-densified in ascending order of the
// original identity within each part.
std::pair<Dataset, Dataset> split_by_identity(const Dataset& dataset, double train_fraction,
                                              std::uint64_t seed);

// Mixes a run seed with a batch counter into an independent stream value.
std::uint64_t seed_stream(std::uint64_t seed, std::uint64_t counter);

class PkSampler {
public:
    explicit PkSampler(const Dataset& dataset);

    // P identities, each with K VIS indices followed by K NIR indices.
    // Modality pools smaller than K are sampled with replacement.
    std::vector<std::size_t> sample(int p, int k, std::uint64_t stream) const;

    int num_identities() const { return static_cast<int>(vis_.size()); }

private:
    std::vector<std::vector<std::size_t>> vis_;
    std::vector<std::vector<std::size_t>> nir_;
};

std::vector<std::size_t> pk_sample(const Dataset& dataset, int p, int k, std::uint64_t stream);

// Writes the SynthConfig as a JSON object.
std::string synth_config_json(const SynthConfig& config);

}  // namespace sas
