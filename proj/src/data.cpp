#include "sasoftmax/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace sas {

void SynthConfig::validate() const {
    if (num_identities <= 0) throw ContractViolation("synth: num_identities must be positive");
    if (samples_per_identity_per_modality <= 0)
        throw ContractViolation("synth: samples_per_identity_per_modality must be positive");
    if (input_dim <= 0) throw ContractViolation("synth: input_dim must be positive");
    if (!(modality_gap >= 0.0)) throw ContractViolation("synth: modality_gap must be >= 0");
    if (!(noise_sigma >= 0.0)) throw ContractViolation("synth: noise_sigma must be >= 0");
    if (offset_rank < 0 || offset_rank > input_dim)
        throw ContractViolation("synth: offset_rank must lie in [0, input_dim]");
    if (orthogonal_offset && input_dim < 2)
        throw ContractViolation("synth: orthogonal offsets need input_dim >= 2");
}

namespace {

Vector random_unit(std::mt19937_64& rng, std::normal_distribution<double>& normal, int dim) {
    Vector v(dim);
    do {
        for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    } while (v.norm() < 1e-8);
    return v / v.norm();
}

Vector orthogonal_unit(std::mt19937_64& rng, std::normal_distribution<double>& normal,
                       const Vector& against) {
    Vector v;
    do {
        v = random_unit(rng, normal, static_cast<int>(against.size()));
        v -= v.dot(against) * against;
    } while (v.norm() < 1e-6);
    return v / v.norm();
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int dim = config.input_dim;
    const int n = config.num_identities;

    std::vector<Vector> centers, offsets;
    const Vector shared = random_unit(rng, normal, dim);
    const bool subspace = config.offset_rank > 0 && config.offset_rank < dim;
    Matrix basis;
    if (subspace) {
        Matrix g(dim, config.offset_rank);
        for (Eigen::Index c = 0; c < g.cols(); ++c)
            for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = normal(rng);
        basis = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(dim, config.offset_rank);
    }
    for (int k = 0; k < n; ++k) {
        centers.push_back(random_unit(rng, normal, dim));
        Vector u;
        if (config.shared_offset)
            u = shared;
        else if (subspace)
            u = basis * random_unit(rng, normal, config.offset_rank);
        else
            u = random_unit(rng, normal, dim);
        if (config.orthogonal_offset) {
            u -= u.dot(centers.back()) * centers.back();
            if (u.norm() < 1e-6) u = orthogonal_unit(rng, normal, centers.back());
            u /= u.norm();
        }
        offsets.push_back(std::move(u));
    }

    Dataset ds;
    ds.num_identities = n;
    ds.input_dim = dim;
    const double half_gap = 0.5 * config.modality_gap;
    for (int k = 0; k < n; ++k) {
        for (Modality m : {Modality::Vis, Modality::Nir}) {
            const double sign = m == Modality::Vis ? 1.0 : -1.0;
            for (int s = 0; s < config.samples_per_identity_per_modality; ++s) {
                Sample sample;
                sample.identity = k;
                sample.modality = m;
                sample.features = centers[k] + sign * half_gap * offsets[k];
                if (config.noise_sigma > 0.0)
                    for (int i = 0; i < dim; ++i) sample.features[i] += config.noise_sigma * normal(rng);
                ds.samples.push_back(std::move(sample));
            }
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> split_by_identity(const Dataset& dataset, double train_fraction,
                                              std::uint64_t seed) {
    if (dataset.num_identities < 2) throw ContractViolation("split: need at least 2 identities");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ContractViolation("split: train_fraction must lie in (0, 1)");
    const int n = dataset.num_identities;
    const int n_train = static_cast<int>(std::lround(train_fraction * n));
    if (n_train <= 0 || n_train >= n)
        throw ContractViolation("split: fraction " + std::to_string(train_fraction) +
                                " leaves one side empty for " + std::to_string(n) + " identities");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> train_ids(order.begin(), order.begin() + n_train);
    std::vector<int> test_ids(order.begin() + n_train, order.end());
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(test_ids.begin(), test_ids.end());

    // remap[k] = (part, new label)
    std::vector<std::pair<int, int>> remap(n);
    for (int i = 0; i < n_train; ++i) remap[train_ids[i]] = {0, i};
    for (int i = 0; i < n - n_train; ++i) remap[test_ids[i]] = {1, i};

    Dataset train, test;
    train.input_dim = test.input_dim = dataset.input_dim;
    train.num_identities = n_train;
    test.num_identities = n - n_train;
    for (const auto& s : dataset.samples) {
        const auto [part, label] = remap.at(s.identity);
        Sample copy = s;
        copy.identity = label;
        (part == 0 ? train : test).samples.push_back(std::move(copy));
    }
    return {std::move(train), std::move(test)};
}

std::uint64_t seed_stream(std::uint64_t seed, std::uint64_t counter) {
    // splitmix64 finalizer over a combined state
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + counter + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

PkSampler::PkSampler(const Dataset& dataset)
    : vis_(static_cast<std::size_t>(dataset.num_identities)),
      nir_(static_cast<std::size_t>(dataset.num_identities)) {
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        if (s.identity < 0 || s.identity >= dataset.num_identities)
            throw ContractViolation("pk_sample: sample identity out of range");
        (s.modality == Modality::Vis ? vis_ : nir_)[static_cast<std::size_t>(s.identity)].push_back(i);
    }
}

namespace {

void draw(const std::vector<std::size_t>& pool, int k, std::mt19937_64& rng,
          std::vector<std::size_t>& out) {
    if (pool.empty()) throw ContractViolation("pk_sample: identity lacks a modality");
    if (static_cast<int>(pool.size()) >= k) {
        std::vector<std::size_t> copy = pool;
        for (int i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), copy.size() - 1);
            std::swap(copy[static_cast<std::size_t>(i)], copy[pick(rng)]);
            out.push_back(copy[static_cast<std::size_t>(i)]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        for (int i = 0; i < k; ++i) out.push_back(pool[pick(rng)]);
    }
}

}  // namespace

std::vector<std::size_t> PkSampler::sample(int p, int k, std::uint64_t stream) const {
    if (p <= 0 || k <= 0) throw ContractViolation("pk_sample: P and K must be positive");
    if (p > num_identities())
        throw ContractViolation("pk_sample: P=" + std::to_string(p) + " exceeds " +
                                std::to_string(num_identities()) + " identities");
    std::mt19937_64 rng(stream);
    std::vector<int> ids(static_cast<std::size_t>(num_identities()));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < p; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), ids.size() - 1);
        std::swap(ids[static_cast<std::size_t>(i)], ids[pick(rng)]);
    }
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(2 * p * k));
    for (int i = 0; i < p; ++i) {
        const auto id = static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]);
        draw(vis_[id], k, rng, out);
        draw(nir_[id], k, rng, out);
    }
    return out;
}

std::vector<std::size_t> pk_sample(const Dataset& dataset, int p, int k, std::uint64_t stream) {
    return PkSampler(dataset).sample(p, k, stream);
}

std::string synth_config_json(const SynthConfig& config) {
    nlohmann::ordered_json j;
    j["num_identities"] = config.num_identities;
    j["samples_per_identity_per_modality"] = config.samples_per_identity_per_modality;
    j["input_dim"] = config.input_dim;
    j["modality_gap"] = config.modality_gap;
    j["noise_sigma"] = config.noise_sigma;
    j["seed"] = config.seed;
    j["shared_offset"] = config.shared_offset;
    j["orthogonal_offset"] = config.orthogonal_offset;
    j["offset_rank"] = config.offset_rank;
    return j.dump(2) + "\n";
}

}  // namespace sas
