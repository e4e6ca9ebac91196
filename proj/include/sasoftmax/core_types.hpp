#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sas {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy. The CLI maps these onto exit codes 1 (contract), 2 (numeric)
// and 3 (I/O).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

class BoundaryError : public ContractViolation {
public:
    using ContractViolation::ContractViolation;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class DegenerateNormError : public NumericError {
public:
    using NumericError::NumericError;
};

class IoError : public Error {
public:
    using Error::Error;
};

inline constexpr double kNormEpsilon = 1e-12;

enum class Modality : std::uint8_t { Vis, Nir };

char modality_code(Modality m);
Modality parse_modality(char code);

struct Sample {
    Vector features;
    int identity = 0;
    Modality modality = Modality::Vis;
};

struct Dataset {
    std::vector<Sample> samples;
    int num_identities = 0;
    int input_dim = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    // Rows of the returned matrix follow `indices` order.
    Matrix gather_features(const std::vector<std::size_t>& indices) const;
    Matrix feature_matrix() const;
    std::vector<int> identities() const;
    std::vector<Modality> modalities() const;
};

// Throws ContractViolation unless labels are dense, every identity has both
// modalities and all features are finite with the declared dimension.
void validate(const Dataset& dataset);

struct Batch {
    Matrix embeddings;  // B x d
    std::vector<int> identities;
    std::vector<Modality> modalities;

    int size() const { return static_cast<int>(identities.size()); }
};

// d x 2N, visible block first.
struct ModalityPrototypeMatrix {
    Matrix weights;

    ModalityPrototypeMatrix() = default;
    explicit ModalityPrototypeMatrix(Matrix w);

    int dim() const { return static_cast<int>(weights.rows()); }
    int num_identities() const { return static_cast<int>(weights.cols() / 2); }
    auto visible(int identity) const { return weights.col(identity); }
    auto infrared(int identity) const { return weights.col(identity + num_identities()); }
};

// d x N.
struct IdentityPrototypeMatrix {
    Matrix weights;

    IdentityPrototypeMatrix() = default;
    explicit IdentityPrototypeMatrix(Matrix w);

    int dim() const { return static_cast<int>(weights.rows()); }
    int num_identities() const { return static_cast<int>(weights.cols()); }
};

// Gradient fields are empty when the loss does not route to that target.
struct LossResult {
    double value = 0.0;
    std::optional<Matrix> grad_embeddings;
    std::optional<Matrix> grad_prototypes;
};

struct RewrittenLabels {
    int prototype_label;  // yW: column the prototype side is trained toward
    int feature_label;    // yF: column the embedding is trained toward
};

RewrittenLabels rewrite_labels(int identity, Modality modality, int num_identities);

struct BatchLabels {
    std::vector<int> prototype_labels;
    std::vector<int> feature_labels;
};

BatchLabels rewrite_labels(const std::vector<int>& identities,
                           const std::vector<Modality>& modalities, int num_identities);

// CSV with header `id,modality,f0,...`; modality is `V` or `N`.
void write_dataset_csv(const Dataset& dataset, std::ostream& out);
void write_dataset_csv(const Dataset& dataset, const std::string& path);
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);

bool all_finite(const Matrix& m);

}  // namespace sas
