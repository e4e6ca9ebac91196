#pragma once

#include <span>

#include "sasoftmax/core_types.hpp"

namespace sas {

// All softmax-family logits are raw inner products x_i . W_j (no
// normalization); every loss is mean-reduced over the batch.

// Cross-entropy over row-wise logits. `excluded[i]` (when non-empty and >= 0)
// names a column removed from row i's class set. `logit_grad` holds
// (p_ij - 1[j == target_i]) per row, zero on excluded columns, and is NOT
// divided by the batch size. `value` is the batch mean.
struct LogitLossResult {
    double value = 0.0;
    Matrix logit_grad;
};

LogitLossResult softmax_xent_from_logits(const Matrix& logits, std::span<const int> targets,
                                         std::span<const int> excluded = {});

LossResult softmax_ce(const Matrix& embeddings, const IdentityPrototypeMatrix& prototypes,
                      std::span<const int> labels);

// Prototype-side SA-Softmax term. Embeddings are constants: only
// grad_prototypes is populated.
LossResult sas_w_loss(const Matrix& embeddings, const ModalityPrototypeMatrix& prototypes,
                      std::span<const int> prototype_labels);

// Same as sas_w_loss with the own-identity cross-modality column removed
// from each row's class set (weight mask).
LossResult sas_w_loss_weight_masked(const Matrix& embeddings,
                                    const ModalityPrototypeMatrix& prototypes,
                                    std::span<const int> prototype_labels,
                                    std::span<const int> feature_labels);

// Feature-side SA-Softmax term. Prototypes are constants: only
// grad_embeddings is populated. With the feature mask, column yW is dropped
// from row i's denominator.
LossResult sas_f_loss(const Matrix& embeddings, const ModalityPrototypeMatrix& prototypes,
                      std::span<const int> feature_labels, std::span<const int> prototype_labels,
                      bool use_feature_mask);

// Per-row coefficients c_ij with grad_embeddings = c W^T / B for sas_f_loss.
Matrix sas_f_logit_coefficients(const Matrix& embeddings,
                                const ModalityPrototypeMatrix& prototypes,
                                std::span<const int> feature_labels,
                                std::span<const int> prototype_labels, bool use_feature_mask);

enum class AstForm { Absolute, Squared };

// Absolute-similarity term: mean of (1 - cos<W_yF, x>) (or its square).
LossResult ast_loss(const Matrix& embeddings, const ModalityPrototypeMatrix& prototypes,
                    std::span<const int> feature_labels, AstForm form = AstForm::Absolute);

struct CombinedLossConfig {
    double alpha = 0.7;
    double beta = 1.0;
    bool use_feature_mask = false;
    bool use_weight_mask = false;
    AstForm ast_form = AstForm::Absolute;

    void validate() const;
};

// Terms with zero weight are skipped and reported as 0. Prototype gradients
// are absent when their weight is zero, so callers can leave that target
// untouched.
struct CombinedLossResult {
    double value = 0.0;
    double loss_w = 0.0;
    double loss_f = 0.0;
    double loss_softmax = 0.0;
    double loss_ast = 0.0;
    Matrix grad_embeddings;
    std::optional<Matrix> grad_modality_prototypes;
    std::optional<Matrix> grad_identity_prototypes;
};

CombinedLossResult combined_loss(const Matrix& embeddings,
                                 const ModalityPrototypeMatrix& modality_prototypes,
                                 const IdentityPrototypeMatrix& identity_prototypes,
                                 std::span<const int> identities,
                                 std::span<const Modality> modalities,
                                 const CombinedLossConfig& config);

// Additive-margin softmax on L2-normalized embeddings and prototypes:
// target logit s (cos - m), others s cos.
LossResult am_softmax_loss(const Matrix& embeddings, const IdentityPrototypeMatrix& prototypes,
                           std::span<const int> labels, double margin, double scale);

// Circle loss, class-proxy form, with self-paced weights
// a_p = [1 + m - s_p]_+, a_n = [s_n + m]_+ and margins 1 - m, m. The
// gradient differentiates through the weights.
LossResult circle_loss(const Matrix& embeddings, const IdentityPrototypeMatrix& prototypes,
                       std::span<const int> labels, double gamma, double margin);

// Two-class angular softmax: L = -log(e^{s cos ti} / (e^{s cos ti} + e^{s cos tj})).
double two_class_angular_loss(double theta_i, double theta_j, double scale);

struct ThetaDerivatives {
    double first;  // dL/dtheta_i
    double mixed;  // d^2 L / dtheta_i dtheta_j
};

ThetaDerivatives theta_derivative_probe(double theta_i, double theta_j, double scale);

}  // namespace sas
