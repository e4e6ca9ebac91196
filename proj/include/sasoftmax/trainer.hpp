#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sasoftmax/core_types.hpp"
#include "sasoftmax/encoder.hpp"
#include "sasoftmax/losses.hpp"

namespace sas {

enum class LossVariant { Softmax, Sas, SasFm, SasFmAst, SasFmWm, AmSoftmax, Circle };

const char* variant_name(LossVariant v);
LossVariant parse_variant(const std::string& name);

struct TrainConfig {
    LossVariant variant = LossVariant::SasFmAst;
    // alpha, beta and the AST form; the mask flags are derived from `variant`.
    CombinedLossConfig loss;
    int epochs = 100;
    int batches_per_epoch = 0;  // 0: floor(train samples / (2 P K)), at least 1
    int p = 8;
    int k = 8;
    double base_lr = 0.03;
    std::vector<int> milestones{40, 80};
    double lr_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> hidden_dims{64};
    int embed_dim = 32;
    double am_margin = 0.3;
    double am_scale = 15.0;
    double circle_gamma = 32.0;
    double circle_margin = 0.25;
    // Apply the prototype step and the feature step on alternating batches
    // instead of both on every batch.
    bool alternate_batches = false;
    std::uint64_t seed = 1;

    void validate() const;
    CombinedLossConfig effective_loss() const;
    bool uses_modality_prototypes() const;
    bool uses_identity_prototypes() const;
};

struct ModelState {
    EncoderParams encoder;
    ModalityPrototypeMatrix modality_prototypes;
    IdentityPrototypeMatrix identity_prototypes;
    EncoderVelocity encoder_velocity;
    Matrix modality_velocity;
    Matrix identity_velocity;
    long step = 0;

    Checkpoint checkpoint() const;
};

ModelState init_model(int input_dim, int num_identities, const TrainConfig& config);

struct InputBatch {
    Matrix inputs;
    std::vector<int> identities;
    std::vector<Modality> modalities;
};

InputBatch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

struct StepMetrics {
    double loss_total = 0.0;
    double loss_w = 0.0;
    double loss_f = 0.0;
    double loss_softmax = 0.0;
    double loss_ast = 0.0;
};

// Gradients of every loss term with respect to the model, all computed from
// one forward pass against the current (pre-update) parameters.
struct RoutedGradients {
    StepMetrics metrics;
    Matrix grad_embeddings;
    std::optional<Matrix> grad_modality_prototypes;
    std::optional<Matrix> grad_identity_prototypes;
    EncoderParams grad_encoder;
};

RoutedGradients compute_gradients(const ModelState& state, const InputBatch& batch,
                                  const TrainConfig& config);

// Step 1 updates the modality prototypes from the prototype-side loss with
// embeddings held fixed; step 2 updates the encoder and identity head from
// the feature-side terms against the pre-step-1 prototypes.
StepMetrics train_step(ModelState& state, const InputBatch& batch, const TrainConfig& config,
                       double lr);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_w = 0.0;
    double loss_f = 0.0;
    double loss_softmax = 0.0;
    double loss_ast = 0.0;
    double probe_cosine = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
};

// `epoch,lr,loss_total,loss_w,loss_f,loss_softmax,loss_ast,probe_cosine`
std::string train_log_csv(const TrainLog& log);

struct TrainResult {
    ModelState state;
    TrainLog log;
};

// Mean cosine between same-identity VIS/NIR embeddings of `batch`.
double mean_cross_modal_cosine(const EncoderParams& encoder, const InputBatch& batch);

TrainResult train(const Dataset& dataset, const TrainConfig& config);

}  // namespace sas
