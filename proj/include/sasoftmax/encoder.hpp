#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sasoftmax/core_types.hpp"

namespace sas {

// One affine layer: y = x W^T + b, with W stored out x in.
struct DenseLayer {
    Matrix weight;
    Vector bias;
};

// Rectifier between layers, identity after the last one.
struct EncoderParams {
    std::vector<DenseLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
    std::vector<int> dims() const;
};

struct ForwardCache {
    std::vector<Matrix> activations;      // layer inputs; activations[0] = batch inputs
    std::vector<Matrix> pre_activations;  // affine outputs per layer
};

struct ForwardResult {
    Matrix embeddings;
    ForwardCache cache;
};

// Weights ~ N(0, 2/fan_in) for rectified layers and N(0, 1/fan_in) for the
// output layer; biases zero.
EncoderParams init_encoder(const std::vector<int>& layer_dims, std::uint64_t seed);

ForwardResult encoder_forward(const EncoderParams& params, const Matrix& inputs);
Matrix encoder_embed(const EncoderParams& params, const Matrix& inputs);

// Gradients share the layout of `params`.
EncoderParams encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                               const Matrix& grad_embeddings);

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    void validate() const;
};

// v <- momentum v + grad + weight_decay param; param <- param - lr v.
// An empty velocity buffer is initialized to zero.
void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, const SgdConfig& config);
void sgd_step(Vector& param, const Vector& grad, Vector& velocity, const SgdConfig& config);

struct EncoderVelocity {
    std::vector<DenseLayer> layers;
};

void sgd_step(EncoderParams& params, const EncoderParams& grads, EncoderVelocity& velocity,
              const SgdConfig& config);

// base_lr * factor^(number of milestones <= epoch)
double lr_schedule(double base_lr, int epoch, const std::vector<int>& milestones, double factor);

// Text checkpoint: `SASMODEL1` header, layer dims, row-major layer weights
// and biases, then both prototype matrices. See README for the layout.
struct Checkpoint {
    EncoderParams encoder;
    ModalityPrototypeMatrix modality_prototypes;
    IdentityPrototypeMatrix identity_prototypes;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace sas
