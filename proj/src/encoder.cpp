#include "sasoftmax/encoder.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace sas {

std::vector<int> EncoderParams::dims() const {
    std::vector<int> out;
    if (layers.empty()) return out;
    out.push_back(input_dim());
    for (const auto& l : layers) out.push_back(static_cast<int>(l.weight.rows()));
    return out;
}

EncoderParams init_encoder(const std::vector<int>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2)
        throw ContractViolation("init_encoder: need at least an input and an output dimension");
    for (int d : layer_dims)
        if (d <= 0) throw ContractViolation("init_encoder: layer dimensions must be positive");
    std::mt19937_64 rng(seed);
    EncoderParams params;
    const std::size_t count = layer_dims.size() - 1;
    for (std::size_t l = 0; l < count; ++l) {
        const int fan_in = layer_dims[l];
        const int fan_out = layer_dims[l + 1];
        const double gain = (l + 1 < count) ? 2.0 : 1.0;
        std::normal_distribution<double> normal(0.0, std::sqrt(gain / fan_in));
        DenseLayer layer;
        layer.weight.resize(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = normal(rng);
        layer.bias = Vector::Zero(fan_out);
        params.layers.push_back(std::move(layer));
    }
    return params;
}

ForwardResult encoder_forward(const EncoderParams& params, const Matrix& inputs) {
    if (params.layers.empty()) throw ContractViolation("encoder_forward: encoder has no layers");
    if (inputs.cols() != params.input_dim())
        throw ContractViolation("encoder_forward: input dim " + std::to_string(inputs.cols()) +
                                " != encoder input dim " + std::to_string(params.input_dim()));
    ForwardResult out;
    Matrix h = inputs;
    const std::size_t count = params.layers.size();
    for (std::size_t l = 0; l < count; ++l) {
        const auto& layer = params.layers[l];
        Matrix z = h * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        out.cache.activations.push_back(std::move(h));
        h = (l + 1 < count) ? Matrix(z.cwiseMax(0.0)) : z;
        out.cache.pre_activations.push_back(std::move(z));
    }
    out.embeddings = std::move(h);
    return out;
}

Matrix encoder_embed(const EncoderParams& params, const Matrix& inputs) {
    return encoder_forward(params, inputs).embeddings;
}

EncoderParams encoder_backward(const EncoderParams& params, const ForwardCache& cache,
                               const Matrix& grad_embeddings) {
    const std::size_t count = params.layers.size();
    if (cache.activations.size() != count || cache.pre_activations.size() != count)
        throw ContractViolation("encoder_backward: cache does not match encoder depth");
    const Matrix& last = cache.pre_activations.back();
    if (grad_embeddings.rows() != last.rows() || grad_embeddings.cols() != last.cols())
        throw ContractViolation("encoder_backward: gradient shape does not match cached batch");
    for (std::size_t l = 0; l < count; ++l)
        if (cache.activations[l].cols() != params.layers[l].weight.cols() ||
            cache.pre_activations[l].cols() != params.layers[l].weight.rows())
            throw ContractViolation("encoder_backward: stale cache for layer " + std::to_string(l));

    EncoderParams grads;
    grads.layers.resize(count);
    Matrix delta = grad_embeddings;
    for (std::size_t l = count; l-- > 0;) {
        if (l + 1 < count)
            delta = delta.cwiseProduct(
                (cache.pre_activations[l].array() > 0.0).cast<double>().matrix());
        grads.layers[l].weight = delta.transpose() * cache.activations[l];
        grads.layers[l].bias = delta.colwise().sum().transpose();
        if (l > 0) delta = delta * params.layers[l].weight;
    }
    return grads;
}

void SgdConfig::validate() const {
    if (!(lr > 0.0)) throw ContractViolation("sgd: learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractViolation("sgd: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ContractViolation("sgd: weight decay must be non-negative");
}

namespace {

template <typename T>
void sgd_impl(T& param, const T& grad, T& velocity, const SgdConfig& config) {
    config.validate();
    if (param.rows() != grad.rows() || param.cols() != grad.cols())
        throw ContractViolation("sgd: gradient shape does not match parameter");
    if (velocity.size() == 0) velocity = T::Zero(param.rows(), param.cols());
    if (velocity.rows() != param.rows() || velocity.cols() != param.cols())
        throw ContractViolation("sgd: velocity shape does not match parameter");
    velocity = config.momentum * velocity + grad + config.weight_decay * param;
    param -= config.lr * velocity;
}

}  // namespace

void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, const SgdConfig& config) {
    sgd_impl(param, grad, velocity, config);
}

void sgd_step(Vector& param, const Vector& grad, Vector& velocity, const SgdConfig& config) {
    sgd_impl(param, grad, velocity, config);
}

void sgd_step(EncoderParams& params, const EncoderParams& grads, EncoderVelocity& velocity,
              const SgdConfig& config) {
    if (grads.layers.size() != params.layers.size())
        throw ContractViolation("sgd: gradient depth does not match encoder");
    velocity.layers.resize(params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        sgd_step(params.layers[l].weight, grads.layers[l].weight, velocity.layers[l].weight, config);
        sgd_step(params.layers[l].bias, grads.layers[l].bias, velocity.layers[l].bias, config);
    }
}

double lr_schedule(double base_lr, int epoch, const std::vector<int>& milestones, double factor) {
    for (std::size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] < milestones[i - 1])
            throw ContractViolation("lr_schedule: milestones must be ascending");
    double lr = base_lr;
    for (int m : milestones)
        if (m <= epoch) lr *= factor;
    return lr;
}

namespace {

constexpr const char* kMagic = "SASMODEL1";

void write_row(std::ostream& out, const double* data, Eigen::Index n, Eigen::Index stride) {
    char buf[32];
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), data[i * stride]);
        if (i) out << ' ';
        out.write(buf, res.ptr - buf);
    }
    out << '\n';
}

void write_matrix(std::ostream& out, const std::string& tag, const Matrix& m) {
    out << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) write_row(out, m.data() + r, m.cols(), m.rows());
}

std::string expect_token(std::istream& in, const std::string& want) {
    std::string tok;
    if (!(in >> tok) || tok != want)
        throw IoError("checkpoint: expected '" + want + "', found '" + tok + "'");
    return tok;
}

double read_double(std::istream& in) {
    std::string tok;
    if (!(in >> tok)) throw IoError("checkpoint: truncated numeric data");
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw IoError("checkpoint: bad number '" + tok + "'");
    return v;
}

long read_count(std::istream& in) {
    long v = -1;
    if (!(in >> v) || v < 0) throw IoError("checkpoint: bad count");
    return v;
}

Matrix read_matrix(std::istream& in, const std::string& tag) {
    expect_token(in, tag);
    const long rows = read_count(in), cols = read_count(in);
    Matrix m(rows, cols);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = read_double(in);
    return m;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
    const auto dims = ckpt.encoder.dims();
    out << kMagic << '\n' << "layers " << ckpt.encoder.layers.size() << '\n' << "dims";
    for (int d : dims) out << ' ' << d;
    out << '\n';
    for (std::size_t l = 0; l < ckpt.encoder.layers.size(); ++l) {
        const auto& layer = ckpt.encoder.layers[l];
        write_matrix(out, "weight", layer.weight);
        out << "bias " << layer.bias.size() << '\n';
        write_row(out, layer.bias.data(), layer.bias.size(), 1);
    }
    write_matrix(out, "modality_prototypes", ckpt.modality_prototypes.weights);
    write_matrix(out, "identity_prototypes", ckpt.identity_prototypes.weights);
    if (!out) throw IoError("checkpoint: write failed");
}

void write_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_checkpoint(ckpt, out);
}

Checkpoint read_checkpoint(std::istream& in) {
    std::string magic;
    if (!(in >> magic) || magic != kMagic)
        throw IoError("checkpoint: missing SASMODEL1 header");
    expect_token(in, "layers");
    const long count = read_count(in);
    expect_token(in, "dims");
    std::vector<long> dims;
    for (long i = 0; i <= count; ++i) dims.push_back(read_count(in));
    Checkpoint ckpt;
    for (long l = 0; l < count; ++l) {
        DenseLayer layer;
        layer.weight = read_matrix(in, "weight");
        if (layer.weight.rows() != dims[l + 1] || layer.weight.cols() != dims[l])
            throw IoError("checkpoint: layer " + std::to_string(l) + " shape disagrees with dims");
        expect_token(in, "bias");
        const long n = read_count(in);
        if (n != dims[l + 1]) throw IoError("checkpoint: bias length disagrees with dims");
        layer.bias.resize(n);
        for (long i = 0; i < n; ++i) layer.bias[i] = read_double(in);
        ckpt.encoder.layers.push_back(std::move(layer));
    }
    try {
        ckpt.modality_prototypes = ModalityPrototypeMatrix(read_matrix(in, "modality_prototypes"));
        ckpt.identity_prototypes = IdentityPrototypeMatrix(read_matrix(in, "identity_prototypes"));
    } catch (const ContractViolation& e) {
        throw IoError(std::string("checkpoint: ") + e.what());
    }
    return ckpt;
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return read_checkpoint(in);
}

}  // namespace sas
