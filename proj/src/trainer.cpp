#include "sasoftmax/trainer.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "sasoftmax/data.hpp"

namespace sas {

namespace {

struct VariantName {
    LossVariant variant;
    const char* name;
};

constexpr VariantName kVariantNames[] = {
    {LossVariant::Softmax, "SOFTMAX"},    {LossVariant::Sas, "SAS"},
    {LossVariant::SasFm, "SAS_FM"},       {LossVariant::SasFmAst, "SAS_FM_AST"},
    {LossVariant::SasFmWm, "SAS_FM_WM"},  {LossVariant::AmSoftmax, "AM_SOFTMAX"},
    {LossVariant::Circle, "CIRCLE"},
};

// Seed offsets so the encoder and the two heads draw independent streams.
constexpr std::uint64_t kModalityHeadStream = 1;
constexpr std::uint64_t kIdentityHeadStream = 2;
constexpr std::uint64_t kProbeStream = 3;
constexpr std::uint64_t kBatchStreamBase = 1000;

}  // namespace

const char* variant_name(LossVariant v) {
    for (const auto& e : kVariantNames)
        if (e.variant == v) return e.name;
    return "?";
}

LossVariant parse_variant(const std::string& name) {
    for (const auto& e : kVariantNames)
        if (name == e.name) return e.variant;
    throw ContractViolation("unknown loss variant '" + name + "'");
}

void TrainConfig::validate() const {
    loss.validate();
    if (epochs < 0) throw ContractViolation("epochs must be >= 0");
    if (batches_per_epoch < 0) throw ContractViolation("batches_per_epoch must be >= 0");
    if (p <= 0 || k <= 0) throw ContractViolation("P and K must be positive");
    if (!(base_lr > 0.0)) throw ContractViolation("base_lr must be positive");
    if (!(lr_factor > 0.0)) throw ContractViolation("lr_factor must be positive");
    for (std::size_t i = 1; i < milestones.size(); ++i)
        if (milestones[i] < milestones[i - 1]) throw ContractViolation("milestones must be ascending");
    SgdConfig{base_lr, momentum, weight_decay}.validate();
    if (embed_dim <= 0) throw ContractViolation("embed_dim must be positive");
    for (int h : hidden_dims)
        if (h <= 0) throw ContractViolation("hidden dims must be positive");
    if (variant == LossVariant::SasFmAst && !(loss.beta > 0.0))
        throw ContractViolation("SAS_FM_AST requires beta > 0");
    if (variant == LossVariant::AmSoftmax && (!(am_margin >= 0.0) || !(am_scale > 0.0)))
        throw ContractViolation("AM-Softmax needs margin >= 0 and scale > 0");
    if (variant == LossVariant::Circle && !(circle_gamma > 0.0))
        throw ContractViolation("circle loss needs gamma > 0");
}

CombinedLossConfig TrainConfig::effective_loss() const {
    CombinedLossConfig c = loss;
    c.use_feature_mask = false;
    c.use_weight_mask = false;
    switch (variant) {
    case LossVariant::Softmax:
        c.alpha = 0.0;
        c.beta = 0.0;
        break;
    case LossVariant::Sas:
        c.beta = 0.0;
        break;
    case LossVariant::SasFm:
        c.use_feature_mask = true;
        c.beta = 0.0;
        break;
    case LossVariant::SasFmAst:
        c.use_feature_mask = true;
        break;
    case LossVariant::SasFmWm:
        c.use_feature_mask = true;
        c.use_weight_mask = true;
        c.beta = 0.0;
        break;
    case LossVariant::AmSoftmax:
    case LossVariant::Circle:
        c.alpha = 0.0;
        c.beta = 0.0;
        break;
    }
    return c;
}

bool TrainConfig::uses_modality_prototypes() const { return effective_loss().alpha != 0.0; }

bool TrainConfig::uses_identity_prototypes() const {
    return variant == LossVariant::AmSoftmax || variant == LossVariant::Circle ||
           effective_loss().alpha != 1.0;
}

Checkpoint ModelState::checkpoint() const {
    return {encoder, modality_prototypes, identity_prototypes};
}

ModelState init_model(int input_dim, int num_identities, const TrainConfig& config) {
    if (num_identities <= 0) throw ContractViolation("init_model: need at least one identity");
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
    dims.push_back(config.embed_dim);
    ModelState state;
    state.encoder = init_encoder(dims, config.seed);
    // Heads use the linear-layer scheme with fan_in = d.
    const auto head = [&](int cols, std::uint64_t stream) {
        return Matrix(init_encoder({config.embed_dim, cols}, seed_stream(config.seed, stream))
                          .layers[0]
                          .weight.transpose());
    };
    state.modality_prototypes = ModalityPrototypeMatrix(head(2 * num_identities, kModalityHeadStream));
    state.identity_prototypes = IdentityPrototypeMatrix(head(num_identities, kIdentityHeadStream));
    return state;
}

InputBatch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    InputBatch b;
    b.inputs = dataset.gather_features(indices);
    for (auto i : indices) {
        b.identities.push_back(dataset.samples.at(i).identity);
        b.modalities.push_back(dataset.samples.at(i).modality);
    }
    return b;
}

namespace {

std::string batch_dump(const InputBatch& batch, const Matrix& embeddings) {
    std::ostringstream os;
    os << "offending batch (" << batch.identities.size() << " samples):\n";
    for (std::size_t i = 0; i < batch.identities.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        os << "  [" << i << "] id=" << batch.identities[i] << " modality="
           << modality_code(batch.modalities[i]) << " |input|=" << batch.inputs.row(r).norm();
        if (r < embeddings.rows()) os << " |embedding|=" << embeddings.row(r).norm();
        os << '\n';
    }
    return os.str();
}

}  // namespace

RoutedGradients compute_gradients(const ModelState& state, const InputBatch& batch,
                                  const TrainConfig& config) {
    auto fwd = encoder_forward(state.encoder, batch.inputs);
    RoutedGradients out;
    if (!fwd.embeddings.allFinite())
        throw NumericError("non-finite embeddings at step " + std::to_string(state.step) + "\n" +
                           batch_dump(batch, fwd.embeddings));
    try {
        if (config.variant == LossVariant::AmSoftmax || config.variant == LossVariant::Circle) {
            const auto res = config.variant == LossVariant::AmSoftmax
                                 ? am_softmax_loss(fwd.embeddings, state.identity_prototypes,
                                                   batch.identities, config.am_margin, config.am_scale)
                                 : circle_loss(fwd.embeddings, state.identity_prototypes,
                                               batch.identities, config.circle_gamma,
                                               config.circle_margin);
            out.metrics.loss_total = res.value;
            out.metrics.loss_softmax = res.value;
            out.grad_embeddings = *res.grad_embeddings;
            out.grad_identity_prototypes = *res.grad_prototypes;
        } else {
            auto res = combined_loss(fwd.embeddings, state.modality_prototypes,
                                     state.identity_prototypes, batch.identities, batch.modalities,
                                     config.effective_loss());
            out.metrics = {res.value, res.loss_w, res.loss_f, res.loss_softmax, res.loss_ast};
            out.grad_embeddings = std::move(res.grad_embeddings);
            out.grad_modality_prototypes = std::move(res.grad_modality_prototypes);
            out.grad_identity_prototypes = std::move(res.grad_identity_prototypes);
        }
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(state.step) + "\n" +
                           batch_dump(batch, fwd.embeddings));
    }
    const bool finite = std::isfinite(out.metrics.loss_total) && out.grad_embeddings.allFinite() &&
                        (!out.grad_modality_prototypes || out.grad_modality_prototypes->allFinite()) &&
                        (!out.grad_identity_prototypes || out.grad_identity_prototypes->allFinite());
    if (!finite)
        throw NumericError("non-finite loss or gradient at step " + std::to_string(state.step) +
                           "\n" + batch_dump(batch, fwd.embeddings));
    out.grad_encoder = encoder_backward(state.encoder, fwd.cache, out.grad_embeddings);
    return out;
}

StepMetrics train_step(ModelState& state, const InputBatch& batch, const TrainConfig& config,
                       double lr) {
    auto grads = compute_gradients(state, batch, config);
    const SgdConfig sgd{lr, config.momentum, config.weight_decay};
    const bool do_w = !config.alternate_batches || state.step % 2 == 0;
    const bool do_f = !config.alternate_batches || state.step % 2 == 1;
    // Step 1: prototype side.
    if (do_w && grads.grad_modality_prototypes)
        sgd_step(state.modality_prototypes.weights, *grads.grad_modality_prototypes,
                 state.modality_velocity, sgd);
    // Step 2: feature side. Its gradients were taken before step 1.
    if (do_f) {
        sgd_step(state.encoder, grads.grad_encoder, state.encoder_velocity, sgd);
        if (grads.grad_identity_prototypes)
            sgd_step(state.identity_prototypes.weights, *grads.grad_identity_prototypes,
                     state.identity_velocity, sgd);
    }
    ++state.step;
    return grads.metrics;
}

double mean_cross_modal_cosine(const EncoderParams& encoder, const InputBatch& batch) {
    const Matrix emb = encoder_embed(encoder, batch.inputs);
    double sum = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < batch.identities.size(); ++i) {
        if (batch.modalities[i] != Modality::Vis) continue;
        const auto a = emb.row(static_cast<Eigen::Index>(i));
        for (std::size_t j = 0; j < batch.identities.size(); ++j) {
            if (batch.modalities[j] != Modality::Nir || batch.identities[j] != batch.identities[i])
                continue;
            const auto b = emb.row(static_cast<Eigen::Index>(j));
            const double denom = a.norm() * b.norm();
            sum += denom >= kNormEpsilon ? a.dot(b) / denom : 0.0;
            ++count;
        }
    }
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

std::string train_log_csv(const TrainLog& log) {
    std::string out = "epoch,lr,loss_total,loss_w,loss_f,loss_softmax,loss_ast,probe_cosine\n";
    char buf[32];
    auto put = [&](double v) {
        out += ',';
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        out.append(buf, res.ptr);
    };
    for (const auto& r : log.epochs) {
        out += std::to_string(r.epoch);
        put(r.lr);
        put(r.loss_total);
        put(r.loss_w);
        put(r.loss_f);
        put(r.loss_softmax);
        put(r.loss_ast);
        put(r.probe_cosine);
        out += '\n';
    }
    return out;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    validate(dataset);
    TrainResult result;
    result.state = init_model(dataset.input_dim, dataset.num_identities, config);
    if (config.epochs == 0) return result;

    const PkSampler sampler(dataset);
    const int p = std::min(config.p, dataset.num_identities);
    const int per_batch = 2 * p * config.k;
    const int batches = config.batches_per_epoch > 0
                            ? config.batches_per_epoch
                            : std::max(1, static_cast<int>(dataset.size()) / per_batch);
    const InputBatch probe = make_batch(
        dataset, sampler.sample(p, std::min(config.k, 4), seed_stream(config.seed, kProbeStream)));

    std::uint64_t counter = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_schedule(config.base_lr, epoch, config.milestones, config.lr_factor);
        for (int b = 0; b < batches; ++b) {
            const auto idx = sampler.sample(p, config.k,
                                            seed_stream(config.seed, kBatchStreamBase + counter++));
            const auto m = train_step(result.state, make_batch(dataset, idx), config, rec.lr);
            rec.loss_total += m.loss_total / batches;
            rec.loss_w += m.loss_w / batches;
            rec.loss_f += m.loss_f / batches;
            rec.loss_softmax += m.loss_softmax / batches;
            rec.loss_ast += m.loss_ast / batches;
        }
        rec.probe_cosine = mean_cross_modal_cosine(result.state.encoder, probe);
        result.log.epochs.push_back(rec);
    }
    return result;
}

}  // namespace sas
