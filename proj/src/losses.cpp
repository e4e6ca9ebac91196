#include "sasoftmax/losses.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace sas {

namespace {

void check_labels(std::span<const int> labels, Eigen::Index batch, Eigen::Index classes,
                  const char* what) {
    if (static_cast<Eigen::Index>(labels.size()) != batch)
        throw ContractViolation(std::string(what) + ": label count " +
                                std::to_string(labels.size()) + " != batch size " +
                                std::to_string(batch));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= classes)
            throw ContractViolation(std::string(what) + ": label " + std::to_string(labels[i]) +
                                    " at row " + std::to_string(i) + " outside [0, " +
                                    std::to_string(classes) + ")");
}

void check_dims(const Matrix& embeddings, const Matrix& prototypes, const char* what) {
    if (embeddings.cols() != prototypes.rows())
        throw ContractViolation(std::string(what) + ": embedding dim " +
                                std::to_string(embeddings.cols()) + " != prototype dim " +
                                std::to_string(prototypes.rows()));
}

double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// Row norms with the degenerate-norm check.
Vector row_norms(const Matrix& m, const char* what) {
    Vector n = m.rowwise().norm();
    for (Eigen::Index i = 0; i < n.size(); ++i)
        if (!(n[i] >= kNormEpsilon))
            throw DegenerateNormError(std::string(what) + ": row " + std::to_string(i) +
                                      " has norm below 1e-12");
    return n;
}

Vector col_norms(const Matrix& m, const char* what) {
    Vector n = m.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < n.size(); ++j)
        if (!(n[j] >= kNormEpsilon))
            throw DegenerateNormError(std::string(what) + ": prototype column " +
                                      std::to_string(j) + " has norm below 1e-12");
    return n;
}

struct CosineView {
    Vector x_norm;
    Vector w_norm;
    Matrix x_hat;
    Matrix w_hat;
    Matrix cos;
};

CosineView cosine_view(const Matrix& embeddings, const Matrix& prototypes, const char* what) {
    CosineView v;
    v.x_norm = row_norms(embeddings, what);
    v.w_norm = col_norms(prototypes, what);
    v.x_hat = v.x_norm.cwiseInverse().asDiagonal() * embeddings;
    v.w_hat = prototypes * v.w_norm.cwiseInverse().asDiagonal();
    v.cos = v.x_hat * v.w_hat;
    return v;
}

// Pulls a B x N gradient with respect to cosine similarities back to the
// raw embeddings and prototypes.
void backprop_cosine(const CosineView& v, const Matrix& cos_grad, Matrix& grad_x, Matrix& grad_w) {
    const Matrix gc = cos_grad.cwiseProduct(v.cos);
    const Vector row_sum = gc.rowwise().sum();
    const Vector col_sum = gc.colwise().sum().transpose();
    grad_x = v.x_norm.cwiseInverse().asDiagonal() *
             (cos_grad * v.w_hat.transpose() - row_sum.asDiagonal() * v.x_hat);
    grad_w = (v.x_hat.transpose() * cos_grad - v.w_hat * col_sum.asDiagonal()) *
             v.w_norm.cwiseInverse().asDiagonal();
}

}  // namespace

LogitLossResult softmax_xent_from_logits(const Matrix& logits, std::span<const int> targets,
                                         std::span<const int> excluded) {
    const Eigen::Index batch = logits.rows();
    const Eigen::Index classes = logits.cols();
    check_labels(targets, batch, classes, "softmax_xent");
    const bool masked = !excluded.empty();
    if (masked && static_cast<Eigen::Index>(excluded.size()) != batch)
        throw ContractViolation("softmax_xent: exclusion list length != batch size");
    if (!logits.allFinite()) throw NumericError("softmax_xent: non-finite logits");

    LogitLossResult out;
    out.logit_grad = Matrix::Zero(batch, classes);
    double total = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const int target = targets[static_cast<std::size_t>(i)];
        const int skip = masked ? excluded[static_cast<std::size_t>(i)] : -1;
        if (skip == target)
            throw ContractViolation("softmax_xent: target column of row " + std::to_string(i) +
                                    " is excluded");
        double peak = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < classes; ++j)
            if (j != skip) peak = std::max(peak, logits(i, j));
        double denom = 0.0;
        for (Eigen::Index j = 0; j < classes; ++j) {
            if (j == skip) continue;
            const double e = std::exp(logits(i, j) - peak);
            out.logit_grad(i, j) = e;
            denom += e;
        }
        out.logit_grad.row(i) /= denom;
        out.logit_grad(i, target) -= 1.0;
        total += peak + std::log(denom) - logits(i, target);
    }
    out.value = batch > 0 ? total / static_cast<double>(batch) : 0.0;
    return out;
}

LossResult softmax_ce(const Matrix& embeddings, const IdentityPrototypeMatrix& prototypes,
                      std::span<const int> labels) {
    check_dims(embeddings, prototypes.weights, "softmax_ce");
    const auto lg = softmax_xent_from_logits(embeddings * prototypes.weights, labels);
    const double inv_b = embeddings.rows() > 0 ? 1.0 / static_cast<double>(embeddings.rows()) : 0.0;
    LossResult out;
    out.value = lg.value;
    out.grad_embeddings = lg.logit_grad * prototypes.weights.transpose() * inv_b;
    out.grad_prototypes = embeddings.transpose() * lg.logit_grad * inv_b;
    return out;
}

LossResult sas_w_loss(const Matrix& embeddings, const ModalityPrototypeMatrix& prototypes,
                      std::span<const int> prototype_labels) {
    check_dims(embeddings, prototypes.weights, "sas_w_loss");
    const auto lg = softmax_xent_from_logits(embeddings * prototypes.weights, prototype_labels);
    const double inv_b = embeddings.rows() > 0 ? 1.0 / static_cast<double>(embeddings.rows()) : 0.0;
    LossResult out;
    out.value = lg.value;
    out.grad_prototypes = embeddings.transpose() * lg.logit_grad * inv_b;
    return out;
}

LossResult sas_w_loss_weight_masked(const Matrix& embeddings,
                                    const ModalityPrototypeMatrix& prototypes,
                                    std::span<const int> prototype_labels,
                                    std::span<const int> feature_labels) {
    check_dims(embeddings, prototypes.weights, "sas_w_loss_weight_masked");
    check_labels(feature_labels, embeddings.rows(), prototypes.weights.cols(),
                 "sas_w_loss_weight_masked");
    const auto lg = softmax_xent_from_logits(embeddings * prototypes.weights, prototype_labels,
                                             feature_labels);
    const double inv_b = embeddings.rows() > 0 ? 1.0 / static_cast<double>(embeddings.rows()) : 0.0;
    LossResult out;
    out.value = lg.value;
    out.grad_prototypes = embeddings.transpose() * lg.logit_grad * inv_b;
    return out;
}

Matrix sas_f_logit_coefficients(const Matrix& embeddings,
                                const ModalityPrototypeMatrix& prototypes,
                                std::span<const int> feature_labels,
                                std::span<const int> prototype_labels, bool use_feature_mask) {
    check_dims(embeddings, prototypes.weights, "sas_f_loss");
    check_labels(prototype_labels, embeddings.rows(), prototypes.weights.cols(), "sas_f_loss");
    for (std::size_t i = 0; i < feature_labels.size() && i < prototype_labels.size(); ++i)
        if (feature_labels[i] == prototype_labels[i])
            throw ContractViolation("sas_f_loss: yF == yW at row " + std::to_string(i));
    const Matrix logits = embeddings * prototypes.weights;
    return softmax_xent_from_logits(logits, feature_labels,
                                    use_feature_mask ? prototype_labels : std::span<const int>{})
        .logit_grad;
}

LossResult sas_f_loss(const Matrix& embeddings, const ModalityPrototypeMatrix& prototypes,
                      std::span<const int> feature_labels, std::span<const int> prototype_labels,
                      bool use_feature_mask) {
    check_dims(embeddings, prototypes.weights, "sas_f_loss");
    check_labels(prototype_labels, embeddings.rows(), prototypes.weights.cols(), "sas_f_loss");
    for (std::size_t i = 0; i < feature_labels.size() && i < prototype_labels.size(); ++i)
        if (feature_labels[i] == prototype_labels[i])
            throw ContractViolation("sas_f_loss: yF == yW at row " + std::to_string(i));
    const auto lg = softmax_xent_from_logits(
        embeddings * prototypes.weights, feature_labels,
        use_feature_mask ? prototype_labels : std::span<const int>{});
    const double inv_b = embeddings.rows() > 0 ? 1.0 / static_cast<double>(embeddings.rows()) : 0.0;
    LossResult out;
    out.value = lg.value;
    out.grad_embeddings = lg.logit_grad * prototypes.weights.transpose() * inv_b;
    return out;
}

LossResult ast_loss(const Matrix& embeddings, const ModalityPrototypeMatrix& prototypes,
                    std::span<const int> feature_labels, AstForm form) {
    check_dims(embeddings, prototypes.weights, "ast_loss");
    check_labels(feature_labels, embeddings.rows(), prototypes.weights.cols(), "ast_loss");
    const Eigen::Index batch = embeddings.rows();
    const double inv_b = batch > 0 ? 1.0 / static_cast<double>(batch) : 0.0;
    LossResult out;
    Matrix grad(batch, embeddings.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
        const auto x = embeddings.row(i).transpose();
        const auto w = prototypes.weights.col(feature_labels[static_cast<std::size_t>(i)]);
        const double xn = x.norm();
        const double wn = w.norm();
        if (!(xn >= kNormEpsilon))
            throw DegenerateNormError("ast_loss: embedding row " + std::to_string(i) +
                                      " has norm below 1e-12");
        if (!(wn >= kNormEpsilon))
            throw DegenerateNormError("ast_loss: target prototype of row " + std::to_string(i) +
                                      " has norm below 1e-12");
        const double c = x.dot(w) / (xn * wn);
        Vector dcos = w / (xn * wn) - c * x / (xn * xn);
        if (form == AstForm::Absolute) {
            total += 1.0 - c;
            grad.row(i) = -dcos.transpose() * inv_b;
        } else {
            total += (1.0 - c) * (1.0 - c);
            grad.row(i) = -2.0 * (1.0 - c) * dcos.transpose() * inv_b;
        }
    }
    out.value = total * inv_b;
    out.grad_embeddings = std::move(grad);
    return out;
}

void CombinedLossConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("alpha must lie in [0, 1]");
    if (!(beta >= 0.0)) throw ContractViolation("beta must be non-negative");
}

CombinedLossResult combined_loss(const Matrix& embeddings,
                                 const ModalityPrototypeMatrix& modality_prototypes,
                                 const IdentityPrototypeMatrix& identity_prototypes,
                                 std::span<const int> identities,
                                 std::span<const Modality> modalities,
                                 const CombinedLossConfig& config) {
    config.validate();
    const int n = modality_prototypes.num_identities();
    if (identity_prototypes.num_identities() != n)
        throw ContractViolation("combined_loss: prototype heads disagree on identity count");
    if (identities.size() != modalities.size())
        throw ContractViolation("combined_loss: identity and modality arrays differ in length");

    std::vector<int> yw, yf;
    yw.reserve(identities.size());
    yf.reserve(identities.size());
    for (std::size_t i = 0; i < identities.size(); ++i) {
        const auto r = rewrite_labels(identities[i], modalities[i], n);
        yw.push_back(r.prototype_label);
        yf.push_back(r.feature_label);
    }

    CombinedLossResult out;
    out.grad_embeddings = Matrix::Zero(embeddings.rows(), embeddings.cols());
    const double alpha = config.alpha;
    const double rest = 1.0 - alpha;

    if (alpha != 0.0) {
        auto lw = config.use_weight_mask
                      ? sas_w_loss_weight_masked(embeddings, modality_prototypes, yw, yf)
                      : sas_w_loss(embeddings, modality_prototypes, yw);
        auto lf = sas_f_loss(embeddings, modality_prototypes, yf, yw, config.use_feature_mask);
        out.loss_w = lw.value;
        out.loss_f = lf.value;
        out.grad_modality_prototypes = alpha * *lw.grad_prototypes;
        out.grad_embeddings += alpha * *lf.grad_embeddings;
    }
    if (rest != 0.0) {
        std::vector<int> labels(identities.begin(), identities.end());
        auto ls = softmax_ce(embeddings, identity_prototypes, labels);
        out.loss_softmax = ls.value;
        out.grad_identity_prototypes = rest * *ls.grad_prototypes;
        out.grad_embeddings += rest * *ls.grad_embeddings;
    }
    if (config.beta != 0.0) {
        auto la = ast_loss(embeddings, modality_prototypes, yf, config.ast_form);
        out.loss_ast = la.value;
        out.grad_embeddings += config.beta * *la.grad_embeddings;
    }
    out.value = alpha * (out.loss_w + out.loss_f) + rest * out.loss_softmax +
                config.beta * out.loss_ast;
    return out;
}

LossResult am_softmax_loss(const Matrix& embeddings, const IdentityPrototypeMatrix& prototypes,
                           std::span<const int> labels, double margin, double scale) {
    if (!(margin >= 0.0)) throw ContractViolation("am_softmax_loss: margin must be >= 0");
    if (!(scale > 0.0)) throw ContractViolation("am_softmax_loss: scale must be > 0");
    check_dims(embeddings, prototypes.weights, "am_softmax_loss");
    check_labels(labels, embeddings.rows(), prototypes.weights.cols(), "am_softmax_loss");
    const auto view = cosine_view(embeddings, prototypes.weights, "am_softmax_loss");
    Matrix logits = scale * view.cos;
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        logits(i, labels[static_cast<std::size_t>(i)]) -= scale * margin;
    const auto lg = softmax_xent_from_logits(logits, labels);
    const double inv_b = embeddings.rows() > 0 ? 1.0 / static_cast<double>(embeddings.rows()) : 0.0;
    Matrix gx, gw;
    backprop_cosine(view, lg.logit_grad * (scale * inv_b), gx, gw);
    LossResult out;
    out.value = lg.value;
    out.grad_embeddings = std::move(gx);
    out.grad_prototypes = std::move(gw);
    return out;
}

LossResult circle_loss(const Matrix& embeddings, const IdentityPrototypeMatrix& prototypes,
                       std::span<const int> labels, double gamma, double margin) {
    if (!(gamma > 0.0)) throw ContractViolation("circle_loss: gamma must be > 0");
    check_dims(embeddings, prototypes.weights, "circle_loss");
    check_labels(labels, embeddings.rows(), prototypes.weights.cols(), "circle_loss");
    const auto view = cosine_view(embeddings, prototypes.weights, "circle_loss");
    const Eigen::Index batch = embeddings.rows();
    const Eigen::Index classes = prototypes.weights.cols();
    const double inv_b = batch > 0 ? 1.0 / static_cast<double>(batch) : 0.0;
    const double opt_p = 1.0 + margin, opt_n = -margin;
    const double delta_p = 1.0 - margin, delta_n = margin;

    Matrix cos_grad = Matrix::Zero(batch, classes);
    double total = 0.0;
    Vector neg_logit(classes);
    for (Eigen::Index i = 0; i < batch; ++i) {
        if (classes < 2) continue;
        const int y = labels[static_cast<std::size_t>(i)];
        const double sp = view.cos(i, y);
        const double ap = std::max(0.0, opt_p - sp);
        const double logit_p = gamma * ap * (sp - delta_p);
        double peak = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < classes; ++j) {
            if (j == y) continue;
            const double sn = view.cos(i, j);
            neg_logit[j] = gamma * std::max(0.0, sn - opt_n) * (sn - delta_n);
            peak = std::max(peak, neg_logit[j]);
        }
        double denom = 0.0;
        for (Eigen::Index j = 0; j < classes; ++j)
            if (j != y) denom += std::exp(neg_logit[j] - peak);
        const double t = peak + std::log(denom) - logit_p;
        if (!std::isfinite(t)) throw NumericError("circle_loss: non-finite logits");
        total += softplus(t);
        const double dt = sigmoid(t);
        const double dlp_dsp = gamma * ((ap > 0.0 ? -(sp - delta_p) : 0.0) + ap);
        cos_grad(i, y) = -dt * dlp_dsp;
        for (Eigen::Index j = 0; j < classes; ++j) {
            if (j == y) continue;
            const double sn = view.cos(i, j);
            const double an = std::max(0.0, sn - opt_n);
            const double dln_dsn = gamma * ((an > 0.0 ? (sn - delta_n) : 0.0) + an);
            const double q = std::exp(neg_logit[j] - peak) / denom;
            cos_grad(i, j) = dt * q * dln_dsn;
        }
    }
    Matrix gx, gw;
    backprop_cosine(view, cos_grad * inv_b, gx, gw);
    LossResult out;
    out.value = total * inv_b;
    out.grad_embeddings = std::move(gx);
    out.grad_prototypes = std::move(gw);
    return out;
}

namespace {

void check_angle(double theta, const char* name) {
    if (!(theta > 0.0 && theta < std::numbers::pi))
        throw BoundaryError(std::string(name) + " must lie strictly inside (0, pi)");
}

}  // namespace

double two_class_angular_loss(double theta_i, double theta_j, double scale) {
    return softplus(scale * (std::cos(theta_j) - std::cos(theta_i)));
}

ThetaDerivatives theta_derivative_probe(double theta_i, double theta_j, double scale) {
    check_angle(theta_i, "theta_i");
    check_angle(theta_j, "theta_j");
    if (!(scale > 0.0)) throw ContractViolation("scale must be positive");
    // e^{s cos tj} / (e^{s cos ti} + e^{s cos tj}) = sigmoid(u)
    const double u = scale * (std::cos(theta_j) - std::cos(theta_i));
    const double p = sigmoid(u);
    const double q = sigmoid(-u);
    const double si = std::sin(theta_i), sj = std::sin(theta_j);
    return {scale * si * p, -scale * scale * si * sj * p * q};
}

}  // namespace sas
