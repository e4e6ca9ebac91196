#include "sasoftmax/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "sasoftmax/data.hpp"
#include "sasoftmax/losses.hpp"
#include "sasoftmax/trainer.hpp"

namespace sas {

Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& at, double h) {
    Matrix grad(at.rows(), at.cols());
    Matrix probe = at;
    for (Eigen::Index c = 0; c < at.cols(); ++c) {
        for (Eigen::Index r = 0; r < at.rows(); ++r) {
            const double orig = probe(r, c);
            probe(r, c) = orig + h;
            const double up = f(probe);
            probe(r, c) = orig - h;
            const double down = f(probe);
            probe(r, c) = orig;
            grad(r, c) = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

double relative_error(const Matrix& analytic, const Matrix& numeric) {
    const double scale = std::max(analytic.norm(), numeric.norm());
    if (scale == 0.0) return 0.0;
    return (analytic - numeric).norm() / scale;
}

bool GradcheckReport::all_passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.passed; });
}

std::vector<GradcheckSummary> GradcheckReport::summary() const {
    std::vector<GradcheckSummary> out;
    std::map<std::string, std::size_t> index;
    for (const auto& r : rows) {
        auto [it, fresh] = index.emplace(r.check, out.size());
        if (fresh) out.push_back({r.check, 0, 0, 0.0, r.tolerance});
        auto& s = out[it->second];
        ++s.runs;
        if (!r.passed) ++s.failures;
        s.max_rel_err = std::max(s.max_rel_err, r.rel_err);
    }
    return out;
}

namespace {

constexpr double kAmMargin = 0.3, kAmScale = 15.0;
constexpr double kCircleGamma = 32.0, kCircleMargin = 0.25;

const std::vector<LossVariant> kPipelineVariants{
    LossVariant::Softmax, LossVariant::Sas,       LossVariant::SasFm,  LossVariant::SasFmAst,
    LossVariant::SasFmWm, LossVariant::AmSoftmax, LossVariant::Circle};

struct Instance {
    int d, n, b;
    Matrix x, wm, ws;
    std::vector<int> ids;
    std::vector<Modality> mods;
    BatchLabels labels;
};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = g(rng);
    return m;
}

Instance make_instance(std::uint64_t seed) {
    std::mt19937_64 rng(seed_stream(seed, 0x6c4ec));
    std::uniform_int_distribution<int> dd(2, 8), nd(2, 6), bd(2, 12);
    Instance in;
    in.d = dd(rng);
    in.n = nd(rng);
    in.b = bd(rng);
    in.x = gaussian(in.b, in.d, rng);
    in.wm = gaussian(in.d, 2 * in.n, rng);
    in.ws = gaussian(in.d, in.n, rng);
    std::uniform_int_distribution<int> id(0, in.n - 1), md(0, 1);
    for (int i = 0; i < in.b; ++i) {
        in.ids.push_back(id(rng));
        in.mods.push_back(md(rng) ? Modality::Nir : Modality::Vis);
    }
    in.labels = rewrite_labels(in.ids, in.mods, in.n);
    return in;
}

Matrix flatten(const EncoderParams& p) {
    Eigen::Index total = 0;
    for (const auto& l : p.layers) total += l.weight.size() + l.bias.size();
    Matrix v(total, 1);
    Eigen::Index k = 0;
    for (const auto& l : p.layers) {
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) v(k++, 0) = l.weight.data()[i];
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) v(k++, 0) = l.bias(i);
    }
    return v;
}

void unflatten(const Matrix& v, EncoderParams& p) {
    Eigen::Index k = 0;
    for (auto& l : p.layers) {
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = v(k++, 0);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = v(k++, 0);
    }
}

// The scalar whose encoder gradient the trainer applies: every term except
// the prototype-side one, which treats embeddings as constants.
double feature_side_value(const ModelState& state, const InputBatch& batch, const TrainConfig& config) {
    const auto g = compute_gradients(state, batch, config);
    if (config.variant == LossVariant::AmSoftmax || config.variant == LossVariant::Circle)
        return g.metrics.loss_total;
    return g.metrics.loss_total - config.effective_loss().alpha * g.metrics.loss_w;
}

class Runner {
public:
    explicit Runner(const GradcheckOptions& o) : opt_(o) {}

    void record(const std::string& check, std::uint64_t seed, Matrix analytic, const Matrix& numeric,
                double tol) {
        if (opt_.corrupt == "all" || opt_.corrupt == check) analytic *= 1.001;
        const double err = relative_error(analytic, numeric);
        report_.rows.push_back({check, seed, err, tol, std::isfinite(err) && err <= tol});
    }

    void loss_checks(std::uint64_t seed) {
        const Instance in = make_instance(seed);
        const double h = opt_.step, tol = opt_.tolerance;
        const auto& yW = in.labels.prototype_labels;
        const auto& yF = in.labels.feature_labels;
        const ModalityPrototypeMatrix Wm(in.wm);
        const IdentityPrototypeMatrix Ws(in.ws);

        record("softmax_ce/embeddings", seed, *softmax_ce(in.x, Ws, in.ids).grad_embeddings,
               numeric_gradient([&](const Matrix& x) { return softmax_ce(x, Ws, in.ids).value; }, in.x, h), tol);
        record("softmax_ce/prototypes", seed, *softmax_ce(in.x, Ws, in.ids).grad_prototypes,
               numeric_gradient([&](const Matrix& w) {
                   return softmax_ce(in.x, IdentityPrototypeMatrix(w), in.ids).value;
               }, in.ws, h), tol);
        record("sas_w/prototypes", seed, *sas_w_loss(in.x, Wm, yW).grad_prototypes,
               numeric_gradient([&](const Matrix& w) {
                   return sas_w_loss(in.x, ModalityPrototypeMatrix(w), yW).value;
               }, in.wm, h), tol);
        for (bool masked : {false, true}) {
            record(masked ? "sas_f_masked/embeddings" : "sas_f/embeddings", seed,
                   *sas_f_loss(in.x, Wm, yF, yW, masked).grad_embeddings,
                   numeric_gradient([&](const Matrix& x) {
                       return sas_f_loss(x, Wm, yF, yW, masked).value;
                   }, in.x, h), tol);
        }
        record("sas_w_weight_masked/prototypes", seed,
               *sas_w_loss_weight_masked(in.x, Wm, yW, yF).grad_prototypes,
               numeric_gradient([&](const Matrix& w) {
                   return sas_w_loss_weight_masked(in.x, ModalityPrototypeMatrix(w), yW, yF).value;
               }, in.wm, h), tol);
        for (AstForm form : {AstForm::Absolute, AstForm::Squared}) {
            record(form == AstForm::Absolute ? "ast/embeddings" : "ast_squared/embeddings", seed,
                   *ast_loss(in.x, Wm, yF, form).grad_embeddings,
                   numeric_gradient([&](const Matrix& x) { return ast_loss(x, Wm, yF, form).value; },
                                    in.x, h), tol);
        }
        const auto am = am_softmax_loss(in.x, Ws, in.ids, kAmMargin, kAmScale);
        record("am_softmax/embeddings", seed, *am.grad_embeddings,
               numeric_gradient([&](const Matrix& x) {
                   return am_softmax_loss(x, Ws, in.ids, kAmMargin, kAmScale).value;
               }, in.x, h), tol);
        record("am_softmax/prototypes", seed, *am.grad_prototypes,
               numeric_gradient([&](const Matrix& w) {
                   return am_softmax_loss(in.x, IdentityPrototypeMatrix(w), in.ids, kAmMargin, kAmScale).value;
               }, in.ws, h), tol);
        const auto ci = circle_loss(in.x, Ws, in.ids, kCircleGamma, kCircleMargin);
        record("circle/embeddings", seed, *ci.grad_embeddings,
               numeric_gradient([&](const Matrix& x) {
                   return circle_loss(x, Ws, in.ids, kCircleGamma, kCircleMargin).value;
               }, in.x, h), tol);
        record("circle/prototypes", seed, *ci.grad_prototypes,
               numeric_gradient([&](const Matrix& w) {
                   return circle_loss(in.x, IdentityPrototypeMatrix(w), in.ids, kCircleGamma, kCircleMargin).value;
               }, in.ws, h), tol);
    }

    void pipeline_checks(std::uint64_t seed) {
        const Instance in = make_instance(seed);
        std::mt19937_64 rng(seed_stream(seed, 0x919e));
        const int input_dim = 6;
        InputBatch batch;
        batch.inputs = gaussian(in.b, input_dim, rng);
        batch.identities = in.ids;
        batch.modalities = in.mods;
        for (LossVariant v : kPipelineVariants) {
            TrainConfig cfg;
            cfg.variant = v;
            cfg.hidden_dims = {8};
            cfg.embed_dim = in.d;
            cfg.seed = seed;
            cfg.am_margin = kAmMargin;
            cfg.am_scale = kAmScale;
            cfg.circle_gamma = kCircleGamma;
            cfg.circle_margin = kCircleMargin;
            ModelState state = init_model(input_dim, in.n, cfg);
            // Nonzero biases keep tiny rectifier nets from emitting zero rows.
            std::mt19937_64 brng(seed_stream(seed, 0xb1a5));
            for (auto& l : state.encoder.layers) l.bias = 0.5 * gaussian(l.bias.size(), 1, brng);
            state.modality_prototypes.weights = in.wm;
            state.identity_prototypes.weights = in.ws;
            const Matrix analytic = flatten(compute_gradients(state, batch, cfg).grad_encoder);
            ModelState probe = state;
            const Matrix numeric = numeric_gradient([&](const Matrix& theta) {
                unflatten(theta, probe.encoder);
                return feature_side_value(probe, batch, cfg);
            }, flatten(state.encoder), opt_.step);
            record(std::string("pipeline/") + variant_name(v), seed, analytic, numeric,
                   opt_.pipeline_tolerance);
        }
    }

    GradcheckReport run() {
        if (opt_.seeds < 1) throw ContractViolation("gradcheck needs at least one seed");
        if (!(opt_.step > 0.0)) throw ContractViolation("finite-difference step must be positive");
        if (!opt_.corrupt.empty() && opt_.corrupt != "all") {
            const auto names = gradcheck_names();
            if (std::find(names.begin(), names.end(), opt_.corrupt) == names.end())
                throw ContractViolation("unknown gradcheck name: " + opt_.corrupt);
        }
        for (int i = 0; i < opt_.seeds; ++i) loss_checks(opt_.first_seed + static_cast<std::uint64_t>(i));
        for (int i = 0; i < opt_.seeds; ++i) pipeline_checks(opt_.first_seed + static_cast<std::uint64_t>(i));
        return std::move(report_);
    }

private:
    GradcheckOptions opt_;
    GradcheckReport report_;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

}  // namespace

std::vector<std::string> gradcheck_names() {
    std::vector<std::string> names{"softmax_ce/embeddings",   "softmax_ce/prototypes",
                                   "sas_w/prototypes",        "sas_f/embeddings",
                                   "sas_f_masked/embeddings", "sas_w_weight_masked/prototypes",
                                   "ast/embeddings",          "ast_squared/embeddings",
                                   "am_softmax/embeddings",   "am_softmax/prototypes",
                                   "circle/embeddings",       "circle/prototypes"};
    for (LossVariant v : kPipelineVariants) names.push_back(std::string("pipeline/") + variant_name(v));
    return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) { return Runner(options).run(); }

std::string gradcheck_csv(const GradcheckReport& report) {
    std::ostringstream out;
    out << "check,seed,rel_err,tolerance,passed\n";
    out.precision(6);
    for (const auto& r : report.rows)
        out << r.check << ',' << r.seed << ',' << r.rel_err << ',' << r.tolerance << ','
            << (r.passed ? "pass" : "FAIL") << '\n';
    return out.str();
}

std::string gradcheck_markdown(const GradcheckReport& report) {
    std::string out = "| check | runs | failures | max rel err | tolerance |\n|---|---|---|---|---|\n";
    for (const auto& s : report.summary())
        out += "| " + s.check + " | " + std::to_string(s.runs) + " | " + std::to_string(s.failures) +
               " | " + fmt(s.max_rel_err) + " | " + fmt(s.tolerance) + " |\n";
    return out;
}

}  // namespace sas
