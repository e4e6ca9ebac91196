#include "sasoftmax/analysis.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"
#include "sasoftmax/data.hpp"
#include "sasoftmax/losses.hpp"

namespace sas {

namespace {

using json = nlohmann::ordered_json;

double cosine(const Vector& a, const Vector& b) {
    const double na = a.norm(), nb = b.norm();
    if (na < kNormEpsilon || nb < kNormEpsilon) throw DegenerateNormError("zero-norm vector in cosine");
    return a.dot(b) / (na * nb);
}

Vector gaussian(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v(i) = g(rng);
    return v;
}

json to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vector vector_from_json(const json& a) {
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

WitnessVerdict verify_witness(const SoftmaxWitness& w) {
    WitnessVerdict v{};
    v.v1_margin = cosine(w.v1, w.w1) - cosine(w.v1, w.w2);
    v.n1_margin = cosine(w.n1, w.w1) - cosine(w.n1, w.w2);
    v.n2_margin = cosine(w.n2, w.w2) - cosine(w.n2, w.w1);
    v.retrieval_margin = cosine(w.v1, w.n2) - cosine(w.v1, w.n1);
    return v;
}

WitnessSearch check_softmax_failure_mode(std::uint64_t seed, std::uint64_t budget, int dim) {
    if (dim < 2) throw ContractViolation("witness search needs dim >= 2");
    std::mt19937_64 rng(seed_stream(seed, 0x5eed));
    WitnessSearch out;
    for (std::uint64_t attempt = 1; attempt <= budget; ++attempt) {
        SoftmaxWitness w{gaussian(dim, rng), gaussian(dim, rng), gaussian(dim, rng),
                         gaussian(dim, rng), gaussian(dim, rng)};
        WitnessVerdict verdict;
        try {
            verdict = verify_witness(w);
        } catch (const DegenerateNormError&) {
            continue;
        }
        if (verdict.holds()) {
            out.witness = std::move(w);
            out.verdict = verdict;
            out.attempts = attempt;
            return out;
        }
    }
    throw NumericError("no softmax failure witness within budget " + std::to_string(budget));
}

std::string witness_json(const WitnessSearch& search) {
    const auto& w = search.witness;
    const auto& v = search.verdict;
    json j;
    j["attempts"] = search.attempts;
    j["v1"] = to_json(w.v1);
    j["n1"] = to_json(w.n1);
    j["n2"] = to_json(w.n2);
    j["W1"] = to_json(w.w1);
    j["W2"] = to_json(w.w2);
    j["verdict"] = {{"v1_margin", v.v1_margin},
                    {"n1_margin", v.n1_margin},
                    {"n2_margin", v.n2_margin},
                    {"retrieval_margin", v.retrieval_margin},
                    {"holds", v.holds()}};
    return j.dump(2);
}

SoftmaxWitness witness_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
        return {vector_from_json(j.at("v1")), vector_from_json(j.at("n1")),
                vector_from_json(j.at("n2")), vector_from_json(j.at("W1")),
                vector_from_json(j.at("W2"))};
    } catch (const json::exception& e) {
        throw ContractViolation(std::string("malformed witness json: ") + e.what());
    }
}

AmbiguityInstance fm_ambiguity_instance(std::uint64_t seed, int dim) {
    if (dim < 2) throw ContractViolation("ambiguity instance needs dim >= 2");
    std::mt19937_64 rng(seed_stream(seed, 0xa4b1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Identity 0 (VIS): yW = 0 (own-modality column), yF = 2 (cross-modality).
    const int yw = 0, yf = 2;
    AmbiguityInstance inst;
    inst.seed = seed;
    inst.prototypes = Matrix(dim, 4);
    for (int c = 0; c < 4; ++c) inst.prototypes.col(c) = gaussian(dim, rng);
    const ModalityPrototypeMatrix W(inst.prototypes);

    // The sample sits between its two own-identity prototypes; the NIR pair
    // sits on the own-modality side, as in the ambiguous configuration.
    const double t = unit(rng);
    inst.x = t * W.weights.col(yw) + (1.0 - t) * W.weights.col(yf) + 0.3 * gaussian(dim, rng);
    inst.pair = W.weights.col(yw) + 0.3 * gaussian(dim, rng);
    inst.step_size = 0.05 + 0.45 * unit(rng);

    const std::vector<int> yF{yf}, yW{yw};
    Matrix X = inst.x.transpose();
    inst.distance_before = (inst.x - inst.pair).norm();

    auto step = [&](bool masked, double& before, double& after) {
        const LossResult r = sas_f_loss(X, W, yF, yW, masked);
        before = r.value;
        const Matrix moved = X - inst.step_size * *r.grad_embeddings;
        after = sas_f_loss(moved, W, yF, yW, masked).value;
        return Vector(moved.row(0).transpose());
    };
    const Vector xu = step(false, inst.loss_before_unmasked, inst.loss_after_unmasked);
    const Vector xm = step(true, inst.loss_before_masked, inst.loss_after_masked);
    inst.distance_after_unmasked = (xu - inst.pair).norm();
    inst.distance_after_masked = (xm - inst.pair).norm();
    inst.masked_own_column_coefficient = sas_f_logit_coefficients(X, W, yF, yW, true)(0, yw);
    return inst;
}

AmbiguityReport check_fm_ambiguity(std::uint64_t first_seed, int count, int dim) {
    if (count < 1) throw ContractViolation("count must be positive");
    AmbiguityReport report;
    for (int i = 0; i < count; ++i) {
        auto inst = fm_ambiguity_instance(first_seed + static_cast<std::uint64_t>(i), dim);
        if (inst.ambiguous()) {
            if (report.ambiguous_count == 0) report.first_ambiguous_seed = static_cast<long>(inst.seed);
            ++report.ambiguous_count;
        }
        if (inst.masked_own_column_coefficient != 0.0) report.masked_coefficients_zero = false;
        report.instances.push_back(std::move(inst));
    }
    return report;
}

std::string ambiguity_json(const AmbiguityReport& report) {
    json j;
    j["instances"] = report.instances.size();
    j["ambiguous_count"] = report.ambiguous_count;
    j["first_ambiguous_seed"] = report.first_ambiguous_seed;
    j["masked_coefficients_zero"] = report.masked_coefficients_zero;
    json rows = json::array();
    for (const auto& inst : report.instances) {
        if (!inst.ambiguous()) continue;
        json p = json::array();
        for (int c = 0; c < inst.prototypes.cols(); ++c) p.push_back(to_json(inst.prototypes.col(c)));
        rows.push_back({{"seed", inst.seed},
                        {"prototypes", p},
                        {"x", to_json(inst.x)},
                        {"pair", to_json(inst.pair)},
                        {"step_size", inst.step_size},
                        {"d1", inst.distance_before},
                        {"d2_unmasked", inst.distance_after_unmasked},
                        {"d2_masked", inst.distance_after_masked},
                        {"loss_unmasked", {inst.loss_before_unmasked, inst.loss_after_unmasked}},
                        {"loss_masked", {inst.loss_before_masked, inst.loss_after_masked}}});
    }
    j["ambiguous"] = rows;
    return j.dump(2);
}

AngularProbeReport check_eq3_grid() {
    constexpr double h = 1e-5;
    AngularProbeReport report;
    for (double s : {1.0, 8.0, 16.0}) {
        for (int a = 1; a <= 14; ++a) {
            for (int b = 1; b <= 14; ++b) {
                const double ti = 0.2 * a, tj = 0.2 * b;
                const auto d = theta_derivative_probe(ti, tj, s);
                AngularProbeRow row{ti, tj, s, d.first, d.mixed, 0, 0, 0, 0};
                row.fd_first = (two_class_angular_loss(ti + h, tj, s) - two_class_angular_loss(ti - h, tj, s)) / (2 * h);
                // Difference dL/dtheta_i in theta_j through whichever of
                // sigmoid(u), 1 - sigmoid(-u) keeps full relative precision.
                auto u = [&](double t) { return s * (std::cos(t) - std::cos(ti)); };
                const double k = s * std::sin(ti);
                if (u(tj) <= 0.0)
                    row.fd_mixed = k * (sigmoid(u(tj + h)) - sigmoid(u(tj - h))) / (2 * h);
                else
                    row.fd_mixed = -k * (sigmoid(-u(tj + h)) - sigmoid(-u(tj - h))) / (2 * h);
                row.rel_err_first = std::abs(row.first - row.fd_first) / std::max(std::abs(row.first), std::abs(row.fd_first));
                row.rel_err_mixed = std::abs(row.mixed - row.fd_mixed) / std::max(std::abs(row.mixed), std::abs(row.fd_mixed));
                if (row.first > 0.0) ++report.positive_first;
                if (row.mixed < 0.0) ++report.negative_mixed;
                report.max_rel_err = std::max({report.max_rel_err, row.rel_err_first, row.rel_err_mixed});
                report.rows.push_back(row);
            }
        }
    }
    return report;
}

std::string angular_probe_csv(const AngularProbeReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "theta_i,theta_j,scale,first,mixed,fd_first,fd_mixed,rel_err_first,rel_err_mixed\n";
    for (const auto& r : report.rows)
        out << r.theta_i << ',' << r.theta_j << ',' << r.scale << ',' << r.first << ',' << r.mixed << ','
            << r.fd_first << ',' << r.fd_mixed << ',' << r.rel_err_first << ',' << r.rel_err_mixed << '\n';
    return out.str();
}

}  // namespace sas
