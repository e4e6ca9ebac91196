#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sasoftmax/analysis.hpp"
#include "sasoftmax/data.hpp"
#include "sasoftmax/eval.hpp"
#include "sasoftmax/experiment.hpp"
#include "sasoftmax/gradcheck.hpp"
#include "sasoftmax/losses.hpp"

namespace py = pybind11;
using namespace sas;

namespace {

std::vector<Modality> modalities_from(const std::string& codes) {
    std::vector<Modality> out;
    for (char c : codes) out.push_back(parse_modality(c));
    return out;
}

std::string codes_from(const std::vector<Modality>& ms) {
    std::string out;
    for (auto m : ms) out += modality_code(m);
    return out;
}

py::tuple loss_tuple(const LossResult& r) {
    return py::make_tuple(r.value, r.grad_embeddings ? py::cast(*r.grad_embeddings) : py::none(),
                          r.grad_prototypes ? py::cast(*r.grad_prototypes) : py::none());
}

py::dict metrics_dict(const RunMetrics& m) {
    py::dict d;
    d["variant"] = variant_name(m.variant);
    d["seed"] = m.seed;
    d["rank1_vis_nir"] = m.rank1_vis_nir;
    d["map_vis_nir"] = m.map_vis_nir;
    d["rank1_nir_vis"] = m.rank1_nir_vis;
    d["map_nir_vis"] = m.map_nir_vis;
    d["intra_cosine"] = m.intra_cosine;
    d["inter_cosine"] = m.inter_cosine;
    d["hist_overlap"] = m.hist_overlap;
    d["cos_vis_nir"] = m.cos_vis_nir;
    d["initial_loss"] = m.initial_loss;
    d["final_loss"] = m.final_loss;
    return d;
}

ExperimentConfig config_from(const py::dict& overrides) {
    ExperimentConfig c;
    for (const auto& [k, v] : overrides) {
        std::string value;
        if (py::isinstance<py::bool_>(v)) {
            value = v.cast<bool>() ? "true" : "false";
        } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
            for (const auto& item : v) value += (value.empty() ? "" : ",") + std::string(py::str(item));
        } else {
            value = py::str(v);
        }
        c.set(py::str(k), value);
    }
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Spectral-aware softmax losses, synthetic VIS/NIR data and retrieval metrics.";

    py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def("rewrite_labels", [](int identity, char modality, int n) {
        const auto r = rewrite_labels(identity, parse_modality(modality), n);
        return py::make_tuple(r.prototype_label, r.feature_label);
    }, py::arg("identity"), py::arg("modality"), py::arg("num_identities"),
       "Returns (yW, yF) for one sample; modality is 'V' or 'N'.");

    m.def("softmax_ce", [](const Matrix& x, const Matrix& w, const std::vector<int>& labels) {
        return loss_tuple(softmax_ce(x, IdentityPrototypeMatrix(w), labels));
    }, py::arg("embeddings"), py::arg("prototypes"), py::arg("labels"));

    m.def("sas_w_loss", [](const Matrix& x, const Matrix& w, const std::vector<int>& yw) {
        return loss_tuple(sas_w_loss(x, ModalityPrototypeMatrix(w), yw));
    }, py::arg("embeddings"), py::arg("prototypes"), py::arg("prototype_labels"));

    m.def("sas_f_loss", [](const Matrix& x, const Matrix& w, const std::vector<int>& yf,
                           const std::vector<int>& yw, bool mask) {
        return loss_tuple(sas_f_loss(x, ModalityPrototypeMatrix(w), yf, yw, mask));
    }, py::arg("embeddings"), py::arg("prototypes"), py::arg("feature_labels"),
       py::arg("prototype_labels"), py::arg("feature_mask") = true);

    m.def("ast_loss", [](const Matrix& x, const Matrix& w, const std::vector<int>& yf, bool squared) {
        return loss_tuple(ast_loss(x, ModalityPrototypeMatrix(w), yf,
                                   squared ? AstForm::Squared : AstForm::Absolute));
    }, py::arg("embeddings"), py::arg("prototypes"), py::arg("feature_labels"), py::arg("squared") = false);

    m.def("combined_loss", [](const Matrix& x, const Matrix& wm, const Matrix& ws,
                              const std::vector<int>& ids, const std::string& modalities, double alpha,
                              double beta, bool feature_mask, bool weight_mask) {
        CombinedLossConfig c{alpha, beta, feature_mask, weight_mask, AstForm::Absolute};
        const auto ms = modalities_from(modalities);
        const auto r = combined_loss(x, ModalityPrototypeMatrix(wm), IdentityPrototypeMatrix(ws), ids, ms, c);
        py::dict d;
        d["value"] = r.value;
        d["loss_w"] = r.loss_w;
        d["loss_f"] = r.loss_f;
        d["loss_softmax"] = r.loss_softmax;
        d["loss_ast"] = r.loss_ast;
        d["grad_embeddings"] = r.grad_embeddings;
        d["grad_modality_prototypes"] = r.grad_modality_prototypes ? py::cast(*r.grad_modality_prototypes) : py::none();
        d["grad_identity_prototypes"] = r.grad_identity_prototypes ? py::cast(*r.grad_identity_prototypes) : py::none();
        return d;
    }, py::arg("embeddings"), py::arg("modality_prototypes"), py::arg("identity_prototypes"),
       py::arg("identities"), py::arg("modalities"), py::arg("alpha") = 0.7, py::arg("beta") = 1.0,
       py::arg("feature_mask") = true, py::arg("weight_mask") = false);

    m.def("am_softmax_loss", [](const Matrix& x, const Matrix& w, const std::vector<int>& labels,
                                double margin, double scale) {
        return loss_tuple(am_softmax_loss(x, IdentityPrototypeMatrix(w), labels, margin, scale));
    }, py::arg("embeddings"), py::arg("prototypes"), py::arg("labels"), py::arg("margin") = 0.3,
       py::arg("scale") = 15.0);

    m.def("circle_loss", [](const Matrix& x, const Matrix& w, const std::vector<int>& labels,
                            double gamma, double margin) {
        return loss_tuple(circle_loss(x, IdentityPrototypeMatrix(w), labels, gamma, margin));
    }, py::arg("embeddings"), py::arg("prototypes"), py::arg("labels"), py::arg("gamma") = 32.0,
       py::arg("margin") = 0.25);

    m.def("theta_derivative_probe", [](double ti, double tj, double s) {
        const auto d = theta_derivative_probe(ti, tj, s);
        return py::make_tuple(d.first, d.mixed);
    }, py::arg("theta_i"), py::arg("theta_j"), py::arg("scale"));

    m.def("generate_synthetic", [](const py::dict& overrides) {
        const auto d = generate_synthetic(config_from(overrides).synth);
        return py::make_tuple(d.feature_matrix(), d.identities(), codes_from(d.modalities()));
    }, py::arg("overrides") = py::dict(),
       "Returns (features, identities, modality codes) using experiment config keys.");

    m.def("cosine_matrix", &cosine_matrix, py::arg("queries"), py::arg("gallery"));

    m.def("cmc_map", [](const Matrix& s, const std::vector<int>& q, const std::vector<int>& g) {
        const auto r = cmc_map(s, q, g);
        return py::make_tuple(r.cmc, r.map);
    }, py::arg("similarity"), py::arg("query_ids"), py::arg("gallery_ids"));

    m.def("run_experiment", [](const py::dict& overrides) {
        const auto c = config_from(overrides);
        const auto data = prepare_data(c);
        RunMetrics metrics;
        {
            py::gil_scoped_release release;
            metrics = run_experiment(data, c.train).metrics;
        }
        return metrics_dict(metrics);
    }, py::arg("overrides") = py::dict(),
       "Trains one model on the synthetic split and returns its test metrics.");

    m.def("config_text", [](const py::dict& overrides) { return config_from(overrides).to_text(); },
          py::arg("overrides") = py::dict());

    m.def("gradcheck", [](int seeds) {
        GradcheckOptions o;
        o.seeds = seeds;
        const auto r = run_gradcheck(o);
        py::list rows;
        for (const auto& s : r.summary())
            rows.append(py::make_tuple(s.check, s.runs, s.failures, s.max_rel_err, s.tolerance));
        return py::make_tuple(r.all_passed(), rows);
    }, py::arg("seeds") = 20);

    m.def("softmax_failure_witness", [](std::uint64_t seed, std::uint64_t budget) {
        return witness_json(check_softmax_failure_mode(seed, budget));
    }, py::arg("seed") = 1, py::arg("budget") = 1000000);
}
