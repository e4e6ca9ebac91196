#include "sasoftmax/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace sas {

void Histogram::add(double cosine) {
    int bin = static_cast<int>(std::floor((cosine + 1.0) * 0.5 * kHistogramBins));
    bin = std::clamp(bin, 0, kHistogramBins - 1);
    counts[static_cast<std::size_t>(bin)]++;
}

std::uint64_t Histogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

double Histogram::bin_lower(int bin) { return -1.0 + 2.0 * bin / kHistogramBins; }

double histogram_overlap(const Histogram& a, const Histogram& b) {
    const double ta = static_cast<double>(a.total());
    const double tb = static_cast<double>(b.total());
    if (ta == 0.0 || tb == 0.0) return 0.0;
    double shared = 0.0;
    for (int i = 0; i < kHistogramBins; ++i)
        shared += std::min(a.counts[i] / ta, b.counts[i] / tb);
    return shared;
}

const char* direction_name(Direction d) { return d == Direction::VisToNir ? "vis2nir" : "nir2vis"; }

Matrix cosine_matrix(const Matrix& queries, const Matrix& gallery) {
    if (queries.cols() != gallery.cols())
        throw ContractViolation("cosine_matrix: query and gallery dims differ");
    auto normalized = [](const Matrix& m, const char* what) {
        Matrix out = m;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double n = m.row(i).norm();
            if (!(n >= kNormEpsilon))
                throw DegenerateNormError(std::string("cosine_matrix: ") + what + " row " +
                                          std::to_string(i) + " has norm below 1e-12");
            out.row(i) /= n;
        }
        return out;
    };
    return normalized(queries, "query") * normalized(gallery, "gallery").transpose();
}

RetrievalMetrics cmc_map(const Matrix& similarity, const std::vector<int>& query_ids,
                         const std::vector<int>& gallery_ids) {
    const auto q_count = static_cast<Eigen::Index>(query_ids.size());
    const auto g_count = static_cast<Eigen::Index>(gallery_ids.size());
    if (similarity.rows() != q_count || similarity.cols() != g_count)
        throw ContractViolation("cmc_map: similarity shape does not match id vectors");
    RetrievalMetrics out;
    out.cmc.assign(static_cast<std::size_t>(g_count), 0.0);
    if (q_count == 0) return out;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(g_count));
    double ap_sum = 0.0;
    for (Eigen::Index q = 0; q < q_count; ++q) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return similarity(q, a) > similarity(q, b);
        });
        int hits = 0;
        double precision_sum = 0.0;
        std::size_t first_hit = order.size();
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (gallery_ids[static_cast<std::size_t>(order[r])] != query_ids[static_cast<std::size_t>(q)])
                continue;
            if (hits == 0) first_hit = r;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
        if (hits == 0)
            throw ContractViolation("cmc_map: query " + std::to_string(q) +
                                    " has no relevant gallery item");
        for (std::size_t r = first_hit; r < out.cmc.size(); ++r) out.cmc[r] += 1.0;
        ap_sum += precision_sum / hits;
    }
    for (auto& c : out.cmc) c /= static_cast<double>(q_count);
    out.map = ap_sum / static_cast<double>(q_count);
    return out;
}

EvalReport cross_modal_eval(const EncoderParams& encoder, const Dataset& test, Direction direction) {
    const Modality source = direction == Direction::VisToNir ? Modality::Vis : Modality::Nir;
    std::vector<std::size_t> q_idx, g_idx;
    std::vector<int> q_ids, g_ids;
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
        const auto& s = test.samples[i];
        if (s.modality == source) {
            q_idx.push_back(i);
            q_ids.push_back(s.identity);
        } else {
            g_idx.push_back(i);
            g_ids.push_back(s.identity);
        }
    }
    const Matrix queries = encoder_embed(encoder, test.gather_features(q_idx));
    const Matrix gallery = encoder_embed(encoder, test.gather_features(g_idx));
    const Matrix sim = cosine_matrix(queries, gallery);
    auto metrics = cmc_map(sim, q_ids, g_ids);

    EvalReport report;
    report.cmc = std::move(metrics.cmc);
    report.map = metrics.map;
    double intra_sum = 0.0, inter_sum = 0.0;
    for (Eigen::Index q = 0; q < sim.rows(); ++q)
        for (Eigen::Index g = 0; g < sim.cols(); ++g) {
            const double c = sim(q, g);
            if (q_ids[static_cast<std::size_t>(q)] == g_ids[static_cast<std::size_t>(g)]) {
                report.intra_hist.add(c);
                intra_sum += c;
            } else {
                report.inter_hist.add(c);
                inter_sum += c;
            }
        }
    if (report.intra_hist.total() > 0) report.mean_intra_cosine = intra_sum / report.intra_hist.total();
    if (report.inter_hist.total() > 0) report.mean_inter_cosine = inter_sum / report.inter_hist.total();
    return report;
}

PrototypeDiagnostics prototype_diagnostics(const ModalityPrototypeMatrix& modality_prototypes,
                                           const IdentityPrototypeMatrix& identity_prototypes) {
    const int n = identity_prototypes.num_identities();
    if (modality_prototypes.num_identities() != n)
        throw ContractViolation("prototype_diagnostics: heads disagree on identity count");
    if (modality_prototypes.dim() != identity_prototypes.dim())
        throw ContractViolation("prototype_diagnostics: heads disagree on dimension");
    auto cosine = [](const Vector& a, const Vector& b, int k) {
        const double na = a.norm(), nb = b.norm();
        if (!(na >= kNormEpsilon) || !(nb >= kNormEpsilon))
            throw DegenerateNormError("prototype_diagnostics: identity " + std::to_string(k) +
                                      " has a prototype with norm below 1e-12");
        return a.dot(b) / (na * nb);
    };
    PrototypeDiagnostics out;
    for (int k = 0; k < n; ++k) {
        const Vector pv = modality_prototypes.visible(k);
        const Vector pn = modality_prototypes.infrared(k);
        const Vector ps = identity_prototypes.weights.col(k);
        PrototypeTriple t{cosine(pv, ps, k), cosine(pn, ps, k), cosine(pv, pn, k)};
        out.mean.cos_vis_identity += t.cos_vis_identity / n;
        out.mean.cos_nir_identity += t.cos_nir_identity / n;
        out.mean.cos_vis_nir += t.cos_vis_nir / n;
        out.per_identity.push_back(t);
    }
    return out;
}

namespace {

void append_double(std::string& line, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    line.append(buf, res.ptr);
}

}  // namespace

void export_embeddings(const EncoderParams& encoder, const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    const int d = encoder.output_dim();
    std::string line = "id,modality";
    for (int i = 0; i < d; ++i) line += ",e" + std::to_string(i);
    out << line << '\n';
    if (!dataset.empty()) {
        const Matrix emb = encoder_embed(encoder, dataset.feature_matrix());
        for (std::size_t r = 0; r < dataset.samples.size(); ++r) {
            line = std::to_string(dataset.samples[r].identity);
            line += ',';
            line += modality_code(dataset.samples[r].modality);
            for (int i = 0; i < d; ++i) {
                line += ',';
                append_double(line, emb(static_cast<Eigen::Index>(r), i));
            }
            out << line << '\n';
        }
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

EmbeddingTable read_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
    const auto dim = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') - 1);
    std::vector<std::vector<double>> rows;
    EmbeddingTable table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        table.identities.push_back(std::stoi(field));
        std::getline(ss, field, ',');
        if (field.size() != 1) throw IoError("bad modality in '" + path + "'");
        table.modalities.push_back(parse_modality(field[0]));
        std::vector<double> row;
        while (std::getline(ss, field, ',')) {
            double v = 0.0;
            const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
            if (res.ec != std::errc{}) throw IoError("bad number '" + field + "' in '" + path + "'");
            row.push_back(v);
        }
        if (static_cast<Eigen::Index>(row.size()) != dim)
            throw IoError("row width mismatch in '" + path + "'");
        rows.push_back(std::move(row));
    }
    table.embeddings.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (Eigen::Index c = 0; c < dim; ++c)
            table.embeddings(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    return table;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["cmc"] = report.cmc;
    j["map"] = report.map;
    j["rank1"] = report.cmc.empty() ? 0.0 : report.cmc[0];
    j["mean_intra_cosine"] = report.mean_intra_cosine;
    j["mean_inter_cosine"] = report.mean_inter_cosine;
    j["histogram_overlap"] = histogram_overlap(report.intra_hist, report.inter_hist);
    if (report.prototype_diag) {
        const auto& m = report.prototype_diag->mean;
        j["prototype_diagnostics"] = {{"mean_cos_vis_identity", m.cos_vis_identity},
                                      {"mean_cos_nir_identity", m.cos_nir_identity},
                                      {"mean_cos_vis_nir", m.cos_vis_nir}};
    }
    return j.dump(2) + "\n";
}

void write_histogram_csv(const Histogram& hist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "bin_lower,bin_upper,count\n";
    for (int b = 0; b < kHistogramBins; ++b)
        out << Histogram::bin_lower(b) << ',' << Histogram::bin_lower(b + 1) << ','
            << hist.counts[static_cast<std::size_t>(b)] << '\n';
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace sas
