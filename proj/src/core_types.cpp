#include "sasoftmax/core_types.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace sas {

char modality_code(Modality m) { return m == Modality::Vis ? 'V' : 'N'; }

Modality parse_modality(char code) {
    switch (code) {
    case 'V': return Modality::Vis;
    case 'N': return Modality::Nir;
    default: throw ContractViolation(std::string("unknown modality code '") + code + "'");
    }
}

Matrix Dataset::gather_features(const std::vector<std::size_t>& indices) const {
    Matrix out(static_cast<Eigen::Index>(indices.size()), input_dim);
    for (std::size_t r = 0; r < indices.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = samples.at(indices[r]).features.transpose();
    return out;
}

Matrix Dataset::feature_matrix() const {
    Matrix out(static_cast<Eigen::Index>(samples.size()), input_dim);
    for (std::size_t r = 0; r < samples.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) = samples[r].features.transpose();
    return out;
}

std::vector<int> Dataset::identities() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.identity);
    return out;
}

std::vector<Modality> Dataset::modalities() const {
    std::vector<Modality> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.modality);
    return out;
}

void validate(const Dataset& dataset) {
    if (dataset.num_identities <= 0) throw ContractViolation("dataset has no identities");
    if (dataset.input_dim <= 0) throw ContractViolation("dataset input_dim must be positive");
    std::vector<int> vis(dataset.num_identities, 0), nir(dataset.num_identities, 0);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        if (s.identity < 0 || s.identity >= dataset.num_identities)
            throw ContractViolation("sample " + std::to_string(i) + " has identity " +
                                    std::to_string(s.identity) + " outside [0, " +
                                    std::to_string(dataset.num_identities) + ")");
        if (s.features.size() != dataset.input_dim)
            throw ContractViolation("sample " + std::to_string(i) + " has wrong feature length");
        if (!s.features.allFinite())
            throw ContractViolation("sample " + std::to_string(i) + " has non-finite features");
        (s.modality == Modality::Vis ? vis : nir)[s.identity]++;
    }
    for (int k = 0; k < dataset.num_identities; ++k)
        if (vis[k] == 0 || nir[k] == 0)
            throw ContractViolation("identity " + std::to_string(k) +
                                    " lacks samples of one modality");
}

ModalityPrototypeMatrix::ModalityPrototypeMatrix(Matrix w) : weights(std::move(w)) {
    if (weights.cols() == 0 || weights.cols() % 2 != 0)
        throw ContractViolation("modality prototype matrix needs an even, positive column count");
    if (!weights.allFinite()) throw ContractViolation("modality prototypes must be finite");
}

IdentityPrototypeMatrix::IdentityPrototypeMatrix(Matrix w) : weights(std::move(w)) {
    if (weights.cols() == 0) throw ContractViolation("identity prototype matrix is empty");
    if (!weights.allFinite()) throw ContractViolation("identity prototypes must be finite");
}

RewrittenLabels rewrite_labels(int identity, Modality modality, int num_identities) {
    if (num_identities <= 0) throw ContractViolation("num_identities must be positive");
    if (identity < 0 || identity >= num_identities)
        throw ContractViolation("identity " + std::to_string(identity) + " outside [0, " +
                                std::to_string(num_identities) + ")");
    if (modality == Modality::Vis) return {identity, identity + num_identities};
    return {identity + num_identities, identity};
}

BatchLabels rewrite_labels(const std::vector<int>& identities,
                           const std::vector<Modality>& modalities, int num_identities) {
    if (identities.size() != modalities.size())
        throw ContractViolation("identity and modality vectors differ in length");
    BatchLabels out;
    out.prototype_labels.reserve(identities.size());
    out.feature_labels.reserve(identities.size());
    for (std::size_t i = 0; i < identities.size(); ++i) {
        const auto r = rewrite_labels(identities[i], modalities[i], num_identities);
        out.prototype_labels.push_back(r.prototype_label);
        out.feature_labels.push_back(r.feature_label);
    }
    return out;
}

namespace {

void append_double(std::string& line, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    line.append(buf, res.ptr);
}

double parse_double(std::string_view field, std::size_t line_no) {
    double v = 0.0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        throw IoError("line " + std::to_string(line_no) + ": cannot parse number '" +
                      std::string(field) + "'");
    return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

void write_dataset_csv(const Dataset& dataset, std::ostream& out) {
    std::string line = "id,modality";
    for (int f = 0; f < dataset.input_dim; ++f) line += ",f" + std::to_string(f);
    out << line << '\n';
    for (const auto& s : dataset.samples) {
        line = std::to_string(s.identity);
        line += ',';
        line += modality_code(s.modality);
        for (Eigen::Index f = 0; f < s.features.size(); ++f) {
            line += ',';
            append_double(line, s.features[f]);
        }
        out << line << '\n';
    }
    if (!out) throw IoError("failed writing dataset CSV");
}

void write_dataset_csv(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_dataset_csv(dataset, out);
}

Dataset read_dataset_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw IoError("dataset CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_commas(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "modality")
        throw IoError("dataset CSV header must start with 'id,modality,f0'");
    Dataset ds;
    ds.input_dim = static_cast<int>(header.size() - 2);
    for (int f = 0; f < ds.input_dim; ++f)
        if (header[static_cast<std::size_t>(f) + 2] != "f" + std::to_string(f))
            throw IoError("unexpected header column '" +
                          std::string(header[static_cast<std::size_t>(f) + 2]) + "'");
    int max_id = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_commas(line);
        if (fields.size() != header.size())
            throw IoError("line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields");
        Sample s;
        int id = 0;
        const auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), id);
        if (res.ec != std::errc{} || id < 0)
            throw IoError("line " + std::to_string(line_no) + ": bad identity");
        if (fields[1].size() != 1) throw IoError("line " + std::to_string(line_no) + ": bad modality");
        s.identity = id;
        s.modality = parse_modality(fields[1][0]);
        s.features.resize(ds.input_dim);
        for (int f = 0; f < ds.input_dim; ++f)
            s.features[f] = parse_double(fields[static_cast<std::size_t>(f) + 2], line_no);
        max_id = std::max(max_id, id);
        ds.samples.push_back(std::move(s));
    }
    ds.num_identities = max_id + 1;
    if (!ds.samples.empty()) validate(ds);
    return ds;
}

Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return read_dataset_csv(in);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace sas
