#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "sasoftmax/core_types.hpp"
#include "sasoftmax/encoder.hpp"

namespace sas {

inline constexpr int kHistogramBins = 60;

// Fixed 60-bin histogram over cosine similarity in [-1, 1]; the last bin is
// closed on the right.
struct Histogram {
    std::array<std::uint64_t, kHistogramBins> counts{};

    void add(double cosine);
    std::uint64_t total() const;
    static double bin_lower(int bin);
};

// Shared mass of two normalized histograms: sum_b min(p_b, q_b).
double histogram_overlap(const Histogram& a, const Histogram& b);

struct PrototypeTriple {
    double cos_vis_identity;  // cos(P_v, P_s)
    double cos_nir_identity;  // cos(P_n, P_s)
    double cos_vis_nir;       // cos(P_v, P_n)
};

struct PrototypeDiagnostics {
    std::vector<PrototypeTriple> per_identity;
    PrototypeTriple mean{};
};

enum class Direction { VisToNir, NirToVis };

const char* direction_name(Direction d);

struct EvalReport {
    std::vector<double> cmc;  // cmc[r] = hit rate at rank r + 1
    double map = 0.0;
    Histogram intra_hist;
    Histogram inter_hist;
    double mean_intra_cosine = 0.0;
    double mean_inter_cosine = 0.0;
    std::optional<PrototypeDiagnostics> prototype_diag;
};

// Entry (i, j) = cos<q_i, g_j>. Throws DegenerateNormError naming the row.
Matrix cosine_matrix(const Matrix& queries, const Matrix& gallery);

struct RetrievalMetrics {
    std::vector<double> cmc;
    double map = 0.0;
};

// Gallery ranked by descending similarity, ties broken by lower gallery
// index. AP averages precision at every relevant position.
RetrievalMetrics cmc_map(const Matrix& similarity, const std::vector<int>& query_ids,
                         const std::vector<int>& gallery_ids);

// Queries are all source-modality samples, the gallery all target-modality
// samples. Histograms cover cross-modality pairs only.
EvalReport cross_modal_eval(const EncoderParams& encoder, const Dataset& test, Direction direction);

PrototypeDiagnostics prototype_diagnostics(const ModalityPrototypeMatrix& modality_prototypes,
                                           const IdentityPrototypeMatrix& identity_prototypes);

// CSV `id,modality,e0..e{d-1}`.
void export_embeddings(const EncoderParams& encoder, const Dataset& dataset, const std::string& path);

struct EmbeddingTable {
    std::vector<int> identities;
    std::vector<Modality> modalities;
    Matrix embeddings;
};

EmbeddingTable read_embeddings(const std::string& path);

std::string eval_report_json(const EvalReport& report);
void write_histogram_csv(const Histogram& hist, const std::string& path);

}  // namespace sas
