#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "sasoftmax/data.hpp"
#include "sasoftmax/eval.hpp"

using namespace sas;

namespace {

// Position of gallery item j under the documented ordering, by counting.
std::size_t position(const Matrix& s, Eigen::Index q, Eigen::Index j) {
    std::size_t pos = 0;
    for (Eigen::Index g = 0; g < s.cols(); ++g)
        if (s(q, g) > s(q, j) || (s(q, g) == s(q, j) && g < j)) ++pos;
    return pos;
}

RetrievalMetrics brute_force(const Matrix& s, const std::vector<int>& qid, const std::vector<int>& gid) {
    RetrievalMetrics out;
    out.cmc.assign(gid.size(), 0.0);
    for (Eigen::Index q = 0; q < s.rows(); ++q) {
        std::vector<std::size_t> rel;
        for (Eigen::Index j = 0; j < s.cols(); ++j)
            if (gid[static_cast<std::size_t>(j)] == qid[static_cast<std::size_t>(q)]) rel.push_back(position(s, q, j));
        std::sort(rel.begin(), rel.end());
        double ap = 0.0;
        for (std::size_t h = 0; h < rel.size(); ++h) ap += double(h + 1) / double(rel[h] + 1);
        out.map += ap / rel.size() / s.rows();
        for (std::size_t r = rel.front(); r < gid.size(); ++r) out.cmc[r] += 1.0 / s.rows();
    }
    return out;
}

EncoderParams identity_encoder(int dim) {
    EncoderParams e;
    e.layers.push_back({Matrix::Identity(dim, dim), Vector::Zero(dim)});
    return e;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / (std::string("sas_eval_") + name);
}

}  // namespace

TEST_CASE("cosine_matrix") {
    Matrix q(2, 2), g(3, 2);
    q << 3, 0, 1, 1;
    g << 1, 0, 0, 2, -1, -1;
    const Matrix c = cosine_matrix(q, g);
    CHECK(c(0, 0) == doctest::Approx(1.0));
    CHECK(c(0, 1) == doctest::Approx(0.0));
    CHECK(c(1, 2) == doctest::Approx(-1.0));
    CHECK(c(1, 0) == doctest::Approx(std::sqrt(0.5)));
    g.row(1).setZero();
    try {
        cosine_matrix(q, g);
        FAIL("expected DegenerateNormError");
    } catch (const DegenerateNormError& e) {
        CHECK(std::string(e.what()).find("gallery row 1") != std::string::npos);
    }
    CHECK_THROWS_AS(cosine_matrix(q, Matrix::Ones(2, 3)), ContractViolation);
}

TEST_CASE("cmc_map worked examples") {
    Matrix s(1, 3);
    s << 0.9, 0.5, 0.1;
    auto m = cmc_map(s, {7}, {7, 2, 7});
    CHECK(m.map == doctest::Approx(5.0 / 6.0));
    CHECK(m.cmc == std::vector<double>{1, 1, 1});

    m = cmc_map(s, {2}, {7, 2, 7});
    CHECK(m.map == doctest::Approx(0.5));
    CHECK(m.cmc == std::vector<double>{0, 1, 1});

    // Ties resolve toward the lower gallery index.
    Matrix t(1, 2);
    t << 0.4, 0.4;
    CHECK(cmc_map(t, {1}, {0, 1}).map == doctest::Approx(0.5));
    CHECK(cmc_map(t, {0}, {0, 1}).map == doctest::Approx(1.0));

    CHECK_THROWS_AS(cmc_map(s, {5}, {7, 2, 7}), ContractViolation);
    CHECK_THROWS_AS(cmc_map(s, {7, 7}, {7, 2, 7}), ContractViolation);
}

TEST_CASE("cmc_map matches a counting oracle on tied random instances") {
    std::mt19937_64 rng(2024);
    for (int inst = 0; inst < 100; ++inst) {
        CAPTURE(inst);
        const int nq = 1 + static_cast<int>(rng() % 6), ng = 2 + static_cast<int>(rng() % 9);
        const int ids = 1 + static_cast<int>(rng() % 3);
        std::vector<int> gid(static_cast<std::size_t>(ng)), qid(static_cast<std::size_t>(nq));
        for (auto& g : gid) g = static_cast<int>(rng() % ids);
        for (auto& q : qid) q = gid[rng() % gid.size()];
        Matrix s(nq, ng);
        // Coarse levels force many ties.
        for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = static_cast<double>(rng() % 4) / 4.0;
        const auto got = cmc_map(s, qid, gid);
        const auto want = brute_force(s, qid, gid);
        CHECK(std::abs(got.map - want.map) <= 1e-12);
        for (std::size_t r = 0; r < got.cmc.size(); ++r) CHECK(std::abs(got.cmc[r] - want.cmc[r]) <= 1e-12);
        for (std::size_t r = 1; r < got.cmc.size(); ++r) CHECK(got.cmc[r] >= got.cmc[r - 1]);
        CHECK(got.cmc.back() == doctest::Approx(1.0));
        CHECK(got.map <= 1.0);
        CHECK(got.map > 0.0);
    }
}

TEST_CASE("cmc_map is invariant under increasing transforms and joint permutations") {
    const Matrix s = test::gaussian(5, 9, 31);
    const std::vector<int> qid{0, 1, 2, 0, 1};
    const std::vector<int> gid{0, 1, 2, 0, 1, 2, 0, 1, 2};
    const auto base = cmc_map(s, qid, gid);
    const Matrix t = s.unaryExpr([](double v) { return std::exp(3 * v) - 2; });
    const auto moved = cmc_map(t, qid, gid);
    CHECK(moved.map == base.map);
    CHECK(moved.cmc == base.cmc);

    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    Matrix sp(5, 9);
    std::vector<int> gp(9);
    for (int j = 0; j < 9; ++j) {
        sp.col(j) = s.col(perm[j]);
        gp[j] = gid[perm[j]];
    }
    const auto permuted = cmc_map(sp, qid, gp);
    CHECK(permuted.map == doctest::Approx(base.map));
    CHECK(permuted.cmc == base.cmc);
}

TEST_CASE("histogram binning and overlap") {
    Histogram h;
    h.add(-1.0);
    h.add(1.0);
    h.add(0.0);
    h.add(-0.99);
    h.add(2.0);
    CHECK(h.counts[0] == 2);
    CHECK(h.counts[30] == 1);
    CHECK(h.counts[59] == 2);
    CHECK(h.total() == 5);
    CHECK(Histogram::bin_lower(0) == -1.0);
    CHECK(Histogram::bin_lower(60) == doctest::Approx(1.0));

    Histogram a, b;
    a.add(0.5);
    a.add(-0.5);
    b.add(0.5);
    b.add(0.5);
    CHECK(histogram_overlap(a, a) == doctest::Approx(1.0));
    CHECK(histogram_overlap(a, b) == doctest::Approx(0.5));
    CHECK(histogram_overlap(a, Histogram{}) == 0.0);
}

TEST_CASE("evaluation histograms partition every cross-modality pair") {
    SynthConfig c;
    c.num_identities = 5;
    c.samples_per_identity_per_modality = 4;
    c.input_dim = 6;
    c.offset_rank = 0;
    const auto d = generate_synthetic(c);
    const auto r = cross_modal_eval(identity_encoder(6), d, Direction::NirToVis);
    CHECK(r.intra_hist.total() == 5 * 4 * 4);
    CHECK(r.inter_hist.total() == 5 * 4 * 16);
    CHECK(r.cmc.size() == 20);
    CHECK(r.mean_intra_cosine > r.mean_inter_cosine);
}

TEST_CASE("gap-free noiseless data retrieves perfectly") {
    SynthConfig c;
    c.modality_gap = 0.0;
    c.noise_sigma = 0.0;
    c.num_identities = 7;
    c.samples_per_identity_per_modality = 3;
    c.input_dim = 8;
    const auto d = generate_synthetic(c);
    for (auto dir : {Direction::VisToNir, Direction::NirToVis}) {
        const auto r = cross_modal_eval(identity_encoder(8), d, dir);
        CHECK(r.cmc[0] == doctest::Approx(1.0));
        CHECK(r.map == doctest::Approx(1.0));
        CHECK(r.mean_intra_cosine == doctest::Approx(1.0));
    }
    CHECK(std::string(direction_name(Direction::VisToNir)) == "vis2nir");
}

TEST_CASE("random embeddings sit near the chance level") {
    // 20 identities, 5 relevant of 100 gallery items: AP for a random ranking
    // averages roughly 0.05 to 0.1.
    const Matrix q = test::gaussian(100, 16, 5), g = test::gaussian(100, 16, 6);
    std::vector<int> ids(100);
    for (int i = 0; i < 100; ++i) ids[i] = i / 5;
    const auto m = cmc_map(cosine_matrix(q, g), ids, ids);
    CHECK(m.map < 0.2);
    CHECK(m.cmc[0] < 0.2);
}

TEST_CASE("prototype_diagnostics closed forms") {
    Matrix w(2, 4), s(2, 2);
    w << 1, 0, 0, 1,
         0, 1, 1, 1;
    s << 1, 1,
         1, 0;
    const auto diag = prototype_diagnostics(ModalityPrototypeMatrix(w), IdentityPrototypeMatrix(s));
    REQUIRE(diag.per_identity.size() == 2);
    CHECK(diag.per_identity[0].cos_vis_nir == doctest::Approx(0.0));
    CHECK(diag.per_identity[0].cos_vis_identity == doctest::Approx(std::sqrt(0.5)));
    CHECK(diag.per_identity[0].cos_nir_identity == doctest::Approx(std::sqrt(0.5)));
    CHECK(diag.per_identity[1].cos_vis_nir == doctest::Approx(std::sqrt(0.5)));
    CHECK(diag.per_identity[1].cos_vis_identity == doctest::Approx(0.0));
    CHECK(diag.per_identity[1].cos_nir_identity == doctest::Approx(std::sqrt(0.5)));
    CHECK(diag.mean.cos_vis_nir == doctest::Approx(std::sqrt(0.5) / 2));

    s.col(1).setZero();
    CHECK_THROWS_AS(prototype_diagnostics(ModalityPrototypeMatrix(w), IdentityPrototypeMatrix(s)),
                    DegenerateNormError);
    CHECK_THROWS_AS(prototype_diagnostics(ModalityPrototypeMatrix(w), IdentityPrototypeMatrix(Matrix::Ones(2, 3))),
                    ContractViolation);
}

TEST_CASE("embedding export round trip") {
    SynthConfig c;
    c.num_identities = 3;
    c.samples_per_identity_per_modality = 2;
    c.input_dim = 4;
    c.offset_rank = 0;
    const auto d = generate_synthetic(c);
    const auto enc = init_encoder({4, 5, 3}, 9);
    const auto path = temp_file("emb.csv").string();
    export_embeddings(enc, d, path);
    {
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK(header == "id,modality,e0,e1,e2");
        int lines = 1;
        for (std::string l; std::getline(in, l);) ++lines;
        CHECK(lines == 13);
    }
    const auto t = read_embeddings(path);
    CHECK(t.identities == d.identities());
    CHECK(t.modalities == d.modalities());
    CHECK(t.embeddings == encoder_embed(enc, d.feature_matrix()));

    Dataset empty;
    export_embeddings(enc, empty, path);
    const auto e = read_embeddings(path);
    CHECK(e.embeddings.rows() == 0);
    CHECK(e.embeddings.cols() == 3);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(read_embeddings(temp_file("missing.csv").string()), IoError);
    CHECK_THROWS_AS(export_embeddings(enc, d, "/nonexistent_dir/x.csv"), IoError);
}

TEST_CASE("report json carries the headline numbers") {
    EvalReport r;
    r.cmc = {0.5, 1.0};
    r.map = 0.75;
    r.intra_hist.add(0.9);
    r.inter_hist.add(0.9);
    const auto j = nlohmann::json::parse(eval_report_json(r));
    CHECK(j.at("rank1") == 0.5);
    CHECK(j.at("map") == 0.75);
    CHECK(j.at("histogram_overlap") == 1.0);
    CHECK_FALSE(j.contains("prototype_diagnostics"));
}
