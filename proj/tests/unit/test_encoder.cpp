#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sasoftmax/encoder.hpp"
#include "sasoftmax/gradcheck.hpp"

using namespace sas;

namespace {

bool same(const EncoderParams& a, const EncoderParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias) return false;
    return true;
}

// Independent forward: explicit loops, no Eigen products.
Matrix reference_forward(const EncoderParams& p, const Matrix& x) {
    Matrix h = x;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& L = p.layers[l];
        Matrix out(h.rows(), L.weight.rows());
        for (Eigen::Index i = 0; i < h.rows(); ++i)
            for (Eigen::Index o = 0; o < L.weight.rows(); ++o) {
                double s = L.bias(o);
                for (Eigen::Index k = 0; k < L.weight.cols(); ++k) s += L.weight(o, k) * h(i, k);
                out(i, o) = (l + 1 < p.layers.size() && s < 0.0) ? 0.0 : s;
            }
        h = out;
    }
    return h;
}

}  // namespace

TEST_CASE("init_encoder determinism and shape") {
    CHECK(same(init_encoder({4, 3}, 7), init_encoder({4, 3}, 7)));
    CHECK_FALSE(same(init_encoder({4, 3}, 7), init_encoder({4, 3}, 8)));
    const auto p = init_encoder({4, 8, 3}, 1);
    CHECK(p.layers.size() == 2);
    CHECK(p.output_dim() == 3);
    CHECK(p.input_dim() == 4);
    CHECK(p.dims() == std::vector<int>{4, 8, 3});
    for (const auto& l : p.layers) CHECK(l.bias.isZero(0.0));
    CHECK_THROWS_AS(init_encoder({}, 1), ContractViolation);
    CHECK_THROWS_AS(init_encoder({4}, 1), ContractViolation);
    CHECK_THROWS_AS(init_encoder({4, 0}, 1), ContractViolation);
}

TEST_CASE("init_encoder variance follows fan-in") {
    const auto p = init_encoder({200, 300, 250}, 3);
    const auto var = [](const Matrix& m) { return m.array().square().mean(); };
    CHECK(var(p.layers[0].weight) == doctest::Approx(2.0 / 200).epsilon(0.05));
    CHECK(var(p.layers[1].weight) == doctest::Approx(1.0 / 300).epsilon(0.05));
}

TEST_CASE("encoder_forward special cases") {
    EncoderParams zero = init_encoder({4, 5, 3}, 1);
    for (auto& l : zero.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    CHECK(encoder_embed(zero, test::gaussian(6, 4, 2)).isZero(0.0));

    EncoderParams id;
    id.layers.push_back({Matrix::Identity(4, 4), Vector::Zero(4)});
    const Matrix x = test::gaussian(5, 4, 3);
    CHECK(encoder_embed(id, x) == x);
    CHECK_THROWS_AS(encoder_forward(id, test::gaussian(5, 3, 3)), ContractViolation);
}

TEST_CASE("encoder_forward matches a loop reimplementation") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto p = init_encoder({6, 7, 5, 3}, seed);
        for (auto& l : p.layers) l.bias = test::gaussian(l.bias.size(), 1, seed + 50, 0.3);
        const Matrix x = test::gaussian(9, 6, seed + 100);
        CHECK(test::max_abs(encoder_embed(p, x) - reference_forward(p, x)) <= 1e-12);
    }
}

TEST_CASE("encoder_backward closed forms") {
    auto p = init_encoder({4, 6, 3}, 5);
    const Matrix x = test::gaussian(7, 4, 6);
    const auto fwd = encoder_forward(p, x);
    const auto g0 = encoder_backward(p, fwd.cache, Matrix::Zero(7, 3));
    for (const auto& l : g0.layers) {
        CHECK(l.weight.isZero(0.0));
        CHECK(l.bias.isZero(0.0));
    }

    // single linear layer, loss = sum of embeddings
    auto lin = init_encoder({4, 3}, 9);
    const auto f1 = encoder_forward(lin, x);
    const auto g1 = encoder_backward(lin, f1.cache, Matrix::Ones(7, 3));
    for (Eigen::Index o = 0; o < 3; ++o) {
        CHECK(test::max_abs(g1.layers[0].weight.row(o) - x.colwise().sum()) <= 1e-12);
        CHECK(g1.layers[0].bias(o) == doctest::Approx(7.0));
    }
    CHECK_THROWS_AS(encoder_backward(lin, f1.cache, Matrix::Ones(6, 3)), ContractViolation);
    CHECK_THROWS_AS(encoder_backward(p, f1.cache, Matrix::Ones(7, 3)), ContractViolation);
}

TEST_CASE("encoder_backward matches finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto p = init_encoder({5, 8, 4}, seed);
        for (auto& l : p.layers) l.bias = test::gaussian(l.bias.size(), 1, seed + 10, 0.5);
        const Matrix x = test::gaussian(6, 5, seed + 20);
        const Matrix proj = test::gaussian(6, 4, seed + 30);  // scalarize: sum(proj .* emb)
        const auto fwd = encoder_forward(p, x);
        const auto g = encoder_backward(p, fwd.cache, proj);
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            auto fw = numeric_gradient([&](const Matrix& w) {
                auto q = p;
                q.layers[l].weight = w;
                return (encoder_embed(q, x).array() * proj.array()).sum();
            }, p.layers[l].weight, 1e-5);
            CHECK(relative_error(g.layers[l].weight, fw) <= 1e-6);
            auto fb = numeric_gradient([&](const Matrix& b) {
                auto q = p;
                q.layers[l].bias = b.col(0);
                return (encoder_embed(q, x).array() * proj.array()).sum();
            }, Matrix(p.layers[l].bias), 1e-5);
            CHECK(relative_error(Matrix(g.layers[l].bias), fb) <= 1e-6);
        }
    }
}

TEST_CASE("sgd_step rules") {
    Matrix p = test::gaussian(3, 2, 1), v;
    const Matrix g = test::gaussian(3, 2, 2);
    Matrix q = p;
    sgd_step(q, g, v, {1.0, 0.0, 0.0});
    CHECK(test::max_abs(q - (p - g)) == 0.0);

    q = p;
    v.resize(0, 0);
    sgd_step(q, Matrix::Zero(3, 2), v, {0.5, 0.0, 0.0});
    CHECK(q == p);

    // two momentum steps on a fixed gradient: v1 = g, v2 = 1.9 g
    q = p;
    v.resize(0, 0);
    const SgdConfig c{0.1, 0.9, 0.0};
    sgd_step(q, g, v, c);
    sgd_step(q, g, v, c);
    CHECK(test::max_abs(q - (p - 0.1 * 2.9 * g)) <= 1e-15);

    // weight decay enters the velocity
    q = p;
    v.resize(0, 0);
    sgd_step(q, g, v, {0.1, 0.9, 5e-4});
    CHECK(test::max_abs(q - (p - 0.1 * (g + 5e-4 * p))) <= 1e-15);

    CHECK_THROWS_AS(sgd_step(q, g, v, {0.0, 0.9, 0.0}), ContractViolation);
    CHECK_THROWS_AS(sgd_step(q, g, v, {-1.0, 0.9, 0.0}), ContractViolation);
    CHECK_THROWS_AS(sgd_step(q, Matrix::Zero(2, 2), v, {0.1, 0.9, 0.0}), ContractViolation);
}

TEST_CASE("lr_schedule") {
    const std::vector<int> ms{40, 80};
    CHECK(lr_schedule(0.01, 0, ms, 0.1) == doctest::Approx(0.01));
    CHECK(lr_schedule(0.01, 39, ms, 0.1) == doctest::Approx(0.01));
    CHECK(lr_schedule(0.01, 40, ms, 0.1) == doctest::Approx(0.001));
    CHECK(lr_schedule(0.01, 80, ms, 0.1) == doctest::Approx(0.0001));
    CHECK(lr_schedule(0.01, 99, ms, 0.1) == doctest::Approx(0.0001));
}

TEST_CASE("checkpoint round trip is exact") {
    Checkpoint c{init_encoder({5, 7, 3}, 4), ModalityPrototypeMatrix(test::gaussian(3, 8, 5)),
                 IdentityPrototypeMatrix(test::gaussian(3, 4, 6))};
    c.encoder.layers[0].bias = test::gaussian(7, 1, 7).col(0);
    std::stringstream ss;
    write_checkpoint(c, ss);
    CHECK(ss.str().rfind("SASMODEL1\n", 0) == 0);
    const auto back = read_checkpoint(ss);
    CHECK(same(back.encoder, c.encoder));
    CHECK(back.modality_prototypes.weights == c.modality_prototypes.weights);
    CHECK(back.identity_prototypes.weights == c.identity_prototypes.weights);
}

TEST_CASE("corrupt checkpoints raise I/O errors") {
    std::stringstream bad("SASMODEL2\n");
    CHECK_THROWS_AS(read_checkpoint(bad), IoError);
    Checkpoint c{init_encoder({2, 2}, 1), ModalityPrototypeMatrix(Matrix::Ones(2, 2)),
                 IdentityPrototypeMatrix(Matrix::Ones(2, 1))};
    std::stringstream ss;
    write_checkpoint(c, ss);
    const std::string text = ss.str();
    std::stringstream cut(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(cut), IoError);
    CHECK_THROWS_AS(read_checkpoint(std::string("/nonexistent/model.sasm")), IoError);
}
