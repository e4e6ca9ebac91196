#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sasoftmax/core_types.hpp"

using namespace sas;

TEST_CASE("rewrite_labels examples") {
    auto v = rewrite_labels(2, Modality::Vis, 4);
    CHECK(v.prototype_label == 2);
    CHECK(v.feature_label == 6);
    auto n = rewrite_labels(2, Modality::Nir, 4);
    CHECK(n.prototype_label == 6);
    CHECK(n.feature_label == 2);
    auto one = rewrite_labels(0, Modality::Vis, 1);
    CHECK(one.prototype_label == 0);
    CHECK(one.feature_label == 1);
}

TEST_CASE("rewrite_labels rejects out-of-range identities") {
    CHECK_THROWS_AS(rewrite_labels(4, Modality::Vis, 4), ContractViolation);
    CHECK_THROWS_AS(rewrite_labels(-1, Modality::Nir, 4), ContractViolation);
}

TEST_CASE("rewrite_labels properties hold for every legal input") {
    for (int n = 1; n <= 7; ++n) {
        for (int id = 0; id < n; ++id) {
            const auto v = rewrite_labels(id, Modality::Vis, n);
            const auto r = rewrite_labels(id, Modality::Nir, n);
            CHECK(v.prototype_label != v.feature_label);
            CHECK(std::abs(v.prototype_label - v.feature_label) == n);
            CHECK(v.prototype_label % n == id);
            CHECK(v.feature_label % n == id);
            CHECK((v.prototype_label < n) != (v.feature_label < n));
            // swapping the modality swaps the pair
            CHECK(r.prototype_label == v.feature_label);
            CHECK(r.feature_label == v.prototype_label);
        }
    }
}

TEST_CASE("batch rewrite matches the scalar rule") {
    const std::vector<int> ids{0, 1, 2, 1};
    const std::vector<Modality> mods{Modality::Vis, Modality::Nir, Modality::Nir, Modality::Vis};
    const auto b = rewrite_labels(ids, mods, 3);
    CHECK(b.prototype_labels == std::vector<int>{0, 4, 5, 1});
    CHECK(b.feature_labels == std::vector<int>{3, 1, 2, 4});
    CHECK_THROWS_AS(rewrite_labels(ids, std::vector<Modality>{Modality::Vis}, 3), ContractViolation);
}

TEST_CASE("prototype matrices enforce their column layout") {
    ModalityPrototypeMatrix w(test::gaussian(3, 6, 1));
    CHECK(w.num_identities() == 3);
    CHECK(w.infrared(1) == w.weights.col(4));
    CHECK(w.visible(2) == w.weights.col(2));
    CHECK_THROWS_AS(ModalityPrototypeMatrix(Matrix(3, 5)), ContractViolation);
    Matrix bad = Matrix::Zero(2, 2);
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(ModalityPrototypeMatrix{bad}, ContractViolation);
    CHECK_THROWS_AS(IdentityPrototypeMatrix(Matrix(3, 0)), ContractViolation);
}

TEST_CASE("modality codes round trip") {
    CHECK(parse_modality(modality_code(Modality::Vis)) == Modality::Vis);
    CHECK(parse_modality(modality_code(Modality::Nir)) == Modality::Nir);
    CHECK_THROWS_AS(parse_modality('X'), ContractViolation);
}

namespace {

Dataset tiny() {
    Dataset d;
    d.num_identities = 2;
    d.input_dim = 3;
    d.samples = {{Vector::LinSpaced(3, 0.1, 0.3), 0, Modality::Vis},
                 {Vector::LinSpaced(3, -1.0 / 3.0, 1e-17), 0, Modality::Nir},
                 {Vector::Constant(3, 2.5), 1, Modality::Vis},
                 {Vector::Constant(3, -7.0), 1, Modality::Nir}};
    return d;
}

}  // namespace

TEST_CASE("dataset validation") {
    Dataset d = tiny();
    CHECK_NOTHROW(validate(d));
    d.samples[3].modality = Modality::Vis;
    CHECK_THROWS_AS(validate(d), ContractViolation);
    d = tiny();
    d.samples[0].identity = 2;
    CHECK_THROWS_AS(validate(d), ContractViolation);
    d = tiny();
    d.samples[0].features[1] = INFINITY;
    CHECK_THROWS_AS(validate(d), ContractViolation);
}

TEST_CASE("dataset CSV round trip is exact") {
    const Dataset d = tiny();
    std::stringstream ss;
    write_dataset_csv(d, ss);
    CHECK(ss.str().rfind("id,modality,f0,f1,f2\n", 0) == 0);
    const Dataset back = read_dataset_csv(ss);
    REQUIRE(back.size() == d.size());
    CHECK(back.num_identities == 2);
    CHECK(back.input_dim == 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.samples[i].identity == d.samples[i].identity);
        CHECK(back.samples[i].modality == d.samples[i].modality);
        CHECK(back.samples[i].features == d.samples[i].features);
    }
}

TEST_CASE("malformed CSV raises I/O errors") {
    std::stringstream empty;
    CHECK_THROWS_AS(read_dataset_csv(empty), IoError);
    std::stringstream header("id,mod,f0\n0,V,1\n");
    CHECK_THROWS_AS(read_dataset_csv(header), IoError);
    std::stringstream number("id,modality,f0\n0,V,abc\n");
    CHECK_THROWS_AS(read_dataset_csv(number), IoError);
    CHECK_THROWS_AS(read_dataset_csv(std::string("/nonexistent/file.csv")), IoError);
}
