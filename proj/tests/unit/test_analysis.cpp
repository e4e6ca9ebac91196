#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "sasoftmax/analysis.hpp"
#include "sasoftmax/gradcheck.hpp"

using namespace sas;

namespace {

Vector v2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST_CASE("hand-built softmax failure witness") {
    SoftmaxWitness w{v2(1, 0.9), v2(1, -0.9), v2(0.9, 1), v2(1, 0), v2(0, 1)};
    const auto v = verify_witness(w);
    CHECK(v.holds());
    CHECK(v.retrieval_margin == doctest::Approx(1.8 / std::sqrt(1.81 * 1.81) - 0.19 / 1.81));
    w.n2 = v2(1, -1);
    CHECK_FALSE(verify_witness(w).holds());
}

TEST_CASE("witness search finds and serializes a witness") {
    const auto s = check_softmax_failure_mode(1, 100000);
    CHECK(s.verdict.holds());
    CHECK(verify_witness(s.witness).holds());
    CHECK(s.attempts >= 1);
    const auto again = check_softmax_failure_mode(1, 100000);
    CHECK(again.attempts == s.attempts);

    const auto text = witness_json(s);
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("attempts") == s.attempts);
    const auto back = witness_from_json(text);
    CHECK(back.v1 == s.witness.v1);
    CHECK(back.w2 == s.witness.w2);
    CHECK(verify_witness(back).holds());
    CHECK_THROWS(witness_from_json("{}"));

    CHECK_THROWS_AS(check_softmax_failure_mode(1, 0), NumericError);
}

TEST_CASE("feature mask ambiguity construction") {
    const auto inst = fm_ambiguity_instance(7);
    CHECK(inst.masked_own_column_coefficient == 0.0);
    CHECK(inst.prototypes.cols() == 4);
    CHECK(inst.step_size >= 0.05);
    CHECK(inst.step_size <= 0.5);
    CHECK(inst.loss_after_masked < inst.loss_before_masked + 1e-12);

    const auto rep = check_fm_ambiguity(1, 200);
    CHECK(rep.instances.size() == 200);
    CHECK(rep.masked_coefficients_zero);
    CHECK(rep.ambiguous_count >= 1);
    REQUIRE(rep.first_ambiguous_seed >= 1);
    const auto first = fm_ambiguity_instance(static_cast<std::uint64_t>(rep.first_ambiguous_seed));
    CHECK(first.ambiguous());
    CHECK(first.distance_after_unmasked > first.distance_before);
    CHECK(first.loss_after_unmasked < first.loss_before_unmasked);

    const auto j = nlohmann::json::parse(ambiguity_json(rep));
    CHECK(j.is_object());
}

TEST_CASE("angular probe grid keeps its signs") {
    const auto r = check_eq3_grid();
    CHECK(r.rows.size() == 588);
    CHECK(r.all_signs_hold());
    CHECK(r.max_rel_err <= 1e-6);
    const auto csv = angular_probe_csv(r);
    CHECK(csv.rfind("theta_i", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 589);
}

TEST_CASE("numeric_gradient and relative_error") {
    Matrix a(2, 2);
    a << 1, 2, 3, 4;
    const auto g = numeric_gradient([](const Matrix& m) { return m.squaredNorm() + m(0, 1) * m(1, 0); }, a, 1e-5);
    Matrix want(2, 2);
    want << 2, 7, 8, 8;
    CHECK((g - want).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(relative_error(want, want) == 0.0);
    CHECK(relative_error(Matrix::Zero(2, 2), Matrix::Zero(2, 2)) == 0.0);
    CHECK(relative_error(want, 1.001 * want) == doctest::Approx(0.001 / 1.001));
}

TEST_CASE("gradcheck passes and the corruption hook is caught") {
    GradcheckOptions o;
    o.seeds = 3;
    const auto ok = run_gradcheck(o);
    CHECK(ok.all_passed());
    CHECK(ok.rows.size() == 3 * gradcheck_names().size());
    for (const auto& s : ok.summary()) CHECK(s.failures == 0);

    o.corrupt = "sas_f_masked/embeddings";
    const auto bad = run_gradcheck(o);
    CHECK_FALSE(bad.all_passed());
    for (const auto& s : bad.summary()) CHECK((s.failures > 0) == (s.check == o.corrupt));
    CHECK(gradcheck_csv(bad).find("FAIL") != std::string::npos);

    o.corrupt = "no_such_check";
    CHECK_THROWS_AS(run_gradcheck(o), ContractViolation);
}
