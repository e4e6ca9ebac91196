// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sasoftmax/analysis.hpp"
#include "sasoftmax/encoder.hpp"
#include "sasoftmax/eval.hpp"
#include "sasoftmax/experiment.hpp"
#include "sasoftmax/gradcheck.hpp"

using namespace sas;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, double limit_s, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0 && secs > limit_s) {
        o.passed = false;
        o.detail += " (over the " + format_double(limit_s) + " s budget)";
    }
    if (!o.passed) ++failures;
    std::printf("[%s] %2d %-22s %7.2fs  %s\n", o.passed ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v, int prec = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

// Reference ranking by counting; independent of the sort in cmc_map.
RetrievalMetrics counting_reference(const Matrix& s, const std::vector<int>& qid, const std::vector<int>& gid) {
    RetrievalMetrics out;
    out.cmc.assign(gid.size(), 0.0);
    for (Eigen::Index q = 0; q < s.rows(); ++q) {
        std::vector<std::size_t> pos;
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            if (gid[static_cast<std::size_t>(j)] != qid[static_cast<std::size_t>(q)]) continue;
            std::size_t p = 0;
            for (Eigen::Index g = 0; g < s.cols(); ++g)
                if (s(q, g) > s(q, j) || (s(q, g) == s(q, j) && g < j)) ++p;
            pos.push_back(p);
        }
        std::sort(pos.begin(), pos.end());
        double ap = 0.0;
        for (std::size_t h = 0; h < pos.size(); ++h) ap += double(h + 1) / double(pos[h] + 1);
        out.map += ap / double(pos.size()) / double(s.rows());
        for (std::size_t r = pos.front(); r < gid.size(); ++r) out.cmc[r] += 1.0 / double(s.rows());
    }
    return out;
}

double map_of(const std::vector<VariantSummary>& s, LossVariant v) {
    for (const auto& e : s)
        if (e.variant == v) return 100.0 * e.map.mean;
    throw ContractViolation("variant missing from summary");
}

const VariantSummary& row_of(const std::vector<VariantSummary>& s, LossVariant v) {
    for (const auto& e : s)
        if (e.variant == v) return e;
    throw ContractViolation("variant missing from summary");
}

std::string checkpoint_text(const ModelState& state) {
    std::ostringstream os;
    write_checkpoint(state.checkpoint(), os);
    return os.str();
}

}  // namespace

int main() {
    const ExperimentConfig config;  // default protocol
    std::vector<VariantSummary> table;
    AblationResult ablation;

    report(1, "gradient check", 30, [] {
        GradcheckOptions o;
        const auto r = run_gradcheck(o);
        double worst = 0, worst_pipe = 0;
        for (const auto& row : r.rows)
            (row.check.rfind("pipeline/", 0) == 0 ? worst_pipe : worst) =
                std::max(row.check.rfind("pipeline/", 0) == 0 ? worst_pipe : worst, row.rel_err);
        return Outcome{r.all_passed(), std::to_string(r.rows.size()) + " checks over " +
                                           std::to_string(o.seeds) + " seeds, max rel err " +
                                           fmt(worst * 1e9, 3) + "e-9 (loss), " +
                                           fmt(worst_pipe * 1e9, 3) + "e-9 (pipeline)"};
    });

    report(2, "evaluator oracle", 5, [] {
        std::mt19937_64 rng(7);
        int ok = 0, tied = 0;
        for (int inst = 0; inst < 100; ++inst) {
            const int nq = 1 + static_cast<int>(rng() % 6), ng = 2 + static_cast<int>(rng() % 9);
            const int ids = 1 + static_cast<int>(rng() % 3);
            std::vector<int> gid(static_cast<std::size_t>(ng)), qid(static_cast<std::size_t>(nq));
            for (auto& g : gid) g = static_cast<int>(rng() % ids);
            for (auto& q : qid) q = gid[rng() % gid.size()];
            Matrix s(nq, ng);
            const int levels = inst % 2 == 0 ? 3 : 1000000;
            for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = static_cast<double>(rng() % levels) / levels;
            if (inst % 2 == 0) ++tied;
            const auto a = cmc_map(s, qid, gid), b = counting_reference(s, qid, gid);
            bool same = std::abs(a.map - b.map) <= 1e-12;
            for (std::size_t r = 0; r < a.cmc.size(); ++r) same = same && std::abs(a.cmc[r] - b.cmc[r]) <= 1e-12;
            ok += same;
        }
        return Outcome{ok == 100, std::to_string(ok) + "/100 match (" + std::to_string(tied) + " tie-heavy)"};
    });

    report(3, "ablation ordering", 600, [&] {
        ablation = run_ablation(config, ablation_variants(), 1);
        table = summarize(ablation);
        const double soft = map_of(table, LossVariant::Softmax), sasv = map_of(table, LossVariant::Sas);
        const double fm = map_of(table, LossVariant::SasFm), ast = map_of(table, LossVariant::SasFmAst);
        const bool pass = ast >= fm - 0.5 && fm >= sasv - 0.5 && sasv > soft && sasv - soft >= 3.0;
        return Outcome{pass, "mAP SOFTMAX " + fmt(soft) + ", SAS " + fmt(sasv) + ", SAS_FM " + fmt(fm) +
                                 ", SAS_FM_AST " + fmt(ast) + " (gap " + fmt(sasv - soft) + ")"};
    });

    report(4, "weight mask hurts", 0, [&] {
        const double fm = map_of(table, LossVariant::SasFm), wm = map_of(table, LossVariant::SasFmWm);
        return Outcome{wm < fm, "mAP SAS_FM_WM " + fmt(wm) + " vs SAS_FM " + fmt(fm)};
    });

    report(5, "WM merges prototypes", 0, [&] {
        const double wm = row_of(table, LossVariant::SasFmWm).cos_vis_nir.mean;
        const double fm = row_of(table, LossVariant::SasFm).cos_vis_nir.mean;
        return Outcome{wm > fm, "cos(Pv,Pn) WM " + fmt(wm, 3) + " vs no WM " + fmt(fm, 3)};
    });

    report(6, "test-set similarity", 0, [&] {
        const auto& a = row_of(table, LossVariant::SasFmAst);
        const auto& s = row_of(table, LossVariant::Softmax);
        const bool pass = a.intra_cosine.mean > s.intra_cosine.mean && a.hist_overlap.mean < s.hist_overlap.mean;
        return Outcome{pass, "intra cos " + fmt(a.intra_cosine.mean, 3) + " vs " + fmt(s.intra_cosine.mean, 3) +
                                 ", overlap " + fmt(a.hist_overlap.mean, 3) + " vs " +
                                 fmt(s.hist_overlap.mean, 3)};
    });

    report(7, "angular probe", 0, [] {
        const auto r = check_eq3_grid();
        const bool pass = r.all_signs_hold() && r.max_rel_err <= 1e-6;
        return Outcome{pass, std::to_string(r.positive_first) + "/" + std::to_string(r.rows.size()) +
                                 " positive first, " + std::to_string(r.negative_mixed) + "/" +
                                 std::to_string(r.rows.size()) + " negative mixed, max FD rel err " +
                                 fmt(r.max_rel_err * 1e9, 2) + "e-9"};
    });

    report(8, "witness and ambiguity", 0, [] {
        const auto w = check_softmax_failure_mode(1, 1000000);
        const bool witness_ok = verify_witness(w.witness).holds();
        const auto amb = check_fm_ambiguity(1, 200);
        const bool amb_ok = amb.first_ambiguous_seed >= 0 &&
                            fm_ambiguity_instance(static_cast<std::uint64_t>(amb.first_ambiguous_seed)).ambiguous();
        return Outcome{witness_ok && amb_ok && amb.masked_coefficients_zero,
                       "witness after " + std::to_string(w.attempts) + " attempts, " +
                           std::to_string(amb.ambiguous_count) + "/200 ambiguous seeds (first " +
                           std::to_string(amb.first_ambiguous_seed) + ")"};
    });

    report(9, "determinism", 0, [&] {
        const auto data = prepare_data(config);
        TrainConfig tc = config.train;
        const auto a = train(data.train, tc), b = train(data.train, tc);
        const bool train_same = train_log_csv(a.log) == train_log_csv(b.log) &&
                                checkpoint_text(a.state) == checkpoint_text(b.state);
        const auto again = run_ablation(config, ablation_variants(), 2);
        const bool ablation_same = ablation_runs_csv(again) == ablation_runs_csv(ablation) &&
                                   ablation_summary_csv(summarize(again)) == ablation_summary_csv(table);
        return Outcome{train_same && ablation_same,
                       std::string("train ") + (train_same ? "identical" : "DIFFERS") + ", ablation (1 vs 2 jobs) " +
                           (ablation_same ? "identical" : "DIFFERS")};
    });

    report(10, "alpha and beta sweeps", 0, [&] {
        const auto alpha = sweep_mean_map(run_sweep(config, SweepParameter::Alpha, {0, 0.3, 0.5, 0.7, 1.0}, 1));
        const auto beta = sweep_mean_map(run_sweep(config, SweepParameter::Beta, {1.0, 4.0}, 1));
        const double a0 = 100 * alpha.front().second, a1 = 100 * alpha.back().second;
        const double a7 = 100 * alpha[3].second;
        const bool interior = !(a7 < a0 - 0.5 && a7 < a1 - 0.5);
        const double b1 = 100 * beta[0].second, b4 = 100 * beta[1].second;
        std::string d = "alpha:";
        for (const auto& [v, m] : alpha) d += " " + format_double(v) + "=" + fmt(100 * m);
        d += "; beta: 1=" + fmt(b1) + " 4=" + fmt(b4);
        return Outcome{interior && b4 < b1, d};
    });

    std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
