// sas: data generation, training, evaluation, ablations and diagnostics.
// Exit codes: 0 ok, 1 contract violation, 2 numeric failure,
// 3 I/O failure.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sasoftmax/analysis.hpp"
#include "sasoftmax/data.hpp"
#include "sasoftmax/encoder.hpp"
#include "sasoftmax/eval.hpp"
#include "sasoftmax/experiment.hpp"
#include "sasoftmax/gradcheck.hpp"
#include "sasoftmax/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kContract = 1, kNumeric = 2, kIo = 3 };

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw sas::IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw sas::IoError("failed writing '" + path.string() + "'");
}

fs::path make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw sas::IoError("cannot create '" + dir.string() + "': " + ec.message());
    return dir;
}

// Output handling shared by every subcommand.
struct Output {
    std::string dir;
    std::string command_line;
    std::string started;

    fs::path resolve(const std::string& subcommand) const {
        if (!dir.empty()) return make_dir(dir);
        const char* root = std::getenv("SAS_OUT_DIR");
        return make_dir(fs::path(root && *root ? root : "sas_runs") / subcommand);
    }

    // Timestamps live only here so every other file is reproducible.
    void metadata(const fs::path& out, const std::string& subcommand) const {
        json j;
        j["command"] = subcommand;
        j["argv"] = command_line;
        j["started"] = started;
        j["finished"] = iso_now();
        write_text(out / "metadata.json", j.dump(2) + "\n");
    }
};

struct ConfigOptions {
    std::string file;
    std::map<std::string, std::string> overrides;

    void attach(CLI::App* app) {
        app->add_option("--config", file, "key = value experiment config file");
        for (const auto& key : sas::ExperimentConfig::keys()) {
            std::string dashed = key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            std::string names = "--" + key;
            if (dashed != key) names += ",--" + dashed;
            app->add_option(names, overrides[key], "override config key " + key);
        }
    }

    sas::ExperimentConfig build() const {
        sas::ExperimentConfig c = file.empty() ? sas::ExperimentConfig{} : sas::ExperimentConfig::load(file);
        for (const auto& key : sas::ExperimentConfig::keys()) {
            const auto it = overrides.find(key);
            if (it != overrides.end() && !it->second.empty()) c.set(key, it->second);
        }
        c.validate();
        return c;
    }
};

void echo_config(const fs::path& out, const sas::ExperimentConfig& c) {
    write_text(out / "config.txt", c.to_text());
}

int cmd_gen_data(const ConfigOptions& opts, const Output& o) {
    const auto cfg = opts.build();
    const auto out = o.resolve("gen-data");
    const auto full = sas::generate_synthetic(cfg.synth);
    const auto [train, test] = sas::split_by_identity(full, cfg.train_fraction, cfg.split_seed);
    sas::write_dataset_csv(full, (out / "data.csv").string());
    sas::write_dataset_csv(train, (out / "train.csv").string());
    sas::write_dataset_csv(test, (out / "test.csv").string());
    write_text(out / "synth_config.json", sas::synth_config_json(cfg.synth) + "\n");
    echo_config(out, cfg);
    o.metadata(out, "gen-data");
    std::cout << "wrote " << full.size() << " samples (" << train.num_identities << " train / "
              << test.num_identities << " test identities) to " << out.string() << "\n";
    return kOk;
}

int cmd_train(const ConfigOptions& opts, const std::string& data_path, const Output& o) {
    const auto cfg = opts.build();
    const auto out = o.resolve("train");
    sas::SplitData data;
    if (data_path.empty()) {
        data = sas::prepare_data(cfg);
        sas::write_dataset_csv(data.test, (out / "test.csv").string());
    } else {
        data.train = sas::read_dataset_csv(data_path);
    }
    const auto result = sas::train(data.train, cfg.train);
    sas::write_checkpoint(result.state.checkpoint(), (out / "model.sasm").string());
    write_text(out / "train_log.csv", sas::train_log_csv(result.log));
    echo_config(out, cfg);
    o.metadata(out, "train");
    if (!result.log.epochs.empty())
        std::cout << sas::variant_name(cfg.train.variant) << ": loss " << result.log.epochs.front().loss_total
                  << " -> " << result.log.epochs.back().loss_total << "\n";
    std::cout << "checkpoint: " << (out / "model.sasm").string() << "\n";
    return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& direction,
             bool embeddings, const Output& o) {
    const auto out = o.resolve("eval");
    const auto ckpt = sas::read_checkpoint(ckpt_path);
    const auto test = sas::read_dataset_csv(data_path);
    std::vector<sas::Direction> dirs;
    if (direction == "both" || direction == "vis_to_nir") dirs.push_back(sas::Direction::VisToNir);
    if (direction == "both" || direction == "nir_to_vis") dirs.push_back(sas::Direction::NirToVis);
    if (dirs.empty()) throw sas::ContractViolation("direction must be both, vis_to_nir or nir_to_vis");

    std::optional<sas::PrototypeDiagnostics> diag;
    if (ckpt.modality_prototypes.weights.size() > 0 && ckpt.identity_prototypes.weights.size() > 0)
        diag = sas::prototype_diagnostics(ckpt.modality_prototypes, ckpt.identity_prototypes);
    json report;
    for (auto d : dirs) {
        auto r = sas::cross_modal_eval(ckpt.encoder, test, d);
        r.prototype_diag = diag;
        report[sas::direction_name(d)] = json::parse(sas::eval_report_json(r));
        if (d == dirs.front()) {
            // Cross-modality pairs are the same set in either direction.
            sas::write_histogram_csv(r.intra_hist, (out / "hist_intra.csv").string());
            sas::write_histogram_csv(r.inter_hist, (out / "hist_inter.csv").string());
        }
        std::cout << sas::direction_name(d) << ": rank-1 " << 100.0 * r.cmc.at(0) << "  mAP "
                  << 100.0 * r.map << "\n";
    }
    write_text(out / "report.json", report.dump(2) + "\n");
    if (embeddings) sas::export_embeddings(ckpt.encoder, test, (out / "embeddings.csv").string());
    o.metadata(out, "eval");
    return kOk;
}

int cmd_gradcheck(const sas::GradcheckOptions& opts, const Output& o) {
    const auto out = o.resolve("gradcheck");
    const auto report = sas::run_gradcheck(opts);
    write_text(out / "gradcheck.csv", sas::gradcheck_csv(report));
    write_text(out / "gradcheck.md", sas::gradcheck_markdown(report));
    o.metadata(out, "gradcheck");
    std::cout << sas::gradcheck_markdown(report);
    const bool ok = report.all_passed();
    std::cout << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
    return ok ? kOk : kNumeric;
}

std::vector<sas::LossVariant> parse_variants(const std::string& list) {
    if (list.empty()) return sas::ablation_variants();
    std::vector<sas::LossVariant> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(sas::parse_variant(item));
    return out;
}

int cmd_ablation(const ConfigOptions& opts, const std::string& variants, int jobs, const Output& o) {
    const auto cfg = opts.build();
    const auto out = o.resolve("ablation");
    const auto result = sas::run_ablation(cfg, parse_variants(variants), jobs);
    const auto summary = sas::summarize(result);
    write_text(out / "ablation_runs.csv", sas::ablation_runs_csv(result));
    write_text(out / "ablation.csv", sas::ablation_summary_csv(summary));
    write_text(out / "ablation.md", sas::ablation_markdown(summary));
    echo_config(out, cfg);
    o.metadata(out, "ablation");
    std::cout << sas::ablation_markdown(summary);
    return kOk;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw sas::ContractViolation("bad grid value '" + item + "'");
        out.push_back(v);
    }
    return out;
}

std::string default_grid(sas::SweepParameter p) {
    switch (p) {
    case sas::SweepParameter::Alpha: return "0,0.3,0.5,0.7,1.0";
    case sas::SweepParameter::Beta: return "0.5,1.0,2.0,4.0";
    case sas::SweepParameter::AmMargin: return "0.1,0.2,0.3";
    case sas::SweepParameter::CircleGamma: return "32,64,128";
    }
    return "";
}

int cmd_sweep(const ConfigOptions& opts, const std::string& param, const std::string& grid, int jobs,
              const Output& o) {
    const auto cfg = opts.build();
    const auto p = sas::parse_sweep_parameter(param);
    const auto values = parse_grid(grid.empty() ? default_grid(p) : grid);
    const auto out = o.resolve("sweep");
    const auto result = sas::run_sweep(cfg, p, values, jobs);
    write_text(out / "sweep_runs.csv", sas::sweep_runs_csv(result));
    write_text(out / "sweep.csv", sas::sweep_summary_csv(result));
    write_text(out / "sweep.md", sas::sweep_markdown(result));
    echo_config(out, cfg);
    o.metadata(out, "sweep");
    std::cout << sas::sweep_markdown(result);
    return kOk;
}

int cmd_diagnose(const std::string& ckpt_path, const std::string& data_path, std::uint64_t budget,
                 int ambiguity_seeds, const Output& o) {
    const auto out = o.resolve("diagnose");
    int code = kOk;

    if (!ckpt_path.empty()) {
        const auto ckpt = sas::read_checkpoint(ckpt_path);
        const auto diag = sas::prototype_diagnostics(ckpt.modality_prototypes, ckpt.identity_prototypes);
        std::string csv = "identity,cos_vis_identity,cos_nir_identity,cos_vis_nir\n";
        for (std::size_t k = 0; k < diag.per_identity.size(); ++k) {
            const auto& t = diag.per_identity[k];
            csv += std::to_string(k) + "," + sas::format_double(t.cos_vis_identity) + "," +
                   sas::format_double(t.cos_nir_identity) + "," + sas::format_double(t.cos_vis_nir) + "\n";
        }
        write_text(out / "prototypes.csv", csv);
        std::cout << "mean cos(Pv,Ps) " << diag.mean.cos_vis_identity << "  cos(Pn,Ps) "
                  << diag.mean.cos_nir_identity << "  cos(Pv,Pn) " << diag.mean.cos_vis_nir << "\n";
        if (!data_path.empty()) {
            const auto test = sas::read_dataset_csv(data_path);
            const auto r = sas::cross_modal_eval(ckpt.encoder, test, sas::Direction::VisToNir);
            sas::write_histogram_csv(r.intra_hist, (out / "hist_intra.csv").string());
            sas::write_histogram_csv(r.inter_hist, (out / "hist_inter.csv").string());
            std::cout << "histogram overlap " << sas::histogram_overlap(r.intra_hist, r.inter_hist) << "\n";
        }
    }

    const auto probe = sas::check_eq3_grid();
    write_text(out / "angular_probe.csv", sas::angular_probe_csv(probe));
    std::cout << "angular probe grid: " << probe.positive_first << "/" << probe.rows.size() << " positive first, "
              << probe.negative_mixed << "/" << probe.rows.size() << " negative mixed, max rel err "
              << probe.max_rel_err << "\n";
    if (!probe.all_signs_hold()) code = kNumeric;

    const auto amb = sas::check_fm_ambiguity(1, ambiguity_seeds);
    write_text(out / "ambiguity.json", sas::ambiguity_json(amb) + "\n");
    std::cout << "feature-mask ambiguity: " << amb.ambiguous_count << "/" << ambiguity_seeds
              << " ambiguous unmasked steps, first seed " << amb.first_ambiguous_seed << "\n";

    const auto witness = sas::check_softmax_failure_mode(1, budget);
    write_text(out / "witness.json", sas::witness_json(witness) + "\n");
    std::cout << "softmax failure witness after " << witness.attempts << " attempts\n";

    o.metadata(out, "diagnose");
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SA-Softmax toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    Output output;
    output.started = iso_now();
    for (int i = 0; i < argc; ++i) output.command_line += (i ? " " : "") + std::string(argv[i]);
    app.add_option("--out", output.dir, "output directory (default: $SAS_OUT_DIR/<command>)");

    ConfigOptions gen_opts, train_opts, abl_opts, sweep_opts;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic two-modality dataset");
    gen_opts.attach(gen);

    auto* tr = app.add_subcommand("train", "train one model");
    train_opts.attach(tr);
    std::string train_data;
    tr->add_option("--data", train_data, "train on this CSV instead of the generated split");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset CSV");
    std::string ev_ckpt, ev_data, ev_dir = "both";
    bool ev_emb = false;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--direction", ev_dir, "both, vis_to_nir or nir_to_vis");
    ev->add_flag("--export-embeddings", ev_emb, "also write embeddings.csv");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    sas::GradcheckOptions gc_opts;
    gc->add_option("--first-seed", gc_opts.first_seed);
    gc->add_option("--seeds", gc_opts.seeds, "number of seeds");
    gc->add_option("--tolerance", gc_opts.tolerance);
    gc->add_option("--pipeline-tolerance", gc_opts.pipeline_tolerance);
    gc->add_option("--step", gc_opts.step);
    gc->add_option("--corrupt", gc_opts.corrupt, "test hook: perturb the named analytic gradient");

    auto* ab = app.add_subcommand("ablation", "train the ablation variants over the seed list");
    abl_opts.attach(ab);
    std::string ab_variants;
    int ab_jobs = 1;
    ab->add_option("--variants", ab_variants, "comma-separated variant names");
    ab->add_option("--jobs", ab_jobs)->check(CLI::PositiveNumber);

    auto* sw = app.add_subcommand("sweep", "hyper-parameter sweep");
    sweep_opts.attach(sw);
    std::string sw_param, sw_grid;
    int sw_jobs = 1;
    sw->add_option("--param", sw_param, "alpha, beta, am_margin or circle_gamma")->required();
    sw->add_option("--grid", sw_grid, "comma-separated values");
    sw->add_option("--jobs", sw_jobs)->check(CLI::PositiveNumber);

    auto* dg = app.add_subcommand("diagnose", "prototype diagnostics and analytic checks");
    std::string dg_ckpt, dg_data;
    std::uint64_t dg_budget = 1000000;
    int dg_amb = 200;
    dg->add_option("--checkpoint", dg_ckpt);
    dg->add_option("--data", dg_data, "dataset CSV for histograms (needs --checkpoint)");
    dg->add_option("--witness-budget", dg_budget);
    dg->add_option("--ambiguity-seeds", dg_amb)->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kContract;
    }

    try {
        if (*gen) return cmd_gen_data(gen_opts, output);
        if (*tr) return cmd_train(train_opts, train_data, output);
        if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_dir, ev_emb, output);
        if (*gc) return cmd_gradcheck(gc_opts, output);
        if (*ab) return cmd_ablation(abl_opts, ab_variants, ab_jobs, output);
        if (*sw) return cmd_sweep(sweep_opts, sw_param, sw_grid, sw_jobs, output);
        if (*dg) return cmd_diagnose(dg_ckpt, dg_data, dg_budget, dg_amb, output);
    } catch (const sas::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const sas::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const sas::ContractViolation& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return kContract;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kContract;
    }
    return kContract;
}
