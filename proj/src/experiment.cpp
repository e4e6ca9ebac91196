#include "sasoftmax/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace sas {

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto t = trim(text);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size() || t.empty())
        throw ContractViolation("bad value for '" + key + "': '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const auto t = trim(text);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw ContractViolation("bad boolean for '" + key + "': '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty()) out.push_back(parse_number<T>(key, item));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>)
            out += format_double(v[i]);
        else
            out += std::to_string(v[i]);
    }
    return out;
}

struct Field {
    const char* key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define SAS_INT_FIELD(name, member)                                                               \
    Field {                                                                                      \
        name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<int>(name, v); }, \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                   \
    }
#define SAS_U64_FIELD(name, member)                                                               \
    Field {                                                                                      \
        name,                                                                                    \
            [](ExperimentConfig& c, const std::string& v) {                                      \
                c.member = parse_number<std::uint64_t>(name, v);                                 \
            },                                                                                   \
            [](const ExperimentConfig& c) { return std::to_string(c.member); }                   \
    }
#define SAS_DOUBLE_FIELD(name, member)                                                            \
    Field {                                                                                      \
        name,                                                                                    \
            [](ExperimentConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); }, \
            [](const ExperimentConfig& c) { return format_double(c.member); }                    \
    }
#define SAS_BOOL_FIELD(name, member)                                                              \
    Field {                                                                                      \
        name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); },  \
            [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }   \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        SAS_INT_FIELD("num_identities", synth.num_identities),
        SAS_INT_FIELD("samples_per_identity", synth.samples_per_identity_per_modality),
        SAS_INT_FIELD("input_dim", synth.input_dim),
        SAS_DOUBLE_FIELD("modality_gap", synth.modality_gap),
        SAS_DOUBLE_FIELD("noise_sigma", synth.noise_sigma),
        SAS_U64_FIELD("data_seed", synth.seed),
        SAS_BOOL_FIELD("shared_offset", synth.shared_offset),
        SAS_BOOL_FIELD("orthogonal_offset", synth.orthogonal_offset),
        SAS_INT_FIELD("offset_rank", synth.offset_rank),
        SAS_DOUBLE_FIELD("train_fraction", train_fraction),
        SAS_U64_FIELD("split_seed", split_seed),
        Field{"variant",
              [](ExperimentConfig& c, const std::string& v) { c.train.variant = parse_variant(trim(v)); },
              [](const ExperimentConfig& c) { return std::string(variant_name(c.train.variant)); }},
        SAS_DOUBLE_FIELD("alpha", train.loss.alpha),
        SAS_DOUBLE_FIELD("beta", train.loss.beta),
        Field{"ast_form",
              [](ExperimentConfig& c, const std::string& v) {
                  const auto t = trim(v);
                  if (t == "absolute")
                      c.train.loss.ast_form = AstForm::Absolute;
                  else if (t == "squared")
                      c.train.loss.ast_form = AstForm::Squared;
                  else
                      throw ContractViolation("ast_form must be 'absolute' or 'squared'");
              },
              [](const ExperimentConfig& c) {
                  return std::string(c.train.loss.ast_form == AstForm::Absolute ? "absolute" : "squared");
              }},
        SAS_INT_FIELD("epochs", train.epochs),
        SAS_INT_FIELD("batches_per_epoch", train.batches_per_epoch),
        SAS_INT_FIELD("p", train.p),
        SAS_INT_FIELD("k", train.k),
        SAS_DOUBLE_FIELD("base_lr", train.base_lr),
        Field{"milestones",
              [](ExperimentConfig& c, const std::string& v) { c.train.milestones = parse_list<int>("milestones", v); },
              [](const ExperimentConfig& c) { return join(c.train.milestones); }},
        SAS_DOUBLE_FIELD("lr_factor", train.lr_factor),
        SAS_DOUBLE_FIELD("momentum", train.momentum),
        SAS_DOUBLE_FIELD("weight_decay", train.weight_decay),
        Field{"hidden_dims",
              [](ExperimentConfig& c, const std::string& v) { c.train.hidden_dims = parse_list<int>("hidden_dims", v); },
              [](const ExperimentConfig& c) { return join(c.train.hidden_dims); }},
        SAS_INT_FIELD("embed_dim", train.embed_dim),
        SAS_DOUBLE_FIELD("am_margin", train.am_margin),
        SAS_DOUBLE_FIELD("am_scale", train.am_scale),
        SAS_DOUBLE_FIELD("circle_gamma", train.circle_gamma),
        SAS_DOUBLE_FIELD("circle_margin", train.circle_margin),
        SAS_BOOL_FIELD("alternate_batches", train.alternate_batches),
        SAS_U64_FIELD("seed", train.seed),
        Field{"seeds",
              [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>("seeds", v); },
              [](const ExperimentConfig& c) { return join(c.seeds); }},
    };
    return table;
}

#undef SAS_INT_FIELD
#undef SAS_U64_FIELD
#undef SAS_DOUBLE_FIELD
#undef SAS_BOOL_FIELD

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    const auto k = trim(key);
    for (const auto& f : fields()) {
        if (k == f.key) {
            f.set(*this, value);
            return;
        }
    }
    throw ContractViolation("unknown config key '" + k + "'");
}

void ExperimentConfig::validate() const {
    synth.validate();
    train.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ContractViolation("train_fraction must lie in (0, 1)");
    if (seeds.empty()) throw ContractViolation("seeds must not be empty");
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
    return out;
}

const std::vector<std::string>& ExperimentConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> v;
        for (const auto& f : fields()) v.emplace_back(f.key);
        return v;
    }();
    return k;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig c;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ContractViolation("config line " + std::to_string(lineno) + ": expected key = value");
        c.set(t.substr(0, eq), t.substr(eq + 1));
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

SplitData prepare_data(const ExperimentConfig& config) {
    config.validate();
    auto [train, test] = split_by_identity(generate_synthetic(config.synth), config.train_fraction,
                                           config.split_seed);
    return {std::move(train), std::move(test)};
}

RunOutput run_experiment(const SplitData& data, const TrainConfig& train_config) {
    RunOutput out;
    out.result = train(data.train, train_config);
    out.vis_nir = cross_modal_eval(out.result.state.encoder, data.test, Direction::VisToNir);
    out.nir_vis = cross_modal_eval(out.result.state.encoder, data.test, Direction::NirToVis);
    auto& m = out.metrics;
    m.variant = train_config.variant;
    m.seed = train_config.seed;
    m.rank1_vis_nir = out.vis_nir.cmc.empty() ? 0.0 : out.vis_nir.cmc[0];
    m.rank1_nir_vis = out.nir_vis.cmc.empty() ? 0.0 : out.nir_vis.cmc[0];
    m.map_vis_nir = out.vis_nir.map;
    m.map_nir_vis = out.nir_vis.map;
    m.intra_cosine = out.vis_nir.mean_intra_cosine;
    m.inter_cosine = out.vis_nir.mean_inter_cosine;
    m.hist_overlap = histogram_overlap(out.vis_nir.intra_hist, out.vis_nir.inter_hist);
    if (train_config.uses_modality_prototypes()) {
        const auto diag = prototype_diagnostics(out.result.state.modality_prototypes,
                                                out.result.state.identity_prototypes);
        m.cos_vis_nir = diag.mean.cos_vis_nir;
        m.cos_vis_identity = diag.mean.cos_vis_identity;
        m.cos_nir_identity = diag.mean.cos_nir_identity;
        out.vis_nir.prototype_diag = diag;
        out.nir_vis.prototype_diag = diag;
    }
    if (!out.result.log.epochs.empty()) {
        m.initial_loss = out.result.log.epochs.front().loss_total;
        m.final_loss = out.result.log.epochs.back().loss_total;
    }
    return out;
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

const std::vector<LossVariant>& ablation_variants() {
    static const std::vector<LossVariant> v{LossVariant::Softmax, LossVariant::Sas, LossVariant::SasFm,
                                            LossVariant::SasFmAst, LossVariant::SasFmWm};
    return v;
}

AblationResult run_ablation(const ExperimentConfig& config, const std::vector<LossVariant>& variants,
                            int jobs) {
    if (variants.empty()) throw ContractViolation("ablation needs at least one variant");
    const SplitData data = prepare_data(config);
    const std::size_t ns = config.seeds.size();
    AblationResult result;
    result.runs.resize(variants.size() * ns);
    parallel_for(result.runs.size(), jobs, [&](std::size_t i) {
        TrainConfig tc = config.train;
        tc.variant = variants[i / ns];
        tc.seed = config.seeds[i % ns];
        result.runs[i] = run_experiment(data, tc).metrics;
    });
    return result;
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) return {};
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

std::vector<VariantSummary> summarize(const AblationResult& result) {
    std::vector<VariantSummary> out;
    std::vector<std::vector<const RunMetrics*>> groups;
    for (const auto& r : result.runs) {
        auto it = std::find_if(out.begin(), out.end(), [&](const VariantSummary& s) { return s.variant == r.variant; });
        if (it == out.end()) {
            out.push_back({});
            out.back().variant = r.variant;
            groups.emplace_back();
            it = out.end() - 1;
        }
        groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        auto collect = [&](auto getter) {
            std::vector<double> v;
            for (const auto* r : groups[g]) v.push_back(getter(*r));
            return mean_std(v);
        };
        auto& s = out[g];
        s.runs = static_cast<int>(groups[g].size());
        s.rank1_vis_nir = collect([](const RunMetrics& r) { return r.rank1_vis_nir; });
        s.map_vis_nir = collect([](const RunMetrics& r) { return r.map_vis_nir; });
        s.rank1_nir_vis = collect([](const RunMetrics& r) { return r.rank1_nir_vis; });
        s.map_nir_vis = collect([](const RunMetrics& r) { return r.map_nir_vis; });
        s.rank1 = collect([](const RunMetrics& r) { return r.mean_rank1(); });
        s.map = collect([](const RunMetrics& r) { return r.mean_map(); });
        s.intra_cosine = collect([](const RunMetrics& r) { return r.intra_cosine; });
        s.hist_overlap = collect([](const RunMetrics& r) { return r.hist_overlap; });
        s.cos_vis_nir = collect([](const RunMetrics& r) { return r.cos_vis_nir; });
    }
    return out;
}

namespace {

const char* kRunHeader =
    "rank1_vis_nir,map_vis_nir,rank1_nir_vis,map_nir_vis,intra_cosine,inter_cosine,hist_overlap,"
    "cos_vis_nir,cos_vis_identity,cos_nir_identity,initial_loss,final_loss";

std::string run_fields(const RunMetrics& r) {
    std::string out;
    for (double v : {r.rank1_vis_nir, r.map_vis_nir, r.rank1_nir_vis, r.map_nir_vis, r.intra_cosine,
                     r.inter_cosine, r.hist_overlap, r.cos_vis_nir, r.cos_vis_identity, r.cos_nir_identity,
                     r.initial_loss, r.final_loss}) {
        if (!out.empty()) out += ',';
        out += format_double(v);
    }
    return out;
}

std::string pct(const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", 100.0 * m.mean, 100.0 * m.std);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string ablation_runs_csv(const AblationResult& result) {
    std::string out = std::string("variant,seed,") + kRunHeader + "\n";
    for (const auto& r : result.runs)
        out += std::string(variant_name(r.variant)) + "," + std::to_string(r.seed) + "," + run_fields(r) + "\n";
    return out;
}

std::string ablation_summary_csv(const std::vector<VariantSummary>& summary) {
    std::string out =
        "variant,runs,rank1_vis_nir_mean,rank1_vis_nir_std,map_vis_nir_mean,map_vis_nir_std,"
        "rank1_nir_vis_mean,rank1_nir_vis_std,map_nir_vis_mean,map_nir_vis_std,rank1_mean,rank1_std,"
        "map_mean,map_std,intra_cosine_mean,hist_overlap_mean,cos_vis_nir_mean\n";
    for (const auto& s : summary) {
        out += std::string(variant_name(s.variant)) + "," + std::to_string(s.runs);
        for (const MeanStd* m : {&s.rank1_vis_nir, &s.map_vis_nir, &s.rank1_nir_vis, &s.map_nir_vis, &s.rank1, &s.map})
            out += "," + format_double(m->mean) + "," + format_double(m->std);
        out += "," + format_double(s.intra_cosine.mean) + "," + format_double(s.hist_overlap.mean) + "," +
               format_double(s.cos_vis_nir.mean) + "\n";
    }
    return out;
}

std::string ablation_markdown(const std::vector<VariantSummary>& summary) {
    std::string out =
        "| variant | runs | VIS→NIR R1 | VIS→NIR mAP | NIR→VIS R1 | NIR→VIS mAP | mean mAP | intra cos | "
        "overlap | cos(Pv,Pn) |\n|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& s : summary)
        out += "| " + std::string(variant_name(s.variant)) + " | " + std::to_string(s.runs) + " | " +
               pct(s.rank1_vis_nir) + " | " + pct(s.map_vis_nir) + " | " + pct(s.rank1_nir_vis) + " | " +
               pct(s.map_nir_vis) + " | " + pct(s.map) + " | " + fixed(s.intra_cosine.mean, 3) + " | " +
               fixed(s.hist_overlap.mean, 3) + " | " + fixed(s.cos_vis_nir.mean, 3) + " |\n";
    return out;
}

const char* sweep_parameter_name(SweepParameter p) {
    switch (p) {
    case SweepParameter::Alpha: return "alpha";
    case SweepParameter::Beta: return "beta";
    case SweepParameter::AmMargin: return "am_margin";
    case SweepParameter::CircleGamma: return "circle_gamma";
    }
    return "?";
}

SweepParameter parse_sweep_parameter(const std::string& name) {
    for (auto p : {SweepParameter::Alpha, SweepParameter::Beta, SweepParameter::AmMargin, SweepParameter::CircleGamma})
        if (name == sweep_parameter_name(p)) return p;
    throw ContractViolation("unknown sweep parameter '" + name + "'");
}

LossVariant sweep_default_variant(SweepParameter p) {
    switch (p) {
    case SweepParameter::AmMargin: return LossVariant::AmSoftmax;
    case SweepParameter::CircleGamma: return LossVariant::Circle;
    default: return LossVariant::SasFmAst;
    }
}

void apply_sweep_value(TrainConfig& config, SweepParameter p, double value) {
    switch (p) {
    case SweepParameter::Alpha: config.loss.alpha = value; break;
    case SweepParameter::Beta: config.loss.beta = value; break;
    case SweepParameter::AmMargin: config.am_margin = value; break;
    case SweepParameter::CircleGamma: config.circle_gamma = value; break;
    }
}

SweepResult run_sweep(const ExperimentConfig& config, SweepParameter parameter,
                      const std::vector<double>& grid, int jobs) {
    if (grid.empty()) throw ContractViolation("sweep grid must not be empty");
    const SplitData data = prepare_data(config);
    const std::size_t ns = config.seeds.size();
    // All seeds of one grid point are scheduled before the next point.
    std::vector<TrainConfig> tasks;
    for (double value : grid) {
        for (auto seed : config.seeds) {
            TrainConfig tc = config.train;
            tc.variant = sweep_default_variant(parameter);
            apply_sweep_value(tc, parameter, value);
            tc.seed = seed;
            tc.validate();
            tasks.push_back(tc);
        }
    }
    SweepResult result{parameter, std::vector<SweepPoint>(tasks.size())};
    parallel_for(tasks.size(), jobs, [&](std::size_t i) {
        result.points[i] = {grid[i / ns], run_experiment(data, tasks[i]).metrics};
    });
    return result;
}

namespace {

struct PointStats {
    double value;
    int runs;
    MeanStd rank1, map;
};

// Grid values keep their first-seen order.
std::vector<PointStats> point_stats(const SweepResult& result) {
    std::vector<double> order;
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& p : result.points) {
        if (!groups.count(p.value)) order.push_back(p.value);
        groups[p.value].first.push_back(p.metrics.mean_rank1());
        groups[p.value].second.push_back(p.metrics.mean_map());
    }
    std::vector<PointStats> out;
    for (double v : order) {
        const auto& g = groups[v];
        out.push_back({v, static_cast<int>(g.first.size()), mean_std(g.first), mean_std(g.second)});
    }
    return out;
}

}  // namespace

std::vector<std::pair<double, double>> sweep_mean_map(const SweepResult& result) {
    std::vector<std::pair<double, double>> out;
    for (const auto& s : point_stats(result)) out.emplace_back(s.value, s.map.mean);
    return out;
}

std::string sweep_runs_csv(const SweepResult& result) {
    std::string out = std::string(sweep_parameter_name(result.parameter)) + ",variant,seed," + kRunHeader + "\n";
    for (const auto& p : result.points)
        out += format_double(p.value) + "," + variant_name(p.metrics.variant) + "," +
               std::to_string(p.metrics.seed) + "," + run_fields(p.metrics) + "\n";
    return out;
}

std::string sweep_summary_csv(const SweepResult& result) {
    std::string out = std::string(sweep_parameter_name(result.parameter)) +
                      ",runs,rank1_mean,rank1_std,map_mean,map_std\n";
    for (const auto& s : point_stats(result))
        out += format_double(s.value) + "," + std::to_string(s.runs) + "," + format_double(s.rank1.mean) + "," +
               format_double(s.rank1.std) + "," + format_double(s.map.mean) + "," + format_double(s.map.std) + "\n";
    return out;
}

std::string sweep_markdown(const SweepResult& result) {
    std::string out = std::string("| ") + sweep_parameter_name(result.parameter) +
                      " | runs | mean R1 | mean mAP |\n|---|---|---|---|\n";
    for (const auto& s : point_stats(result))
        out += "| " + format_double(s.value) + " | " + std::to_string(s.runs) + " | " + pct(s.rank1) + " | " +
               pct(s.map) + " |\n";
    return out;
}

}  // namespace sas
