#include "puridiff/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "puridiff/errors.hpp"

namespace puridiff {

using nlohmann::json;

namespace {

constexpr int kPurifyChunk = 25;
constexpr int kAdaptiveChunk = 8;
constexpr double kL2BudgetRatio = 16.0;  // 128/255 vs 8/255

double binom_se(double p, int n) { return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0; }

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

LabeledDataset DatasetSpec::generate(uint64_t seed) const {
    if (kind == "shape_images") return make_shape_images(n_per_class, side, seed);
    if (kind == "gaussian_mixture") return make_gaussian_mixture(n_per_class, n_classes, spread, seed);
    throw config_error("unknown dataset kind '" + kind + "'");
}

int ExperimentConfig::resolved_t_star() const {
    if (guidance.t_star > 0) return guidance.t_star;
    return static_cast<int>(0.3 * diffusion.T);
}

void ExperimentConfig::validate() const {
    if (epsilon_grid.empty()) throw config_error("epsilon_grid must be nonempty");
    if (tstar_grid.empty()) throw config_error("tstar_grid must be nonempty");
    if (eval_samples < 1 || sweep_samples < 1 || ood_samples < 1 || quality_samples < 1)
        throw config_error("sample counts must be >= 1");
    for (int t : tstar_grid)
        if (t < 0 || t > diffusion.T) throw config_error("tstar_grid entry outside [0,T]");
    for (double e : epsilon_grid)
        if (e < 0.0) throw config_error("epsilon_grid entries must be >= 0");
    if (resolved_t_star() > diffusion.T) throw config_error("t_star exceeds schedule length");
    for (const auto& a : attacks) a.spec.validate();
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.attacks = {{"pgd_linf", {NormKind::linf, 8.0 / 255.0, 40, std::nullopt, false}},
                   {"pgd_l2", {NormKind::l2, 128.0 / 255.0, 40, std::nullopt, false}}};
    cfg.epsilon_grid = {0.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0, 32.0 / 255.0, 48.0 / 255.0,
                        80.0 / 255.0};
    cfg.tstar_grid = {0, 10, 20, 40, 60, 90, 120, 160};
    cfg.guidance.t_star = 0;  // resolves to 0.3 T
    return cfg;
}

namespace {

void read_guidance(const json& j, GuidanceConfig& g) {
    g.t_star = j.value("t_star", g.t_star);
    g.s = j.value("s", g.s);
    g.phi = j.value("phi", g.phi);
    if (j.contains("distance")) g.distance = distance_mode_from_name(j.at("distance"));
    g.fresh_reference_noise = j.value("fresh_reference_noise", g.fresh_reference_noise);
    g.literal_similarity_sign = j.value("literal_similarity_sign", g.literal_similarity_sign);
    g.use_probabilities = j.value("use_probabilities", g.use_probabilities);
}

AttackSpec read_attack(const json& j) {
    AttackSpec s;
    if (j.contains("norm")) s.norm = norm_kind_from_name(j.at("norm"));
    s.epsilon = j.value("epsilon", s.epsilon);
    s.steps = j.value("steps", s.steps);
    if (j.contains("step_size")) s.step_size = j.at("step_size").get<double>();
    return s;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw config_error(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg = default_config();
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
        cfg.dataset.n_per_class = d.value("n_per_class", cfg.dataset.n_per_class);
        cfg.dataset.side = d.value("side", cfg.dataset.side);
        cfg.dataset.n_classes = d.value("n_classes", cfg.dataset.n_classes);
        cfg.dataset.spread = d.value("spread", cfg.dataset.spread);
    }
    if (j.contains("classifier")) {
        const json& c = j.at("classifier");
        cfg.classifier.arch = c.value("arch", cfg.classifier.arch);
        cfg.classifier.epochs = c.value("epochs", cfg.classifier.epochs);
    }
    if (j.contains("diffusion")) {
        const json& d = j.at("diffusion");
        cfg.diffusion.T = d.value("T", cfg.diffusion.T);
        cfg.diffusion.beta_start = d.value("beta_start", cfg.diffusion.beta_start);
        cfg.diffusion.beta_end = d.value("beta_end", cfg.diffusion.beta_end);
        cfg.diffusion.epochs = d.value("epochs", cfg.diffusion.epochs);
    }
    if (j.contains("attacks")) {
        cfg.attacks.clear();
        for (const auto& a : j.at("attacks"))
            cfg.attacks.push_back({a.value("name", std::string("attack")), read_attack(a)});
    }
    if (j.contains("guidance")) read_guidance(j.at("guidance"), cfg.guidance);
    if (j.contains("certification")) {
        const json& c = j.at("certification");
        cfg.certification.params.sigma = c.value("sigma", cfg.certification.params.sigma);
        cfg.certification.params.n0 = c.value("n0", cfg.certification.params.n0);
        cfg.certification.params.n = c.value("n", cfg.certification.params.n);
        cfg.certification.params.alpha = c.value("alpha", cfg.certification.params.alpha);
        cfg.certification.num_points = c.value("num_points", cfg.certification.num_points);
        cfg.certification.use_purifier = c.value("use_purifier", cfg.certification.use_purifier);
        cfg.certification.extended.delta = c.value("delta", 0.0);
        cfg.certification.extended.c_alpha = c.value("c_alpha", 0.0);
        cfg.certification.extended.c_s = c.value("c_s", 0.0);
    }
    if (j.contains("adaptive")) {
        const json& a = j.at("adaptive");
        cfg.adaptive.samples = a.value("samples", cfg.adaptive.samples);
        cfg.adaptive.steps = a.value("steps", cfg.adaptive.steps);
        cfg.adaptive.epsilon = a.value("epsilon", cfg.adaptive.epsilon);
    }
    if (j.contains("epsilon_grid")) cfg.epsilon_grid = j.at("epsilon_grid").get<std::vector<double>>();
    if (j.contains("tstar_grid")) cfg.tstar_grid = j.at("tstar_grid").get<std::vector<int>>();
    cfg.joint_grid = j.value("joint_grid", cfg.joint_grid);
    cfg.eval_samples = j.value("eval_samples", cfg.eval_samples);
    cfg.sweep_samples = j.value("sweep_samples", cfg.sweep_samples);
    cfg.ood_samples = j.value("ood_samples", cfg.ood_samples);
    cfg.quality_samples = j.value("quality_samples", cfg.quality_samples);
    cfg.quality_grid_cols = j.value("quality_grid_cols", cfg.quality_grid_cols);
    cfg.master_seed = j.value("seed", cfg.master_seed);
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        cfg.dataset_path = p.value("dataset", std::string());
        cfg.classifier_path = p.value("classifier", std::string());
        cfg.diffusion_path = p.value("diffusion", std::string());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream check(path);
    if (!check) throw config_error("cannot open config file '" + path + "'");
    std::ostringstream os;
    os << check.rdbuf();
    return parse_config(os.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
    json j;
    j["dataset"] = {{"kind", cfg.dataset.kind},
                    {"n_per_class", cfg.dataset.n_per_class},
                    {"side", cfg.dataset.side},
                    {"n_classes", cfg.dataset.n_classes},
                    {"spread", cfg.dataset.spread}};
    j["classifier"] = {{"arch", cfg.classifier.arch}, {"epochs", cfg.classifier.epochs}};
    j["diffusion"] = {{"T", cfg.diffusion.T},
                      {"beta_start", cfg.diffusion.beta_start},
                      {"beta_end", cfg.diffusion.beta_end},
                      {"epochs", cfg.diffusion.epochs}};
    json attacks = json::array();
    for (const auto& a : cfg.attacks) {
        json aj = {{"name", a.name},
                   {"norm", norm_kind_name(a.spec.norm)},
                   {"epsilon", a.spec.epsilon},
                   {"steps", a.spec.steps}};
        if (a.spec.step_size) aj["step_size"] = *a.spec.step_size;
        attacks.push_back(aj);
    }
    j["attacks"] = attacks;
    j["guidance"] = {{"t_star", cfg.guidance.t_star},
                     {"s", cfg.guidance.s},
                     {"phi", cfg.guidance.phi},
                     {"distance", distance_mode_name(cfg.guidance.distance)},
                     {"fresh_reference_noise", cfg.guidance.fresh_reference_noise},
                     {"literal_similarity_sign", cfg.guidance.literal_similarity_sign},
                     {"use_probabilities", cfg.guidance.use_probabilities}};
    j["certification"] = {{"sigma", cfg.certification.params.sigma},
                          {"n0", cfg.certification.params.n0},
                          {"n", cfg.certification.params.n},
                          {"alpha", cfg.certification.params.alpha},
                          {"num_points", cfg.certification.num_points},
                          {"use_purifier", cfg.certification.use_purifier},
                          {"delta", cfg.certification.extended.delta},
                          {"c_alpha", cfg.certification.extended.c_alpha},
                          {"c_s", cfg.certification.extended.c_s}};
    j["adaptive"] = {{"samples", cfg.adaptive.samples},
                     {"steps", cfg.adaptive.steps},
                     {"epsilon", cfg.adaptive.epsilon}};
    j["epsilon_grid"] = cfg.epsilon_grid;
    j["tstar_grid"] = cfg.tstar_grid;
    j["joint_grid"] = cfg.joint_grid;
    j["eval_samples"] = cfg.eval_samples;
    j["sweep_samples"] = cfg.sweep_samples;
    j["ood_samples"] = cfg.ood_samples;
    j["quality_samples"] = cfg.quality_samples;
    j["quality_grid_cols"] = cfg.quality_grid_cols;
    j["seed"] = cfg.master_seed;
    j["paths"] = {{"dataset", cfg.dataset_path},
                  {"classifier", cfg.classifier_path},
                  {"diffusion", cfg.diffusion_path}};
    return j.dump(2) + "\n";
}

// ----------------------------------------------------------------- rows
std::string ResultRow::cell_id() const {
    std::ostringstream os;
    os << dataset << "/" << model << "/" << attack << "/" << defense << "/" << corruption << "/"
       << severity << "/" << fmt_double(epsilon) << "/" << t_star << "/" << metric;
    return os.str();
}

std::string rows_to_jsonl(const std::vector<ResultRow>& rows) {
    std::ostringstream os;
    for (const auto& r : rows) {
        json j;
        j["dataset"] = r.dataset;
        j["model"] = r.model;
        j["attack"] = r.attack;
        j["defense"] = r.defense;
        j["corruption"] = r.corruption;
        j["severity"] = r.severity;
        j["epsilon"] = r.epsilon;
        j["t_star"] = r.t_star;
        j["metric"] = r.metric;
        j["value"] = r.value;
        j["n"] = r.n;
        j["stderr"] = r.stderr_value;
        os << j.dump() << "\n";
    }
    return os.str();
}

std::vector<ResultRow> rows_from_jsonl(const std::string& text) {
    std::vector<ResultRow> rows;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ResultRow r;
        r.dataset = j.value("dataset", "-");
        r.model = j.value("model", "-");
        r.attack = j.value("attack", "-");
        r.defense = j.value("defense", "-");
        r.corruption = j.value("corruption", "-");
        r.severity = j.value("severity", 0);
        r.epsilon = j.value("epsilon", 0.0);
        r.t_star = j.value("t_star", 0);
        r.metric = j.value("metric", "accuracy");
        r.value = j.value("value", 0.0);
        r.n = j.value("n", 0);
        r.stderr_value = j.value("stderr", 0.0);
        rows.push_back(std::move(r));
    }
    return rows;
}

void sort_rows(std::vector<ResultRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        return a.cell_id() < b.cell_id();
    });
}

std::string rows_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream os;
    os << "dataset,model,attack,defense,corruption,severity,epsilon,t_star,metric,value,n,stderr\n";
    for (const auto& r : rows) {
        os << r.dataset << "," << r.model << "," << r.attack << "," << r.defense << ","
           << r.corruption << "," << r.severity << "," << fmt_double(r.epsilon) << "," << r.t_star
           << "," << r.metric << "," << fmt_double(r.value) << "," << r.n << ","
           << fmt_double(r.stderr_value) << "\n";
    }
    return os.str();
}

// ----------------------------------------------------------------- context
GuidanceConfig EvalContext::resolved_guidance() const {
    GuidanceConfig g = cfg->guidance;
    if (g.t_star <= 0) g.t_star = cfg->resolved_t_star();
    if (!eval_data.is_image() && g.distance == DistanceMode::logit_l2_plus_ssim)
        g.distance = DistanceMode::logit_l2_only;  // similarity term is image-only
    return g;
}

PurifierPipeline EvalContext::pipeline(bool differentiable) const {
    PurifierPipeline p;
    p.diff = diff;
    p.clf = clf;
    p.cfg = resolved_guidance();
    p.cfg.differentiable_mode = differentiable;
    p.seed = derive_seed(cfg->master_seed, "pipeline_purify");
    return p;
}

EvalContext make_eval_context(const ExperimentConfig& cfg, const ClassifierModel& clf,
                              const DiffusionModel& diff, int workers) {
    EvalContext ctx;
    ctx.cfg = &cfg;
    ctx.clf = &clf;
    ctx.diff = &diff;
    ctx.workers = std::max(1, workers);
    ctx.eval_data = cfg.dataset.generate(derive_seed(cfg.master_seed, "eval_data"));
    return ctx;
}

void parallel_chunks(int n_items, int chunk, int workers,
                     const std::function<void(int, int)>& fn) {
    int n_chunks = (n_items + chunk - 1) / chunk;
    if (workers <= 1 || n_chunks <= 1) {
        for (int c = 0; c < n_chunks; ++c)
            fn(c * chunk, std::min(n_items, (c + 1) * chunk));
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        while (true) {
            int c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                fn(c * chunk, std::min(n_items, (c + 1) * chunk));
            } catch (...) {
                std::lock_guard<std::mutex> lk(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int i = 0; i < std::min(workers, n_chunks); ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

Tensor purify_batch(const EvalContext& ctx, const Tensor& batch, uint64_t seed) {
    GuidanceConfig g = ctx.resolved_guidance();
    int n = batch.shape()[0];
    int dim = static_cast<int>(batch.size() / std::max(1, n));
    std::vector<double> out(batch.data().size());
    const auto& src = batch.data();
    parallel_chunks(n, kPurifyChunk, ctx.workers, [&](int lo, int hi) {
        Shape shape = batch.shape();
        shape[0] = hi - lo;
        std::vector<double> part(src.begin() + static_cast<size_t>(lo) * dim,
                                 src.begin() + static_cast<size_t>(hi) * dim);
        Tensor chunk = Tensor::constant(shape, std::move(part));
        uint64_t chunk_seed = derive_seed(seed, "purify_chunk/" + std::to_string(lo));
        Tensor purified = purify(*ctx.diff, *ctx.clf, chunk, g, chunk_seed).first;
        std::copy(purified.data().begin(), purified.data().end(),
                  out.begin() + static_cast<size_t>(lo) * dim);
    });
    return Tensor::constant(batch.shape(), std::move(out));
}

std::vector<int> defended_predict(const EvalContext& ctx, const Tensor& batch, uint64_t seed) {
    return ctx.clf->predict(purify_batch(ctx, batch, seed));
}

namespace {

double accuracy_of(const std::vector<int>& preds, const std::vector<int>& labels) {
    int correct = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (preds[i] == labels[i]) ++correct;
    return labels.empty() ? 0.0 : static_cast<double>(correct) / labels.size();
}

std::vector<int> head_indices(int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

ResultRow base_row(const EvalContext& ctx) {
    ResultRow r;
    r.dataset = ctx.cfg->dataset.kind;
    r.model = ctx.cfg->classifier.arch;
    r.t_star = ctx.resolved_guidance().t_star;
    return r;
}

// PGD on the undefended classifier, sharded deterministically.
Tensor attack_batch(const EvalContext& ctx, const Tensor& x, const std::vector<int>& y,
                    const AttackSpec& spec, uint64_t seed) {
    int n = x.shape()[0];
    int dim = static_cast<int>(x.size() / std::max(1, n));
    std::vector<double> out(x.data().size());
    const auto& src = x.data();
    parallel_chunks(n, kPurifyChunk, ctx.workers, [&](int lo, int hi) {
        Shape shape = x.shape();
        shape[0] = hi - lo;
        std::vector<double> part(src.begin() + static_cast<size_t>(lo) * dim,
                                 src.begin() + static_cast<size_t>(hi) * dim);
        std::vector<int> ys(y.begin() + lo, y.begin() + hi);
        AttackResult res = pgd(*ctx.clf, Tensor::constant(shape, std::move(part)), ys, spec,
                               derive_seed(seed, "attack_chunk/" + std::to_string(lo)));
        std::copy(res.adversarial.data().begin(), res.adversarial.data().end(),
                  out.begin() + static_cast<size_t>(lo) * dim);
    });
    return Tensor::constant(x.shape(), std::move(out));
}

}  // namespace

std::vector<ResultRow> run_defense_eval(const EvalContext& ctx) {
    const ExperimentConfig& cfg = *ctx.cfg;
    int n = std::min(cfg.eval_samples, ctx.eval_data.size());
    LabeledDataset eval = ctx.eval_data.subset(head_indices(n));
    Tensor x = eval.samples;

    std::vector<ResultRow> rows;
    struct Cell {
        std::string attack;
        double epsilon;
        Tensor samples;
    };
    std::vector<Cell> cells;
    cells.push_back({"clean", 0.0, x});
    for (const auto& na : cfg.attacks) {
        uint64_t seed = derive_seed(cfg.master_seed, "defense_eval/attack/" + na.name);
        cells.push_back({na.name, na.spec.epsilon, attack_batch(ctx, x, eval.labels, na.spec, seed)});
    }
    for (const auto& cell : cells) {
        for (bool defended : {false, true}) {
            std::vector<int> preds;
            if (defended) {
                uint64_t seed = derive_seed(cfg.master_seed, "defense_eval/purify/" + cell.attack);
                preds = defended_predict(ctx, cell.samples, seed);
            } else {
                preds = ctx.clf->predict(cell.samples);
            }
            ResultRow r = base_row(ctx);
            r.attack = cell.attack;
            r.epsilon = cell.epsilon;
            r.defense = defended ? "on" : "off";
            r.value = accuracy_of(preds, eval.labels);
            r.n = n;
            r.stderr_value = binom_se(r.value, n);
            if (!defended) r.t_star = 0;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::vector<ResultRow> run_epsilon_sweep(const EvalContext& ctx) {
    const ExperimentConfig& cfg = *ctx.cfg;
    int n = std::min(cfg.sweep_samples, ctx.eval_data.size());
    LabeledDataset eval = ctx.eval_data.subset(head_indices(n));

    std::vector<ResultRow> rows;
    for (NormKind norm : {NormKind::linf, NormKind::l2}) {
        double scale = norm == NormKind::linf ? 1.0 : kL2BudgetRatio;
        std::string attack_name = std::string("pgd_") + norm_kind_name(norm);
        for (double eps_base : cfg.epsilon_grid) {
            double eps = eps_base * scale;
            Tensor x_adv = eval.samples;
            if (eps > 0.0) {
                AttackSpec spec;
                spec.norm = norm;
                spec.epsilon = eps;
                spec.steps = 40;
                x_adv = attack_batch(ctx, eval.samples, eval.labels, spec,
                                     derive_seed(cfg.master_seed, "eps_sweep/" + attack_name + "/" +
                                                                      fmt_double(eps)));
            }
            for (bool defended : {false, true}) {
                std::vector<int> preds =
                    defended ? defended_predict(ctx, x_adv,
                                                derive_seed(cfg.master_seed,
                                                            "eps_sweep/purify/" + attack_name +
                                                                "/" + fmt_double(eps)))
                             : ctx.clf->predict(x_adv);
                ResultRow r = base_row(ctx);
                r.attack = attack_name;
                r.epsilon = eps;
                r.defense = defended ? "on" : "off";
                r.value = accuracy_of(preds, eval.labels);
                r.n = n;
                r.stderr_value = binom_se(r.value, n);
                if (!defended) r.t_star = 0;
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

std::vector<ResultRow> run_tstar_sweep(const EvalContext& ctx) {
    const ExperimentConfig& cfg = *ctx.cfg;
    int n = std::min(cfg.sweep_samples, ctx.eval_data.size());
    LabeledDataset eval = ctx.eval_data.subset(head_indices(n));
    if (cfg.attacks.empty()) throw config_error("run_tstar_sweep: no attacks configured");
    const NamedAttack& na = cfg.attacks.front();
    Tensor x_adv = attack_batch(ctx, eval.samples, eval.labels, na.spec,
                                derive_seed(cfg.master_seed, "tstar_sweep/attack"));

    std::vector<ResultRow> rows;
    for (int t : cfg.tstar_grid) {
        EvalContext sub = ctx;
        ExperimentConfig sub_cfg = cfg;
        sub_cfg.guidance.t_star = t == 0 ? -1 : t;  // placeholder, fixed below
        for (bool adv : {false, true}) {
            GuidanceConfig g = ctx.resolved_guidance();
            g.t_star = t;
            const Tensor& x = adv ? x_adv : eval.samples;
            std::vector<double> out(x.data().size());
            int dim = static_cast<int>(x.size() / std::max(1, n));
            const auto& src = x.data();
            parallel_chunks(n, kPurifyChunk, ctx.workers, [&](int lo, int hi) {
                Shape shape = x.shape();
                shape[0] = hi - lo;
                std::vector<double> part(src.begin() + static_cast<size_t>(lo) * dim,
                                         src.begin() + static_cast<size_t>(hi) * dim);
                uint64_t seed = derive_seed(cfg.master_seed,
                                            "tstar_sweep/purify/" + std::to_string(t) + "/" +
                                                (adv ? "adv" : "clean") + "/" + std::to_string(lo));
                Tensor purified =
                    purify(*ctx.diff, *ctx.clf, Tensor::constant(shape, std::move(part)), g, seed)
                        .first;
                std::copy(purified.data().begin(), purified.data().end(),
                          out.begin() + static_cast<size_t>(lo) * dim);
            });
            std::vector<int> preds = ctx.clf->predict(Tensor::constant(x.shape(), std::move(out)));
            ResultRow r = base_row(ctx);
            r.attack = adv ? na.name : "clean";
            r.epsilon = adv ? na.spec.epsilon : 0.0;
            r.defense = "on";
            r.t_star = t;
            r.value = accuracy_of(preds, eval.labels);
            r.n = n;
            r.stderr_value = binom_se(r.value, n);
            rows.push_back(std::move(r));
        }
        (void)sub;
    }
    return rows;
}

std::vector<ResultRow> run_adaptive_eval(const EvalContext& ctx) {
    const ExperimentConfig& cfg = *ctx.cfg;
    int n = std::min(cfg.adaptive.samples, ctx.eval_data.size());
    LabeledDataset eval = ctx.eval_data.subset(head_indices(n));

    AttackSpec spec;
    spec.norm = NormKind::linf;
    spec.epsilon = cfg.adaptive.epsilon;
    spec.steps = cfg.adaptive.steps;

    std::vector<ResultRow> rows;
    auto push_row = [&](const std::string& attack, const std::string& defense, double acc) {
        ResultRow r = base_row(ctx);
        r.attack = attack;
        r.defense = defense;
        r.epsilon = attack == "clean" ? 0.0 : spec.epsilon;
        r.value = acc;
        r.n = n;
        r.stderr_value = binom_se(acc, n);
        if (defense == "off") r.t_star = 0;
        rows.push_back(std::move(r));
    };

    // clean pipeline accuracy
    std::vector<int> clean_preds =
        defended_predict(ctx, eval.samples, derive_seed(cfg.master_seed, "adaptive/clean"));
    push_row("clean", "on", accuracy_of(clean_preds, eval.labels));

    // undefended PGD baseline at the same budget
    Tensor x_pgd = attack_batch(ctx, eval.samples, eval.labels, spec,
                                derive_seed(cfg.master_seed, "adaptive/pgd"));
    push_row("pgd_linf", "off", accuracy_of(ctx.clf->predict(x_pgd), eval.labels));

    // plain PGD transferred to the defended pipeline
    std::vector<int> transfer_preds =
        defended_predict(ctx, x_pgd, derive_seed(cfg.master_seed, "adaptive/transfer"));
    push_row("pgd_linf_transfer", "on", accuracy_of(transfer_preds, eval.labels));

    // exact-gradient adaptive attack, sharded in fixed chunks
    int dim = eval.sample_dim();
    std::vector<double> adv(eval.samples.data().size());
    const auto& src = eval.samples.data();
    parallel_chunks(n, kAdaptiveChunk, ctx.workers, [&](int lo, int hi) {
        Shape shape = eval.samples.shape();
        shape[0] = hi - lo;
        std::vector<double> part(src.begin() + static_cast<size_t>(lo) * dim,
                                 src.begin() + static_cast<size_t>(hi) * dim);
        std::vector<int> ys(eval.labels.begin() + lo, eval.labels.begin() + hi);
        PurifierPipeline pipe = ctx.pipeline(true);
        AttackResult res =
            adaptive_pgd(pipe, Tensor::constant(shape, std::move(part)), ys, spec,
                         derive_seed(cfg.master_seed, "adaptive/attack/" + std::to_string(lo)));
        std::copy(res.adversarial.data().begin(), res.adversarial.data().end(),
                  adv.begin() + static_cast<size_t>(lo) * dim);
    });
    Tensor x_adaptive = Tensor::constant(eval.samples.shape(), std::move(adv));
    std::vector<int> adaptive_preds =
        defended_predict(ctx, x_adaptive, derive_seed(cfg.master_seed, "adaptive/eval"));
    push_row("adaptive_pgd_linf", "on", accuracy_of(adaptive_preds, eval.labels));
    return rows;
}

std::vector<ResultRow> run_ood_eval(const EvalContext& ctx) {
    const ExperimentConfig& cfg = *ctx.cfg;
    if (!ctx.eval_data.is_image())
        throw config_error("run_ood_eval: corruption evaluation requires image data");
    int n = std::min(cfg.ood_samples, ctx.eval_data.size());
    LabeledDataset eval = ctx.eval_data.subset(head_indices(n));

    const CorruptionFamily families[5] = {
        CorruptionFamily::gaussian_noise, CorruptionFamily::glass_blur,
        CorruptionFamily::impulse_noise, CorruptionFamily::jpeg_like, CorruptionFamily::shot_noise};

    std::vector<ResultRow> rows;
    for (CorruptionFamily fam : families) {
        for (int sev = 1; sev <= 5; ++sev) {
            std::string fam_name = corruption_family_name(fam);
            LabeledDataset corrupted =
                corrupt(eval, {fam, sev},
                        derive_seed(cfg.master_seed, "ood/" + fam_name + "/" + std::to_string(sev)));
            for (bool defended : {false, true}) {
                std::vector<int> preds =
                    defended
                        ? defended_predict(ctx, corrupted.samples,
                                           derive_seed(cfg.master_seed, "ood/purify/" + fam_name +
                                                                             "/" + std::to_string(sev)))
                        : ctx.clf->predict(corrupted.samples);
                ResultRow r = base_row(ctx);
                r.corruption = fam_name;
                r.severity = sev;
                r.defense = defended ? "on" : "off";
                r.value = accuracy_of(preds, eval.labels);
                r.n = n;
                r.stderr_value = binom_se(r.value, n);
                if (!defended) r.t_star = 0;
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

QualityOutputs run_quality_eval(const EvalContext& ctx) {
    const ExperimentConfig& cfg = *ctx.cfg;
    if (!ctx.eval_data.is_image())
        throw config_error("run_quality_eval: image data required");
    int n = std::min(cfg.quality_samples, ctx.eval_data.size());
    LabeledDataset eval = ctx.eval_data.subset(head_indices(n));
    if (cfg.attacks.empty()) throw config_error("run_quality_eval: no attacks configured");
    const AttackSpec& spec = cfg.attacks.front().spec;

    Tensor x_clean = eval.samples;
    Tensor x_adv = attack_batch(ctx, x_clean, eval.labels, spec,
                                derive_seed(cfg.master_seed, "quality/attack"));
    Tensor p_clean = purify_batch(ctx, x_clean, derive_seed(cfg.master_seed, "quality/pclean"));
    Tensor p_adv = purify_batch(ctx, x_adv, derive_seed(cfg.master_seed, "quality/padv"));

    int side = eval.samples.shape()[2];
    int dim = side * side;
    auto image_of = [&](const Tensor& t, int i) {
        return Tensor::constant({1, 1, side, side},
                                std::vector<double>(t.data().begin() + static_cast<size_t>(i) * dim,
                                                    t.data().begin() + static_cast<size_t>(i + 1) * dim));
    };

    std::vector<double> ssim_pc_c(n), psnr_pc_c(n), ssim_pa_c(n), psnr_pa_c(n), ssim_pa_a(n),
        psnr_pa_a(n);
    for (int i = 0; i < n; ++i) {
        Tensor c = image_of(x_clean, i), a = image_of(x_adv, i);
        Tensor pc = image_of(p_clean, i), pa = image_of(p_adv, i);
        ssim_pc_c[i] = ssim(pc, c);
        psnr_pc_c[i] = psnr(pc, c);
        ssim_pa_c[i] = ssim(pa, c);
        psnr_pa_c[i] = psnr(pa, c);
        ssim_pa_a[i] = ssim(pa, a);
        psnr_pa_a[i] = psnr(pa, a);
    }

    QualityOutputs out;
    out.reports.push_back(make_metric_report("ssim_purified_clean_vs_clean", std::move(ssim_pc_c)));
    out.reports.push_back(make_metric_report("psnr_purified_clean_vs_clean", std::move(psnr_pc_c)));
    out.reports.push_back(make_metric_report("ssim_purified_adv_vs_clean", std::move(ssim_pa_c)));
    out.reports.push_back(make_metric_report("psnr_purified_adv_vs_clean", std::move(psnr_pa_c)));
    out.reports.push_back(make_metric_report("ssim_purified_adv_vs_adv", std::move(ssim_pa_a)));
    out.reports.push_back(make_metric_report("psnr_purified_adv_vs_adv", std::move(psnr_pa_a)));

    int cols = std::min(cfg.quality_grid_cols, n);
    out.grid_rows = 5;
    out.grid_cols = cols;
    out.side = side;
    auto raw = [&](const Tensor& t, int i) {
        return std::vector<double>(t.data().begin() + static_cast<size_t>(i) * dim,
                                   t.data().begin() + static_cast<size_t>(i + 1) * dim);
    };
    auto amplified = [&](const Tensor& a, const Tensor& b, int i) {
        std::vector<double> va = raw(a, i), vb = raw(b, i);
        for (int p = 0; p < dim; ++p)
            va[p] = std::min(1.0, std::max(0.0, 0.5 + kPerturbationAmplification * (va[p] - vb[p])));
        return va;
    };
    for (int i = 0; i < cols; ++i) out.grid_images.push_back(raw(x_clean, i));
    for (int i = 0; i < cols; ++i) out.grid_images.push_back(raw(x_adv, i));
    for (int i = 0; i < cols; ++i) out.grid_images.push_back(raw(p_adv, i));
    for (int i = 0; i < cols; ++i) out.grid_images.push_back(amplified(x_adv, x_clean, i));
    for (int i = 0; i < cols; ++i) out.grid_images.push_back(amplified(p_adv, x_clean, i));
    return out;
}

// ----------------------------------------------------------------- report
namespace {

std::string pad_to(const std::string& s, size_t w) {
    std::string out = s;
    while (out.size() < w) out.push_back(' ');
    return out;
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
    return buf;
}

std::string render_pivot(const std::string& title, const std::vector<std::string>& row_keys,
                         const std::vector<std::string>& col_keys,
                         const std::function<std::optional<double>(const std::string&,
                                                                   const std::string&)>& cell) {
    size_t rw = title.size();
    for (const auto& r : row_keys) rw = std::max(rw, r.size());
    std::vector<size_t> cw(col_keys.size());
    for (size_t j = 0; j < col_keys.size(); ++j) cw[j] = std::max<size_t>(col_keys[j].size(), 6);

    std::ostringstream os;
    os << pad_to(title, rw + 2);
    for (size_t j = 0; j < col_keys.size(); ++j) os << pad_to(col_keys[j], cw[j] + 2);
    os << "\n";
    for (const auto& r : row_keys) {
        os << pad_to(r, rw + 2);
        for (size_t j = 0; j < col_keys.size(); ++j) {
            auto v = cell(r, col_keys[j]);
            os << pad_to(v ? fmt_pct(*v) : "-", cw[j] + 2);
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace

ReportFiles report(std::vector<ResultRow> rows) {
    sort_rows(rows);
    ReportFiles out;
    out.csv = rows_to_csv(rows);

    auto find_value = [&](const std::function<bool(const ResultRow&)>& pred)
        -> std::optional<double> {
        for (const auto& r : rows)
            if (pred(r)) return r.value;
        return std::nullopt;
    };

    // defense table: attack x defense columns, model rows
    {
        std::vector<std::string> models, attacks;
        for (const auto& r : rows) {
            if (r.corruption != "-" || r.metric != "accuracy") continue;
            if (std::find(models.begin(), models.end(), r.model) == models.end())
                models.push_back(r.model);
            if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end())
                attacks.push_back(r.attack);
        }
        std::sort(models.begin(), models.end());
        std::sort(attacks.begin(), attacks.end());
        std::vector<std::string> cols;
        for (const auto& a : attacks)
            for (const char* d : {"off", "on"}) cols.push_back(a + "/" + d);
        if (!models.empty()) {
            out.defense_table = "Accuracy (%) by attack, defense off/on\n\n" +
                render_pivot("model", models, cols, [&](const std::string& m, const std::string& c) {
                    size_t slash = c.rfind('/');
                    std::string attack = c.substr(0, slash), defense = c.substr(slash + 1);
                    return find_value([&](const ResultRow& r) {
                        return r.model == m && r.attack == attack && r.defense == defense &&
                               r.corruption == "-" && r.metric == "accuracy";
                    });
                });
        }
    }

    // adaptive table
    {
        bool has = false;
        for (const auto& r : rows)
            if (r.attack.find("adaptive") != std::string::npos) has = true;
        if (has) {
            std::vector<std::string> models;
            for (const auto& r : rows)
                if (std::find(models.begin(), models.end(), r.model) == models.end())
                    models.push_back(r.model);
            std::sort(models.begin(), models.end());
            std::vector<std::string> cols = {"clean/on", "adaptive_pgd_linf/on", "pgd_linf/off",
                                             "pgd_linf_transfer/on"};
            out.adaptive_table = "Adaptive attack accuracy (%)\n\n" +
                render_pivot("model", models, cols, [&](const std::string& m, const std::string& c) {
                    size_t slash = c.rfind('/');
                    std::string attack = c.substr(0, slash), defense = c.substr(slash + 1);
                    return find_value([&](const ResultRow& r) {
                        return r.model == m && r.attack == attack && r.defense == defense;
                    });
                });
        }
    }

    // ood table: severity rows (plus mean), family x defense columns
    {
        std::vector<std::string> fams;
        for (const auto& r : rows)
            if (r.corruption != "-" &&
                std::find(fams.begin(), fams.end(), r.corruption) == fams.end())
                fams.push_back(r.corruption);
        std::sort(fams.begin(), fams.end());
        if (!fams.empty()) {
            std::vector<std::string> row_keys = {"1", "2", "3", "4", "5", "mean"};
            std::vector<std::string> cols;
            for (const auto& f : fams)
                for (const char* d : {"on", "off"}) cols.push_back(f + "/" + d);
            out.ood_table = "Corruption accuracy (%), with (on) and without (off) purifier\n\n" +
                render_pivot("severity", row_keys, cols,
                             [&](const std::string& rk, const std::string& c) -> std::optional<double> {
                                 size_t slash = c.rfind('/');
                                 std::string fam = c.substr(0, slash), defense = c.substr(slash + 1);
                                 if (rk == "mean") {
                                     double sum = 0.0;
                                     int cnt = 0;
                                     for (const auto& r : rows)
                                         if (r.corruption == fam && r.defense == defense) {
                                             sum += r.value;
                                             ++cnt;
                                         }
                                     if (cnt == 0) return std::nullopt;
                                     return sum / cnt;
                                 }
                                 int sev = std::stoi(rk);
                                 return find_value([&](const ResultRow& r) {
                                     return r.corruption == fam && r.defense == defense &&
                                            r.severity == sev;
                                 });
                             });
        }
    }
    return out;
}

// ----------------------------------------------------------------- checks
namespace {

std::optional<double> row_value(const std::vector<ResultRow>& rows,
                                const std::function<bool(const ResultRow&)>& pred) {
    for (const auto& r : rows)
        if (pred(r)) return r.value;
    return std::nullopt;
}

}  // namespace

std::vector<std::string> check_defense_rows(const std::vector<ResultRow>& rows) {
    std::vector<std::string> fails;
    auto clean_off = row_value(rows, [](const ResultRow& r) {
        return r.attack == "clean" && r.defense == "off";
    });
    auto clean_on = row_value(rows, [](const ResultRow& r) {
        return r.attack == "clean" && r.defense == "on";
    });
    if (!clean_off || !clean_on) {
        fails.push_back("defense eval: missing clean rows");
        return fails;
    }
    if ((*clean_off - *clean_on) * 100.0 > thresholds::kDefenseCleanDropPoints)
        fails.push_back("defended clean accuracy dropped more than " +
                        std::to_string(thresholds::kDefenseCleanDropPoints) + " points");
    bool saw_attack = false;
    for (const auto& r : rows) {
        if (r.attack == "clean" || r.defense != "off" || r.metric != "accuracy") continue;
        saw_attack = true;
        auto on = row_value(rows, [&](const ResultRow& q) {
            return q.attack == r.attack && q.defense == "on";
        });
        if (!on) {
            fails.push_back("missing defended row for attack " + r.attack);
            continue;
        }
        if ((*on - r.value) * 100.0 < thresholds::kDefenseAdvGainPoints)
            fails.push_back("attack " + r.attack + ": defended gain " +
                            fmt_pct(*on - r.value) + " points < " +
                            std::to_string(thresholds::kDefenseAdvGainPoints));
    }
    if (!saw_attack) fails.push_back("defense eval: no attack rows");
    return fails;
}

std::vector<std::string> check_epsilon_sweep_rows(const std::vector<ResultRow>& rows) {
    std::vector<std::string> fails;
    // checked on the linf series
    std::vector<const ResultRow*> on, off;
    for (const auto& r : rows) {
        if (r.attack != "pgd_linf" || r.metric != "accuracy") continue;
        (r.defense == "on" ? on : off).push_back(&r);
    }
    auto by_eps = [](const ResultRow* a, const ResultRow* b) { return a->epsilon < b->epsilon; };
    std::sort(on.begin(), on.end(), by_eps);
    std::sort(off.begin(), off.end(), by_eps);
    if (on.size() < 3 || on.size() != off.size()) {
        fails.push_back("epsilon sweep: unexpected row layout");
        return fails;
    }
    for (size_t i = 1; i < on.size(); ++i)
        if (on[i]->value > on[i - 1]->value + 1e-12)
            fails.push_back("defended accuracy increased from eps " +
                            fmt_double(on[i - 1]->epsilon) + " to " + fmt_double(on[i]->epsilon));
    double gap_small = (on[1]->value - off[1]->value) * 100.0;
    double gap_large = (on.back()->value - off.back()->value) * 100.0;
    if (gap_small < thresholds::kSweepSmallestEpsGainPoints)
        fails.push_back("gap at smallest nonzero eps is " + std::to_string(gap_small) +
                        " points, below " +
                        std::to_string(thresholds::kSweepSmallestEpsGainPoints));
    if (!(gap_large < gap_small))
        fails.push_back("gap did not shrink at the largest eps");
    return fails;
}

std::vector<std::string> check_tstar_sweep_rows(const std::vector<ResultRow>& rows) {
    std::vector<std::string> fails;
    std::vector<const ResultRow*> clean, adv;
    for (const auto& r : rows) {
        if (r.metric != "accuracy") continue;
        if (r.attack == "clean") clean.push_back(&r);
        else adv.push_back(&r);
    }
    auto by_t = [](const ResultRow* a, const ResultRow* b) { return a->t_star < b->t_star; };
    std::sort(clean.begin(), clean.end(), by_t);
    std::sort(adv.begin(), adv.end(), by_t);
    if (clean.size() < 3 || adv.size() < 3) {
        fails.push_back("tstar sweep: unexpected row layout");
        return fails;
    }
    int violations = 0;
    for (size_t i = 1; i < clean.size(); ++i) {
        double rise = (clean[i]->value - clean[i - 1]->value) * 100.0;
        if (rise > 1e-9) {
            ++violations;
            if (rise > thresholds::kTstarCleanTolerancePoints)
                fails.push_back("clean accuracy rose by " + std::to_string(rise) +
                                " points at t*=" + std::to_string(clean[i]->t_star));
        }
    }
    if (violations > thresholds::kTstarCleanMaxViolations)
        fails.push_back("clean accuracy violated monotonicity " + std::to_string(violations) +
                        " times");
    size_t best = 0;
    for (size_t i = 1; i < adv.size(); ++i)
        if (adv[i]->value > adv[best]->value) best = i;
    if (best == 0 || best + 1 == adv.size())
        fails.push_back("adversarial accuracy has no interior maximum over the t* grid");
    return fails;
}

std::vector<std::string> check_adaptive_rows(const std::vector<ResultRow>& rows) {
    std::vector<std::string> fails;
    auto adaptive = row_value(rows, [](const ResultRow& r) {
        return r.attack == "adaptive_pgd_linf" && r.defense == "on";
    });
    auto undefended = row_value(rows, [](const ResultRow& r) {
        return r.attack == "pgd_linf" && r.defense == "off";
    });
    if (!adaptive || !undefended) {
        fails.push_back("adaptive eval: missing rows");
        return fails;
    }
    double gain = (*adaptive - *undefended) * 100.0;
    if (gain < thresholds::kAdaptiveGainPoints)
        fails.push_back("adaptive accuracy gain " + std::to_string(gain) + " points < " +
                        std::to_string(thresholds::kAdaptiveGainPoints));
    return fails;
}

std::vector<std::string> check_ood_rows(const std::vector<ResultRow>& rows) {
    std::vector<std::string> fails;
    double sum_on = 0.0, sum_off = 0.0;
    int n_on = 0, n_off = 0;
    for (const auto& r : rows) {
        if (r.corruption == "-") continue;
        if (r.defense == "on") {
            sum_on += r.value;
            ++n_on;
        } else {
            sum_off += r.value;
            ++n_off;
        }
    }
    if (n_on == 0 || n_on != n_off) {
        fails.push_back("ood eval: unexpected row layout");
        return fails;
    }
    double gain = (sum_on / n_on - sum_off / n_off) * 100.0;
    if (gain < thresholds::kOodMeanGainPoints)
        fails.push_back("mean corruption accuracy gain " + std::to_string(gain) + " points < " +
                        std::to_string(thresholds::kOodMeanGainPoints));
    return fails;
}

}  // namespace puridiff
