#include "ocil/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <thread>

#include "ocil/error.hpp"
#include "ocil/metrics.hpp"

namespace ocil {

// ---------------------------------------------------------------------------
// OOD method names

OodMethod parse_ood_method(const std::string& s) {
    if (s == "logitnorm") return OodMethod::finetuning(FinetuneMethod::logitnorm, ScorerKind::msp);
    if (s == "t2fnorm") return OodMethod::finetuning(FinetuneMethod::t2fnorm, ScorerKind::energy);
    if (s == "ber") return OodMethod::finetuning(FinetuneMethod::ber, ScorerKind::energy);
    if (s == "finetune_plain") return OodMethod::finetuning(FinetuneMethod::plain, ScorerKind::energy);
    try {
        return OodMethod::posthoc(parse_scorer_kind(s));
    } catch (const Error&) {
        fail(ErrorCode::Config, "unknown OOD method '" + s + "'");
    }
}

std::string to_string(const OodMethod& m) {
    if (!m.finetuned) return to_string(m.scorer);
    return m.finetune == FinetuneMethod::plain ? "finetune_plain" : to_string(m.finetune);
}

ScorerKind default_finetune_scorer(FinetuneMethod m) {
    return m == FinetuneMethod::logitnorm ? ScorerKind::msp : ScorerKind::energy;
}

std::vector<std::string> ood_method_names() {
    std::vector<std::string> out;
    for (ScorerKind k : kAllScorers) out.push_back(to_string(k));
    for (const char* s : {"logitnorm", "t2fnorm", "ber", "finetune_plain"}) out.emplace_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
    require(data.has_value() || !manifest.empty(), ErrorCode::Config, "config: no data source");
    require(step_size >= 2, ErrorCode::Config, "config: step_size must be >= 2");
    require(!seeds.empty(), ErrorCode::Config, "config: seeds must be nonempty");
    std::vector<std::uint64_t> sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::Config,
            "config: seeds must be distinct");
    if (extractor.kind == Extractor::Kind::random_projection)
        require(extractor.output_dim > 0, ErrorCode::Config, "config: extractor.output_dim must be positive");
    try {
        cil.validate();
        scorer.validate();
        if (ood.finetuned) finetune.validate();
    } catch (const Error& e) {
        fail(ErrorCode::Config, std::string("config: ") + e.what());
    }
}

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    require(j.is_object(), ErrorCode::Config, where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        require(ok, ErrorCode::Config, "unknown key '" + key + "' in " + where);
    }
}

std::string to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

LrSchedule parse_schedule(const std::string& s) {
    if (s == "cosine") return LrSchedule::cosine;
    if (s == "constant") return LrSchedule::constant;
    fail(ErrorCode::Config, "unknown lr schedule '" + s + "'");
}

std::string to_string(HeadInit h) {
    switch (h) {
        case HeadInit::zeros: return "zeros";
        case HeadInit::copy_scaled: return "copy_scaled";
        case HeadInit::seeded_uniform: return "seeded_uniform";
    }
    return "unknown";
}

HeadInit parse_head_init(const std::string& s) {
    if (s == "zeros") return HeadInit::zeros;
    if (s == "copy_scaled") return HeadInit::copy_scaled;
    if (s == "seeded_uniform") return HeadInit::seeded_uniform;
    fail(ErrorCode::Config, "unknown head init '" + s + "'");
}

std::string to_string(ExemplarStrategy s) { return s == ExemplarStrategy::herding ? "herding" : "random"; }

ExemplarStrategy parse_strategy(const std::string& s) {
    if (s == "herding") return ExemplarStrategy::herding;
    if (s == "random") return ExemplarStrategy::random;
    fail(ErrorCode::Config, "unknown memory strategy '" + s + "'");
}

std::string to_string(ExtraHeadInit h) { return h == ExtraHeadInit::copy_from_cil ? "copy_from_cil" : "fresh"; }

ExtraHeadInit parse_extra_init(const std::string& s) {
    if (s == "copy_from_cil") return ExtraHeadInit::copy_from_cil;
    if (s == "fresh") return ExtraHeadInit::fresh;
    fail(ErrorCode::Config, "unknown fine-tune head init '" + s + "'");
}

json sgd_json(const SgdConfig& s) {
    return {{"lr", s.lr0}, {"momentum", s.momentum}, {"weight_decay", s.weight_decay},
            {"schedule", to_string(s.schedule)}};
}

void read_sgd(const json& j, SgdConfig& s) {
    s.lr0 = j.value("lr", s.lr0);
    s.momentum = j.value("momentum", s.momentum);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    if (j.contains("schedule")) s.schedule = parse_schedule(j.at("schedule").get<std::string>());
}

}  // namespace

void to_json(nlohmann::json& j, const RunConfig& c) {
    json extractor = {{"kind", c.extractor.kind == Extractor::Kind::identity ? "identity" : "random_projection"}};
    if (c.extractor.kind == Extractor::Kind::random_projection) {
        extractor["output_dim"] = c.extractor.output_dim;
        extractor["seed"] = c.extractor.seed;
    }
    json cil = sgd_json(c.cil.sgd);
    cil.update({{"method", to_string(c.cil.method)},
                {"epochs_per_task", c.cil.epochs_per_task},
                {"batch_size", c.cil.batch_size},
                {"distill_temperature", c.cil.distill_temperature},
                {"distill_weight", c.cil.distill_weight},
                {"head_init", to_string(c.cil.init)},
                {"memory_strategy", to_string(c.cil.memory_strategy)}});
    const auto& p = c.scorer;
    json params = {{"energy_tau", p.energy_tau},         {"gen_gamma", p.gen_gamma},
                   {"gen_top_m", p.gen_top_m},           {"odin_temperature", p.odin_temperature},
                   {"odin_epsilon", p.odin_epsilon},     {"react_percentile", p.react_percentile},
                   {"knn_k", p.knn_k}};
    json ood = {{"method", to_string(c.ood)}, {"scorer", to_string(c.ood.scorer)}, {"params", params}};
    if (c.ood.finetuned) {
        const auto& f = c.finetune;
        const auto& b = f.ber;
        json ft = sgd_json(f.sgd);
        ft.update({{"epochs", f.epochs},
                   {"batch_size", f.batch_size},
                   {"init", to_string(f.init)},
                   {"logitnorm_tau", f.logitnorm_tau},
                   {"t2fnorm_tau", f.t2fnorm_tau},
                   {"ber",
                    {{"alpha", b.alpha},
                     {"tau", b.tau},
                     {"p_in", b.p_in},
                     {"p_out", b.p_out},
                     {"lambda_old", b.lambda_old},
                     {"beta_a", b.beta_a},
                     {"beta_b", b.beta_b},
                     {"use_nter", b.use_nter},
                     {"use_oter", b.use_oter},
                     {"hinge_orientation", to_string(b.orientation)}}}});
        ood["finetune"] = ft;
    }
    j = {{"manifest", c.manifest.generic_string()},
         {"step_size", c.step_size},
         {"memory_budget", c.memory_budget},
         {"class_order", c.class_order == ClassOrder::seeded ? "seeded" : "sequential"},
         {"extractor", extractor},
         {"cil", cil},
         {"ood", ood},
         {"seeds", c.seeds},
         {"output_dir", c.output_dir.generic_string()},
         {"save_checkpoints", c.save_checkpoints}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    try {
        check_keys(j,
                   {"manifest", "step_size", "memory_budget", "class_order", "extractor", "cil", "ood", "seeds",
                    "output_dir", "save_checkpoints"},
                   "config");
        c = RunConfig{};
        c.manifest = j.at("manifest").get<std::string>();
        c.step_size = j.value("step_size", c.step_size);
        c.memory_budget = j.value("memory_budget", c.memory_budget);
        if (j.contains("class_order")) {
            const auto s = j.at("class_order").get<std::string>();
            require(s == "seeded" || s == "sequential", ErrorCode::Config,
                    "class_order must be 'seeded' or 'sequential'");
            c.class_order = s == "seeded" ? ClassOrder::seeded : ClassOrder::sequential;
        }
        if (j.contains("extractor")) {
            const auto& e = j.at("extractor");
            check_keys(e, {"kind", "output_dim", "seed"}, "extractor");
            const auto kind = e.value("kind", std::string("identity"));
            require(kind == "identity" || kind == "random_projection", ErrorCode::Config,
                    "extractor.kind must be 'identity' or 'random_projection'");
            c.extractor.kind = kind == "identity" ? Extractor::Kind::identity : Extractor::Kind::random_projection;
            c.extractor.output_dim = e.value("output_dim", c.extractor.output_dim);
            c.extractor.seed = e.value("seed", c.extractor.seed);
        }
        if (j.contains("cil")) {
            const auto& e = j.at("cil");
            check_keys(e,
                       {"method", "epochs_per_task", "batch_size", "distill_temperature", "distill_weight", "lr",
                        "momentum", "weight_decay", "schedule", "head_init", "memory_strategy"},
                       "cil");
            if (e.contains("method")) c.cil.method = parse_cil_method(e.at("method").get<std::string>());
            c.cil.epochs_per_task = e.value("epochs_per_task", c.cil.epochs_per_task);
            c.cil.batch_size = e.value("batch_size", c.cil.batch_size);
            c.cil.distill_temperature = e.value("distill_temperature", c.cil.distill_temperature);
            c.cil.distill_weight = e.value("distill_weight", c.cil.distill_weight);
            read_sgd(e, c.cil.sgd);
            if (e.contains("head_init")) c.cil.init = parse_head_init(e.at("head_init").get<std::string>());
            if (e.contains("memory_strategy"))
                c.cil.memory_strategy = parse_strategy(e.at("memory_strategy").get<std::string>());
        }
        const auto& o = j.at("ood");
        check_keys(o, {"method", "scorer", "params", "finetune"}, "ood");
        c.ood = parse_ood_method(o.at("method").get<std::string>());
        if (o.contains("scorer")) {
            const auto k = parse_scorer_kind(o.at("scorer").get<std::string>());
            require(c.ood.finetuned || k == c.ood.scorer, ErrorCode::Config,
                    "ood.scorer conflicts with the post-hoc method");
            c.ood.scorer = k;
        }
        if (o.contains("params")) {
            const auto& p = o.at("params");
            check_keys(p,
                       {"energy_tau", "gen_gamma", "gen_top_m", "odin_temperature", "odin_epsilon",
                        "react_percentile", "knn_k"},
                       "ood.params");
            auto& s = c.scorer;
            s.energy_tau = p.value("energy_tau", s.energy_tau);
            s.gen_gamma = p.value("gen_gamma", s.gen_gamma);
            s.gen_top_m = p.value("gen_top_m", s.gen_top_m);
            s.odin_temperature = p.value("odin_temperature", s.odin_temperature);
            s.odin_epsilon = p.value("odin_epsilon", s.odin_epsilon);
            s.react_percentile = p.value("react_percentile", s.react_percentile);
            s.knn_k = p.value("knn_k", s.knn_k);
        }
        c.finetune.method = c.ood.finetune;
        if (o.contains("finetune")) {
            require(c.ood.finetuned, ErrorCode::Config, "ood.finetune given for a post-hoc method");
            const auto& f = o.at("finetune");
            check_keys(f,
                       {"epochs", "batch_size", "init", "logitnorm_tau", "t2fnorm_tau", "lr", "momentum",
                        "weight_decay", "schedule", "ber"},
                       "ood.finetune");
            auto& ft = c.finetune;
            ft.epochs = f.value("epochs", ft.epochs);
            ft.batch_size = f.value("batch_size", ft.batch_size);
            if (f.contains("init")) ft.init = parse_extra_init(f.at("init").get<std::string>());
            ft.logitnorm_tau = f.value("logitnorm_tau", ft.logitnorm_tau);
            ft.t2fnorm_tau = f.value("t2fnorm_tau", ft.t2fnorm_tau);
            read_sgd(f, ft.sgd);
            if (f.contains("ber")) {
                const auto& b = f.at("ber");
                check_keys(b,
                           {"alpha", "tau", "p_in", "p_out", "lambda_old", "beta_a", "beta_b", "use_nter",
                            "use_oter", "hinge_orientation"},
                           "ood.finetune.ber");
                auto& r = ft.ber;
                r.alpha = b.value("alpha", r.alpha);
                r.tau = b.value("tau", r.tau);
                r.p_in = b.value("p_in", r.p_in);
                r.p_out = b.value("p_out", r.p_out);
                r.lambda_old = b.value("lambda_old", r.lambda_old);
                r.beta_a = b.value("beta_a", r.beta_a);
                r.beta_b = b.value("beta_b", r.beta_b);
                r.use_nter = b.value("use_nter", r.use_nter);
                r.use_oter = b.value("use_oter", r.use_oter);
                if (b.contains("hinge_orientation"))
                    r.orientation = parse_hinge_orientation(b.at("hinge_orientation").get<std::string>());
            }
        }
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        c.save_checkpoints = j.value("save_checkpoints", false);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("config: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::FileNotFound, "cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Benchmark driver

BenchmarkData resolve_data(const RunConfig& cfg) {
    BenchmarkData data = cfg.data ? *cfg.data : load_benchmark_data(load_manifest(cfg.manifest));
    data.train.validate();
    data.test.validate();
    data.ood.validate();
    require(!data.ood.sets.empty(), ErrorCode::MalformedHeader, "benchmark: OOD suite is empty");
    require(data.train.d == data.test.d, ErrorCode::DimensionMismatch, "benchmark: train/test dimension mismatch");
    for (const auto& s : data.ood.sets)
        require(s.data.d == data.train.d, ErrorCode::DimensionMismatch,
                "benchmark: OOD set '" + s.name + "' dimension mismatch");
    return data;
}

unsigned resolve_threads(std::optional<unsigned> flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("OPENCIL_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        require(end != env && *end == '\0', ErrorCode::Config, "OPENCIL_THREADS must be a nonnegative integer");
        return static_cast<unsigned>(v);
    }
    return 1;
}

namespace {

struct SeedOutcome {
    std::vector<StepRecord> records;
    std::optional<SeedFailure> failure;
};

Extractor make_extractor(const ExtractorConfig& e, std::size_t d_in) {
    if (e.kind == Extractor::Kind::identity) return Extractor::identity(d_in);
    return Extractor::random_projection(d_in, e.output_dim, e.seed);
}

SeedOutcome run_seed(const RunConfig& cfg, const BenchmarkData& data, std::uint64_t seed,
                     const RunOptions& opts) {
    SeedOutcome out;
    std::size_t step = 0;
    try {
        const Rng root(seed, "protocol");
        TaskStream stream;
        if (cfg.class_order == ClassOrder::seeded) {
            Rng order = root.substream("class_order");
            stream = split_tasks(data.train, data.test, cfg.step_size, order);
        } else {
            std::vector<int> order(static_cast<std::size_t>(std::max(data.train.num_classes, data.test.num_classes)));
            std::iota(order.begin(), order.end(), 0);
            stream = split_tasks(data.train, data.test, cfg.step_size, order);
        }
        const std::size_t steps = stream.size();

        CilModel model = CilModel::create(make_extractor(cfg.extractor, data.train.d));
        MemoryBuffer memory;
        memory.budget = cfg.memory_budget;
        FinetuneConfig ft_cfg = cfg.finetune;
        ft_cfg.method = cfg.ood.finetune;
        const auto ckpt_dir = cfg.output_dir / "checkpoints" / ("seed_" + std::to_string(seed));
        std::vector<TrainLogEntry> cil_log;
        std::vector<FinetuneLogEntry> ft_log;
        if (cfg.save_checkpoints) std::filesystem::create_directories(ckpt_dir);

        for (step = 1; step <= steps; ++step) {
            Rng cil_rng = root.substream("cil", step);
            TrainResult trained = train_task(model, stream, step, memory, cfg.cil, cil_rng);
            model = std::move(trained.model);

            const FeatureDataset id_test = stream.test_union(step);
            const double acc = evaluate_accuracy(model, id_test);

            std::optional<FinetuneResult> tuned;
            if (cfg.ood.finetuned) {
                Rng ft_rng = root.substream("finetune", step);
                tuned = finetune_step_loop(model, stream, step, memory, ft_cfg, ft_rng);
            }
            if (cfg.save_checkpoints) {
                const std::string tag = "step_" + std::to_string(step);
                save_head(model.head, ckpt_dir / ("h_" + tag + ".och"));
                cil_log.insert(cil_log.end(), trained.log.begin(), trained.log.end());
                write_training_log(cil_log, ckpt_dir / "cil_log.json");
                if (tuned) {
                    save_head(tuned->head, ckpt_dir / ("f_" + tag + ".och"));
                    ft_log.insert(ft_log.end(), tuned->log.begin(), tuned->log.end());
                    write_finetune_log(ft_log, ckpt_dir / "finetune_log.jsonl");
                }
            }
            const ScoringModel scoring = tuned ? tuned->scoring_model(model.extractor)
                                               : ScoringModel{&model.extractor, &model.head, 0.0};

            FeatureDataset fit_rows = stream.task(step).train;
            fit_rows.append(memory.materialize(stream));
            Scorer scorer(cfg.ood.scorer, cfg.scorer);
            scorer.fit(scoring, fit_rows);

            const std::vector<double> id_scores = scorer.score_all(scoring, id_test);
            std::vector<FeatureDataset> ood_tests;
            for (const auto& set : data.ood.sets) {
                ood_tests.push_back(ood_subset(set.data, step, steps, Rng(seed, "protocol/ood/" + set.name)));
                const auto& ood = ood_tests.back();
                const std::vector<double> ood_scores = scorer.score_all(scoring, ood);
                const ScoredSplit split{id_scores, ood_scores};
                StepRecord r;
                r.seed = seed;
                r.step = step;
                r.dataset = set.name;
                r.tag = set.tag;
                r.acc = acc;
                if (ood.n > 0) {
                    r.auroc = auroc(split);
                    r.fpr95 = fpr_at_tpr95(split);
                    r.ap = average_precision(split);
                }
                r.n_id_test = id_test.n;
                r.n_ood_test = ood.n;
                out.records.push_back(std::move(r));
            }

            if (opts.observer) {
                StepContext ctx;
                ctx.seed = seed;
                ctx.step = step;
                ctx.stream = &stream;
                ctx.model = &model;
                ctx.memory_before = &memory;
                ctx.memory_after = &trained.memory;
                ctx.scoring = &scoring;
                ctx.scorer = &scorer;
                ctx.fit_rows = &fit_rows;
                ctx.id_test = &id_test;
                ctx.ood_tests = &ood_tests;
                opts.observer(ctx);
            }
            memory = std::move(trained.memory);
        }
    } catch (const Error& e) {
        out.failure = SeedFailure{seed, step, std::string(to_string(e.code())), e.what()};
    } catch (const std::exception& e) {
        out.failure = SeedFailure{seed, step, std::string(to_string(ErrorCode::Runtime)), e.what()};
    }
    return out;
}

}  // namespace

BenchmarkReport run_benchmark(const RunConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const BenchmarkData data = resolve_data(cfg);
    const int num_classes = std::max(data.train.num_classes, data.test.num_classes);
    require(cfg.step_size <= num_classes, ErrorCode::Config, "config: step_size exceeds number of classes");

    std::vector<SeedOutcome> outcomes(cfg.seeds.size());
    unsigned threads = opts.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opts.threads;
    threads = std::min<unsigned>(threads, static_cast<unsigned>(cfg.seeds.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) outcomes[i] = run_seed(cfg, data, cfg.seeds[i], opts);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < cfg.seeds.size(); i = next++)
                    outcomes[i] = run_seed(cfg, data, cfg.seeds[i], opts);
            });
        for (auto& th : pool) th.join();
    }

    BenchmarkReport report;
    report.cil_method = to_string(cfg.cil.method);
    report.ood_method = to_string(cfg.ood);
    report.steps = static_cast<std::size_t>((num_classes + cfg.step_size - 1) / cfg.step_size);
    report.seeds = cfg.seeds;
    for (auto& o : outcomes) {
        if (o.failure) {
            report.failures.push_back(*o.failure);
            continue;
        }
        for (auto& r : o.records) report.records.push_back(std::move(r));
    }
    finalize_report(report);
    return report;
}

}  // namespace ocil
