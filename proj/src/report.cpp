#include "ocil/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ocil/error.hpp"

namespace ocil {

namespace {

struct Acc {
    double acc = 0.0, auroc = 0.0, fpr95 = 0.0, ap = 0.0;
    std::size_t n = 0;

    void add(const StepRecord& r) {
        acc += r.acc;
        auroc += r.auroc;
        fpr95 += r.fpr95;
        ap += r.ap;
        ++n;
    }
    MetricMeans mean() const {
        if (n == 0) return {};
        const double k = static_cast<double>(n);
        return {acc / k, auroc / k, fpr95 / k, ap / k};
    }
};

MetricMeans mean_of(const std::vector<MetricMeans>& v) {
    MetricMeans m;
    if (v.empty()) return m;
    for (const auto& x : v) {
        m.acc += x.acc;
        m.auroc += x.auroc;
        m.fpr95 += x.fpr95;
        m.ap += x.ap;
    }
    const double k = static_cast<double>(v.size());
    return {m.acc / k, m.auroc / k, m.fpr95 / k, m.ap / k};
}

// Averages per step first, then over the steps that have records.
MetricMeans over_step_mean(const std::vector<StepRecord>& records, std::size_t steps, auto keep) {
    std::vector<Acc> per(steps);
    for (const auto& r : records)
        if (keep(r) && r.step >= 1 && r.step <= steps) per[r.step - 1].add(r);
    std::vector<MetricMeans> means;
    for (const auto& a : per)
        if (a.n > 0) means.push_back(a.mean());
    return mean_of(means);
}

MeanSpread mean_spread(const std::vector<double>& v) {
    MeanSpread out;
    if (v.empty()) return out;
    for (double x : v) out.mean += x;
    out.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.spread = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

std::string pct_spread(const MeanSpread& m) { return pct(m.mean) + " ± " + pct(m.spread); }

void metric_to_json(nlohmann::json& j, const MetricMeans& m) {
    j = {{"acc", m.acc}, {"auroc", m.auroc}, {"fpr95", m.fpr95}, {"ap", m.ap}};
}

MetricMeans metric_from_json(const nlohmann::json& j) {
    return {j.at("acc").get<double>(), j.at("auroc").get<double>(), j.at("fpr95").get<double>(),
            j.at("ap").get<double>()};
}

nlohmann::json spread_json(const MeanSpread& m) { return {{"mean", m.mean}, {"spread", m.spread}}; }

MeanSpread spread_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("spread").get<double>()};
}

}  // namespace

Aggregates compute_aggregates(const std::vector<StepRecord>& records, std::size_t steps) {
    Aggregates a;
    std::vector<Acc> per(steps);
    for (const auto& r : records)
        if (r.step >= 1 && r.step <= steps) per[r.step - 1].add(r);
    for (const auto& p : per) a.per_step.push_back(p.mean());
    a.over_steps = over_step_mean(records, steps, [](const StepRecord&) { return true; });
    a.near = over_step_mean(records, steps, [](const StepRecord& r) { return r.tag == OodTag::near; });
    a.far = over_step_mean(records, steps, [](const StepRecord& r) { return r.tag == OodTag::far; });

    std::set<std::uint64_t> seeds;
    for (const auto& r : records) seeds.insert(r.seed);
    std::vector<double> acc, auroc, fpr, ap;
    for (std::uint64_t s : seeds) {
        const auto m = over_step_mean(records, steps, [s](const StepRecord& r) { return r.seed == s; });
        acc.push_back(m.acc);
        auroc.push_back(m.auroc);
        fpr.push_back(m.fpr95);
        ap.push_back(m.ap);
    }
    a.seed_acc = mean_spread(acc);
    a.seed_auroc = mean_spread(auroc);
    a.seed_fpr95 = mean_spread(fpr);
    a.seed_ap = mean_spread(ap);
    a.effective_seeds = seeds.size();
    return a;
}

double aggregate_distance(const Aggregates& a, const Aggregates& b) {
    double d = 0.0;
    auto upd = [&d](const MetricMeans& x, const MetricMeans& y) {
        d = std::max({d, std::abs(x.acc - y.acc), std::abs(x.auroc - y.auroc), std::abs(x.fpr95 - y.fpr95),
                      std::abs(x.ap - y.ap)});
    };
    auto upd_s = [&d](const MeanSpread& x, const MeanSpread& y) {
        d = std::max({d, std::abs(x.mean - y.mean), std::abs(x.spread - y.spread)});
    };
    if (a.per_step.size() != b.per_step.size() || a.effective_seeds != b.effective_seeds)
        return std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.per_step.size(); ++i) upd(a.per_step[i], b.per_step[i]);
    upd(a.over_steps, b.over_steps);
    upd(a.near, b.near);
    upd(a.far, b.far);
    upd_s(a.seed_acc, b.seed_acc);
    upd_s(a.seed_auroc, b.seed_auroc);
    upd_s(a.seed_fpr95, b.seed_fpr95);
    upd_s(a.seed_ap, b.seed_ap);
    return d;
}

void finalize_report(BenchmarkReport& r) {
    r.aggregates = compute_aggregates(r.records, r.steps);
    r.consistency_max_abs_diff = aggregate_distance(r.aggregates, compute_aggregates(r.records, r.steps));
    r.consistent = r.consistency_max_abs_diff <= 1e-12;
}

void to_json(nlohmann::json& j, const BenchmarkReport& r) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& x : r.records)
        records.push_back({{"seed", x.seed},
                           {"step", x.step},
                           {"dataset", x.dataset},
                           {"tag", to_string(x.tag)},
                           {"acc", x.acc},
                           {"auroc", x.auroc},
                           {"fpr95", x.fpr95},
                           {"ap", x.ap},
                           {"n_id_test", x.n_id_test},
                           {"n_ood_test", x.n_ood_test}});
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : r.failures)
        failures.push_back({{"seed", f.seed}, {"step", f.step}, {"code", f.code}, {"message", f.message}});
    const auto& a = r.aggregates;
    nlohmann::json per_step = nlohmann::json::array();
    for (const auto& m : a.per_step) {
        nlohmann::json e;
        metric_to_json(e, m);
        per_step.push_back(e);
    }
    nlohmann::json over, near, far;
    metric_to_json(over, a.over_steps);
    metric_to_json(near, a.near);
    metric_to_json(far, a.far);
    j = {{"cil_method", r.cil_method},
         {"ood_method", r.ood_method},
         {"steps", r.steps},
         {"seeds", r.seeds},
         {"records", records},
         {"failures", failures},
         {"aggregates",
          {{"per_step", per_step},
           {"over_steps", over},
           {"near", near},
           {"far", far},
           {"seed_acc", spread_json(a.seed_acc)},
           {"seed_auroc", spread_json(a.seed_auroc)},
           {"seed_fpr95", spread_json(a.seed_fpr95)},
           {"seed_ap", spread_json(a.seed_ap)},
           {"effective_seeds", a.effective_seeds}}},
         {"self_consistency", {{"max_abs_diff", r.consistency_max_abs_diff}, {"consistent", r.consistent}}}};
}

void from_json(const nlohmann::json& j, BenchmarkReport& r) {
    r.cil_method = j.at("cil_method").get<std::string>();
    r.ood_method = j.at("ood_method").get<std::string>();
    r.steps = j.at("steps").get<std::size_t>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.records.clear();
    for (const auto& x : j.at("records"))
        r.records.push_back({x.at("seed").get<std::uint64_t>(), x.at("step").get<std::size_t>(),
                             x.at("dataset").get<std::string>(), parse_ood_tag(x.at("tag").get<std::string>()),
                             x.at("acc").get<double>(), x.at("auroc").get<double>(), x.at("fpr95").get<double>(),
                             x.at("ap").get<double>(), x.at("n_id_test").get<std::size_t>(),
                             x.at("n_ood_test").get<std::size_t>()});
    r.failures.clear();
    for (const auto& f : j.at("failures"))
        r.failures.push_back({f.at("seed").get<std::uint64_t>(), f.at("step").get<std::size_t>(),
                              f.at("code").get<std::string>(), f.at("message").get<std::string>()});
    const auto& a = j.at("aggregates");
    r.aggregates.per_step.clear();
    for (const auto& m : a.at("per_step")) r.aggregates.per_step.push_back(metric_from_json(m));
    r.aggregates.over_steps = metric_from_json(a.at("over_steps"));
    r.aggregates.near = metric_from_json(a.at("near"));
    r.aggregates.far = metric_from_json(a.at("far"));
    r.aggregates.seed_acc = spread_from_json(a.at("seed_acc"));
    r.aggregates.seed_auroc = spread_from_json(a.at("seed_auroc"));
    r.aggregates.seed_fpr95 = spread_from_json(a.at("seed_fpr95"));
    r.aggregates.seed_ap = spread_from_json(a.at("seed_ap"));
    r.aggregates.effective_seeds = a.at("effective_seeds").get<std::size_t>();
    const auto& sc = j.at("self_consistency");
    r.consistency_max_abs_diff = sc.at("max_abs_diff").get<double>();
    r.consistent = sc.at("consistent").get<bool>();
}

std::string report_json(const BenchmarkReport& r) {
    nlohmann::json j = r;
    return j.dump(2) + "\n";
}

std::string report_csv(const BenchmarkReport& r) {
    std::ostringstream os;
    os << "seed,step,dataset,tag,acc,auroc,fpr95,ap,n_id_test,n_ood_test\n";
    for (const auto& x : r.records)
        os << x.seed << ',' << x.step << ',' << x.dataset << ',' << to_string(x.tag) << ',' << num(x.acc) << ','
           << num(x.auroc) << ',' << num(x.fpr95) << ',' << num(x.ap) << ',' << x.n_id_test << ','
           << x.n_ood_test << '\n';
    return os.str();
}

std::string report_markdown(const BenchmarkReport& r) {
    const auto& a = r.aggregates;
    std::ostringstream os;
    os << "# Benchmark report\n\n";
    os << "CIL method: `" << r.cil_method << "`, OOD method: `" << r.ood_method << "`, effective seeds: "
       << a.effective_seeds << " of " << r.seeds.size() << ".\n\n";

    os << "## Summary\n\n";
    os << "| Method | " << r.cil_method << " AUC | " << r.cil_method << " FPR | " << r.cil_method << " AP | "
       << r.cil_method << " ACC |\n";
    os << "|---|---|---|---|---|\n";
    os << "| " << r.ood_method << " | " << pct(a.over_steps.auroc) << " | " << pct(a.over_steps.fpr95) << " | "
       << pct(a.over_steps.ap) << " | " << pct(a.over_steps.acc) << " |\n\n";

    os << "| Split | AUC | FPR | AP |\n|---|---|---|---|\n";
    os << "| near | " << pct(a.near.auroc) << " | " << pct(a.near.fpr95) << " | " << pct(a.near.ap) << " |\n";
    os << "| far | " << pct(a.far.auroc) << " | " << pct(a.far.fpr95) << " | " << pct(a.far.ap) << " |\n\n";

    os << "| Seed mean ± spread | ACC | AUC | FPR | AP |\n|---|---|---|---|---|\n";
    os << "| all seeds | " << pct_spread(a.seed_acc) << " | " << pct_spread(a.seed_auroc) << " | "
       << pct_spread(a.seed_fpr95) << " | " << pct_spread(a.seed_ap) << " |\n\n";

    os << "## Per step\n\n";
    os << "| Step | ACC | AUC | FPR | AP |\n|---|---|---|---|---|\n";
    for (std::size_t t = 0; t < a.per_step.size(); ++t) {
        const auto& m = a.per_step[t];
        os << "| " << t + 1 << " | " << pct(m.acc) << " | " << pct(m.auroc) << " | " << pct(m.fpr95) << " | "
           << pct(m.ap) << " |\n";
    }
    if (!r.failures.empty()) {
        os << "\n## Failed seeds\n\n| Seed | Step | Code | Message |\n|---|---|---|---|\n";
        for (const auto& f : r.failures)
            os << "| " << f.seed << " | " << f.step << " | " << f.code << " | " << f.message << " |\n";
    }
    return os.str();
}

BenchmarkReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::FileNotFound, "cannot open report '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
        return j.get<BenchmarkReport>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, "report '" + path.string() + "': " + e.what());
    }
}

ReportFormat parse_report_format(const std::string& s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    if (s == "md" || s == "markdown") return ReportFormat::markdown;
    fail(ErrorCode::Config, "unknown report format '" + s + "'");
}

std::string render_report(const BenchmarkReport& r, ReportFormat f) {
    switch (f) {
        case ReportFormat::json: return report_json(r);
        case ReportFormat::csv: return report_csv(r);
        case ReportFormat::markdown: return report_markdown(r);
    }
    return {};
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << text;
    out.flush();
    require(out.good(), ErrorCode::Io, "write failed for '" + path.string() + "'");
}

}  // namespace

void emit_report(const BenchmarkReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorCode::Io, "cannot create output directory '" + dir.string() + "'");
    write_text(dir / "report.json", report_json(r));
    write_text(dir / "report.csv", report_csv(r));
    write_text(dir / "report.md", report_markdown(r));
}

}  // namespace ocil
