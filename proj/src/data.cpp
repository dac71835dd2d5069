#include "ocil/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ocil/error.hpp"
#include "ocil/simd/kernels.hpp"

namespace ocil {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary formats are read and written as little-endian");

// ---------------------------------------------------------------------------
// FeatureDataset

void FeatureDataset::validate() const {
    require(n > 0 && d > 0, ErrorCode::InvalidArgument, "dataset must have n > 0 and d > 0");
    require(features.size() == n * d, ErrorCode::DimensionMismatch, "feature matrix size != n * d");
    require(labels.size() == n, ErrorCode::DimensionMismatch, "label count != n");
    for (double x : features) require(std::isfinite(x), ErrorCode::NonFiniteFeature, "non-finite feature");
    for (int y : labels)
        require(y >= 0 && y < num_classes, ErrorCode::LabelOutOfRange, "label out of range");
    require(class_names.empty() || class_names.size() == static_cast<std::size_t>(num_classes),
            ErrorCode::InvalidArgument, "class_names must have num_classes entries");
}

FeatureDataset FeatureDataset::subset(std::span<const std::size_t> rows) const {
    FeatureDataset out;
    out.n = rows.size();
    out.d = d;
    out.num_classes = num_classes;
    out.class_names = class_names;
    out.features.reserve(rows.size() * d);
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) {
        require(r < n, ErrorCode::InvalidArgument, "subset: row index out of range");
        auto src = row(r);
        out.features.insert(out.features.end(), src.begin(), src.end());
        out.labels.push_back(labels[r]);
    }
    return out;
}

FeatureDataset FeatureDataset::filter_classes(std::span<const int> classes) const {
    const std::set<int> keep(classes.begin(), classes.end());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
        if (keep.count(labels[i])) rows.push_back(i);
    return subset(rows);
}

std::vector<std::size_t> FeatureDataset::rows_of_class(int c) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == c) rows.push_back(i);
    return rows;
}

void FeatureDataset::append(const FeatureDataset& other) {
    if (other.n == 0) return;
    if (n == 0 && d == 0) d = other.d;
    require(other.d == d, ErrorCode::DimensionMismatch, "append: dimension mismatch");
    features.insert(features.end(), other.features.begin(), other.features.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    n += other.n;
    num_classes = std::max(num_classes, other.num_classes);
}

// ---------------------------------------------------------------------------
// File formats

namespace {

constexpr char kDatasetMagic[4] = {'O', 'C', 'F', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
    return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

void finish_labels(FeatureDataset& ds, std::optional<int> num_classes) {
    int max_label = -1;
    for (int y : ds.labels) {
        if (y < 0) fail(ErrorCode::LabelOutOfRange, "negative label");
        max_label = std::max(max_label, y);
    }
    ds.num_classes = num_classes.value_or(max_label + 1);
    for (int y : ds.labels)
        if (y >= ds.num_classes)
            fail(ErrorCode::LabelOutOfRange,
                 "label " + std::to_string(y) + " >= num_classes " + std::to_string(ds.num_classes));
}

FeatureDataset load_binary(const fs::path& path, std::optional<int> num_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    char magic[4];
    std::uint32_t version = 0, n = 0, d = 0;
    if (!in.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0)
        fail(ErrorCode::MalformedHeader, "bad magic in " + path.string());
    if (!read_pod(in, version) || version != kDatasetVersion)
        fail(ErrorCode::MalformedHeader, "unsupported version in " + path.string());
    if (!read_pod(in, n) || !read_pod(in, d) || n == 0 || d == 0)
        fail(ErrorCode::MalformedHeader, "bad shape in " + path.string());

    const std::uint64_t expected = 16ULL + 4ULL * n * d + 4ULL * n;
    const auto actual = fs::file_size(path);
    if (actual != expected)
        fail(ErrorCode::DimensionMismatch,
             "file size " + std::to_string(actual) + " does not match header (expected " +
                 std::to_string(expected) + ") in " + path.string());

    FeatureDataset ds;
    ds.n = n;
    ds.d = d;
    std::vector<float> raw(static_cast<std::size_t>(n) * d);
    std::vector<std::int32_t> labels(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size() * 4));
    if (!in) fail(ErrorCode::Io, "short read in " + path.string());

    ds.features.assign(raw.begin(), raw.end());
    for (double x : ds.features)
        if (!std::isfinite(x)) fail(ErrorCode::NonFiniteFeature, "non-finite feature in " + path.string());
    ds.labels.assign(labels.begin(), labels.end());
    finish_labels(ds, num_classes);
    return ds;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

FeatureDataset load_csv(const fs::path& path, std::optional<int> num_classes) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    FeatureDataset ds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string_view> cells;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            cells.push_back(trim(rest.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (cells.size() < 2) fail(ErrorCode::MalformedHeader, "need >= 1 feature and a label at " + where);
        if (ds.n == 0) ds.d = cells.size() - 1;
        if (cells.size() - 1 != ds.d) fail(ErrorCode::DimensionMismatch, "column count changes at " + where);
        for (std::size_t j = 0; j < ds.d; ++j) {
            double v = 0.0;
            const auto cell = cells[j];
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size())
                fail(ErrorCode::MalformedHeader, "bad number '" + std::string(cell) + "' at " + where);
            if (!std::isfinite(v)) fail(ErrorCode::NonFiniteFeature, "non-finite feature at " + where);
            ds.features.push_back(v);
        }
        int y = 0;
        const auto cell = cells.back();
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
        if (ec != std::errc() || ptr != cell.data() + cell.size())
            fail(ErrorCode::MalformedHeader, "bad label '" + std::string(cell) + "' at " + where);
        ds.labels.push_back(y);
        ++ds.n;
    }
    if (ds.n == 0) fail(ErrorCode::MalformedHeader, "empty CSV " + path.string());
    finish_labels(ds, num_classes);
    return ds;
}

}  // namespace

FeatureDataset load_dataset(const fs::path& path, DataFormat format, std::optional<int> num_classes) {
    if (!fs::exists(path)) fail(ErrorCode::FileNotFound, "no such file: " + path.string());
    FeatureDataset ds = format == DataFormat::binary ? load_binary(path, num_classes)
                                                     : load_csv(path, num_classes);
    ds.validate();
    return ds;
}

void save_dataset(const FeatureDataset& ds, const fs::path& path, DataFormat format) {
    ds.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (format == DataFormat::binary) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
        out.write(kDatasetMagic, 4);
        write_pod(out, kDatasetVersion);
        write_pod(out, static_cast<std::uint32_t>(ds.n));
        write_pod(out, static_cast<std::uint32_t>(ds.d));
        for (double x : ds.features) write_pod(out, static_cast<float>(x));
        for (int y : ds.labels) write_pod(out, static_cast<std::int32_t>(y));
        if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    char buf[64];
    for (std::size_t i = 0; i < ds.n; ++i) {
        for (double x : ds.row(i)) {
            const auto res = std::to_chars(buf, buf + sizeof(buf), x);
            out.write(buf, res.ptr - buf);
            out.put(',');
        }
        out << ds.labels[i] << '\n';
    }
    if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Task stream

std::vector<int> TaskStream::seen_classes(std::size_t t) const {
    require(t >= 1 && t <= tasks.size(), ErrorCode::InvalidArgument, "step index out of range");
    std::vector<int> out;
    for (std::size_t i = 0; i < t; ++i) out.insert(out.end(), tasks[i].classes.begin(), tasks[i].classes.end());
    return out;
}

FeatureDataset TaskStream::test_union(std::size_t t) const {
    require(t >= 1 && t <= tasks.size(), ErrorCode::InvalidArgument, "step index out of range");
    FeatureDataset out;
    for (std::size_t i = 0; i < t; ++i) out.append(tasks[i].test);
    return out;
}

std::size_t TaskStream::task_of_class(int c) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (std::find(tasks[i].classes.begin(), tasks[i].classes.end(), c) != tasks[i].classes.end())
            return i;
    fail(ErrorCode::InvalidArgument, "class " + std::to_string(c) + " is not in the stream");
}

TaskStream split_tasks(const FeatureDataset& train, const FeatureDataset& test, int k,
                       std::span<const int> class_order) {
    const int num_classes = std::max(train.num_classes, test.num_classes);
    require(k >= 2, ErrorCode::InvalidArgument, "step size must be >= 2");
    require(k <= num_classes, ErrorCode::InvalidArgument, "step size exceeds number of classes");
    require(train.d == test.d, ErrorCode::DimensionMismatch, "train/test dimension mismatch");
    require(class_order.size() == static_cast<std::size_t>(num_classes), ErrorCode::InvalidArgument,
            "class order must list every class exactly once");
    std::vector<int> sorted(class_order.begin(), class_order.end());
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < num_classes; ++i)
        require(sorted[i] == i, ErrorCode::InvalidArgument, "class order is not a permutation");

    TaskStream stream;
    stream.step_size = k;
    for (int start = 0; start < num_classes; start += k) {
        const int end = std::min(start + k, num_classes);
        Task task;
        task.classes.assign(class_order.begin() + start, class_order.begin() + end);
        task.train = train.filter_classes(task.classes);
        task.test = test.filter_classes(task.classes);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

TaskStream split_tasks(const FeatureDataset& train, const FeatureDataset& test, int k, Rng& rng) {
    const int num_classes = std::max(train.num_classes, test.num_classes);
    std::vector<int> order(static_cast<std::size_t>(std::max(num_classes, 0)));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    return split_tasks(train, test, k, order);
}

// ---------------------------------------------------------------------------
// Replay memory

std::size_t MemoryBuffer::total() const noexcept {
    std::size_t s = 0;
    for (const auto& [c, rows] : entries) s += rows.size();
    return s;
}

FeatureDataset MemoryBuffer::materialize(const TaskStream& stream) const {
    FeatureDataset out;
    for (const auto& [c, rows] : entries) {
        const auto& train = stream.tasks[stream.task_of_class(c)].train;
        out.append(train.subset(rows));
    }
    if (out.n == 0 && !stream.tasks.empty()) out.d = stream.tasks.front().train.d;
    return out;
}

std::vector<std::size_t> herding_select(std::span<const double> x, std::size_t n, std::size_t d,
                                        std::size_t q) {
    require(q > 0, ErrorCode::InvalidArgument, "herding: q must be positive");
    require(q <= n, ErrorCode::InvalidArgument, "herding: q exceeds rows");
    require(x.size() == n * d, ErrorCode::DimensionMismatch, "herding: matrix size");

    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) simd::axpy(1.0, x.subspan(i * d, d), mu);
    for (double& m : mu) m /= static_cast<double>(n);

    std::vector<double> running(d, 0.0);
    std::vector<double> candidate(d);
    std::vector<char> taken(n, 0);
    std::vector<std::size_t> picked;
    picked.reserve(q);
    for (std::size_t s = 1; s <= q; ++s) {
        const double inv = 1.0 / static_cast<double>(s);
        std::size_t best = n;
        double best_dist = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            for (std::size_t j = 0; j < d; ++j) candidate[j] = (running[j] + x[i * d + j]) * inv;
            const double dist = simd::squared_l2(mu, candidate);
            if (best == n || dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        taken[best] = 1;
        picked.push_back(best);
        simd::axpy(1.0, x.subspan(best * d, d), running);
    }
    return picked;
}

MemoryBuffer rebalance_memory(const MemoryBuffer& mem, const TaskStream& stream, std::size_t t,
                              ExemplarStrategy strategy, Rng& rng, const FeatureMap& features) {
    require(t >= 1 && t <= stream.size(), ErrorCode::InvalidArgument, "rebalance: step out of range");
    const auto seen = stream.seen_classes(t);
    MemoryBuffer out;
    out.budget = mem.budget;
    const std::size_t quota = seen.empty() ? 0 : mem.budget / seen.size();
    if (quota == 0) return out;

    const auto& current = stream.task(t);
    for (int c : seen) {
        const bool is_new = std::find(current.classes.begin(), current.classes.end(), c) != current.classes.end();
        if (!is_new) {
            auto it = mem.entries.find(c);
            if (it == mem.entries.end()) continue;  // old data is gone
            std::vector<std::size_t> rows = it->second;
            if (rows.size() > quota) {
                if (strategy == ExemplarStrategy::herding) {
                    rows.resize(quota);
                } else {
                    Rng r = rng.substream("truncate", static_cast<std::uint64_t>(c));
                    auto perm = r.permutation(rows.size());
                    perm.resize(quota);
                    std::sort(perm.begin(), perm.end());
                    std::vector<std::size_t> kept;
                    for (std::size_t p : perm) kept.push_back(rows[p]);
                    rows = std::move(kept);
                }
            }
            out.entries[c] = std::move(rows);
            continue;
        }

        const auto rows = current.train.rows_of_class(c);
        require(!rows.empty(), ErrorCode::InvalidArgument, "rebalance: class has no training rows");
        const std::size_t q = std::min(quota, rows.size());
        std::vector<std::size_t> chosen;
        if (strategy == ExemplarStrategy::herding) {
            FeatureDataset cls = current.train.subset(rows);
            if (features) cls = features(cls);
            for (std::size_t idx : herding_select(cls.features, cls.n, cls.d, q)) chosen.push_back(rows[idx]);
        } else {
            Rng r = rng.substream("select", static_cast<std::uint64_t>(c));
            auto perm = r.permutation(rows.size());
            for (std::size_t i = 0; i < q; ++i) chosen.push_back(rows[perm[i]]);
        }
        out.entries[c] = std::move(chosen);
    }
    return out;
}

// ---------------------------------------------------------------------------
// OOD subsets and suites

std::size_t ood_subset_size(std::size_t n, std::size_t t, std::size_t total_steps) {
    require(total_steps >= 1 && t >= 1 && t <= total_steps, ErrorCode::InvalidArgument,
            "ood_subset: step out of range");
    return n * t / total_steps;
}

FeatureDataset ood_subset(const FeatureDataset& ood, std::size_t t, std::size_t total_steps, Rng rng) {
    const std::size_t m = ood_subset_size(ood.n, t, total_steps);
    auto perm = rng.permutation(ood.n);
    perm.resize(m);
    return ood.subset(perm);
}

void OodSuite::validate() const {
    std::set<std::string> names;
    for (const auto& s : sets) {
        require(!s.name.empty(), ErrorCode::InvalidArgument, "OOD set needs a name");
        require(names.insert(s.name).second, ErrorCode::InvalidArgument, "duplicate OOD set name");
        s.data.validate();
    }
}

std::string to_string(OodTag tag) { return tag == OodTag::near ? "near" : "far"; }

OodTag parse_ood_tag(const std::string& s) {
    if (s == "near") return OodTag::near;
    if (s == "far") return OodTag::far;
    fail(ErrorCode::Config, "OOD tag must be 'near' or 'far', got '" + s + "'");
}

std::string to_string(DataFormat f) { return f == DataFormat::binary ? "binary" : "csv"; }

DataFormat parse_data_format(const std::string& s) {
    if (s == "binary") return DataFormat::binary;
    if (s == "csv") return DataFormat::csv;
    fail(ErrorCode::Config, "format must be 'binary' or 'csv', got '" + s + "'");
}

SuiteManifest load_manifest(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorCode::FileNotFound, "no such manifest: " + path.string());
    std::ifstream in(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedHeader, "manifest " + path.string() + ": " + e.what());
    }
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return q.is_absolute() ? q : base / q;
    };
    SuiteManifest m;
    try {
        m.id_train = resolve(j.at("id_train").get<std::string>());
        m.id_test = resolve(j.at("id_test").get<std::string>());
        m.format = parse_data_format(j.value("format", std::string("binary")));
        if (j.contains("num_classes")) m.num_classes = j.at("num_classes").get<int>();
        for (const auto& e : j.at("ood")) {
            m.ood.push_back({e.at("name").get<std::string>(), resolve(e.at("path").get<std::string>()),
                             parse_ood_tag(e.at("tag").get<std::string>())});
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::MalformedHeader, "manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void save_manifest(const SuiteManifest& m, const fs::path& path) {
    const fs::path base = path.parent_path();
    const fs::path abs_base = fs::absolute(base.empty() ? fs::path(".") : base);
    auto rel = [&](const fs::path& p) {
        const fs::path r = fs::absolute(p).lexically_relative(abs_base);
        return r.empty() ? fs::absolute(p).generic_string() : r.generic_string();
    };
    json j;
    j["id_train"] = rel(m.id_train);
    j["id_test"] = rel(m.id_test);
    j["format"] = to_string(m.format);
    if (m.num_classes) j["num_classes"] = *m.num_classes;
    j["ood"] = json::array();
    for (const auto& e : m.ood) j["ood"].push_back({{"name", e.name}, {"path", rel(e.path)}, {"tag", to_string(e.tag)}});
    if (!base.empty()) fs::create_directories(base);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

BenchmarkData load_benchmark_data(const SuiteManifest& m) {
    BenchmarkData data;
    data.train = load_dataset(m.id_train, m.format, m.num_classes);
    data.test = load_dataset(m.id_test, m.format, m.num_classes);
    const int k = std::max(data.train.num_classes, data.test.num_classes);
    data.train.num_classes = data.test.num_classes = k;
    require(data.train.d == data.test.d, ErrorCode::DimensionMismatch, "ID train/test dimension mismatch");
    for (const auto& e : m.ood) {
        OodSet set{e.name, e.tag, load_dataset(e.path, m.format)};
        require(set.data.d == data.train.d, ErrorCode::DimensionMismatch, "OOD set dimension mismatch: " + e.name);
        data.ood.sets.push_back(std::move(set));
    }
    data.ood.validate();
    return data;
}

}  // namespace ocil
