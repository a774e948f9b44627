#include "sparseshare/report.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sparseshare/format.hpp"

namespace sparseshare {

namespace {

using nlohmann::ordered_json;

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

/// Unique file stem for result `i`; duplicate lambdas stay distinct.
std::string run_stem(std::size_t i, const RunResult& r) { return std::to_string(i) + "_" + r.run_id; }

struct Column {
    std::string task;
    MetricKind kind;
};

std::vector<Column> metric_columns(std::span<const RunResult> results) {
    std::vector<Column> cols;
    for (const auto& r : results) {
        for (const auto& m : r.metrics) {
            bool seen = false;
            for (const auto& c : cols) seen = seen || c.task == m.task;
            if (!seen) cols.push_back({m.task, m.kind});
        }
    }
    return cols;
}

ordered_json sparsity_json(const SparsityReport& s) {
    ordered_json layers = ordered_json::array();
    for (const auto& l : s.layers) layers.push_back({{"layer", l.layer}, {"total", l.total}, {"nonzero", l.nonzero}});
    return {{"epoch", s.epoch},
            {"group_sparsity_pct", s.group_sparsity_pct},
            {"param_sparsity_pct", s.param_sparsity_pct},
            {"groups", s.groups},
            {"zero_groups", s.zero_groups},
            {"scalars", s.scalars},
            {"zero_scalars", s.zero_scalars},
            {"layers", layers}};
}

SparsityReport sparsity_from(const ordered_json& j) {
    SparsityReport s;
    s.epoch = j.at("epoch");
    s.group_sparsity_pct = j.at("group_sparsity_pct");
    s.param_sparsity_pct = j.at("param_sparsity_pct");
    s.groups = j.at("groups");
    s.zero_groups = j.at("zero_groups");
    s.scalars = j.at("scalars");
    s.zero_scalars = j.at("zero_scalars");
    for (const auto& l : j.at("layers")) s.layers.push_back({l.at("layer"), l.at("total"), l.at("nonzero")});
    return s;
}

ordered_json metrics_json(const std::vector<MetricRecord>& ms) {
    ordered_json a = ordered_json::array();
    for (const auto& m : ms) {
        a.push_back({{"task", m.task}, {"metric", metric_name(m.kind)}, {"value", m.value}, {"split", m.split},
                     {"epoch", m.epoch}});
    }
    return a;
}

MetricKind metric_from_name(const std::string& s) {
    for (MetricKind k : {MetricKind::iou, MetricKind::cosine_similarity, MetricKind::mae, MetricKind::accuracy}) {
        if (s == metric_name(k)) return k;
    }
    throw std::runtime_error("report: unknown metric " + s);
}

std::vector<MetricRecord> metrics_from(const ordered_json& a) {
    std::vector<MetricRecord> out;
    for (const auto& m : a) {
        out.push_back({m.at("task"), metric_from_name(m.at("metric")), m.at("value"), m.at("split"), m.at("epoch")});
    }
    return out;
}

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

}  // namespace

std::string summary_csv(std::span<const RunResult> results) {
    const auto cols = metric_columns(results);
    std::ostringstream os;
    os << "experiment,scheme,lambda";
    for (const auto& c : cols) os << ',' << c.task << '_' << metric_name(c.kind) << "_mean," << c.task << '_'
                                  << metric_name(c.kind) << "_std";
    os << ",group_sparsity_pct,param_sparsity_pct,seeds_ok\n";
    for (const auto& r : results) {
        os << r.config.experiment << ',' << scheme_name(r.config.scheme) << ',' << format_number(r.config.lambda);
        for (const auto& c : cols) {
            const MetricSummary* m = nullptr;
            for (const auto& x : r.metrics) {
                if (x.task == c.task) m = &x;
            }
            if (m && r.seeds_ok > 0) {
                os << ',' << format_number(m->test_mean) << ',' << opt_number(m->test_std);
            } else {
                os << ",,";
            }
        }
        os << ',' << format_number(r.group_sparsity_pct) << ',' << format_number(r.param_sparsity_pct) << ','
           << r.seeds_ok << '\n';
    }
    return os.str();
}

std::string timing_csv(std::span<const RunResult> results) {
    std::ostringstream os;
    os << "experiment,seed,model,lambda,group_sparsity_pct,batch,mean_ms,std_ms,median_ms,speedup_vs_dense,params,"
          "macs_per_image\n";
    for (const auto& r : results) {
        for (const auto& s : r.seeds) {
            for (const auto& t : s.timing) {
                os << r.config.experiment << ',' << s.seed << ',' << t.model << ',' << format_number(t.lambda) << ','
                   << format_number(t.group_sparsity_pct) << ',' << shape_str(t.batch_shape) << ','
                   << format_number(t.mean_ms) << ',' << format_number(t.std_ms) << ','
                   << format_number(t.median_ms) << ',' << format_number(t.speedup_vs_dense) << ',' << t.params
                   << ',' << t.macs << '\n';
            }
        }
    }
    return os.str();
}

std::string report_json(std::span<const RunResult> results) {
    ordered_json runs = ordered_json::array();
    for (const auto& r : results) {
        ordered_json seeds = ordered_json::array();
        for (const auto& s : r.seeds) {
            ordered_json profile = ordered_json::array();
            for (const auto& p : s.profile) profile.push_back(sparsity_json(p));
            ordered_json epochs = ordered_json::array();
            for (const auto& e : s.epochs) {
                epochs.push_back({{"epoch", e.epoch},
                                  {"combined_loss", e.combined_loss},
                                  {"task_loss", e.task_loss},
                                  {"penalty", e.penalty},
                                  {"eta", e.eta}});
            }
            ordered_json timing = ordered_json::array();
            for (const auto& t : s.timing) {
                timing.push_back({{"model", t.model},
                                  {"lambda", t.lambda},
                                  {"group_sparsity_pct", t.group_sparsity_pct},
                                  {"batch_shape", t.batch_shape},
                                  {"mean_ms", t.mean_ms},
                                  {"std_ms", t.std_ms},
                                  {"median_ms", t.median_ms},
                                  {"speedup_vs_dense", t.speedup_vs_dense},
                                  {"params", t.params},
                                  {"macs", t.macs}});
            }
            seeds.push_back({{"seed", s.seed},
                             {"ok", s.ok},
                             {"error", s.error},
                             {"val", metrics_json(s.val)},
                             {"test", metrics_json(s.test)},
                             {"final_sparsity", sparsity_json(s.final_sparsity)},
                             {"profile", profile},
                             {"epochs", epochs},
                             {"timing", timing}});
        }
        ordered_json metrics = ordered_json::array();
        for (const auto& m : r.metrics) {
            metrics.push_back({{"task", m.task},
                               {"metric", metric_name(m.kind)},
                               {"val_mean", m.val_mean},
                               {"val_std", opt_json(m.val_std)},
                               {"test_mean", m.test_mean},
                               {"test_std", opt_json(m.test_std)}});
        }
        runs.push_back({{"run_id", r.run_id},
                        {"config", canonical_config(r.config)},
                        {"out", r.config.out},
                        {"group_sparsity_pct", r.group_sparsity_pct},
                        {"param_sparsity_pct", r.param_sparsity_pct},
                        {"seeds_ok", r.seeds_ok},
                        {"metrics", metrics},
                        {"seeds", seeds}});
    }
    return ordered_json{{"format", "sparseshare-report"}, {"version", 1}, {"runs", runs}}.dump(2) + "\n";
}

std::vector<RunResult> parse_report_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("report.json: ") + e.what());
    }
    if (j.value("format", "") != "sparseshare-report") throw std::runtime_error("report.json: unrecognised format");
    std::vector<RunResult> out;
    try {
        for (const auto& rj : j.at("runs")) {
            RunResult r;
            r.run_id = rj.at("run_id");
            r.config = parse_config(rj.at("config").get<std::string>());
            r.config.out = rj.at("out");
            for (const auto& sj : rj.at("seeds")) {
                SeedResult s;
                s.seed = sj.at("seed");
                s.ok = sj.at("ok");
                s.error = sj.at("error");
                s.val = metrics_from(sj.at("val"));
                s.test = metrics_from(sj.at("test"));
                s.final_sparsity = sparsity_from(sj.at("final_sparsity"));
                for (const auto& p : sj.at("profile")) s.profile.push_back(sparsity_from(p));
                for (const auto& e : sj.at("epochs")) {
                    s.epochs.push_back({e.at("epoch"), e.at("combined_loss"), e.at("task_loss"), e.at("penalty"),
                                        e.at("eta")});
                }
                for (const auto& t : sj.at("timing")) {
                    TimingRow row;
                    row.model = t.at("model");
                    row.lambda = t.at("lambda");
                    row.group_sparsity_pct = t.at("group_sparsity_pct");
                    row.batch_shape = t.at("batch_shape").get<Shape>();
                    row.mean_ms = t.at("mean_ms");
                    row.std_ms = t.at("std_ms");
                    row.median_ms = t.at("median_ms");
                    row.speedup_vs_dense = t.at("speedup_vs_dense");
                    row.params = t.at("params");
                    row.macs = t.at("macs");
                    s.timing.push_back(std::move(row));
                }
                r.seeds.push_back(std::move(s));
            }
            aggregate(r);
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("report.json: ") + e.what());
    }
    return out;
}

std::vector<RunResult> load_report(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_report_json(ss.str());
}

void emit_report(std::span<const RunResult> results, const std::string& out_dir) {
    if (results.empty()) throw std::invalid_argument("emit_report: no results");
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    write_file(dir / "summary.csv", summary_csv(results));
    write_file(dir / "timing.csv", timing_csv(results));
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto stem = run_stem(i, results[i]);
        for (const auto& s : results[i].seeds) {
            const std::string tag = stem + "_seed" + std::to_string(s.seed) + ".csv";
            std::ostringstream prof, layers;
            write_profile_csv(prof, s.profile);
            write_layers_csv(layers, s.final_sparsity);
            write_file(dir / ("profile_" + tag), prof.str());
            write_file(dir / ("layers_" + tag), layers.str());
        }
    }
    write_file(dir / "report.json", report_json(results));
}

void emit_comparison(const Comparison& cmp, const std::string& out_dir) {
    const RunResult both[] = {cmp.structured, cmp.unstructured};
    emit_report(both, out_dir);
    std::ostringstream os;
    os << "scheme,lambda,param_sparsity_pct,group_sparsity_pct,matched,iterations\n";
    for (const RunResult& r : both) {
        os << scheme_name(r.config.scheme) << ',' << format_number(r.config.lambda) << ','
           << format_number(r.param_sparsity_pct) << ',' << format_number(r.group_sparsity_pct) << ','
           << (cmp.matched ? "true" : "false") << ',' << cmp.iterations << '\n';
    }
    write_file(std::filesystem::path(out_dir) / "compare.csv", os.str());
}

}  // namespace sparseshare
