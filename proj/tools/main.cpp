// sparseshare: train, sweep and compare group-sparse multi-task models.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "sparseshare/config.hpp"
#include "sparseshare/format.hpp"
#include "sparseshare/harness.hpp"
#include "sparseshare/report.hpp"

namespace ss = sparseshare;

namespace {

void log_run(const ss::RunResult& r) {
    std::fprintf(stderr, "[%s] lambda=%s seeds_ok=%zu/%zu group_sparsity=%s%% param_sparsity=%s%% (%.1fs)\n",
                 r.config.experiment.c_str(), ss::format_number(r.config.lambda).c_str(), r.seeds_ok,
                 r.seeds.size(), ss::format_number(r.group_sparsity_pct).c_str(),
                 ss::format_number(r.param_sparsity_pct).c_str(), r.wall_seconds);
    for (const auto& m : r.metrics) {
        std::fprintf(stderr, "    %s %s val=%s test=%s\n", m.task.c_str(), ss::metric_name(m.kind),
                     ss::format_number(m.val_mean).c_str(), ss::format_number(m.test_mean).c_str());
    }
    for (const auto& s : r.seeds) {
        if (!s.ok) std::fprintf(stderr, "    seed %llu failed: %s\n", static_cast<unsigned long long>(s.seed), s.error.c_str());
    }
}

template <typename T>
void bench_checkpoint(const ss::ExperimentConfig& config, const std::string& checkpoint) {
    auto data = std::make_shared<const ss::Splits>(ss::make_splits(config.dataset));
    ss::SeedSession<T> session(config, config.seed, data);
    session.load(checkpoint);
    const auto& model = session.state().model;
    const ss::Shape shape{config.bench_batch, 3, config.dataset.height, config.dataset.width};
    const auto plan = ss::plan_compaction(model, session.state().channels, shape[2], shape[3]);
    const auto compact = ss::apply_compaction(model, plan);
    const auto dense = ss::benchmark_backbone(model, shape, config.bench_warmup, config.bench_reps);
    const auto comp = ss::benchmark_backbone(compact, shape, config.bench_warmup, config.bench_reps);
    std::printf("model,mean_ms,std_ms,median_ms,params,macs_per_image,speedup_vs_dense\n");
    std::printf("dense,%s,%s,%s,%zu,%llu,1\n", ss::format_number(dense.mean_ms).c_str(),
                ss::format_number(dense.std_ms).c_str(), ss::format_number(dense.median_ms).c_str(),
                plan.dense_params, static_cast<unsigned long long>(plan.dense_macs));
    std::printf("compact,%s,%s,%s,%zu,%llu,%s\n", ss::format_number(comp.mean_ms).c_str(),
                ss::format_number(comp.std_ms).c_str(), ss::format_number(comp.median_ms).c_str(),
                compact.param_count(), static_cast<unsigned long long>(plan.compact_macs),
                ss::format_number(dense.mean_ms / comp.mean_ms).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group-sparse multi-task training on synthetic scenes"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "Config file (key = value lines)");
    std::map<std::string, std::string> overrides;
    for (const auto& key : ss::config_keys()) {
        app.add_option_function<std::string>(
               "--" + key, [key, &overrides](const std::string& v) { overrides[key] = v; },
               "Override config key '" + key + "'")
            ->type_name("VALUE");
    }

    auto* train = app.add_subcommand("train", "Train every seed at the configured lambda");
    auto* sweep = app.add_subcommand("sweep", "Train across lambda_grid");
    auto* compare = app.add_subcommand("compare", "Structured vs unstructured at matched parameter sparsity");
    auto* bench = app.add_subcommand("bench", "Benchmark dense vs compacted backbone");
    std::string checkpoint;
    bench->add_option("--checkpoint", checkpoint, "Benchmark this checkpoint instead of training");
    auto* report = app.add_subcommand("report", "Re-emit report files from a report.json");
    std::string report_from;
    report->add_option("--from", report_from, "Path to report.json")->required();
    auto* dataset = app.add_subcommand("dataset", "Dataset utilities");
    auto* dexport = dataset->add_subcommand("export", "Write the generated dataset to a container file");
    std::string export_path;
    dexport->add_option("path", export_path, "Output file")->required();
    dataset->require_subcommand(1);

    CLI11_PARSE(app, argc, argv);

    try {
        ss::ExperimentConfig config;
        if (!config_path.empty()) config = ss::load_config(config_path);
        for (const auto& [k, v] : overrides) ss::set_config_value(config, k, v);
        config.validate();
        const std::string out = ss::output_root(config.out);

        if (*train) {
            const auto r = ss::run_experiment(config);
            log_run(r);
            ss::emit_report(std::span(&r, 1), out);
        } else if (*sweep) {
            const auto rs = ss::sweep_lambda(config, config.lambda_grid, log_run);
            ss::emit_report(rs, out);
        } else if (*compare) {
            const auto cmp = ss::compare_structured_unstructured(config, log_run);
            ss::emit_comparison(cmp, out);
            if (!cmp.matched) std::fprintf(stderr, "warning: parameter sparsity not matched within tolerance\n");
        } else if (*bench) {
            if (checkpoint.empty()) {
                config.benchmark = true;
                const auto r = ss::run_experiment(config);
                log_run(r);
                ss::emit_report(std::span(&r, 1), out);
            } else {
                if (config.precision == "f64")
                    bench_checkpoint<double>(config, checkpoint);
                else
                    bench_checkpoint<float>(config, checkpoint);
            }
        } else if (*report) {
            const auto rs = ss::load_report(report_from);
            ss::emit_report(rs, out);
        } else if (*dexport) {
            ss::export_dataset(export_path, ss::make_splits(config.dataset), config.dataset);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
