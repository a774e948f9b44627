#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sparseshare/harness.hpp"
#include "sparseshare/report.hpp"

using namespace sparseshare;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& precision = "f64") {
    ExperimentConfig c;
    c.experiment = "tiny";
    c.tasks = {"segmentation", "depth"};
    c.dataset.samples = 20;
    c.dataset.height = c.dataset.width = 16;
    c.epochs = 2;
    c.seeds = 2;
    c.batch_size = 4;
    c.lr = 1e-3;
    c.lambda = 1e-3;
    c.precision = precision;
    return c;
}

/// Fresh scratch directory under the test working directory.
fs::path scratch(const std::string& name) {
    const fs::path p = fs::current_path() / ("harness_tmp_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << bytes;
}

void check_same_log(const EpochLog& a, const EpochLog& b) {
    CHECK(a.epoch == b.epoch);
    CHECK(a.combined_loss == b.combined_loss);
    CHECK(a.task_loss == b.task_loss);
    CHECK(a.penalty == b.penalty);
    CHECK(a.eta == b.eta);
}

template <typename T>
void check_same_params(const ParamRegistry<T>& a, const ParamRegistry<T>& b) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.at(i).name == b.at(i).name);
        CHECK(a.at(i).value == b.at(i).value);
    }
}

}  // namespace

TEST_CASE("container round trip is bitwise and rejects damage") {
    const auto dir = scratch("container");
    Container c;
    c.digest = 0x0123456789abcdefULL;
    c.sections[0].push_back(Record::from("a", Tensor<double>({2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7})));
    c.sections[1].push_back(Record::from("b", Tensor<float>({4}, {1.5f, 2, 3, 4})));
    c.sections[2].push_back(Record::from("scalar", Tensor<double>::scalar(42)));
    const auto path = (dir / "c.gspr").string();
    write_container(path, c);
    const Container back = read_container(path);
    CHECK(back.digest == c.digest);
    for (std::size_t s = 0; s < 3; ++s) {
        REQUIRE(back.sections[s].size() == c.sections[s].size());
        for (std::size_t i = 0; i < c.sections[s].size(); ++i) {
            CHECK(back.sections[s][i].name == c.sections[s][i].name);
            CHECK(back.sections[s][i].dtype == c.sections[s][i].dtype);
            CHECK(back.sections[s][i].shape == c.sections[s][i].shape);
            CHECK(back.sections[s][i].bytes == c.sections[s][i].bytes);
        }
    }
    CHECK(back.get(0, "a").as<double>() == c.sections[0][0].as<double>());
    CHECK_THROWS_AS(back.get(1, "b").as<double>(), CheckpointError);
    CHECK_THROWS_AS(back.get(1, "missing"), CheckpointError);
    CHECK(back.find(0, "b") == nullptr);

    const std::string bytes = slurp(path);
    CHECK(bytes.substr(0, 4) == "GSPR");
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
        spit(dir / "t.gspr", bytes.substr(0, cut));
        CHECK_THROWS_AS(read_container((dir / "t.gspr").string()), CheckpointError);
    }
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    spit(dir / "m.gspr", bad_magic);
    CHECK_THROWS_AS(read_container((dir / "m.gspr").string()), CheckpointError);
    std::string bad_version = bytes;
    bad_version[4] = static_cast<char>(kContainerVersion + 1);
    spit(dir / "v.gspr", bad_version);
    CHECK_THROWS_AS(read_container((dir / "v.gspr").string()), CheckpointError);
    CHECK_THROWS_AS(read_container((dir / "absent.gspr").string()), CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE_TEMPLATE("checkpoint resume matches uninterrupted training bitwise", T, float, double) {
    const auto dir = scratch(std::string("resume_") + (sizeof(T) == 4 ? "f32" : "f64"));
    auto cfg = tiny_config(sizeof(T) == 4 ? "f32" : "f64");
    cfg.prox_step = ProxStep::group_mean;
    const auto data = std::make_shared<const Splits>(make_splits(cfg.dataset));

    SeedSession<T> full(cfg, 3, data);
    std::vector<EpochLog> logs;
    for (int e = 0; e < 3; ++e) logs.push_back(full.run_epoch());

    SeedSession<T> first(cfg, 3, data);
    first.run_epoch();
    const auto path = (dir / "ckpt.gspr").string();
    first.save(path);

    SeedSession<T> resumed(cfg, 3, data);
    resumed.load(path);
    CHECK(resumed.epoch() == 1);
    check_same_params(resumed.state().model.params(), first.state().model.params());
    check_same_params(resumed.state().loss_weights, first.state().loss_weights);
    // Saving the restored session reproduces the file byte for byte.
    resumed.save((dir / "again.gspr").string());
    CHECK(slurp(path) == slurp(dir / "again.gspr"));

    check_same_log(resumed.run_epoch(), logs[1]);
    check_same_log(resumed.run_epoch(), logs[2]);
    check_same_params(resumed.state().model.params(), full.state().model.params());
    fs::remove_all(dir);
}

TEST_CASE("a failed load leaves the session untouched") {
    const auto dir = scratch("badload");
    const auto cfg = tiny_config();
    const auto data = std::make_shared<const Splits>(make_splits(cfg.dataset));
    SeedSession<double> a(cfg, 1, data);
    a.run_epoch();
    const auto path = (dir / "a.gspr").string();
    a.save(path);

    auto other = cfg;
    other.lambda = 2e-3;
    SeedSession<double> b(other, 1, data);
    b.run_epoch();
    const auto before = b.state().model.params();
    CHECK_THROWS_AS(b.load(path), CheckpointError);
    check_same_params(b.state().model.params(), before);
    CHECK(b.epoch() == 1);

    const std::string bytes = slurp(path);
    spit(dir / "cut.gspr", bytes.substr(0, bytes.size() / 2));
    SeedSession<double> c(cfg, 1, data);
    CHECK_THROWS_AS(c.load((dir / "cut.gspr").string()), CheckpointError);
    CHECK(c.epoch() == 0);

    SeedSession<float> wrong_dtype(cfg, 1, data);
    CHECK_THROWS_AS(wrong_dtype.load(path), CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE("same config and seed reproduce every reported number") {
    const auto cfg = tiny_config("f32");
    const auto a = run_experiment(cfg), b = run_experiment(cfg);
    CHECK(summary_csv(std::span(&a, 1)) == summary_csv(std::span(&b, 1)));
    CHECK(report_json(std::span(&a, 1)) == report_json(std::span(&b, 1)));
    REQUIRE(a.seeds.size() == 2);
    CHECK(a.seeds[0].seed == cfg.seed);
    CHECK(a.seeds[1].seed == cfg.seed + 1);
    CHECK(a.seeds[0].epochs.size() == cfg.epochs);
    CHECK(a.seeds[0].profile.size() == cfg.epochs);
    CHECK(a.seeds_ok == 2);
}

TEST_CASE("aggregation equals direct recomputation over successful seeds") {
    RunResult r;
    r.config = tiny_config();
    const double vals[3][2] = {{0.5, 0.1}, {0.7, 0.3}, {0.9, 0.2}};
    const double group[3] = {10, 20, 60};
    for (std::size_t s = 0; s < 4; ++s) {
        SeedResult sr;
        sr.seed = s;
        sr.ok = s < 3;
        if (sr.ok) {
            sr.final_sparsity.group_sparsity_pct = group[s];
            sr.final_sparsity.param_sparsity_pct = 2 * group[s];
            for (std::size_t t = 0; t < 2; ++t) {
                sr.val.push_back({r.config.tasks[t], MetricKind::iou, vals[s][t], "val", 2});
                sr.test.push_back({r.config.tasks[t], MetricKind::iou, vals[s][t] + 1, "test", 2});
            }
        } else {
            sr.error = "diverged";
        }
        r.seeds.push_back(sr);
    }
    aggregate(r);
    CHECK(r.seeds_ok == 3);
    CHECK(r.group_sparsity_pct == doctest::Approx(30.0).epsilon(1e-15));
    CHECK(r.param_sparsity_pct == doctest::Approx(60.0).epsilon(1e-15));
    REQUIRE(r.metrics.size() == 2);
    CHECK(r.metrics[0].task == "segmentation");
    CHECK(r.metrics[0].kind == MetricKind::iou);
    CHECK(r.metrics[1].kind == MetricKind::mae);
    CHECK(r.metrics[0].val_mean == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(*r.metrics[0].val_std == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(r.metrics[1].val_mean == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(*r.metrics[1].val_std == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(r.metrics[1].test_mean == doctest::Approx(1.2).epsilon(1e-15));

    r.seeds.resize(1);
    aggregate(r);
    CHECK(r.seeds_ok == 1);
    CHECK_FALSE(r.metrics[0].val_std.has_value());
}

TEST_CASE("reports re-emit byte identical and round trip through json") {
    auto cfg = tiny_config("f32");
    cfg.epochs = 1;
    const std::vector<double> grid{0.0, 1e-3, 1e-3};
    std::size_t observed = 0;
    const auto runs = sweep_lambda(cfg, grid, [&](const RunResult&) { ++observed; });
    CHECK(observed == grid.size());
    REQUIRE(runs.size() == grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(runs[i].config.lambda == grid[i]);

    const auto a = scratch("report_a"), b = scratch("report_b");
    emit_report(runs, a.string());
    emit_report(load_report((a / "report.json").string()), b.string());
    std::size_t files = 0, profiles = 0, layers = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++files;
        const auto name = e.path().filename().string();
        profiles += name.rfind("profile_", 0) == 0;
        layers += name.rfind("layers_", 0) == 0;
        CHECK(slurp(e.path()) == slurp(b / name));
    }
    CHECK(profiles == grid.size() * cfg.seeds);
    CHECK(layers == grid.size() * cfg.seeds);
    CHECK(files == profiles + layers + 3);

    // One header line plus one row per run.
    const std::string summary = slurp(a / "summary.csv");
    CHECK(std::count(summary.begin(), summary.end(), '\n') == static_cast<long>(grid.size() + 1));
    CHECK(summary.rfind("experiment,scheme,lambda,segmentation_iou_mean,segmentation_iou_std,depth_mae_mean,", 0) == 0);
    CHECK_THROWS(parse_report_json("{not json"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("a dense baseline reports zero sparsity") {
    auto cfg = tiny_config("f32");
    cfg.lambda = 0;
    cfg.epochs = 1;
    cfg.seeds = 1;
    const auto r = run_experiment(cfg);
    CHECK(r.group_sparsity_pct == 0.0);
    CHECK(r.param_sparsity_pct == 0.0);
    const std::string csv = summary_csv(std::span(&r, 1));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("a one-task run equals the same task driven directly") {
    auto cfg = tiny_config();
    cfg.tasks = {"depth"};
    cfg.seeds = 1;
    const auto data = std::make_shared<const Splits>(make_splits(cfg.dataset));
    const auto run = run_experiment(cfg, data);

    SeedSession<double> s(cfg, cfg.seed, data);
    for (std::size_t e = 0; e < cfg.epochs; ++e) check_same_log(s.run_epoch(), run.seeds[0].epochs[e]);
    CHECK(s.evaluate(data->test, "test")[0].value == run.seeds[0].test[0].value);

    // The depth head and backbone start identical inside a multi-task model.
    auto multi = cfg;
    multi.tasks = {"segmentation", "depth", "normals"};
    SeedSession<double> m(multi, cfg.seed, data);
    SeedSession<double> single(cfg, cfg.seed, data);
    for (const auto& e : single.state().model.params()) {
        const auto& other = m.state().model.params();
        CHECK(other.at(other.index_of(e.name)).value == e.value);
    }
}

TEST_CASE("a lambda above the full sparsity threshold zeroes every group in one epoch") {
    auto cfg = tiny_config();
    cfg.seeds = 1;
    cfg.epochs = 1;
    const auto data = std::make_shared<const Splits>(make_splits(cfg.dataset));
    SeedSession<double> probe(cfg, cfg.seed, data);
    cfg.lambda = full_sparsity_lambda(probe.state().model, probe.state().channels, cfg.lr);
    const auto r = run_experiment(cfg, data);
    CHECK(r.group_sparsity_pct == 100.0);
    CHECK(r.param_sparsity_pct == 100.0);
}

TEST_CASE("dataset export and import preserve training inputs") {
    const auto dir = scratch("dataset");
    DatasetConfig dc;
    dc.samples = 10;
    dc.height = dc.width = 16;
    dc.seed = 5;
    const Splits s = make_splits(dc);
    const auto path = (dir / "d.gspr").string();
    export_dataset(path, s, dc);
    const Splits back = import_dataset(path);
    auto same = [](const std::vector<SampleRecord>& x, const std::vector<SampleRecord>& y) {
        REQUIRE(x.size() == y.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(x[i].seed == y[i].seed);
            CHECK(x[i].image == y[i].image);
            CHECK(x[i].depth == y[i].depth);
            CHECK(x[i].normals == y[i].normals);
            CHECK(x[i].seg == y[i].seg);
            CHECK(x[i].labels == y[i].labels);
            CHECK(x[i].mean_luminance == y[i].mean_luminance);
        }
    };
    same(s.train, back.train);
    same(s.val, back.val);
    same(s.test, back.test);
    fs::remove_all(dir);
}

TEST_CASE("output root precedence") {
    CHECK(output_root("explicit") == "explicit");
    ::setenv("SPARSESHARE_OUT", "from_env", 1);
    CHECK(output_root("") == "from_env");
    ::unsetenv("SPARSESHARE_OUT");
    CHECK(output_root("") == "results");
}
