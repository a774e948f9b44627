#include "sparseshare/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sparseshare/rng.hpp"

namespace sparseshare {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    while (true) {
        const auto p = s.find(',');
        const auto item = trim(s.substr(0, p));
        if (!item.empty()) out.push_back(item);
        if (p == std::string_view::npos) break;
        s.remove_prefix(p + 1);
    }
    return out;
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view want) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                      std::string(want));
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "a number");
    return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad(key, v, "a boolean");
}

std::string join(const std::vector<std::string>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
    return out;
}

struct Field {
    std::function<void(ExperimentConfig&, std::string_view, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
Field number_field(M ExperimentConfig::*member) {
    return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*member = to_double(k, v); },
            [member](const ExperimentConfig& c) { return exact_number(c.*member); }};
}

template <class M>
Field uint_field(M ExperimentConfig::*member) {
    return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) {
                c.*member = static_cast<M>(to_uint(k, v));
            },
            [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field bool_field(bool ExperimentConfig::*member) {
    return {[member](ExperimentConfig& c, std::string_view k, std::string_view v) { c.*member = to_bool(k, v); },
            [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field string_field(std::string ExperimentConfig::*member) {
    return {[member](ExperimentConfig& c, std::string_view, std::string_view v) { c.*member = std::string(v); },
            [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> t;
        t.emplace_back("experiment", string_field(&ExperimentConfig::experiment));
        t.emplace_back("tasks", Field{[](ExperimentConfig& c, std::string_view, std::string_view v) {
                                          c.tasks.clear();
                                          for (auto x : split_list(v)) c.tasks.emplace_back(x);
                                      },
                                      [](const ExperimentConfig& c) { return join(c.tasks); }});
        t.emplace_back("scheme", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                           try {
                                               c.scheme = parse_scheme(v);
                                           } catch (const std::invalid_argument&) {
                                               bad(k, v, "channel_wise or singleton_l1");
                                           }
                                       },
                                       [](const ExperimentConfig& c) { return std::string(scheme_name(c.scheme)); }});
        t.emplace_back("lambda", number_field(&ExperimentConfig::lambda));
        t.emplace_back("lambda_grid", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                                c.lambda_grid.clear();
                                                for (auto x : split_list(v)) c.lambda_grid.push_back(to_double(k, x));
                                            },
                                            [](const ExperimentConfig& c) {
                                                std::vector<std::string> xs;
                                                for (double x : c.lambda_grid) xs.push_back(exact_number(x));
                                                return join(xs);
                                            }});
        t.emplace_back("seeds", uint_field(&ExperimentConfig::seeds));
        t.emplace_back("seed", uint_field(&ExperimentConfig::seed));
        t.emplace_back("epochs", uint_field(&ExperimentConfig::epochs));
        t.emplace_back("batch_size", uint_field(&ExperimentConfig::batch_size));
        t.emplace_back("lr", number_field(&ExperimentConfig::lr));
        t.emplace_back("optimizer", string_field(&ExperimentConfig::optimizer));
        t.emplace_back("prox_step", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                              try {
                                                  c.prox_step = parse_prox_step(v);
                                              } catch (const std::invalid_argument&) {
                                                  bad(k, v, "base_lr or group_mean");
                                              }
                                          },
                                          [](const ExperimentConfig& c) {
                                              return std::string(prox_step_name(c.prox_step));
                                          }});
        t.emplace_back("freeze_eta", bool_field(&ExperimentConfig::freeze_eta));
        t.emplace_back("precision", string_field(&ExperimentConfig::precision));
        t.emplace_back("samples", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                            c.dataset.samples = to_uint(k, v);
                                        },
                                        [](const ExperimentConfig& c) { return std::to_string(c.dataset.samples); }});
        t.emplace_back("image_size", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                               c.dataset.height = c.dataset.width = to_uint(k, v);
                                           },
                                           [](const ExperimentConfig& c) {
                                               return std::to_string(c.dataset.height);
                                           }});
        t.emplace_back("min_primitives", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                                   c.dataset.min_primitives = to_uint(k, v);
                                               },
                                               [](const ExperimentConfig& c) {
                                                   return std::to_string(c.dataset.min_primitives);
                                               }});
        t.emplace_back("max_primitives", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                                   c.dataset.max_primitives = to_uint(k, v);
                                               },
                                               [](const ExperimentConfig& c) {
                                                   return std::to_string(c.dataset.max_primitives);
                                               }});
        t.emplace_back("data_seed", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                              c.dataset.seed = to_uint(k, v);
                                          },
                                          [](const ExperimentConfig& c) { return std::to_string(c.dataset.seed); }});
        t.emplace_back("noise", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                          c.dataset.noise = to_double(k, v);
                                      },
                                      [](const ExperimentConfig& c) { return exact_number(c.dataset.noise); }});
        t.emplace_back("bright_threshold", Field{[](ExperimentConfig& c, std::string_view k, std::string_view v) {
                                                     c.dataset.bright_threshold = to_double(k, v);
                                                 },
                                                 [](const ExperimentConfig& c) {
                                                     return exact_number(c.dataset.bright_threshold);
                                                 }});
        t.emplace_back("benchmark", bool_field(&ExperimentConfig::benchmark));
        t.emplace_back("bench_batch", uint_field(&ExperimentConfig::bench_batch));
        t.emplace_back("bench_warmup", uint_field(&ExperimentConfig::bench_warmup));
        t.emplace_back("bench_reps", uint_field(&ExperimentConfig::bench_reps));
        t.emplace_back("compare_lambda_struct", number_field(&ExperimentConfig::compare_lambda_struct));
        t.emplace_back("compare_lambda_min", number_field(&ExperimentConfig::compare_lambda_min));
        t.emplace_back("compare_lambda_max", number_field(&ExperimentConfig::compare_lambda_max));
        t.emplace_back("compare_iters", uint_field(&ExperimentConfig::compare_iters));
        t.emplace_back("compare_tolerance", number_field(&ExperimentConfig::compare_tolerance));
        t.emplace_back("checkpoint", bool_field(&ExperimentConfig::checkpoint));
        t.emplace_back("out", string_field(&ExperimentConfig::out));
        return t;
    }();
    return table;
}

const Field& field(std::string_view key) {
    for (const auto& [k, f] : fields()) {
        if (k == key) return f;
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::string exact_number(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, f] : fields()) k.push_back(name);
        return k;
    }();
    return keys;
}

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
    field(key).set(config, key, trim(value));
}

std::string get_config_value(const ExperimentConfig& config, std::string_view key) { return field(key).get(config); }

void ExperimentConfig::validate() const {
    if (tasks.empty()) throw ConfigError("config: at least one task is required");
    for (const auto& t : tasks) {
        try {
            (void)TaskSpec::from_name(t);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }
    if (lambda < 0) throw ConfigError("config: lambda must be >= 0");
    for (double l : lambda_grid) {
        if (l < 0) throw ConfigError("config: lambda_grid values must be >= 0");
    }
    if (seeds == 0) throw ConfigError("config: seeds must be >= 1");
    if (batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("config: lr must be > 0");
    if (optimizer != "adam" && optimizer != "sgd") throw ConfigError("config: optimizer must be adam or sgd");
    if (precision != "f32" && precision != "f64") throw ConfigError("config: precision must be f32 or f64");
    if (benchmark && bench_reps < 5) throw ConfigError("config: bench_reps must be >= 5");
    if (!(compare_lambda_min > 0) || compare_lambda_max <= compare_lambda_min) {
        throw ConfigError("config: need 0 < compare_lambda_min < compare_lambda_max");
    }
    try {
        dataset.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (dataset.samples < 5) throw ConfigError("config: samples must be >= 5");
}

std::vector<TaskSpec> ExperimentConfig::task_specs() const {
    std::vector<TaskSpec> out;
    for (const auto& t : tasks) out.push_back(TaskSpec::from_name(t));
    return out;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        try {
            set_config_value(base, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string canonical_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& [k, f] : fields()) {
        if (k == "out") continue;
        out += k + " = " + f.get(config) + "\n";
    }
    return out;
}

std::uint64_t config_digest(const ExperimentConfig& config) { return fnv1a64(canonical_config(config)); }

}  // namespace sparseshare
