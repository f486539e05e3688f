#pragma once

// Experiment plumbing behind the dinv command-line tool: config parsing,
// the generate / tune / run / sweep commands and their artifacts.

#include "dinv/controller.hpp"
#include "dinv/simharness.hpp"
#include "dinv/tuning.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dinv::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kViolation = 1, kUsage = 2 };

/// Schema or usage problem; maps to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct PlantSpec {
    std::string kind = "scalar_tanh";
    std::map<std::string, double> params;
    double noise_bound = 0.0;
    std::string noise = "uniform_ball";
    std::vector<std::string> expressions;
    int n_x = 1;
};

struct TuningSpec {
    TuningInputs inputs;
    std::size_t validation_samples = 4000;
    std::uint64_t validation_seed = 7;
    std::optional<double> gamma_delta_override_factor;
};

struct SweepSpec {
    std::vector<std::pair<std::string, std::vector<json>>> parameters;  // dotted key -> values
    std::size_t workers = 1;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    Norm norm = Norm::Linf;
    Mode mode = Mode::Static;
    EmptySlabPolicy on_empty = EmptySlabPolicy::Error;
    std::size_t horizon = 1000;
    Vector x0;
    PlantSpec plant;
    ExcitationPolicy excitation;
    KernelSpec kernel;
    TuningSpec tuning;
    ReferenceSpec reference;
    std::string data_path, tuning_path, out_dir = "out";
    SweepSpec sweep;
    json raw;
};

namespace detail {

// Reads members of one JSON object and rejects any key it was not asked about.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    bool has(const std::string& k) {
        seen_.insert(k);
        return j_.contains(k);
    }

    const json& at(const std::string& k) {
        seen_.insert(k);
        if (!j_.contains(k)) throw ConfigError(where_ + ": missing key '" + k + "'");
        return j_.at(k);
    }

    double number(const std::string& k, double def) { return has(k) ? as_number(j_.at(k), path(k)) : def; }

    std::size_t count(const std::string& k, std::size_t def) {
        if (!has(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(path(k) + ": expected a nonnegative integer");
        return static_cast<std::size_t>(v.get<long long>());
    }

    std::string text(const std::string& k, const std::string& def) {
        if (!has(k)) return def;
        if (!j_.at(k).is_string()) throw ConfigError(path(k) + ": expected a string");
        return j_.at(k).get<std::string>();
    }

    std::string path(const std::string& k) const { return where_ + "." + k; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }

    static double as_number(const json& v, const std::string& where) {
        if (!v.is_number()) throw ConfigError(where + ": expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(where + ": expected a finite number");
        return d;
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline Vector vector_of(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a nonempty array of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = Reader::as_number(v[i], where);
    return out;
}

inline Interval interval_of(const json& v, const std::string& where) {
    const Vector p = vector_of(v, where);
    if (p.size() != 2 || !(p[0] < p[1])) throw ConfigError(where + ": expected [lo, hi] with lo < hi");
    return {p[0], p[1]};
}

template <class E>
E choose(const std::string& s, const std::vector<std::pair<std::string, E>>& opts, const std::string& where) {
    std::string names;
    for (const auto& [name, e] : opts) {
        if (name == s) return e;
        names += (names.empty() ? "" : ", ") + name;
    }
    throw ConfigError(where + ": unknown value '" + s + "' (expected one of " + names + ")");
}

inline PlantSpec parse_plant(const json& j) {
    Reader r(j, "plant");
    PlantSpec p;
    p.kind = r.text("kind", "scalar_tanh");
    p.noise_bound = r.number("noise_bound", 0.0);
    if (p.noise_bound < 0.0) throw ConfigError("plant.noise_bound: must be >= 0");
    p.noise = r.text("noise", "uniform_ball");
    choose<int>(p.noise, {{"uniform_ball", 0}, {"zero", 1}}, "plant.noise");
    if (r.has("params")) {
        const json& ps = r.at("params");
        if (!ps.is_object()) throw ConfigError("plant.params: expected an object");
        for (const auto& [k, v] : ps.items()) p.params[k] = Reader::as_number(v, "plant.params." + k);
    }
    if (r.has("expressions")) {
        const json& es = r.at("expressions");
        if (!es.is_array()) throw ConfigError("plant.expressions: expected an array of strings");
        for (const auto& e : es) {
            if (!e.is_string()) throw ConfigError("plant.expressions: expected an array of strings");
            p.expressions.push_back(e.get<std::string>());
        }
    }
    r.finish();

    if (p.kind == "scalar_tanh") {
        for (const auto& [k, v] : p.params)
            if (k != "a" && k != "b") throw ConfigError("plant.params: unknown parameter '" + k + "' for scalar_tanh");
        p.n_x = 1;
    } else if (p.kind == "two_state_polynomial") {
        const auto defs = PlantModel::polynomial_defaults();
        for (const auto& [k, v] : p.params)
            if (!defs.count(k)) throw ConfigError("plant.params: unknown parameter '" + k + "' for two_state_polynomial");
        p.n_x = 2;
    } else if (p.kind == "custom") {
        if (p.expressions.empty()) throw ConfigError("plant.expressions: custom plant needs one expression per state");
        if (!p.params.empty()) throw ConfigError("plant.params: not used by custom plants");
        p.n_x = static_cast<int>(p.expressions.size());
        try {
            for (const auto& e : p.expressions) Expression::compile(e, p.n_x);
        } catch (const Error& e) {
            throw ConfigError(std::string("plant.expressions: ") + e.what());
        }
    } else {
        throw ConfigError("plant.kind: unknown value '" + p.kind +
                          "' (expected one of scalar_tanh, two_state_polynomial, custom)");
    }
    if (p.kind != "custom" && !p.expressions.empty()) throw ConfigError("plant.expressions: only custom plants take expressions");
    return p;
}

inline ExcitationPolicy parse_excitation(const json& j, int n_x) {
    Reader r(j, "excitation");
    ExcitationPolicy e;
    e.kind = choose<ExcitationKind>(r.text("kind", "uniform_random_input"),
                                    {{"uniform_random_input", ExcitationKind::UniformRandomInput},
                                     {"grid_sweep", ExcitationKind::GridSweep},
                                     {"multilevel_prbs", ExcitationKind::MultilevelPRBS}},
                                    "excitation.kind");
    e.u_box = interval_of(r.at("input_box"), "excitation.input_box");
    const json& sb = r.at("state_box");
    if (!sb.is_array()) throw ConfigError("excitation.state_box: expected an array of [lo, hi] pairs");
    e.x_box.clear();
    for (std::size_t i = 0; i < sb.size(); ++i)
        e.x_box.push_back(interval_of(sb[i], "excitation.state_box[" + std::to_string(i) + "]"));
    if (static_cast<int>(e.x_box.size()) != n_x)
        throw ConfigError("excitation.state_box: expected " + std::to_string(n_x) + " intervals, got " +
                          std::to_string(e.x_box.size()));
    e.length = r.count("length", 1000);
    if (e.length < 1) throw ConfigError("excitation.length: must be >= 1");
    e.grid_points = r.count("grid_points", 8);
    if (e.grid_points < 1) throw ConfigError("excitation.grid_points: must be >= 1");
    e.levels = r.count("levels", 5);
    if (e.levels < 2) throw ConfigError("excitation.levels: must be >= 2");
    e.max_hold = r.count("max_hold", 10);
    if (e.max_hold < 1) throw ConfigError("excitation.max_hold: must be >= 1");
    r.finish();
    return e;
}

inline KernelSpec parse_kernel(const json& j) {
    Reader r(j, "kernel");
    KernelSpec k;
    choose<int>(r.text("kind", "gaussian_rbf"), {{"gaussian_rbf", 0}}, "kernel.kind");
    k.kind = KernelKind::GaussianRBF;
    k.width = r.number("width", 1.0);
    r.finish();
    if (!(k.width > 0.0)) throw ConfigError("kernel.width: must be > 0");
    return k;
}

inline TuningSpec parse_tuning(const json& j) {
    Reader r(j, "tuning");
    TuningSpec s;
    TuningInputs& in = s.inputs;
    in.c_delta = r.number("c_delta", 0.0);
    in.c_gamma_star = r.number("c_gamma_star", 0.0);
    in.c_gamma_g = r.number("c_gamma_g", 0.0);
    in.c_epsilon = r.number("c_epsilon", 0.0);
    in.lambda1_star = r.number("lambda1_star", 1.1);
    in.lambda2_star = r.number("lambda2_star", 1.1);
    in.beta_star = r.number("beta_star", 0.0);
    in.r_bar = r.number("r_bar", 1.0);
    if (r.has("gamma_delta_bar")) in.gamma_delta_bar = Reader::as_number(r.at("gamma_delta_bar"), r.path("gamma_delta_bar"));
    in.fraction = r.number("fraction", 0.5);
    in.mu_bar = r.number("mu_bar", 0.9);
    in.q = r.count("q", 10);
    in.N_bar = r.count("N_bar", 500);
    in.rho_fraction = r.number("rho_fraction", 0.01);
    in.sigma.margin = r.number("sigma_margin", 1.05);
    in.sigma.samples = r.count("sigma_samples", 4000);
    in.sigma.seed = r.count("sigma_seed", 1);
    in.sigma.max_iterations = static_cast<int>(r.count("sigma_max_iterations", 100));
    if (r.has("x_bar_init")) in.x_bar_init = Reader::as_number(r.at("x_bar_init"), r.path("x_bar_init"));
    s.validation_samples = r.count("validation_samples", 4000);
    s.validation_seed = r.count("validation_seed", 7);
    if (r.has("gamma_delta_override_factor"))
        s.gamma_delta_override_factor =
            Reader::as_number(r.at("gamma_delta_override_factor"), r.path("gamma_delta_override_factor"));
    r.finish();

    for (const auto& [name, v] : {std::pair{"c_delta", in.c_delta}, {"c_gamma_star", in.c_gamma_star},
                                  {"c_gamma_g", in.c_gamma_g}, {"c_epsilon", in.c_epsilon},
                                  {"beta_star", in.beta_star}})
        if (v < 0.0) throw ConfigError(std::string("tuning.") + name + ": must be >= 0");
    if (!(in.lambda1_star > 0.0) || !(in.lambda2_star > 0.0)) throw ConfigError("tuning.lambda*: must be > 0");
    if (!(in.r_bar > 0.0)) throw ConfigError("tuning.r_bar: must be > 0");
    if (!(in.fraction > 0.0 && in.fraction < 1.0)) throw ConfigError("tuning.fraction: must lie in (0, 1)");
    if (!(in.mu_bar > 0.0 && in.mu_bar < 1.0)) throw ConfigError("tuning.mu_bar: must lie in (0, 1)");
    if (in.q < 1) throw ConfigError("tuning.q: must be >= 1");
    if (in.N_bar < 1) throw ConfigError("tuning.N_bar: must be >= 1");
    if (!(in.rho_fraction > 0.0)) throw ConfigError("tuning.rho_fraction: must be > 0");
    if (!(in.sigma.margin > 1.0)) throw ConfigError("tuning.sigma_margin: must be > 1");
    if (in.sigma.samples < 1) throw ConfigError("tuning.sigma_samples: must be >= 1");
    if (in.sigma.max_iterations < 1) throw ConfigError("tuning.sigma_max_iterations: must be >= 1");
    if (s.gamma_delta_override_factor && !(*s.gamma_delta_override_factor > 0.0))
        throw ConfigError("tuning.gamma_delta_override_factor: must be > 0");
    return s;
}

inline ReferenceSpec parse_reference(const json& j, int n_x) {
    Reader r(j, "reference");
    ReferenceSpec ref;
    ref.kind = choose<ReferenceKind>(r.text("kind", "constant"),
                                     {{"constant", ReferenceKind::Constant},
                                      {"piecewise", ReferenceKind::PiecewiseConstant},
                                      {"sinusoid", ReferenceKind::Sinusoid}},
                                     "reference.kind");
    ref.period = r.count("period", 100);
    if (ref.kind == ReferenceKind::Sinusoid) {
        ref.amplitude = vector_of(r.at("amplitude"), "reference.amplitude");
        ref.offset = r.has("offset") ? vector_of(r.at("offset"), "reference.offset") : Vector::Zero(ref.amplitude.size());
        if (ref.amplitude.size() != n_x || ref.offset.size() != n_x)
            throw ConfigError("reference: amplitude/offset must have " + std::to_string(n_x) + " entries");
        if (ref.period == 0) throw ConfigError("reference.period: must be >= 1");
    } else {
        const json& vs = r.at("values");
        if (!vs.is_array() || vs.empty()) throw ConfigError("reference.values: expected a nonempty array of vectors");
        for (std::size_t i = 0; i < vs.size(); ++i) {
            Vector v = vector_of(vs[i], "reference.values[" + std::to_string(i) + "]");
            if (v.size() != n_x) throw ConfigError("reference.values: each entry needs " + std::to_string(n_x) + " entries");
            ref.values.push_back(std::move(v));
        }
        if (ref.kind == ReferenceKind::PiecewiseConstant && ref.period == 0)
            throw ConfigError("reference.period: must be >= 1");
    }
    r.finish();
    return ref;
}

inline SweepSpec parse_sweep(const json& j) {
    Reader r(j, "sweep");
    SweepSpec s;
    s.workers = r.count("workers", 1);
    if (s.workers < 1) throw ConfigError("sweep.workers: must be >= 1");
    const json& ps = r.at("parameters");
    if (!ps.is_object() || ps.empty()) throw ConfigError("sweep.parameters: expected a nonempty object");
    for (const auto& [k, v] : ps.items()) {
        if (!v.is_array() || v.empty()) throw ConfigError("sweep.parameters." + k + ": expected a nonempty array");
        if (k.rfind("sweep", 0) == 0) throw ConfigError("sweep.parameters: cannot sweep the sweep section");
        s.parameters.emplace_back(k, std::vector<json>(v.begin(), v.end()));
    }
    r.finish();
    return s;
}

}  // namespace detail

/// Validates and converts a config document. Throws ConfigError on any schema problem.
inline ExperimentConfig parse_config(const json& j) {
    detail::Reader r(j, "config");
    ExperimentConfig c;
    c.raw = j;
    c.seed = r.count("seed", 1);
    try {
        c.norm = parse_norm(r.text("norm", "linf"));
        c.mode = parse_mode(r.text("mode", "static"));
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.on_empty = detail::choose<EmptySlabPolicy>(r.text("on_empty_slab", "error"),
                                                 {{"error", EmptySlabPolicy::Error}, {"midpoint", EmptySlabPolicy::Midpoint}},
                                                 "config.on_empty_slab");
    c.horizon = r.count("horizon", 1000);
    if (c.horizon < 1) throw ConfigError("config.horizon: must be >= 1");

    c.plant = detail::parse_plant(r.at("plant"));
    const int n_x = c.plant.n_x;
    c.excitation = detail::parse_excitation(r.at("excitation"), n_x);
    c.kernel = r.has("kernel") ? detail::parse_kernel(r.at("kernel")) : KernelSpec{};
    c.tuning = r.has("tuning") ? detail::parse_tuning(r.at("tuning")) : detail::parse_tuning(json::object());
    c.reference = detail::parse_reference(r.at("reference"), n_x);
    c.x0 = r.has("x0") ? detail::vector_of(r.at("x0"), "config.x0") : Vector::Zero(n_x);
    if (c.x0.size() != n_x) throw ConfigError("config.x0: expected " + std::to_string(n_x) + " entries");
    if (r.has("paths")) {
        detail::Reader p(r.at("paths"), "paths");
        c.data_path = p.text("data", "");
        c.tuning_path = p.text("tuning", "");
        c.out_dir = p.text("out", "out");
        p.finish();
    }
    if (r.has("sweep")) c.sweep = detail::parse_sweep(r.at("sweep"));
    r.finish();
    return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// Derives independent stream seeds from the experiment seed (splitmix64 finalizer).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kExcitationStream = 1, kTrainingNoiseStream = 2, kLoopNoiseStream = 3 };

inline PlantModel make_plant(const ExperimentConfig& c, std::uint64_t noise_seed) {
    const PlantSpec& s = c.plant;
    PlantModel p;
    if (s.kind == "scalar_tanh") {
        auto get = [&](const char* k, double d) { return s.params.count(k) ? s.params.at(k) : d; };
        p = PlantModel::scalar_tanh(get("a", 0.5), get("b", 1.0), s.noise_bound, noise_seed);
    } else if (s.kind == "two_state_polynomial") {
        p = PlantModel::two_state_polynomial(s.params, s.noise_bound, noise_seed);
    } else {
        p = PlantModel::custom(s.expressions, s.noise_bound, noise_seed);
    }
    p.noise_law = (s.noise == "zero" || s.noise_bound == 0.0) ? NoiseLaw::Zero : NoiseLaw::UniformBall;
    p.norm = c.norm;
    return p;
}

inline ExcitationPolicy make_policy(const ExperimentConfig& c) {
    ExcitationPolicy p = c.excitation;
    p.seed = stream_seed(c.seed, kExcitationStream);
    return p;
}

inline ValidationContext make_validation_context(const ExperimentConfig& c) {
    ValidationContext ctx;
    ctx.state_box = c.excitation.x_box;
    ctx.x0 = c.x0;
    ctx.r1 = clamp_to_ball(c.reference.at(1), c.tuning.inputs.r_bar, c.norm);
    ctx.samples = c.tuning.validation_samples;
    ctx.seed = c.tuning.validation_seed;
    return ctx;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const Tuning& t) {
    return {{"delta_hat", t.delta_hat},         {"gamma_star_hat", t.gamma_star_hat},
            {"gamma_g_hat", t.gamma_g_hat},     {"epsilon_hat", t.epsilon_hat},
            {"zeta_hat", t.zeta_hat},           {"c_delta", t.c_delta},
            {"c_gamma_star", t.c_gamma_star},   {"c_gamma_g", t.c_gamma_g},
            {"c_epsilon", t.c_epsilon},         {"lambda1_star", t.lambda1_star},
            {"lambda2_star", t.lambda2_star},   {"beta_star", t.beta_star},
            {"r_bar", t.r_bar},                 {"gamma_delta_bar", t.gamma_delta_bar},
            {"gamma_delta", t.gamma_delta},     {"fraction", t.fraction},
            {"sigma", t.sigma},                 {"x_bar", t.x_bar},
            {"mu_bar", t.mu_bar},               {"q", t.q},
            {"N_bar", t.N_bar}};
}

inline Tuning tuning_from_json(const json& j) {
    detail::Reader r(j, "tuning");
    Tuning t;
    auto num = [&](const char* k) { return detail::Reader::as_number(r.at(k), r.path(k)); };
    t.delta_hat = num("delta_hat");
    t.gamma_star_hat = num("gamma_star_hat");
    t.gamma_g_hat = num("gamma_g_hat");
    t.epsilon_hat = num("epsilon_hat");
    t.zeta_hat = num("zeta_hat");
    t.c_delta = num("c_delta");
    t.c_gamma_star = num("c_gamma_star");
    t.c_gamma_g = num("c_gamma_g");
    t.c_epsilon = num("c_epsilon");
    t.lambda1_star = num("lambda1_star");
    t.lambda2_star = num("lambda2_star");
    t.beta_star = num("beta_star");
    t.r_bar = num("r_bar");
    t.gamma_delta_bar = num("gamma_delta_bar");
    t.gamma_delta = num("gamma_delta");
    t.fraction = num("fraction");
    t.sigma = num("sigma");
    t.x_bar = num("x_bar");
    t.mu_bar = num("mu_bar");
    t.q = r.count("q", 10);
    t.N_bar = r.count("N_bar", 500);
    r.finish();
    return t;
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const ValidationReport& rep) {
    json checks = json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"value", finite_or_null(c.value)},
                          {"limit", finite_or_null(c.limit)},
                          {"detail", c.detail}});
    return {{"passed", rep.passed()}, {"checks", checks}};
}

inline void write_text(const fs::path& path, const std::string& s) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << s;
    if (!out) throw Error("write failed for " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Trace CSV; estimator columns only when `adaptive`.
inline std::string trace_csv(const std::vector<TraceRow>& rows, Eigen::Index n_x, bool adaptive) {
    std::ostringstream os;
    os << "t";
    for (Eigen::Index i = 1; i <= n_x; ++i) os << ",x_" << i;
    for (Eigen::Index i = 1; i <= n_x; ++i) os << ",r_" << i;
    os << ",u,dict_size,slab_lo,slab_hi";
    if (adaptive) os << ",delta_hat,zeta_hat,gamma_star_hat,gamma_g_hat";
    os << ",gamma_delta_t,wallclock_us,robust_ok\n";
    for (const auto& row : rows) {
        os << row.t;
        for (Eigen::Index i = 0; i < n_x; ++i) os << ',' << format_double(row.x[i]);
        for (Eigen::Index i = 0; i < n_x; ++i) os << ',' << format_double(row.r[i]);
        os << ',' << format_double(row.u) << ',' << row.dict_size << ',' << format_double(row.slab_lo) << ','
           << format_double(row.slab_hi);
        if (adaptive)
            os << ',' << format_double(row.estimates.delta_hat) << ',' << format_double(row.estimates.zeta_hat) << ','
               << format_double(row.estimates.gamma_star_hat) << ','
               << format_double(row.estimates.gamma_g_hat);
        os << ',' << format_double(row.gamma_delta) << ',' << format_double(row.wallclock_us) << ','
           << (row.robust_inequality_ok ? 1 : 0) << '\n';
    }
    return os.str();
}

inline json summary_json(const ClosedLoopResult& res, const ExperimentConfig& c, bool forced) {
    const auto& rep = res.report;
    json j = {{"in_ball_fraction", rep.in_ball_fraction},
              {"sup_x", finite_or_null(rep.sup_x)},
              {"x_bar", finite_or_null(rep.x_bar)},
              {"lambda_fit", {rep.lambda_fit[0], rep.lambda_fit[1], rep.lambda_fit[2]}},
              {"mean_abs_tracking_error", finite_or_null(rep.mean_abs_tracking_error)},
              {"sup_tracking_error", finite_or_null(rep.sup_tracking_error)},
              {"empty_slab_count", res.empty_slab_count},
              {"dict_size_final", res.dict_size_final},
              {"robust_violations", res.robust_violations},
              {"reference_clamps", res.reference_clamps},
              {"steps_completed", res.trace.size()},
              {"horizon", c.horizon},
              {"mode", std::string(to_string(c.mode))},
              {"seed", c.seed},
              {"forced", forced},
              {"aborted", res.aborted},
              {"abort_message", res.abort_message},
              {"stability_violated", res.stability_violated()}};
    j["first_empty_slab_t"] = res.first_empty_slab_t ? json(*res.first_empty_slab_t) : json(nullptr);
    j["first_ball_exit_t"] = res.first_ball_exit_t ? json(*res.first_ball_exit_t) : json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct RunOptions {
    std::string data_path;
    std::string tuning_path;
    std::string out_dir;
    std::optional<Mode> mode;
    std::optional<std::uint64_t> seed;
    bool force = false;
    bool timing = false;
};

inline void apply_overrides(ExperimentConfig& c, const RunOptions& o) {
    if (o.mode) c.mode = *o.mode;
    if (o.seed) c.seed = *o.seed;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    if (!o.data_path.empty()) c.data_path = o.data_path;
    if (!o.tuning_path.empty()) c.tuning_path = o.tuning_path;
    if (c.data_path.empty()) c.data_path = (fs::path(c.out_dir) / "training.csv").string();
    if (c.tuning_path.empty()) c.tuning_path = (fs::path(c.out_dir) / "tuning.json").string();
}

inline std::shared_ptr<const Dataset> load_data(const std::string& path, int n_x) {
    if (!fs::exists(path)) throw ConfigError("training data file not found: " + path);
    Dataset d;
    try {
        d = read_training_csv(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (d.front().state_dim() != n_x)
        throw ConfigError("training data has state dimension " + std::to_string(d.front().state_dim()) +
                          ", plant expects " + std::to_string(n_x));
    return std::make_shared<const Dataset>(std::move(d));
}

/// generate: training.csv + generation.json.
inline int cmd_generate(const ExperimentConfig& c, std::ostream& log) {
    const PlantModel plant = make_plant(c, stream_seed(c.seed, kTrainingNoiseStream));
    const ExcitationPolicy pol = make_policy(c);
    const GeneratedData g = generate_training_data(plant, pol);
    std::ostringstream csv;
    write_training_csv(csv, g.data);
    write_text(c.data_path, csv.str());

    json meta = {{"seed", c.seed},
                 {"rows", g.data.size()},
                 {"excitation", c.raw.at("excitation")},
                 {"plant", c.raw.at("plant")},
                 {"resets", g.resets},
                 {"reset_count", g.resets.size()},
                 {"skipped_cells", g.skipped}};
    if (!g.cell_visits.empty()) {
        const auto [mn, mx] = std::minmax_element(g.cell_visits.begin(), g.cell_visits.end());
        meta["grid_cells"] = g.cell_visits.size();
        meta["min_cell_visits"] = *mn;
        meta["max_cell_visits"] = *mx;
    }
    write_json(fs::path(c.data_path).parent_path() / "generation.json", meta);
    log << "wrote " << g.data.size() << " rows to " << c.data_path << " (" << g.resets.size() << " resets)\n";
    return kOk;
}

struct TuneOutcome {
    Tuning tuning;
    ValidationReport report;
    SigmaSelection sigma;
};

/// Seeds estimators, selects sigma and x_bar, applies any gamma_delta override and validates.
inline TuneOutcome tune(const ExperimentConfig& c, std::shared_ptr<const Dataset> data) {
    TuneResult r = tune_from_data(data, c.tuning.inputs, c.norm, make_validation_context(c));
    TuneOutcome out{r.tuning, r.report, r.sigma};
    if (c.tuning.gamma_delta_override_factor) {
        out.tuning.gamma_delta = *c.tuning.gamma_delta_override_factor * out.tuning.gamma_delta_cap();
        const BoundsOracle inflated = inflated_oracle(data, out.tuning.delta_hat, out.tuning.c_delta,
                                                      out.tuning.gamma_star_hat, out.tuning.c_gamma_star, c.norm);
        out.report = validate_stability_hypotheses(out.tuning, inflated, make_validation_context(c));
        // x_bar stays at the value from the admissible tuning.
        out.tuning.x_bar = r.tuning.x_bar;
    }
    return out;
}

/// tune: tuning.json + validation.json; exit 1 if any hypothesis check fails.
inline int cmd_tune(const ExperimentConfig& c, std::ostream& log) {
    const auto data = load_data(c.data_path, c.plant.n_x);
    const fs::path tuning_path = c.tuning_path;
    const fs::path report_path = tuning_path.parent_path() / "validation.json";
    TuneOutcome t;
    try {
        t = tune(c, data);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        write_json(report_path, {{"passed", false}, {"error", e.what()}, {"checks", json::array()}});
        log << "tuning failed: " << e.what() << "\n";
        return kViolation;
    }
    json tj = {{"tuning", to_json(t.tuning)},
               {"validated", t.report.passed()},
               {"gamma_delta_override", c.tuning.gamma_delta_override_factor.has_value()},
               {"sigma_selection",
                {{"sigma", t.sigma.sigma}, {"x_bar", t.sigma.x_bar}, {"d0", t.sigma.d0}, {"iterations", t.sigma.iterations}}}};
    write_json(tuning_path, tj);
    write_json(report_path, to_json(t.report));
    for (const auto& ch : t.report.checks)
        if (!ch.passed)
            log << "check failed: " << ch.name << " (value " << format_double(ch.value) << ", limit "
                << format_double(ch.limit) << "): " << ch.detail << "\n";
    log << "sigma " << format_double(t.tuning.sigma) << ", x_bar " << format_double(t.tuning.x_bar) << ", gamma_delta "
        << format_double(t.tuning.gamma_delta) << (t.report.passed() ? ", all checks passed\n" : "\n");
    return t.report.passed() ? kOk : kViolation;
}

struct RunArtifacts {
    ClosedLoopResult result;
    std::string trace;
    json summary;
    int exit_code = kOk;
};

/// Trains on the data, runs the closed loop, and builds trace + summary (no file I/O).
inline RunArtifacts execute_run(const ExperimentConfig& c, std::shared_ptr<const Dataset> data, const Tuning& t,
                                bool forced, bool timing) {
    ControllerConfig cc{c.kernel, c.mode, c.on_empty, c.norm};
    std::optional<SeededEstimators> est;
    if (c.mode == Mode::Adaptive)
        est = seed_from_training(*data, EstimatorConfig{t.N_bar, c.tuning.inputs.rho_fraction, c.norm});
    Controller ctrl(cc, t, data, std::move(est));
    ctrl.train();

    const PlantModel plant = make_plant(c, stream_seed(c.seed, kLoopNoiseStream));
    ClosedLoopOptions opt;
    opt.horizon = c.horizon;
    opt.x0 = c.x0;
    opt.x_bar = t.x_bar;
    opt.record_wallclock = timing;
    RunArtifacts a;
    a.result = run_closed_loop(plant, ctrl, c.reference, opt);
    a.trace = trace_csv(a.result.trace, plant.n_x, c.mode == Mode::Adaptive);
    a.summary = summary_json(a.result, c, forced);
    a.exit_code = (a.result.stability_violated() || a.result.robust_violations > 0) ? kViolation : kOk;
    return a;
}

/// run: trace.csv + summary.json; exit 1 on an empty slab, a ball exit, or a robust-inequality miss.
inline int cmd_run(const ExperimentConfig& c, bool force, bool timing, std::ostream& log) {
    if (!fs::exists(c.tuning_path)) throw ConfigError("tuning file not found: " + c.tuning_path);
    json tj;
    {
        std::ifstream in(c.tuning_path);
        try {
            tj = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("tuning file " + c.tuning_path + ": " + e.what());
        }
    }
    if (!tj.is_object() || !tj.contains("tuning") || !tj.contains("validated"))
        throw ConfigError("tuning file " + c.tuning_path + ": expected keys 'tuning' and 'validated'");
    const Tuning t = tuning_from_json(tj.at("tuning"));
    const bool validated = tj.at("validated").get<bool>();
    if (!validated && !force)
        throw ConfigError("tuning in " + c.tuning_path + " did not pass validation; pass --force to run anyway");
    const auto data = load_data(c.data_path, c.plant.n_x);

    RunArtifacts a = execute_run(c, data, t, !validated, timing);
    const fs::path out = c.out_dir;
    write_text(out / "trace.csv", a.trace);
    write_json(out / "summary.json", a.summary);
    if (a.result.aborted) log << "run aborted: " << a.result.abort_message << "\n";
    if (a.result.first_ball_exit_t) log << "state left B_xbar at t = " << *a.result.first_ball_exit_t << "\n";
    log << "in_ball_fraction " << format_double(a.result.report.in_ball_fraction) << ", sup_x "
        << format_double(a.result.report.sup_x) << ", x_bar " << format_double(a.result.report.x_bar) << ", empty slabs "
        << a.result.empty_slab_count << "\n";
    return a.exit_code;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// Sets a dotted key ("tuning.c_delta", "plant.params.a") inside a JSON document.
inline void set_dotted(json& doc, const std::string& key, const json& value) {
    json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const std::size_t dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("sweep key '" + key + "' is malformed");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw ConfigError("sweep key '" + key + "' goes through a non-object");
        start = dot + 1;
    }
}

struct SweepCell {
    std::vector<json> values;
    int tune_exit = kOk;
    int run_exit = kOk;
    std::string error;
    json summary;
};

/// One generate + tune + run per cell of the cartesian product; rows land in sweep.csv in cell order.
inline int cmd_sweep(const ExperimentConfig& base, std::ostream& log) {
    const auto& params = base.sweep.parameters;
    if (params.empty()) throw ConfigError("sweep: config has no sweep.parameters");
    std::size_t cells = 1;
    for (const auto& p : params) cells *= p.second.size();

    // Validate every cell before running anything.
    std::vector<ExperimentConfig> cfgs;
    std::vector<SweepCell> rows(cells);
    for (std::size_t k = 0; k < cells; ++k) {
        json doc = base.raw;
        doc.erase("sweep");
        std::size_t rest = k;
        for (const auto& [key, vals] : params) {
            const json& v = vals[rest % vals.size()];
            rest /= vals.size();
            set_dotted(doc, key, v);
            rows[k].values.push_back(v);
        }
        ExperimentConfig c;
        try {
            c = parse_config(doc);
        } catch (const ConfigError& e) {
            throw ConfigError("sweep cell " + std::to_string(k) + ": " + e.what());
        }
        char name[32];
        std::snprintf(name, sizeof name, "cell_%04zu", k);
        c.out_dir = (fs::path(base.out_dir) / name).string();
        c.data_path = (fs::path(c.out_dir) / "training.csv").string();
        c.tuning_path = (fs::path(c.out_dir) / "tuning.json").string();
        cfgs.push_back(std::move(c));
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < cells; k = next++) {
            SweepCell& row = rows[k];
            const ExperimentConfig& c = cfgs[k];
            std::ostringstream sink;
            try {
                cmd_generate(c, sink);
                row.tune_exit = cmd_tune(c, sink);
                if (row.tune_exit == kOk) {
                    row.run_exit = cmd_run(c, false, false, sink);
                    std::ifstream in(fs::path(c.out_dir) / "summary.json");
                    row.summary = json::parse(in);
                }
            } catch (const std::exception& e) {
                row.error = e.what();
                row.run_exit = kUsage;
            }
        }
    };
    const std::size_t n_workers = std::min(base.sweep.workers, cells);
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::ostringstream csv;
    csv << "cell";
    for (const auto& p : params) csv << ',' << p.first;
    const std::vector<std::string> keys = {"in_ball_fraction", "sup_x", "x_bar", "mean_abs_tracking_error",
                                           "empty_slab_count", "dict_size_final"};
    csv << ",tune_exit,run_exit";
    for (const auto& k : keys) csv << ',' << k;
    csv << ",error\n";
    int worst = kOk;
    for (std::size_t k = 0; k < cells; ++k) {
        const SweepCell& row = rows[k];
        csv << k;
        for (const auto& v : row.values) csv << ',' << (v.is_string() ? v.get<std::string>() : v.dump());
        csv << ',' << row.tune_exit << ',' << (row.tune_exit == kOk ? std::to_string(row.run_exit) : "");
        for (const auto& key : keys) {
            csv << ',';
            if (row.summary.contains(key) && !row.summary[key].is_null()) {
                const json& v = row.summary[key];
                csv << (v.is_number_float() ? format_double(v.get<double>()) : v.dump());
            }
        }
        std::string err = row.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        csv << ',' << err << '\n';
        worst = std::max({worst, row.tune_exit, row.tune_exit == kOk ? row.run_exit : kOk});
    }
    write_text(fs::path(base.out_dir) / "sweep.csv", csv.str());
    log << "swept " << cells << " cells into " << (fs::path(base.out_dir) / "sweep.csv").string() << "\n";
    return worst == kUsage ? kViolation : worst;
}

}  // namespace dinv::cli
