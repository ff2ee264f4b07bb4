#pragma once

// The dka command-line front end. Kept in a header so tests can drive it
// in-process; tools/dka.cpp only forwards argc/argv.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dka/dka.hpp"
#include "dka/io.hpp"

namespace dka::cli {

using nlohmann::json;
namespace fs = std::filesystem;

enum ExitCode { ok = 0, config_error = 2, numeric_error = 3, verify_failed = 4 };

struct KernelSpec {
    std::string kind = "relu";  // relu | exp | linear | hermite | activation
    std::optional<double> gamma;
    std::vector<double> coeffs;
    std::string activation = "relu";
    double width = 1.0;
    int order = 0;
};

struct GridSpec {
    std::string kind = "chebyshev";  // chebyshev | jacobi | list
    int n = 201;
    std::vector<double> values;
};

struct VerifyTolerances {
    double covariance = 1e-2;  // relative to max |B| at the last depth
    double tail = 1e-2;        // relative to |limit| at the last depth
    double discontinuity = 5e-3;
    double high_disorder = 1e-6;
};

struct RunConfig {
    KernelSpec kernel;
    int dim = 2;
    std::string points = "uniform:3:1";
    std::vector<std::vector<double>> inline_points;
    Centering centering = Centering::north_pole;
    std::vector<long> schedule{5, 10, 20, 40};
    GridSpec grid;
    std::string out;
    std::string label;
    std::uint64_t seed = 1;
    long samples = 20000;
    std::optional<long> depth;  // verify/sample: last scheduled depth; spectral: 1
    std::vector<double> theta;
    double level = 1.0;
    std::vector<double> eps{1e-1, 1e-2, 1e-3};
    long discontinuity_depth = 10000;
    std::vector<std::vector<double>> y;
    std::optional<double> rho;
    int lmax = 0;
    Tolerances tol;
    VerifyTolerances verify_tol;
    std::string source;  // config path, for messages
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

// ---------------------------------------------------------------- parsing helpers

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) parts.push_back(cur);
    if (!s.empty() && s.back() == sep) parts.emplace_back();
    return parts;
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": '" + s + "' is not a number");
    }
}

inline long parse_long(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": '" + s + "' is not an integer");
    }
}

inline std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& p : split(s, ',')) out.push_back(parse_double(p, what));
    return out;
}

inline std::vector<long> geometric_schedule(double start, double ratio, long count) {
    if (!(start >= 1.0) || !(ratio > 1.0) || count < 1)
        throw ConfigError("L_schedule: geometric spec needs start >= 1, ratio > 1, count >= 1");
    std::vector<long> out;
    double v = start;
    for (long i = 0; i < count; ++i, v *= ratio) {
        const long L = std::lround(v);
        if (out.empty() || L > out.back()) out.push_back(L);
    }
    return out;
}

/// "10,20,40" or "geom:start:ratio:count".
inline std::vector<long> parse_schedule(const std::string& s) {
    if (s.rfind("geom:", 0) == 0) {
        const auto p = split(s.substr(5), ':');
        if (p.size() != 3) throw ConfigError("L_schedule: expected geom:start:ratio:count");
        return geometric_schedule(parse_double(p[0], "L_schedule"), parse_double(p[1], "L_schedule"),
                                  parse_long(p[2], "L_schedule"));
    }
    std::vector<long> out;
    for (const auto& p : split(s, ',')) out.push_back(parse_long(p, "L_schedule"));
    return out;
}

inline void check_schedule(const std::vector<long>& s) {
    if (s.empty()) throw ConfigError("L_schedule: must not be empty");
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] < 1) throw ConfigError("L_schedule: depths must be >= 1");
        if (i > 0 && s[i] <= s[i - 1]) throw ConfigError("L_schedule: must be strictly increasing");
    }
}

/// "x,y,z;x,y,z" (inline rows) or "uniform:m:seed".
inline std::vector<std::vector<double>> parse_inline_points(const std::string& s) {
    std::vector<std::vector<double>> rows;
    for (const auto& r : split(s, ';'))
        if (!r.empty()) rows.push_back(parse_doubles(r, "points"));
    return rows;
}

inline GridSpec parse_grid(const std::string& s) {
    GridSpec g;
    const auto colon = s.find(':');
    g.kind = s.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : s.substr(colon + 1);
    if (g.kind == "chebyshev" || g.kind == "jacobi") {
        g.n = rest.empty() ? (g.kind == "jacobi" ? kDefaultJacobiOrder : 201) : static_cast<int>(parse_long(rest, "grid"));
        if (g.n < 2) throw ConfigError("grid: need at least 2 nodes");
    } else if (g.kind == "list") {
        g.values = parse_doubles(rest, "grid");
    } else {
        throw ConfigError("grid: unknown kind '" + g.kind + "' (chebyshev, jacobi, list)");
    }
    return g;
}

inline Centering parse_centering(const std::string& s) {
    if (s == "north-pole" || s == "north_pole" || s == "N") return Centering::north_pole;
    if (s == "spherical-average" || s == "spherical_average" || s == "average") return Centering::spherical_average;
    throw ConfigError("centering: expected north-pole or spherical-average, got '" + s + "'");
}

// ---------------------------------------------------------------- JSON config

/// 1-based line and column of a byte offset.
inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t offset) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(offset, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

/// Line of the first occurrence of "key" in the document, 0 if absent.
inline std::size_t key_line(const std::string& text, const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    return pos == std::string::npos ? 0 : line_col(text, pos).first;
}

class ConfigReader {
public:
    ConfigReader(std::string path, std::string text) : path_(std::move(path)), text_(std::move(text)) {
        try {
            doc_ = json::parse(text_);
        } catch (const json::parse_error& e) {
            const auto [line, col] = line_col(text_, e.byte == 0 ? 0 : e.byte - 1);
            throw ConfigError(path_ + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON: " +
                              strip_prefix(e.what()));
        }
        if (!doc_.is_object()) throw ConfigError(path_ + ":1:1: top level must be an object");
    }

    [[nodiscard]] const json& doc() const { return doc_; }

    [[noreturn]] void error(const std::string& key, const std::string& msg) const {
        const auto line = key_line(text_, key);
        const std::string prefix = key + ": ";
        const std::string body = msg.rfind(prefix, 0) == 0 ? msg.substr(prefix.size()) : msg;
        throw ConfigError(path_ + ":" + (line ? std::to_string(line) + ":" : std::string()) + " " + prefix + body);
    }

    template <class T>
    T get(const json& node, const std::string& key) const {
        try {
            return node.at(key).get<T>();
        } catch (const json::exception& e) {
            error(key, strip_prefix(e.what()));
        }
    }

private:
    static std::string strip_prefix(const std::string& s) {
        const auto p = s.find("] ");
        return p == std::string::npos ? s : s.substr(p + 2);
    }

    std::string path_;
    std::string text_;
    json doc_;
};

inline void apply_kernel_json(const ConfigReader& r, const json& node, KernelSpec& k) {
    if (node.is_string()) {
        k.kind = node.get<std::string>();
        return;
    }
    if (!node.is_object()) r.error("kernel", "expected a name or an object");
    static const std::vector<std::string> known{"kind", "gamma", "coeffs", "activation", "width", "order"};
    for (const auto& [key, _] : node.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) r.error(key, "unknown kernel key");
    if (node.contains("kind")) k.kind = r.get<std::string>(node, "kind");
    if (node.contains("gamma")) k.gamma = r.get<double>(node, "gamma");
    if (node.contains("coeffs")) k.coeffs = r.get<std::vector<double>>(node, "coeffs");
    if (node.contains("activation")) k.activation = r.get<std::string>(node, "activation");
    if (node.contains("width")) k.width = r.get<double>(node, "width");
    if (node.contains("order")) k.order = r.get<int>(node, "order");
}

inline void apply_json(const ConfigReader& r, RunConfig& cfg) {
    const json& d = r.doc();
    static const std::vector<std::string> known{
        "kernel", "dim", "points", "centering", "L_schedule", "grid", "out", "label", "seed", "samples", "depth",
        "theta", "level", "eps", "discontinuity_depth", "y", "rho", "lmax", "tolerances", "verify", "threads"};
    for (const auto& [key, _] : d.items())
        if (std::find(known.begin(), known.end(), key) == known.end()) r.error(key, "unknown key");

    if (d.contains("kernel")) apply_kernel_json(r, d["kernel"], cfg.kernel);
    if (d.contains("dim")) cfg.dim = r.get<int>(d, "dim");
    if (d.contains("points")) {
        if (d["points"].is_string()) {
            cfg.points = d["points"].get<std::string>();
            cfg.inline_points.clear();
        } else {
            cfg.inline_points = r.get<std::vector<std::vector<double>>>(d, "points");
            cfg.points.clear();
        }
    }
    if (d.contains("centering")) {
        try {
            cfg.centering = parse_centering(r.get<std::string>(d, "centering"));
        } catch (const ConfigError& e) {
            r.error("centering", e.what());
        }
    }
    if (d.contains("L_schedule")) {
        const auto& s = d["L_schedule"];
        try {
            if (s.is_string()) {
                cfg.schedule = parse_schedule(s.get<std::string>());
            } else if (s.is_object()) {
                cfg.schedule = geometric_schedule(r.get<double>(s, "start"), r.get<double>(s, "ratio"),
                                                  r.get<long>(s, "count"));
            } else {
                cfg.schedule = r.get<std::vector<long>>(d, "L_schedule");
            }
            check_schedule(cfg.schedule);
        } catch (const ConfigError& e) {
            r.error("L_schedule", e.what());
        }
    }
    if (d.contains("grid")) {
        const auto& g = d["grid"];
        try {
            if (g.is_string()) {
                cfg.grid = parse_grid(g.get<std::string>());
            } else if (g.is_array()) {
                cfg.grid.kind = "list";
                cfg.grid.values = r.get<std::vector<double>>(d, "grid");
            } else {
                cfg.grid.kind = r.get<std::string>(g, "kind");
                if (g.contains("n")) cfg.grid.n = r.get<int>(g, "n");
                if (g.contains("values")) cfg.grid.values = r.get<std::vector<double>>(g, "values");
            }
        } catch (const ConfigError& e) {
            r.error("grid", e.what());
        }
    }
    if (d.contains("out")) cfg.out = r.get<std::string>(d, "out");
    if (d.contains("label")) cfg.label = r.get<std::string>(d, "label");
    if (d.contains("seed")) cfg.seed = r.get<std::uint64_t>(d, "seed");
    if (d.contains("samples")) cfg.samples = r.get<long>(d, "samples");
    if (d.contains("depth")) cfg.depth = r.get<long>(d, "depth");
    if (d.contains("theta")) cfg.theta = r.get<std::vector<double>>(d, "theta");
    if (d.contains("level")) cfg.level = r.get<double>(d, "level");
    if (d.contains("eps")) cfg.eps = r.get<std::vector<double>>(d, "eps");
    if (d.contains("discontinuity_depth")) cfg.discontinuity_depth = r.get<long>(d, "discontinuity_depth");
    if (d.contains("y")) cfg.y = r.get<std::vector<std::vector<double>>>(d, "y");
    if (d.contains("rho")) cfg.rho = r.get<double>(d, "rho");
    if (d.contains("lmax")) cfg.lmax = r.get<int>(d, "lmax");
    if (d.contains("threads")) thread_cap() = r.get<unsigned>(d, "threads");
    if (d.contains("tolerances")) {
        const auto& t = d["tolerances"];
        if (t.contains("regime")) cfg.tol.regime = r.get<double>(t, "regime");
        if (t.contains("symmetry")) cfg.tol.symmetry = r.get<double>(t, "symmetry");
        if (t.contains("pole")) cfg.tol.pole = r.get<double>(t, "pole");
        if (t.contains("max_depth")) cfg.tol.max_depth = r.get<long>(t, "max_depth");
        if (t.contains("low_profile_rel")) cfg.tol.low_profile_rel = r.get<double>(t, "low_profile_rel");
        if (t.contains("sparse_depth")) cfg.tol.sparse_depth = r.get<long>(t, "sparse_depth");
        if (t.contains("sparse_deficit_floor")) cfg.tol.sparse_deficit_floor = r.get<double>(t, "sparse_deficit_floor");
    }
    if (d.contains("verify")) {
        const auto& v = d["verify"];
        if (v.contains("covariance")) cfg.verify_tol.covariance = r.get<double>(v, "covariance");
        if (v.contains("tail")) cfg.verify_tol.tail = r.get<double>(v, "tail");
        if (v.contains("discontinuity")) cfg.verify_tol.discontinuity = r.get<double>(v, "discontinuity");
        if (v.contains("high_disorder")) cfg.verify_tol.high_disorder = r.get<double>(v, "high_disorder");
    }
}

inline void load_config_file(const std::string& path, RunConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    ConfigReader reader(path, ss.str());
    apply_json(reader, cfg);
    cfg.source = path;
}

// ---------------------------------------------------------------- model building

inline Kernel build_kernel(const KernelSpec& spec) {
    const std::string& kind = spec.kind;
    if (kind == "relu" || kind == "linear") return builtin_kernel(kind);
    if (kind == "exp" || kind == "exponential") {
        if (!spec.gamma) throw ConfigError("kernel: exponential kernel needs gamma");
        return builtin_exponential(*spec.gamma);
    }
    if (kind == "hermite") {
        if (spec.coeffs.empty()) throw ConfigError("kernel: hermite kernel needs coeffs");
        return kernel_from_hermite(spec.coeffs);
    }
    if (kind == "activation") {
        ActivationSpec act;
        act.quadrature_order = spec.order;
        const auto& a = spec.activation;
        if (a == "relu") {
            act.kind = ActivationKind::relu;
        } else if (a == "gaussian-exp") {
            act.kind = ActivationKind::gaussian_exp;
            act.a = spec.width;
        } else if (a == "linear") {
            act.kind = ActivationKind::linear;
        } else if (a == "tanh" || a == "erf" || a == "sin" || a == "softplus") {
            act.kind = ActivationKind::custom;
            act.name = a;
            if (a == "tanh") act.custom = [](double x) { return std::tanh(x); };
            if (a == "erf") act.custom = [](double x) { return std::erf(x); };
            if (a == "sin") act.custom = [](double x) { return std::sin(x); };
            if (a == "softplus") act.custom = [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); };
        } else {
            throw ConfigError("kernel: unknown activation '" + a + "' (relu, gaussian-exp, linear, tanh, erf, sin, softplus)");
        }
        return kernel_from_activation(act);
    }
    throw ConfigError("kernel: unknown kind '" + kind + "' (relu, exp, linear, hermite, activation)");
}

inline PointConfig build_points(const RunConfig& cfg) {
    if (cfg.dim < 1) throw ConfigError("dim: must be >= 1");
    if (!cfg.inline_points.empty()) return make_config(cfg.dim, cfg.inline_points);
    if (cfg.points.rfind("uniform:", 0) == 0) {
        const auto p = split(cfg.points.substr(8), ':');
        if (p.size() != 2) throw ConfigError("points: expected uniform:m:seed");
        const long m = parse_long(p[0], "points"), seed = parse_long(p[1], "points");
        if (m < 1 || seed < 0) throw ConfigError("points: uniform needs m >= 1 and seed >= 0");
        return uniform_points(cfg.dim, static_cast<int>(m), static_cast<std::uint64_t>(seed));
    }
    const auto rows = parse_inline_points(cfg.points);
    if (rows.empty()) throw ConfigError("points: no points given");
    return make_config(cfg.dim, rows);
}

inline std::vector<double> build_grid(const GridSpec& g) {
    if (g.kind == "chebyshev") return chebyshev_grid(g.n);
    if (g.kind == "jacobi") return {};  // filled by the caller from the quadrature rule
    if (g.kind == "list") {
        if (g.values.empty()) throw ConfigError("grid: empty list");
        auto v = g.values;
        for (double t : v)
            if (!(t >= -1.0 && t <= 1.0)) throw ConfigError("grid: values must lie in [-1, 1]");
        std::sort(v.begin(), v.end());
        return v;
    }
    throw ConfigError("grid: unknown kind '" + g.kind + "'");
}

// ---------------------------------------------------------------- output

inline std::string default_label() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

inline fs::path output_dir(const RunConfig& cfg, const std::string& command) {
    const fs::path dir = fs::path(cfg.out.empty() ? "dka-out" : cfg.out) / command /
                         (cfg.label.empty() ? default_label() : cfg.label);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("out: cannot create " + dir.string() + ": " + ec.message());
    return dir;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::numeric, "cannot write " + path.string());
    os << text;
}

inline json tolerances_json(const Tolerances& t) {
    return {{"regime", t.regime},           {"symmetry", t.symmetry},
            {"pole", t.pole},               {"max_depth", t.max_depth},
            {"low_profile_rel", t.low_profile_rel}, {"sparse_depth", t.sparse_depth},
            {"sparse_deficit_floor", t.sparse_deficit_floor}};
}

inline json meta_json(const std::string& command, const RunConfig& cfg, const Kernel& k) {
    json m;
    m["command"] = command;
    m["kernel"] = k.label();
    m["kernel_digest"] = k.digest();
    m["dim"] = cfg.dim;
    m["seed"] = cfg.seed;
    m["L_schedule"] = cfg.schedule;
    m["tolerances"] = tolerances_json(cfg.tol);
    if (!cfg.source.empty()) m["config"] = cfg.source;
    return m;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

template <class Fn>
std::string csv_text(Fn&& fn) {
    std::ostringstream os;
    CsvWriter w(os);
    fn(w);
    return os.str();
}

// ---------------------------------------------------------------- commands

struct Context {
    RunConfig cfg;
    bool out_given = false;
    std::ostream& out;
    std::ostream& err;
};

inline RegimeReport analyze_kernel(const Kernel& k, const RunConfig& cfg) {
    auto rep = classify_regime(k, cfg.tol);
    if (cfg.rho && rep.regime == Regime::sparse) {
        rep.rho = cfg.rho;
        rep.regularity_source = "user";
        if (rep.c) rep.h = sparse_plateau(*rep.c, *cfg.rho);
    }
    return rep;
}

inline int cmd_analyze(Context& ctx) {
    const auto k = build_kernel(ctx.cfg.kernel);
    const auto rep = analyze_kernel(k, ctx.cfg);
    json j = to_json(rep);
    j["kernel"] = k.label();
    ctx.out << dump(j);
    if (ctx.out_given) {
        const auto dir = output_dir(ctx.cfg, "analyze");
        write_text(dir / "report.json", dump(j));
        write_text(dir / "meta.json", dump(meta_json("analyze", ctx.cfg, k)));
    }
    return ok;
}

inline int cmd_profile(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto k = build_kernel(cfg.kernel);
    const auto rep = analyze_kernel(k, cfg);
    ProfileTable table;
    if (rep.regime == Regime::high_disorder)
        fail(ErrorKind::domain, "no limit profile in the high-disorder regime (kappa'(1) = " +
                                    format_number(rep.kprime1) + " > 1)");
    if (rep.regime == Regime::low_disorder) {
        if (cfg.grid.kind == "jacobi")
            table = profile_on_quadrature_grid(k, cfg.dim, cfg.grid.n, cfg.tol);
        else
            table = limit_profile_low(k, build_grid(cfg.grid), cfg.tol);
    } else {
        if (!rep.rho) fail(ErrorKind::assumption_not_detectable, "sparse regime without a usable rho: " + rep.fit_failure);
        auto grid = cfg.grid.kind == "jacobi" ? gauss_gegenbauer(cfg.grid.n, cfg.dim).nodes : build_grid(cfg.grid);
        table = limit_profile_sparse(k, grid, *rep.rho, rep.h, cfg.tol);
    }
    const auto dir = output_dir(cfg, "profile");
    std::ostringstream profile_csv;
    write_profile_csv(profile_csv, table);
    write_text(dir / "profile.csv", profile_csv.str());
    json meta = meta_json("profile", cfg, k);
    meta["regime"] = to_string(rep.regime);
    meta["grid"] = cfg.grid.kind;
    meta["invariant_violations"] = table.invariant_violations;
    meta["all_converged"] = table.all_converged();
    if (cfg.lmax > 0) {
        const auto sc = spectral_coeffs(k, cfg.dim, cfg.lmax, cfg.depth.value_or(1));
        std::ostringstream os;
        write_spectral_csv(os, sc);
        write_text(dir / "spectral.csv", os.str());
        meta["spectral_depth"] = cfg.depth.value_or(1);
        meta["lmax"] = cfg.lmax;
    }
    write_text(dir / "meta.json", dump(meta));
    ctx.out << (dir / "profile.csv").string() << "\n";
    if (!table.all_converged()) ctx.err << "warning: some profile points did not converge\n";
    return ok;
}

inline int cmd_rates(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto k = build_kernel(cfg.kernel);
    const auto rep = analyze_kernel(k, cfg);
    if (rep.regime == Regime::high_disorder)
        fail(ErrorKind::domain, "rate functions are defined for the low-disorder and sparse regimes only");
    const auto points = build_points(cfg);
    if (cfg.y.empty()) throw ConfigError("y: no y vectors given (config key y or --y-file)");
    const auto g = regime_profile(k, rep);
    const auto b1 = matrix_B1(g, points);
    const auto b2 = matrix_B2(g, points);
    const bool sparse = rep.regime == Regime::sparse;
    bool has_north = false;
    for (bool f : points.north_flags) has_north = has_north || f;

    std::ostringstream rates, contraction;
    CsvWriter rw(rates), cw(contraction);
    rw.header({"index", "matrix", "value", "in_range", "residual", "closed_form"});
    cw.header({"index", "direct", "contracted", "z_star", "gap", "converged"});
    for (std::size_t n = 0; n < cfg.y.size(); ++n) {
        const auto& yv = cfg.y[n];
        if (static_cast<int>(yv.size()) != points.size())
            throw ConfigError("y: vector " + std::to_string(n) + " has " + std::to_string(yv.size()) +
                              " entries, the configuration has " + std::to_string(points.size()) + " points");
        const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
        for (const auto* model : {&b1, &b2}) {
            const auto r = rate_eval(*model, y);
            rw.cell(static_cast<long>(n)).cell(to_string(model->which)).cell(r.value).cell(r.finite() ? 1 : 0).cell(r.residual);
            if (sparse) {
                const auto cf = model->which == MatrixKind::B1 ? sparse_rate_1(points, y, *rep.h, *rep.symmetry)
                                                               : sparse_rate_2(points, y, *rep.h, *rep.symmetry);
                rw.cell(cf.value);
            } else {
                rw.cell("");
            }
            rw.end_row();
        }
        if (!has_north) {
            const auto c = contraction_check(g, points, y);
            cw.cell(static_cast<long>(n)).cell(c.direct.value).cell(c.contracted.value).cell(c.z_star).cell(c.gap)
                .cell(c.converged ? 1 : 0).end_row();
        }
    }
    const auto dir = output_dir(cfg, "rates");
    write_text(dir / "rates.csv", rates.str());
    if (!has_north) write_text(dir / "contraction.csv", contraction.str());
    write_text(dir / "B1.json", dump(to_json(b1)));
    write_text(dir / "B2.json", dump(to_json(b2)));
    json meta = meta_json("rates", cfg, k);
    meta["regime"] = to_string(rep.regime);
    meta["config_digest"] = config_digest(points);
    meta["points"] = points.size();
    write_text(dir / "meta.json", dump(meta));
    ctx.out << (dir / "rates.csv").string() << "\n";
    return ok;
}

struct Check {
    std::string name;
    double value;
    double tolerance;
    bool pass;
};

inline int cmd_verify(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto k = build_kernel(cfg.kernel);
    const auto rep = analyze_kernel(k, cfg);
    const auto points = build_points(cfg);
    const auto dir = output_dir(cfg, "verify");
    std::vector<Check> checks;

    if (rep.regime == Regime::high_disorder) {
        const long L = cfg.schedule.back();
        const auto hd = high_disorder_limits(k, rep, points, L);
        double worst = 0.0;
        write_text(dir / "high_disorder.csv", csv_text([&](CsvWriter& w) {
            w.header({"centering", "i", "j", "value", "limit", "gap"});
            for (const auto& r : hd.rows) {
                w.cell(to_string(r.centering)).cell(r.i).cell(r.j).cell(r.value).cell(r.limit).cell(r.gap).end_row();
                worst = std::max(worst, r.gap);
            }
        }));
        checks.push_back({"high_disorder_limits", worst, cfg.verify_tol.high_disorder, worst <= cfg.verify_tol.high_disorder});
    } else {
        const auto conv = covariance_convergence(k, rep, points, cfg.centering, cfg.schedule, cfg.rho);
        double scale = 0.0, last = 0.0;
        for (const auto& r : conv) {
            scale = std::max(scale, std::abs(r.limit));
            if (r.depth == cfg.schedule.back()) last = std::max(last, r.distance);
        }
        const double rel = scale > 0.0 ? last / scale : last;
        write_text(dir / "convergence.csv", csv_text([&](CsvWriter& w) {
            w.header({"L", "v_L", "i", "j", "scaled", "limit", "distance"});
            for (const auto& r : conv)
                w.cell(r.depth).cell(r.speed).cell(r.i).cell(r.j).cell(r.scaled).cell(r.limit).cell(r.distance).end_row();
        }));
        checks.push_back({"covariance_convergence", rel, cfg.verify_tol.covariance, rel <= cfg.verify_tol.covariance});

        Eigen::VectorXd theta = Eigen::VectorXd::Ones(points.size());
        if (!cfg.theta.empty()) {
            if (static_cast<int>(cfg.theta.size()) != points.size()) throw ConfigError("theta: length must equal the number of points");
            theta = Eigen::Map<const Eigen::VectorXd>(cfg.theta.data(), static_cast<Eigen::Index>(cfg.theta.size()));
        }
        const auto tail = tail_rate_curve(k, rep, points, cfg.centering, theta, cfg.level, cfg.schedule, cfg.rho);
        write_text(dir / "tail.csv", csv_text([&](CsvWriter& w) {
            w.header({"L", "v_L", "variance", "log_p", "curve", "limit", "gap"});
            for (const auto& r : tail)
                w.cell(r.depth).cell(r.speed).cell(r.variance).cell(r.log_p).cell(r.curve).cell(r.limit).cell(r.gap).end_row();
        }));
        const double tail_rel = tail.back().gap / std::abs(tail.back().limit);
        checks.push_back({"tail_rate_curve", tail_rel, cfg.verify_tol.tail, tail_rel <= cfg.verify_tol.tail});

        const auto weak = weak_convergence_test(k, rep, points, cfg.centering, cfg.depth.value_or(cfg.schedule.back()), cfg.samples, cfg.seed, cfg.rho);
        write_text(dir / "weak.csv", csv_text([&](CsvWriter& w) {
            w.header({"i", "j", "empirical", "limit", "standard_error"});
            for (int i = 0; i < points.size(); ++i)
                for (int j = 0; j <= i; ++j)
                    w.cell(i).cell(j).cell(weak.empirical(i, j)).cell(weak.limit(i, j)).cell(weak.standard_error(i, j)).end_row();
        }));
        write_text(dir / "moments.csv", csv_text([&](CsvWriter& w) {
            w.header({"i", "skewness", "kurtosis", "skew_band", "kurt_band"});
            for (std::size_t i = 0; i < weak.skewness.size(); ++i)
                w.cell(static_cast<long>(i)).cell(weak.skewness[i]).cell(weak.kurtosis[i]).cell(weak.skew_band).cell(weak.kurt_band).end_row();
        }));
        checks.push_back({"weak_convergence_covariance", weak.worst_band_ratio, 1.0, weak.insufficient_power || weak.covariance_in_band});
        checks.push_back({"weak_convergence_moments", weak.moments_in_band ? 0.0 : 1.0, 0.0,
                          weak.insufficient_power || weak.moments_in_band});
        if (weak.insufficient_power) ctx.err << "note: n < " << kMinPoweredSample << ", weak convergence test has insufficient power\n";

        if (rep.regime == Regime::sparse) {
            const auto rows = sparse_discontinuity_demo(k, rep, cfg.dim, cfg.eps, cfg.discontinuity_depth);
            double worst = 0.0;
            write_text(dir / "discontinuity.csv", csv_text([&](CsvWriter& w) {
                w.header({"eps", "inner", "diag_plain", "off_plain", "diag_estimate", "off_estimate", "ratio_plain",
                          "ratio_estimate", "diag_limit", "off_limit"});
                for (const auto& r : rows) {
                    w.cell(r.eps).cell(r.inner).cell(r.diag_plain).cell(r.off_plain).cell(r.diag_estimate)
                        .cell(r.off_estimate).cell(r.ratio_plain).cell(r.ratio_estimate).cell(r.diag_limit)
                        .cell(r.off_limit).end_row();
                    worst = std::max({worst, std::abs(r.diag_estimate - r.diag_limit) / r.diag_limit,
                                      std::abs(r.off_estimate - r.off_limit) / r.diag_limit});
                }
            }));
            checks.push_back({"sparse_discontinuity", worst, cfg.verify_tol.discontinuity, worst <= cfg.verify_tol.discontinuity});
        }
    }

    bool all = true;
    json summary;
    summary["regime"] = to_string(rep.regime);
    summary["checks"] = json::array();
    for (const auto& c : checks) {
        all = all && c.pass;
        summary["checks"].push_back({{"name", c.name}, {"value", json_number(c.value)}, {"tolerance", c.tolerance},
                                     {"result", c.pass ? "PASS" : "FAIL"}});
        ctx.out << (c.pass ? "PASS " : "FAIL ") << c.name << " " << format_number(c.value) << " (tol "
                << format_number(c.tolerance) << ")\n";
    }
    summary["result"] = all ? "PASS" : "FAIL";
    write_text(dir / "summary.json", dump(summary));
    json meta = meta_json("verify", cfg, k);
    meta["regime"] = to_string(rep.regime);
    meta["centering"] = to_string(cfg.centering);
    meta["config_digest"] = config_digest(points);
    meta["depth"] = cfg.depth.value_or(cfg.schedule.back());
    meta["samples"] = cfg.samples;
    write_text(dir / "meta.json", dump(meta));
    return all ? ok : verify_failed;
}

inline int cmd_sample(Context& ctx) {
    const auto& cfg = ctx.cfg;
    const auto k = build_kernel(cfg.kernel);
    const auto points = build_points(cfg);
    if (cfg.samples < 1) throw ConfigError("samples: must be >= 1");
    const long depth = cfg.depth.value_or(cfg.schedule.back());
    const auto cc = centered_covariance(k, points, depth, cfg.centering);
    const auto batch = sample(cc, cfg.samples, cfg.seed);
    const auto dir = output_dir(cfg, "sample");
    write_text(dir / "samples.csv", csv_text([&](CsvWriter& w) {
        std::vector<std::string> cols;
        for (int i = 0; i < points.size(); ++i) cols.push_back("x" + std::to_string(i));
        w.header(cols);
        for (Eigen::Index r = 0; r < batch.draws.rows(); ++r) {
            for (Eigen::Index c = 0; c < batch.draws.cols(); ++c) w.cell(batch.draws(r, c));
            w.end_row();
        }
    }));
    write_text(dir / "covariance.csv", csv_text([&](CsvWriter& w) {
        w.header({"i", "j", "sigma"});
        for (int i = 0; i < points.size(); ++i)
            for (int j = 0; j <= i; ++j) w.cell(i).cell(j).cell(cc.sigma(i, j)).end_row();
    }));
    json meta = meta_json("sample", cfg, k);
    meta["depth"] = depth;
    meta["samples"] = cfg.samples;
    meta["centering"] = to_string(cfg.centering);
    meta["config_digest"] = batch.config_digest;
    meta["jitter"] = batch.jitter;
    write_text(dir / "meta.json", dump(meta));
    ctx.out << (dir / "samples.csv").string() << "\n";
    return ok;
}

// ---------------------------------------------------------------- entry point

/// Flags shared by every subcommand. Stored as strings and applied on top of
/// the config file only when given, so the command line wins.
struct Flags {
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string y_file;
    unsigned threads = 0;

    void add(CLI::App* app) {
        app->add_option("-c,--config", config, "JSON run configuration");
        const std::vector<std::pair<std::string, std::string>> spec{
            {"kernel", "relu | exp | linear | hermite | activation"},
            {"gamma", "exponential kernel parameter"},
            {"coeffs", "Hermite coefficients b_0,b_1,..."},
            {"activation", "relu | gaussian-exp | linear | tanh | erf | sin | softplus"},
            {"width", "gaussian-exp width a"},
            {"order", "activation quadrature order"},
            {"dim", "sphere dimension d"},
            {"points", "x,y,z;x,y,z or uniform:m:seed"},
            {"centering", "north-pole | spherical-average"},
            {"L", "depth schedule: L1,L2,... or geom:start:ratio:count"},
            {"grid", "chebyshev:n | jacobi:n | list:t1,t2,..."},
            {"out", "output root directory"},
            {"label", "run label (default: UTC timestamp)"},
            {"seed", "RNG seed"},
            {"samples", "number of draws"},
            {"depth", "depth for sampling, weak convergence and spectral coefficients"},
            {"theta", "tail direction theta_1,...,theta_m"},
            {"level", "tail level a"},
            {"eps", "discontinuity eps schedule"},
            {"rho", "override the regularity exponent rho"},
            {"lmax", "also emit Gegenbauer coefficients up to this degree"},
        };
        for (const auto& [name, help] : spec) options[name] = app->add_option("--" + name, values[name], help);
        options["y-file"] = app->add_option("--y-file", y_file, "CSV file with one y vector per row")->check(CLI::ExistingFile);
        options["threads"] = app->add_option("--threads", threads, "worker cap (also DKA_THREADS)");
    }

    [[nodiscard]] bool given(const std::string& name) const { return options.at(name)->count() > 0; }

    void apply(RunConfig& cfg) const {
        auto v = [&](const std::string& n) -> const std::string& { return values.at(n); };
        if (given("kernel")) cfg.kernel.kind = v("kernel");
        if (given("gamma")) cfg.kernel.gamma = parse_double(v("gamma"), "--gamma");
        if (given("coeffs")) cfg.kernel.coeffs = parse_doubles(v("coeffs"), "--coeffs");
        if (given("activation")) {
            cfg.kernel.activation = v("activation");
            if (!given("kernel")) cfg.kernel.kind = "activation";
        }
        if (given("width")) cfg.kernel.width = parse_double(v("width"), "--width");
        if (given("order")) cfg.kernel.order = static_cast<int>(parse_long(v("order"), "--order"));
        if (given("dim")) cfg.dim = static_cast<int>(parse_long(v("dim"), "--dim"));
        if (given("points")) {
            cfg.points = v("points");
            cfg.inline_points.clear();
        }
        if (given("centering")) cfg.centering = parse_centering(v("centering"));
        if (given("L")) {
            cfg.schedule = parse_schedule(v("L"));
            check_schedule(cfg.schedule);
        }
        if (given("grid")) cfg.grid = parse_grid(v("grid"));
        if (given("out")) cfg.out = v("out");
        if (given("label")) cfg.label = v("label");
        if (given("seed")) {
            const long s = parse_long(v("seed"), "--seed");
            if (s < 0) throw ConfigError("--seed: must be >= 0");
            cfg.seed = static_cast<std::uint64_t>(s);
        }
        if (given("samples")) cfg.samples = parse_long(v("samples"), "--samples");
        if (given("depth")) cfg.depth = parse_long(v("depth"), "--depth");
        if (given("theta")) cfg.theta = parse_doubles(v("theta"), "--theta");
        if (given("level")) cfg.level = parse_double(v("level"), "--level");
        if (given("eps")) cfg.eps = parse_doubles(v("eps"), "--eps");
        if (given("rho")) cfg.rho = parse_double(v("rho"), "--rho");
        if (given("lmax")) cfg.lmax = static_cast<int>(parse_long(v("lmax"), "--lmax"));
        if (given("y-file")) cfg.y = read_y_file(y_file);
        if (given("threads")) thread_cap() = threads;
        if (cfg.depth && *cfg.depth < 1) throw ConfigError("depth: must be >= 1");
    }

    static std::vector<std::vector<double>> read_y_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError(path + ": cannot open y file");
        std::vector<std::vector<double>> ys;
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty() || line[0] == '#') continue;
            try {
                ys.push_back(parse_doubles(line, "y"));
            } catch (const ConfigError& e) {
                throw ConfigError(path + ":" + std::to_string(n) + ": " + e.what());
            }
        }
        return ys;
    }
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Deep kernel asymptotics: regimes, limit profiles, rate functions and exact simulation"};
    app.require_subcommand(1);
    const std::vector<std::pair<std::string, std::string>> commands{
        {"analyze", "classify the kernel regime and report kappa'(1), rho, c, h or t*"},
        {"profile", "tabulate the limit profile (and optionally Gegenbauer coefficients)"},
        {"rates", "evaluate the rate functions I1 and I2 at the given y vectors"},
        {"verify", "run the finite-depth verification suite and write a PASS/FAIL summary"},
        {"sample", "draw exact samples of the centered field at depth L"},
    };
    std::map<std::string, Flags> flags;
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, help] : commands) {
        subs[name] = app.add_subcommand(name, help);
        flags[name].add(subs[name]);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return ok;
        }
        err << "error: " << e.what() << "\n";
        return config_error;
    }

    std::string command;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) command = name;
    const auto& f = flags.at(command);

    try {
        Context ctx{RunConfig{}, false, out, err};
        if (!f.config.empty()) load_config_file(f.config, ctx.cfg);
        f.apply(ctx.cfg);
        ctx.out_given = f.given("out") || !ctx.cfg.out.empty();
        if (command == "analyze") return cmd_analyze(ctx);
        if (command == "profile") return cmd_profile(ctx);
        if (command == "rates") return cmd_rates(ctx);
        if (command == "verify") return cmd_verify(ctx);
        return cmd_sample(ctx);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_config() ? config_error : numeric_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return numeric_error;
    }
}

}  // namespace dka::cli
