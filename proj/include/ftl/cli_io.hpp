#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "ftl/atomization.hpp"
#include "ftl/density_metrics.hpp"
#include "ftl/diagnostics.hpp"
#include "ftl/error.hpp"
#include "ftl/integrator.hpp"
#include "ftl/model.hpp"

namespace ftl {

// ---------------------------------------------------------------------------
// Number formatting

/// Shortest decimal string that reads back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw Error("not a number: '" + std::string(s) + "'");
    }
    return v;
}

inline std::size_t parse_index(std::string_view s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw Error("not an index: '" + std::string(s) + "'");
    }
    return v;
}

// ---------------------------------------------------------------------------
// Run configuration

struct DiffusionChoice {
    std::string preset = "pm";  ///< pm | tp | sd | none
    double epsilon = 1.0;
    double exponent = 2.0;      ///< tp only

    bool operator==(const DiffusionChoice&) const = default;
};

struct VelocityChoice {
    std::string preset = "saturating";  ///< saturating | constant
    double rho_max = 1.0;

    bool operator==(const VelocityChoice&) const = default;
};

struct KernelChoice {
    std::string preset = "gaussian";  ///< gaussian | none
    double strength = 1.0;

    bool operator==(const KernelChoice&) const = default;
};

struct DatumChoice {
    std::string preset = "constant";  ///< constant | two_step | sine
    double value = 0.7;               ///< constant
    double left = 1.0;                ///< two_step
    double right = 1.0;               ///< two_step
    double split = 0.5;               ///< two_step
    double length = 1.0;              ///< constant, two_step; sine is fixed to 2

    bool operator==(const DatumChoice&) const = default;
};

struct IntegratorChoice {
    double abs_tolerance = 1e-8;
    double safety_factor = 0.8;
    double max_step = 0.0;  ///< 0 selects t_final / 100
    double min_step = 0.0;  ///< 0 selects 1e-12 t_final
    std::size_t snapshots = 101;
    int threads = 1;

    bool operator==(const IntegratorChoice&) const = default;
};

struct DiagnosticsChoice {
    bool minmax = true;
    bool tv = true;
    double tv_fit_fraction = 0.5;
    bool w1 = true;
    int test_modes = 3;

    bool operator==(const DiagnosticsChoice&) const = default;
};

struct RunConfig {
    std::string name = "run";
    DiffusionChoice diffusion;
    VelocityChoice velocity;
    KernelChoice kernel;
    DatumChoice datum;
    std::size_t particles = 0;
    double t_final = 0.0;
    IntegratorChoice integrator;
    std::string mode = "single";  ///< single | converge | diagnostics
    std::vector<std::size_t> n_list;
    DiagnosticsChoice diagnostics;
    std::string output_directory = "out";
    bool write_trajectory = true;

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

using json = nlohmann::json;

class SchemaReader {
public:
    std::vector<ConfigIssue> issues;

    void issue(std::string path, std::string message) {
        issues.push_back({std::move(path), std::move(message)});
    }

    /// Returns the object at `key` (or nullptr when absent); flags non-objects.
    const json* object(const json& parent, const std::string& path, const char* key,
                       bool required) {
        const std::string p = path + "/" + key;
        if (!parent.is_object() || !parent.contains(key)) {
            if (required) issue(p, "missing required key");
            return nullptr;
        }
        const json& v = parent.at(key);
        if (!v.is_object()) {
            issue(p, "must be an object");
            return nullptr;
        }
        return &v;
    }

    void keys(const json& obj, const std::string& path, std::set<std::string> allowed) {
        for (const auto& [k, v] : obj.items()) {
            if (!allowed.count(k)) issue(path + "/" + k, "unknown key");
        }
    }

    bool number(const json* obj, const std::string& path, const char* key, double& out,
                bool required) {
        const std::string p = path + "/" + key;
        if (obj == nullptr || !obj->contains(key)) {
            if (required) issue(p, "missing required key");
            return false;
        }
        const json& v = obj->at(key);
        if (!v.is_number()) {
            issue(p, "must be a number");
            return false;
        }
        out = v.get<double>();
        if (!std::isfinite(out)) {
            issue(p, "must be finite");
            return false;
        }
        return true;
    }

    bool count(const json* obj, const std::string& path, const char* key, std::size_t& out,
               bool required) {
        const std::string p = path + "/" + key;
        if (obj == nullptr || !obj->contains(key)) {
            if (required) issue(p, "missing required key");
            return false;
        }
        const json& v = obj->at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0) {
            issue(p, "must be a non-negative integer");
            return false;
        }
        out = v.get<std::size_t>();
        return true;
    }

    bool text(const json* obj, const std::string& path, const char* key, std::string& out,
              bool required) {
        const std::string p = path + "/" + key;
        if (obj == nullptr || !obj->contains(key)) {
            if (required) issue(p, "missing required key");
            return false;
        }
        const json& v = obj->at(key);
        if (!v.is_string()) {
            issue(p, "must be a string");
            return false;
        }
        out = v.get<std::string>();
        return true;
    }

    bool flag(const json* obj, const std::string& path, const char* key, bool& out) {
        if (obj == nullptr || !obj->contains(key)) return false;
        const json& v = obj->at(key);
        if (!v.is_boolean()) {
            issue(path + "/" + key, "must be true or false");
            return false;
        }
        out = v.get<bool>();
        return true;
    }

    void positive(const std::string& path, double v) {
        if (!(v > 0.0)) issue(path, "must be positive");
    }
};

}  // namespace detail

/// Parses a configuration document (JSON). The schema is documented in the
/// README. Every problem is collected and reported together as a ConfigError,
/// each addressed by a JSON pointer. A run manifest is accepted too: its
/// "config" member is parsed.
inline RunConfig parse_config(const nlohmann::json& document) {
    using detail::json;
    detail::SchemaReader r;
    RunConfig cfg;

    const json* doc = &document;
    if (doc->is_object() && doc->contains("config") && doc->contains("status")) {
        doc = &doc->at("config");
    }
    if (!doc->is_object()) {
        if (!doc->is_null()) throw ConfigError(std::vector<ConfigIssue>{{"", "document must be an object"}});
        static const json empty = json::object();
        doc = &empty;
    }
    r.keys(*doc, "", {"name", "model", "datum", "particles", "t_final", "integrator", "study",
                      "diagnostics", "output"});
    r.text(doc, "", "name", cfg.name, false);

    // model
    const json* model = r.object(*doc, "", "model", true);
    const json* diff = model ? r.object(*model, "/model", "diffusion", true) : nullptr;
    const json* vel = model ? r.object(*model, "/model", "velocity", true) : nullptr;
    const json* ker = model ? r.object(*model, "/model", "kernel", true) : nullptr;
    if (model) r.keys(*model, "/model", {"diffusion", "velocity", "kernel"});
    if (!model) {
        r.issue("/model/diffusion/preset", "missing required key");
        r.issue("/model/velocity/preset", "missing required key");
        r.issue("/model/kernel/preset", "missing required key");
    }

    if (diff) {
        const std::string p = "/model/diffusion";
        if (r.text(diff, p, "preset", cfg.diffusion.preset, true)) {
            const auto& name = cfg.diffusion.preset;
            if (name == "pm" || name == "sd") {
                r.keys(*diff, p, {"preset", "epsilon"});
                if (r.number(diff, p, "epsilon", cfg.diffusion.epsilon, true)) {
                    r.positive(p + "/epsilon", cfg.diffusion.epsilon);
                }
            } else if (name == "tp") {
                r.keys(*diff, p, {"preset", "epsilon", "exponent"});
                if (r.number(diff, p, "epsilon", cfg.diffusion.epsilon, true)) {
                    r.positive(p + "/epsilon", cfg.diffusion.epsilon);
                }
                if (r.number(diff, p, "exponent", cfg.diffusion.exponent, true) &&
                    !(cfg.diffusion.exponent >= 2.0)) {
                    r.issue(p + "/exponent", "must be >= 2");
                }
            } else if (name == "none") {
                r.keys(*diff, p, {"preset"});
            } else {
                r.issue(p + "/preset", "unknown preset '" + name + "' (pm, tp, sd, none)");
            }
        }
    }
    if (vel) {
        const std::string p = "/model/velocity";
        if (r.text(vel, p, "preset", cfg.velocity.preset, true)) {
            const auto& name = cfg.velocity.preset;
            if (name == "saturating" || name == "constant") {
                r.keys(*vel, p, {"preset", "rho_max"});
                if (r.number(vel, p, "rho_max", cfg.velocity.rho_max, name == "saturating")) {
                    r.positive(p + "/rho_max", cfg.velocity.rho_max);
                } else if (name == "constant") {
                    cfg.velocity.rho_max = std::numeric_limits<double>::max();
                }
            } else {
                r.issue(p + "/preset", "unknown preset '" + name + "' (saturating, constant)");
            }
        }
    }
    if (ker) {
        const std::string p = "/model/kernel";
        if (r.text(ker, p, "preset", cfg.kernel.preset, true)) {
            const auto& name = cfg.kernel.preset;
            if (name == "gaussian") {
                r.keys(*ker, p, {"preset", "strength"});
                if (r.number(ker, p, "strength", cfg.kernel.strength, true)) {
                    r.positive(p + "/strength", cfg.kernel.strength);
                }
            } else if (name == "none") {
                r.keys(*ker, p, {"preset"});
            } else {
                r.issue(p + "/preset", "unknown preset '" + name + "' (gaussian, none)");
            }
        }
    }

    // datum
    const json* dat = r.object(*doc, "", "datum", true);
    if (!dat) r.issue("/datum/preset", "missing required key");
    if (dat) {
        const std::string p = "/datum";
        auto& d = cfg.datum;
        if (r.text(dat, p, "preset", d.preset, true)) {
            if (d.preset == "constant") {
                r.keys(*dat, p, {"preset", "value", "length"});
                if (r.number(dat, p, "value", d.value, true)) r.positive(p + "/value", d.value);
                if (r.number(dat, p, "length", d.length, false)) r.positive(p + "/length", d.length);
            } else if (d.preset == "two_step") {
                r.keys(*dat, p, {"preset", "left", "right", "split", "length"});
                if (r.number(dat, p, "left", d.left, true)) r.positive(p + "/left", d.left);
                if (r.number(dat, p, "right", d.right, true)) r.positive(p + "/right", d.right);
                if (r.number(dat, p, "length", d.length, false)) r.positive(p + "/length", d.length);
                if (r.number(dat, p, "split", d.split, true) &&
                    !(d.split > 0.0 && d.split < d.length)) {
                    r.issue(p + "/split", "must lie strictly inside (0, length)");
                }
            } else if (d.preset == "sine") {
                r.keys(*dat, p, {"preset"});
                d.length = 2.0;
            } else {
                r.issue(p + "/preset",
                        "unknown preset '" + d.preset + "' (constant, two_step, sine)");
            }
        }
    }

    if (r.count(doc, "", "particles", cfg.particles, true) && cfg.particles < 2) {
        r.issue("/particles", "must be >= 2");
    }
    if (r.number(doc, "", "t_final", cfg.t_final, true)) r.positive("/t_final", cfg.t_final);

    // integrator
    if (const json* in = r.object(*doc, "", "integrator", false)) {
        const std::string p = "/integrator";
        auto& c = cfg.integrator;
        r.keys(*in, p, {"abs_tolerance", "safety_factor", "max_step", "min_step", "snapshots",
                        "threads"});
        if (r.number(in, p, "abs_tolerance", c.abs_tolerance, false)) {
            r.positive(p + "/abs_tolerance", c.abs_tolerance);
        }
        if (r.number(in, p, "safety_factor", c.safety_factor, false) &&
            !(c.safety_factor > 0.0 && c.safety_factor <= 1.0)) {
            r.issue(p + "/safety_factor", "must lie in (0, 1]");
        }
        if (r.number(in, p, "max_step", c.max_step, false) && c.max_step < 0.0) {
            r.issue(p + "/max_step", "must be >= 0 (0 selects the default)");
        }
        if (r.number(in, p, "min_step", c.min_step, false) && c.min_step < 0.0) {
            r.issue(p + "/min_step", "must be >= 0 (0 selects the default)");
        }
        if (r.count(in, p, "snapshots", c.snapshots, false) && c.snapshots < 2) {
            r.issue(p + "/snapshots", "must be >= 2");
        }
        std::size_t threads = 1;
        if (r.count(in, p, "threads", threads, false)) {
            if (threads < 1 || threads > 1024) r.issue(p + "/threads", "must lie in [1, 1024]");
            c.threads = static_cast<int>(threads);
        }
        if (c.max_step > 0.0 && cfg.t_final > 0.0 && c.max_step > cfg.t_final) {
            r.issue(p + "/max_step", "must not exceed t_final");
        }
        if (c.max_step > 0.0 && c.min_step > c.max_step) {
            r.issue(p + "/min_step", "must not exceed max_step");
        }
    }

    // study
    if (const json* st = r.object(*doc, "", "study", false)) {
        const std::string p = "/study";
        r.keys(*st, p, {"mode", "n_list"});
        if (r.text(st, p, "mode", cfg.mode, false) && cfg.mode != "single" &&
            cfg.mode != "converge" && cfg.mode != "diagnostics") {
            r.issue(p + "/mode", "unknown mode '" + cfg.mode + "' (single, converge, diagnostics)");
        }
        if (st->contains("n_list")) {
            const json& list = st->at("n_list");
            bool ok = list.is_array();
            if (ok) {
                for (const auto& e : list) {
                    if (!e.is_number_integer() || e.get<long long>() < 2) {
                        ok = false;
                        break;
                    }
                    cfg.n_list.push_back(e.get<std::size_t>());
                }
            }
            if (!ok) {
                r.issue(p + "/n_list", "must be an array of integers >= 2");
                cfg.n_list.clear();
            } else {
                for (std::size_t k = 1; k < cfg.n_list.size(); ++k) {
                    if (cfg.n_list[k] <= cfg.n_list[k - 1]) {
                        r.issue(p + "/n_list", "must be strictly increasing");
                        break;
                    }
                }
            }
        }
    }
    if (cfg.mode == "converge" && cfg.n_list.size() < 3) {
        r.issue("/study/n_list", "converge mode needs at least three particle counts");
    }

    // diagnostics
    if (const json* dg = r.object(*doc, "", "diagnostics", false)) {
        const std::string p = "/diagnostics";
        auto& c = cfg.diagnostics;
        r.keys(*dg, p, {"minmax", "tv", "tv_fit_fraction", "w1", "test_modes"});
        r.flag(dg, p, "minmax", c.minmax);
        r.flag(dg, p, "tv", c.tv);
        r.flag(dg, p, "w1", c.w1);
        if (r.number(dg, p, "tv_fit_fraction", c.tv_fit_fraction, false) &&
            !(c.tv_fit_fraction > 0.0 && c.tv_fit_fraction <= 1.0)) {
            r.issue(p + "/tv_fit_fraction", "must lie in (0, 1]");
        }
        std::size_t modes = 0;
        if (r.count(dg, p, "test_modes", modes, false)) {
            if (modes > 64) r.issue(p + "/test_modes", "must lie in [0, 64]");
            c.test_modes = static_cast<int>(modes);
        }
    }

    // output
    if (const json* out = r.object(*doc, "", "output", false)) {
        r.keys(*out, "/output", {"directory", "trajectory"});
        r.text(out, "/output", "directory", cfg.output_directory, false);
        r.flag(out, "/output", "trajectory", cfg.write_trajectory);
    }

    if (!r.issues.empty()) throw ConfigError(std::move(r.issues));
    return cfg;
}

inline RunConfig parse_config_text(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = text.empty() ? nlohmann::json() : nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::vector<ConfigIssue>{{"", std::string("malformed JSON: ") + e.what()}});
    }
    return parse_config(doc);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(std::vector<ConfigIssue>{{"", "cannot open " + path.string()}});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// The fully resolved configuration with every default made explicit.
inline nlohmann::json to_json(const RunConfig& cfg) {
    using nlohmann::json;
    json diff = {{"preset", cfg.diffusion.preset}};
    if (cfg.diffusion.preset != "none") diff["epsilon"] = cfg.diffusion.epsilon;
    if (cfg.diffusion.preset == "tp") diff["exponent"] = cfg.diffusion.exponent;
    json vel = {{"preset", cfg.velocity.preset}};
    if (cfg.velocity.preset == "saturating" ||
        cfg.velocity.rho_max != std::numeric_limits<double>::max()) {
        vel["rho_max"] = cfg.velocity.rho_max;
    }
    json ker = {{"preset", cfg.kernel.preset}};
    if (cfg.kernel.preset == "gaussian") ker["strength"] = cfg.kernel.strength;
    json dat = {{"preset", cfg.datum.preset}};
    if (cfg.datum.preset == "constant") {
        dat["value"] = cfg.datum.value;
        dat["length"] = cfg.datum.length;
    } else if (cfg.datum.preset == "two_step") {
        dat["left"] = cfg.datum.left;
        dat["right"] = cfg.datum.right;
        dat["split"] = cfg.datum.split;
        dat["length"] = cfg.datum.length;
    }
    json study = {{"mode", cfg.mode}};
    if (!cfg.n_list.empty()) study["n_list"] = cfg.n_list;
    return json{
        {"name", cfg.name},
        {"model", {{"diffusion", diff}, {"velocity", vel}, {"kernel", ker}}},
        {"datum", dat},
        {"particles", cfg.particles},
        {"t_final", cfg.t_final},
        {"integrator",
         {{"abs_tolerance", cfg.integrator.abs_tolerance},
          {"safety_factor", cfg.integrator.safety_factor},
          {"max_step", cfg.integrator.max_step},
          {"min_step", cfg.integrator.min_step},
          {"snapshots", cfg.integrator.snapshots},
          {"threads", cfg.integrator.threads}}},
        {"study", study},
        {"diagnostics",
         {{"minmax", cfg.diagnostics.minmax},
          {"tv", cfg.diagnostics.tv},
          {"tv_fit_fraction", cfg.diagnostics.tv_fit_fraction},
          {"w1", cfg.diagnostics.w1},
          {"test_modes", cfg.diagnostics.test_modes}}},
        {"output",
         {{"directory", cfg.output_directory}, {"trajectory", cfg.write_trajectory}}},
    };
}

// ---------------------------------------------------------------------------
// From configuration to model objects

struct Problem {
    ModelSpec spec;
    InitialDatum datum;
    DensityBounds bounds;
};

inline Problem build_problem(const RunConfig& cfg) {
    Problem p;
    const auto& d = cfg.datum;
    if (d.preset == "constant") {
        p.datum = preset_initial_constant(d.value, d.length);
    } else if (d.preset == "two_step") {
        p.datum = preset_initial_two_step(d.left, d.right, d.split, d.length);
    } else if (d.preset == "sine") {
        p.datum = preset_initial_sine();
    } else {
        throw ConfigError(std::vector<ConfigIssue>{{"/datum/preset", "unknown preset '" + d.preset + "'"}});
    }
    const double ell = p.datum.domain_length;

    DiffusionLaw phi;
    if (cfg.diffusion.preset == "pm") {
        phi = preset_phi_pm(cfg.diffusion.epsilon);
    } else if (cfg.diffusion.preset == "tp") {
        phi = preset_phi_tp(cfg.diffusion.epsilon, cfg.diffusion.exponent);
    } else if (cfg.diffusion.preset == "sd") {
        phi = preset_phi_sd(cfg.diffusion.epsilon);
    } else if (cfg.diffusion.preset == "none") {
        phi = zero_diffusion();
    } else {
        throw ConfigError(std::vector<ConfigIssue>{{"/model/diffusion/preset", "unknown preset"}});
    }
    VelocityLaw v = cfg.velocity.preset == "saturating"
                        ? preset_velocity_saturating(cfg.velocity.rho_max)
                        : constant_velocity(cfg.velocity.rho_max);
    InteractionKernel K = cfg.kernel.preset == "gaussian"
                              ? preset_kernel_gaussian(cfg.kernel.strength, ell)
                              : zero_kernel();
    p.spec = make_model(std::move(phi), std::move(v), std::move(K), ell, p.datum.mass());
    p.bounds = density_bounds(p.spec, p.datum);
    return p;
}

inline IntegratorConfig integrator_config(const RunConfig& cfg) {
    IntegratorConfig ic;
    ic.t_final = cfg.t_final;
    ic.abs_tolerance = cfg.integrator.abs_tolerance;
    ic.safety_factor = cfg.integrator.safety_factor;
    ic.max_step = cfg.integrator.max_step;
    ic.min_step = cfg.integrator.min_step;
    ic.snapshot_times = uniform_times(cfg.t_final, cfg.integrator.snapshots);
    ic.assembly.threads = cfg.integrator.threads;
    return ic;
}

inline DiagnosticsOptions diagnostics_options(const RunConfig& cfg) {
    DiagnosticsOptions o;
    const bool all = cfg.mode == "diagnostics";
    o.minmax = all || cfg.diagnostics.minmax;
    o.tv = all || cfg.diagnostics.tv;
    o.tv_fit_fraction = cfg.diagnostics.tv_fit_fraction;
    o.w1 = all || cfg.diagnostics.w1;
    o.test_modes = all ? std::max(cfg.diagnostics.test_modes, 3) : cfg.diagnostics.test_modes;
    return o;
}

// ---------------------------------------------------------------------------
// CSV formats

inline void write_snapshots_csv(std::ostream& out, const std::vector<ParticleState>& snaps) {
    out << "time,cell_index,x_left,x_right,density\n";
    for (const auto& s : snaps) {
        const auto r = local_densities(s);
        const std::string t = format_double(s.time);
        for (std::size_t i = 0; i < r.size(); ++i) {
            out << t << ',' << i << ',' << format_double(s.positions[i]) << ','
                << format_double(s.positions[i + 1]) << ',' << format_double(r[i]) << '\n';
        }
    }
}

inline void write_trajectory_csv(std::ostream& out, const std::vector<ParticleState>& snaps) {
    out << "time,particle_index,position\n";
    for (const auto& s : snaps) {
        const std::string t = format_double(s.time);
        for (std::size_t i = 0; i < s.positions.size(); ++i) {
            out << t << ',' << i << ',' << format_double(s.positions[i]) << '\n';
        }
    }
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline void expect_header(std::istream& in, std::string_view header, const std::string& what) {
    std::string line;
    if (!std::getline(in, line)) throw Error(what + ": empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) throw Error(what + ": unexpected header '" + line + "'");
}

}  // namespace detail

struct SnapshotTable {
    std::vector<double> times;
    std::vector<DiscreteDensity> densities;
};

/// Reads snapshots.csv. `mass` is the declared mass carried by every density.
inline SnapshotTable read_snapshots_csv(std::istream& in, double mass) {
    detail::expect_header(in, "time,cell_index,x_left,x_right,density", "snapshots.csv");
    SnapshotTable table;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 5) throw Error("snapshots.csv line " + std::to_string(lineno) + ": 5 fields expected");
        const double t = parse_double(f[0]);
        const std::size_t i = parse_index(f[1]);
        const double a = parse_double(f[2]);
        const double b = parse_double(f[3]);
        const double r = parse_double(f[4]);
        if (i == 0) {
            table.times.push_back(t);
            table.densities.push_back(DiscreteDensity{{a}, {}, mass});
        } else if (table.times.empty() || table.times.back() != t ||
                   table.densities.back().values.size() != i ||
                   table.densities.back().breakpoints.back() != a) {
            throw Error("snapshots.csv line " + std::to_string(lineno) + ": cells out of order");
        }
        table.densities.back().breakpoints.push_back(b);
        table.densities.back().values.push_back(r);
    }
    return table;
}

/// Reads trajectory.csv back into particle states of the given mass.
inline std::vector<ParticleState> read_trajectory_csv(std::istream& in, double mass) {
    detail::expect_header(in, "time,particle_index,position", "trajectory.csv");
    std::vector<ParticleState> snaps;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3) throw Error("trajectory.csv line " + std::to_string(lineno) + ": 3 fields expected");
        const double t = parse_double(f[0]);
        const std::size_t i = parse_index(f[1]);
        const double x = parse_double(f[2]);
        if (i == 0) {
            snaps.push_back(ParticleState{t, {}, mass});
        } else if (snaps.empty() || snaps.back().time != t || snaps.back().positions.size() != i) {
            throw Error("trajectory.csv line " + std::to_string(lineno) + ": particles out of order");
        }
        snaps.back().positions.push_back(x);
    }
    for (const auto& s : snaps) check_state(s);
    return snaps;
}

inline void write_convergence_csv(std::ostream& out, const ConvergenceStudy& study) {
    out << "n_coarse,n_fine,l1,w1\n";
    for (const auto& row : study.rows) {
        out << row.n_coarse << ',' << row.n_fine << ',' << format_double(row.l1) << ','
            << format_double(row.w1) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Reports

/// Long-format CSV: one row per recorded quantity; snapshot and time are empty
/// for run-level quantities.
inline void write_report_csv(std::ostream& out, const DiagnosticsReport& rep) {
    out << "field,snapshot,time,value\n";
    auto scalar = [&](const std::string& name, double v) {
        out << name << ",,," << format_double(v) << '\n';
    };
    scalar("c_used", rep.c_used);
    scalar("max_mass_error", rep.max_mass_error);
    scalar("final_min_density", rep.final_min_density);
    scalar("final_max_density", rep.final_max_density);
    scalar("final_max_jump", rep.final_max_jump);
    scalar("w1_lipschitz", rep.w1_lipschitz);
    for (std::size_t k = 0; k < rep.weak_residuals.size(); ++k) {
        scalar("weak_residual_mode_" + std::to_string(k + 1), rep.weak_residuals[k]);
    }
    if (rep.tv_checked) {
        scalar("tv_c1", rep.tv.c1);
        scalar("tv_c2", rep.tv.c2);
        scalar("tv_fit_end", rep.tv.fit_end);
        scalar("tv_min_margin", rep.tv.min_margin());
    }
    scalar("minmax_violations",
           rep.minmax_checked ? static_cast<double>(rep.minmax.violations()) : 0.0);
    scalar("pass", rep.pass() ? 1.0 : 0.0);
    auto row = [&](const char* name, std::size_t k, double t, double v) {
        out << name << ',' << k << ',' << format_double(t) << ',' << format_double(v) << '\n';
    };
    if (rep.minmax_checked) {
        for (std::size_t k = 0; k < rep.minmax.records.size(); ++k) {
            const auto& r = rep.minmax.records[k];
            row("min_gap", k, r.time, r.min_gap);
            row("max_gap", k, r.time, r.max_gap);
            row("gap_lower_bound", k, r.time, r.lower_bound);
            row("gap_upper_bound", k, r.time, r.upper_bound);
            row("minmax_pass", k, r.time, r.pass ? 1.0 : 0.0);
        }
    }
    if (rep.tv_checked) {
        for (std::size_t k = 0; k < rep.tv.times.size(); ++k) {
            row("tv", k, rep.tv.times[k], rep.tv.tv[k]);
            row("tv_envelope", k, rep.tv.times[k], rep.tv.envelope[k]);
        }
    }
}

inline void write_report_txt(std::ostream& out, const RunConfig& cfg, const Problem& problem,
                             const ValidationReport& validation, const DiagnosticsReport& rep,
                             const StepLog& log) {
    out << "run: " << cfg.name << "\n";
    out << "particles: " << cfg.particles << "  t_final: " << format_double(cfg.t_final)
        << "  mass: " << format_double(problem.spec.mass)
        << "  domain: [0, " << format_double(problem.spec.domain_length) << "]\n";
    out << "steps: accepted " << log.accepted << ", rejected " << log.rejected
        << ", gap-floor rejections " << log.gap_rejected << ", rhs evaluations "
        << log.rhs_evaluations << "\n";
    out << "validation: "
        << (validation.admissible() ? "admissible" : "hypotheses violated") << "\n";
    for (const auto& v : validation.violations) {
        out << "  [" << v.law << "] " << v.message << " (at " << format_double(v.at) << ")\n";
    }
    out << "density bounds: m = " << format_double(problem.bounds.lower)
        << ", M = " << format_double(problem.bounds.upper)
        << ", kernel bound L = " << format_double(problem.spec.kernel.bound) << "\n";
    out << "c_used: " << format_double(rep.c_used) << "\n";
    out << "mass error (max relative): " << format_double(rep.max_mass_error) << "\n";
    out << "final density: min " << format_double(rep.final_min_density) << ", max "
        << format_double(rep.final_max_density) << ", largest jump "
        << format_double(rep.final_max_jump) << "\n";
    if (rep.minmax_checked) {
        out << "min-max bracket: " << rep.minmax.records.size() - rep.minmax.violations() << "/"
            << rep.minmax.records.size() << " snapshots inside\n";
        for (const auto& r : rep.minmax.records) {
            if (!r.pass) {
                out << "  outside at t = " << format_double(r.time) << ", cell "
                    << r.worst_index << ": gaps [" << format_double(r.min_gap) << ", "
                    << format_double(r.max_gap) << "] vs bracket ["
                    << format_double(r.lower_bound) << ", " << format_double(r.upper_bound)
                    << "]\n";
            }
        }
    } else {
        out << "min-max bracket: not checked\n";
    }
    if (rep.tv_checked) {
        out << "TV envelope: C1 = " << format_double(rep.tv.c1) << ", C2 = "
            << format_double(rep.tv.c2) << ", fitted on [0, " << format_double(rep.tv.fit_end)
            << "], min margin " << format_double(rep.tv.min_margin())
            << (rep.tv.contained() ? " (contained)" : " (NOT contained)") << "\n";
    }
    out << "W1 time-Lipschitz constant: " << format_double(rep.w1_lipschitz) << "\n";
    for (std::size_t k = 0; k < rep.weak_residuals.size(); ++k) {
        out << "weak residual, mode " << k + 1 << ": " << format_double(rep.weak_residuals[k])
            << "\n";
    }
    out << "status: " << (rep.pass() ? "PASS" : "FAIL") << "\n";
}

// ---------------------------------------------------------------------------
// Drivers

/// Everything a run produces, kept in memory.
struct RunResult {
    bool completed = false;
    std::string error;
    double failure_time = 0.0;
    Problem problem;
    ValidationReport validation;
    Trajectory trajectory;
    DiagnosticsReport report;
    std::optional<ConvergenceStudy> convergence;

    bool pass() const { return completed && report.pass(); }
};

inline RunResult simulate(const RunConfig& cfg) {
    RunResult res;
    res.problem = build_problem(cfg);
    const auto& spec = res.problem.spec;
    res.validation = validate(spec, res.problem.datum);
    const IntegratorConfig ic = integrator_config(cfg);
    try {
        if (cfg.mode == "converge") {
            res.convergence = self_convergence(spec, res.problem.datum, cfg.n_list,
                                               cfg.t_final, ic);
        }
        integrate_into(atomize(res.problem.datum, spec, cfg.particles), spec, ic,
                       res.trajectory);
        res.completed = true;
    } catch (const IntegrationError& e) {
        res.error = e.what();
        res.failure_time = e.time();
    } catch (const Error& e) {
        res.error = e.what();
    }
    if (!res.trajectory.snapshots.empty()) {
        DiagnosticsOptions opts = diagnostics_options(cfg);
        if (!res.completed) opts.test_modes = 0;
        res.report = diagnose(res.trajectory, spec, res.problem.bounds, opts);
    }
    return res;
}

inline nlohmann::json manifest_json(const RunConfig& cfg, const RunResult& res,
                                    const std::vector<std::string>& outputs) {
    nlohmann::json m = {
        {"format_version", 1},
        {"status", res.completed ? "COMPLETED" : "FAILED"},
        {"diagnostics_pass", res.pass()},
        {"config", to_json(cfg)},
        {"outputs", outputs},
    };
    if (!res.completed) {
        m["error"] = res.error;
        m["failure_time"] = res.failure_time;
    }
    return m;
}

inline std::string snapshots_text(const RunResult& res) {
    std::ostringstream ss;
    write_snapshots_csv(ss, res.trajectory.snapshots);
    return ss.str();
}

inline std::string report_text(const RunConfig& cfg, const RunResult& res) {
    std::ostringstream ss;
    write_report_txt(ss, cfg, res.problem, res.validation, res.report, res.trajectory.step_log);
    if (!res.completed) ss << "integration FAILED: " << res.error << "\n";
    return ss.str();
}

inline std::string report_csv_text(const RunResult& res) {
    std::ostringstream ss;
    write_report_csv(ss, res.report);
    return ss.str();
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed: " + path.string());
}

}  // namespace detail

/// Writes every output of `res` into `dir`. Returns the process exit status:
/// 0 iff integration completed and every requested diagnostic passed.
inline int write_outputs(const RunConfig& cfg, const RunResult& res,
                         const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> outputs;
    detail::write_file(dir / "snapshots.csv", snapshots_text(res));
    outputs.push_back("snapshots.csv");
    if (cfg.write_trajectory) {
        std::ostringstream ss;
        write_trajectory_csv(ss, res.trajectory.snapshots);
        detail::write_file(dir / "trajectory.csv", ss.str());
        outputs.push_back("trajectory.csv");
    }
    detail::write_file(dir / "report.txt", report_text(cfg, res));
    detail::write_file(dir / "report.csv", report_csv_text(res));
    outputs.push_back("report.txt");
    outputs.push_back("report.csv");
    if (res.convergence) {
        std::ostringstream ss;
        write_convergence_csv(ss, *res.convergence);
        detail::write_file(dir / "convergence_table.csv", ss.str());
        outputs.push_back("convergence_table.csv");
    }
    detail::write_file(dir / "manifest.json", manifest_json(cfg, res, outputs).dump(2) + "\n");
    return res.pass() ? 0 : 1;
}

/// Runs the configuration twice with one worker and once with `threads`
/// workers and compares snapshot CSVs and reports byte for byte.
struct SeedCheck {
    bool identical = false;
    std::string detail;
};

inline SeedCheck seed_check(RunConfig cfg, int threads = 2) {
    cfg.integrator.threads = 1;
    const RunResult a = simulate(cfg);
    const RunResult b = simulate(cfg);
    cfg.integrator.threads = threads;
    const RunResult c = simulate(cfg);
    cfg.integrator.threads = 1;
    SeedCheck out;
    const std::string sa = snapshots_text(a), ra = report_text(cfg, a) + report_csv_text(a);
    const std::string sb = snapshots_text(b), rb = report_text(cfg, b) + report_csv_text(b);
    const std::string sc = snapshots_text(c), rc = report_text(cfg, c) + report_csv_text(c);
    const bool repeat = sa == sb && ra == rb;
    const bool workers = sa == sc && ra == rc;
    out.identical = repeat && workers;
    out.detail = std::string("repeat run: ") + (repeat ? "identical" : "DIFFERENT") +
                 "; " + std::to_string(threads) + " workers vs 1: " +
                 (workers ? "identical" : "DIFFERENT");
    return out;
}

/// Recomputes the diagnostics of a stored run directory (manifest.json +
/// trajectory.csv) without integrating.
inline DiagnosticsReport recompute_metrics(const std::filesystem::path& dir, RunConfig* config_out = nullptr) {
    const RunConfig cfg = load_config(dir / "manifest.json");
    const Problem problem = build_problem(cfg);
    std::ifstream in(dir / "trajectory.csv");
    if (!in) throw Error("cannot open " + (dir / "trajectory.csv").string());
    Trajectory traj;
    traj.snapshots = read_trajectory_csv(in, problem.spec.mass);
    if (traj.snapshots.empty()) throw Error("trajectory.csv holds no snapshots");
    if (config_out) *config_out = cfg;
    return diagnose(traj, problem.spec, problem.bounds, diagnostics_options(cfg));
}

}  // namespace ftl
