#include "epsolver/app.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "epsolver/elliptic.hpp"
#include "json.hpp"

#ifndef EPSOLVER_BUILD_ID
#define EPSOLVER_BUILD_ID "unknown"
#endif

namespace epsolver {

namespace fs = std::filesystem;

ConfigError::ConfigError(int l, const std::string& k, const std::string& what)
    : std::runtime_error(what), line(l), key(k) {}

std::string format_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) throw std::runtime_error("cannot format number");
    return std::string(buf, end);
}

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
    double x = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(x))
        throw std::invalid_argument("expected a number, got '" + s + "'");
    return x;
}

long long to_integer(const std::string& s) {
    long long x = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("expected an integer, got '" + s + "'");
    return x;
}

std::uint64_t to_unsigned(const std::string& s) {
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size())
        throw std::invalid_argument("expected a nonnegative integer, got '" + s + "'");
    return x;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw std::invalid_argument("expected true or false, got '" + s + "'");
}

int to_int(const std::string& s) {
    long long x = to_integer(s);
    if (x < -2147483647 || x > 2147483647) throw std::invalid_argument("integer out of range: " + s);
    return static_cast<int>(x);
}

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

enum class KeyType { integer, real, boolean, text };

struct KeySpec {
    std::string name;
    KeyType type;
    std::function<std::string(const ScenarioConfig&)> get;
    std::function<void(ScenarioConfig&, const std::string&)> set;
};

#define INT_KEY(key, field, check, msg)                                                            \
    KeySpec{key, KeyType::integer, [](const ScenarioConfig& c) { return std::to_string(c.field); }, \
            [](ScenarioConfig& c, const std::string& v) {                                        \
                auto x = to_int(v);                                                              \
                require(check, msg);                                                             \
                c.field = x;                                                                     \
            }}
#define REAL_KEY(key, field, check, msg)                                                            \
    KeySpec{key, KeyType::real, [](const ScenarioConfig& c) { return format_double(c.field); },    \
            [](ScenarioConfig& c, const std::string& v) {                                         \
                auto x = to_double(v);                                                            \
                require(check, msg);                                                              \
                c.field = x;                                                                      \
            }}
#define BOOL_KEY(key, field)                                                                            \
    KeySpec{key, KeyType::boolean, [](const ScenarioConfig& c) { return std::string(c.field ? "true" : "false"); }, \
            [](ScenarioConfig& c, const std::string& v) { c.field = to_bool(v); }}
#define TEXT_KEY(key, field, check, msg)                                           \
    KeySpec{key, KeyType::text, [](const ScenarioConfig& c) { return c.field; }, \
            [](ScenarioConfig& c, const std::string& x) {                        \
                require(check, msg);                                             \
                c.field = x;                                                     \
            }}

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> keys = {
        INT_KEY("grid.n1", grid.n1, x >= 1, "must be at least 1"),
        INT_KEY("grid.n2", grid.n2, x >= 1, "must be at least 1"),
        INT_KEY("grid.n3", grid.n3, x >= 5, "must be at least 5"),
        REAL_KEY("grid.length3", grid.length3, x > 0, "must be positive"),
        TEXT_KEY("profile.kind", profile.kind,
                 x == "sine" || x == "parabolic" || x == "lane_emden_slab" || x == "custom-table",
                 "must be sine, parabolic, lane_emden_slab or custom-table"),
        REAL_KEY("profile.gamma", profile.gamma, x > 1.0 && x < 3.0, "must lie in (1, 3)"),
        REAL_KEY("profile.amplitude", profile.amplitude, x > 0, "must be positive"),
        TEXT_KEY("profile.table", profile.table, true, ""),
        BOOL_KEY("profile.smooth", profile.smooth),
        TEXT_KEY("velocity.kind", velocity.kind, x == "zero" || x == "mode" || x == "gradient",
                 "must be zero, mode or gradient"),
        REAL_KEY("velocity.amplitude", velocity.amplitude, true, ""),
        INT_KEY("velocity.component", velocity.component, x >= 1 && x <= 3, "must be 1, 2 or 3"),
        INT_KEY("velocity.k1", velocity.k1, true, ""),
        INT_KEY("velocity.k2", velocity.k2, true, ""),
        INT_KEY("velocity.m", velocity.m, x >= 0, "must be nonnegative"),
        REAL_KEY("dynamics.kappa", dynamics.kappa, x >= 0, "must be nonnegative"),
        REAL_KEY("dynamics.cfl_safety", dynamics.cfl_safety, x > 0 && x <= 1, "must lie in (0, 1]"),
        REAL_KEY("dynamics.t_end", dynamics.t_end, x >= 0, "must be nonnegative"),
        KeySpec{"dynamics.max_steps", KeyType::integer,
                [](const ScenarioConfig& c) { return std::to_string(c.dynamics.max_steps); },
                [](ScenarioConfig& c, const std::string& v) {
                    auto x = to_integer(v);
                    require(x >= 1, "must be at least 1");
                    c.dynamics.max_steps = static_cast<long>(x);
                }},
        INT_KEY("dynamics.history_depth", dynamics.history_depth, x >= 1 && x <= 16, "must lie in [1, 16]"),
        REAL_KEY("dynamics.dt", dynamics.dt, x >= 0, "must be nonnegative (0 selects the CFL step)"),
        BOOL_KEY("gravity.enabled", gravity.enabled),
        INT_KEY("gravity.image_layers", gravity.image_layers, x >= 0, "must be nonnegative"),
        TEXT_KEY("gravity.selfcell_rule", gravity.selfcell_rule, x == "polar-subgrid" || x == "analytic-cell",
                 "must be polar-subgrid or analytic-cell"),
        BOOL_KEY("gravity.tail_correction", gravity.tail_correction),
        INT_KEY("elliptic.kmax_tangential", elliptic.kmax_tangential, x >= 0, "must be nonnegative"),
        INT_KEY("elliptic.mmax_normal", elliptic.mmax_normal, x >= 1, "must be at least 1"),
        INT_KEY("diagnostics.s_max", diagnostics.s_max, x >= 0 && x <= 2, "must be 0, 1 or 2"),
        BOOL_KEY("diagnostics.fixed_point", diagnostics.fixed_point),
        TEXT_KEY("output.directory", output.directory, !x.empty(), "must not be empty"),
        INT_KEY("output.cadence", output.cadence, x >= 1, "must be at least 1"),
        BOOL_KEY("output.snapshots", output.snapshots),
        KeySpec{"seed", KeyType::integer, [](const ScenarioConfig& c) { return std::to_string(c.seed); },
                [](ScenarioConfig& c, const std::string& v) { c.seed = to_unsigned(v); }},
    };
    return keys;
}

#undef INT_KEY
#undef REAL_KEY
#undef BOOL_KEY
#undef TEXT_KEY

const KeySpec* find_key(const std::string& name) {
    for (const auto& k : key_specs())
        if (k.name == name) return &k;
    return nullptr;
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& k : key_specs()) out.push_back(k.name);
    return out;
}

bool config_key_numeric(const std::string& key) {
    const KeySpec* k = find_key(key);
    return k && (k->type == KeyType::integer || k->type == KeyType::real);
}

void set_config_value(ScenarioConfig& c, const std::string& key, const std::string& value) {
    const KeySpec* k = find_key(key);
    if (!k) throw ConfigError(0, key, "unknown key '" + key + "'");
    try {
        k->set(c, value);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(0, key, "bad value for '" + key + "': " + e.what());
    }
}

ScenarioConfig parse_config(const std::string& text, const std::string& source) {
    ScenarioConfig c;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    auto fail = [&](const std::string& key, const std::string& what) {
        throw ConfigError(line, key, source + ":" + std::to_string(line) + ": " + what);
    };
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        for (const char* mark : {" #", "\t#", " ;", "\t;"}) {
            auto p = s.find(mark);
            if (p != std::string::npos) s = trim(s.substr(0, p));
        }
        if (s.front() == '[') {
            if (s.back() != ']') fail("", "malformed section header '" + s + "'");
            section = trim(s.substr(1, s.size() - 2));
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) fail("", "expected 'key = value', got '" + s + "'");
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty()) fail("", "missing key");
        if (!section.empty()) key = section + "." + key;
        const KeySpec* k = find_key(key);
        if (!k) fail(key, "unknown key '" + key + "'");
        if (!seen.insert(key).second) fail(key, "duplicate key '" + key + "'");
        try {
            k->set(c, value);
        } catch (const std::invalid_argument& e) {
            fail(key, "bad value for '" + key + "': " + e.what());
        }
    }
    return c;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(0, "", "cannot open scenario file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path);
}

std::string echo_config(const ScenarioConfig& c) {
    std::string out;
    for (const auto& k : key_specs()) out += k.name + " = " + k.get(c) + "\n";
    return out;
}

SlabGrid make_grid(const ScenarioConfig& c) { return SlabGrid(c.grid.n1, c.grid.n2, c.grid.n3, c.grid.length3); }

DensityProfile build_profile(const ScenarioConfig& c, const SlabGrid& g) {
    ProfileParams params;
    params.amplitude = c.profile.amplitude;
    params.table_path = c.profile.table;
    DensityProfile p = make_profile(parse_profile_kind(c.profile.kind), c.profile.gamma, g, params);
    if (c.profile.smooth) {
        if (!(c.dynamics.kappa > 0.0)) throw PreconditionError("profile.smooth needs dynamics.kappa > 0");
        p = smooth_density(p, c.dynamics.kappa);
    }
    return p;
}

VectorField build_velocity(const ScenarioConfig& c, const SlabGrid& g) {
    const auto& u = c.velocity;
    const double two_pi = 2.0 * std::numbers::pi;
    const double q = u.m * std::numbers::pi / g.length3;
    if (u.kind == "zero") return VectorField(g);
    if (u.kind == "mode")
        return sample_vector(g, [&](double x1, double x2, double x3) {
            std::array<double, 3> r{0, 0, 0};
            r[u.component - 1] = u.amplitude * std::cos(two_pi * (u.k1 * x1 + u.k2 * x2)) * std::sin(q * x3);
            return r;
        });
    if (u.kind == "gradient")
        return sample_vector(g, [&](double x1, double x2, double x3) {
            double th = two_pi * (u.k1 * x1 + u.k2 * x2);
            double s = std::sin(q * x3);
            return std::array<double, 3>{-u.amplitude * two_pi * u.k1 * std::sin(th) * s,
                                         -u.amplitude * two_pi * u.k2 * std::sin(th) * s,
                                         u.amplitude * std::cos(th) * q * std::cos(q * x3)};
        });
    throw PreconditionError("unknown velocity kind '" + u.kind + "'");
}

GravityConfig gravity_config(const ScenarioConfig& c) {
    GravityConfig g;
    g.enabled = c.gravity.enabled;
    g.image_layers = c.gravity.image_layers;
    g.selfcell_rule = parse_selfcell_rule(c.gravity.selfcell_rule);
    g.tail_correction = c.gravity.tail_correction;
    return g;
}

// ---- run ------------------------------------------------------------------------

double next_step(double t, double t_end, double dt) {
    double rem = t_end - t;
    if (!(rem > 0.0)) return 0.0;
    if (!(dt > 0.0)) throw PreconditionError("time step must be positive");
    double n = std::ceil(rem / dt * (1.0 - 1e-12));
    return rem / std::max(1.0, n);
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::string fnv1a_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string build_id() { return EPSOLVER_BUILD_ID; }

namespace {

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

class Outputs {
public:
    Outputs(bool on, fs::path dir) : on_(on), dir_(std::move(dir)) {
        if (on_) fs::create_directories(dir_);
    }
    void put(const std::string& name, const std::string& text) {
        if (!on_) return;
        write_file(dir_ / name, text);
        add(name);
    }
    void add(const std::string& name) {
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
    }
    bool on() const { return on_; }
    const fs::path& dir() const { return dir_; }
    const std::vector<std::string>& names() const { return names_; }

private:
    bool on_;
    fs::path dir_;
    std::vector<std::string> names_;
};

std::string steps_header() { return "step,t,dt,cfl,j_min,j_max,piola_max,v_norm,status\n"; }

std::string steps_row(const StepReport& r, double v_norm) {
    return std::to_string(r.step) + "," + num(r.t) + "," + num(r.dt) + "," + num(r.cfl) + "," + num(r.j_min) + "," +
           num(r.j_max) + "," + num(r.piola_max) + "," + num(v_norm) + "," + to_string(r.status) + "\n";
}

}  // namespace

RunSummary run_scenario(const ScenarioConfig& c, const RunOptions& opt) {
    auto clock0 = std::chrono::steady_clock::now();
    RunSummary r;
    fs::path dir = opt.out_dir.empty() ? fs::path(c.output.directory) : fs::path(opt.out_dir);
    Outputs out(opt.write_files, dir);
    out.put("config.ini", echo_config(c));

    std::string steps_csv = steps_header();
    std::string energy_text, monitors_text = monitor_csv_header();
    auto finish_files = [&](long step_count) {
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock0).count();
        if (!out.on()) return;
        if (!opt.dry_run) {
            out.put("steps.csv", steps_csv);
            out.put("energy.csv", energy_text);
            out.put("monitors.csv", monitors_text);
        }
        nlohmann::ordered_json m;
        m["build_id"] = build_id();
        m["config_hash"] = fnv1a_hex(fnv1a(echo_config(c)));
        m["seed"] = c.seed;
        m["dry_run"] = opt.dry_run;
        m["status"] = r.status;
        m["exit_code"] = r.exit_code;
        m["message"] = r.message;
        m["steps"] = step_count;
        m["t_final"] = r.t_final;
        m["wall_seconds"] = r.wall_seconds;
        nlohmann::ordered_json files = nlohmann::ordered_json::array();
        for (const auto& name : out.names()) {
            std::string bytes = read_file(out.dir() / name);
            files.push_back({{"name", name}, {"bytes", bytes.size()}, {"fnv1a", fnv1a_hex(fnv1a(bytes))}});
        }
        m["files"] = files;
        write_file(out.dir() / "manifest.json", m.dump(2) + "\n");
        r.files = out.names();
        r.files.push_back("manifest.json");
    };

    if (opt.dry_run) {
        r.status = "dry-run";
        finish_files(0);
        return r;
    }

    try {
        SlabGrid g = make_grid(c);
        DensityProfile p = build_profile(c, g);
        VectorField u0 = build_velocity(c, g);
        GravityConfig grav = gravity_config(c);
        FlowState st = initial_state(p, u0, c.dynamics.kappa, grav, c.dynamics.history_depth);

        EnergyTracker energy(p, c.diagnostics.s_max);
        energy_text = energy_csv_header(c.diagnostics.s_max);
        CurlTransport curl_tr(st);
        std::uint64_t pair_seed = split_seed(c.seed, "apriori");
        std::optional<ForcingMemory> memory;
        bool fixed_point = c.diagnostics.fixed_point && c.dynamics.kappa > 0.0;
        if (fixed_point) memory = start_forcing_memory(st);
        FixedPointOptions fp_opt;
        fp_opt.kmax_tangential = c.elliptic.kmax_tangential;
        fp_opt.mmax_normal = c.elliptic.mmax_normal;

        auto observe = [&](const FlowState& s, bool write, double curl_residual) {
            EnergyReport e = energy.observe(s);
            double vnorm = l2_norm(s.v);
            r.max_v_norm = std::max(r.max_v_norm, vnorm);
            if (energy.has_reference() && energy.reference() > 0.0) {
                r.energy_reference = energy.reference();
                r.energy_max_ratio = std::max(r.energy_max_ratio, e.total / energy.reference());
                r.energy_complete = true;
            }
            AprioriRecord a = apriori_window(s, pair_seed);
            r.apriori.observe(a);
            r.j_min = std::min(r.j_min, a.j_min);
            r.j_max = std::max(r.j_max, a.j_max);
            VacuumPersistence vp = vacuum_persistence(s, p);
            r.vacuum_min_ratio = std::min(r.vacuum_min_ratio, vp.min_ratio);
            r.vacuum_negative = r.vacuum_negative && vp.negative;
            r.curl_residual = curl_residual;
            if (!write) return;
            energy_text += energy_csv_row(e);
            auto mon = [&](const std::string& name, double value, bool pass) {
                monitors_text += monitor_csv_row({s.t, name, value, pass});
            };
            mon("v_norm", vnorm, std::isfinite(vnorm));
            mon("j_min", a.j_min, a.j_pass);
            mon("j_max", a.j_max, a.j_pass);
            mon("coercivity_min", a.coercivity_min, a.coercivity_pass);
            mon("lipschitz_min", a.lipschitz_min, a.lipschitz_pass);
            mon("lipschitz_max", a.lipschitz_max, a.lipschitz_pass);
            mon("vacuum_worst_slope", vp.worst_slope, vp.negative);
            mon("vacuum_min_ratio", vp.min_ratio, vp.negative);
            mon("curl_residual", curl_residual, std::isfinite(curl_residual));
            if (energy.has_reference()) mon("energy_ratio", e.total / energy.reference(), e.total <= 2.0 * energy.reference());
            if (fixed_point) {
                FixedPointReport fr = fixed_point_defect(s, p, grav, fp_opt, &*memory);
                mon("fixed_point_defect", fr.defect, std::isfinite(fr.defect));
                mon("fixed_point_shift", fr.shift, std::isfinite(fr.shift));
                mon("forcing_residual", fr.forcing_residual, std::isfinite(fr.forcing_residual));
            }
        };
        observe(st, true, 0.0);

        const double t_end = c.dynamics.t_end;
        const double t_tol = 1e-12 * std::max(1.0, t_end);
        while (st.t < t_end - t_tol) {
            if (st.step >= c.dynamics.max_steps) {
                r.status = "max-steps";
                r.message = "stopped at dynamics.max_steps before t_end";
                break;
            }
            double dt0 = c.dynamics.dt > 0.0 ? c.dynamics.dt : cfl_dt(st, p, c.dynamics.cfl_safety);
            double dt = next_step(st.t, t_end, dt0);
            auto [next, rep] = step(st, dt, p, grav);
            if (rep.status == StepStatus::invertibility_lost) {
                r.status = to_string(rep.status);
                r.exit_code = exit_invertibility;
                r.message = rep.message;
                steps_csv += steps_row(rep, l2_norm(st.v));
                break;
            }
            st = std::move(next);
            if (memory) advance_forcing_memory(*memory, st);
            double cr = curl_tr.observe(st);
            bool last = st.t >= t_end - t_tol || rep.status != StepStatus::ok || st.step >= c.dynamics.max_steps;
            bool write = last || st.step % c.output.cadence == 0;
            if (write) steps_csv += steps_row(rep, l2_norm(st.v));
            observe(st, write, cr);
            if (rep.status == StepStatus::j_window_exit) {
                r.status = to_string(rep.status);
                r.exit_code = exit_j_window;
                r.message = rep.message;
                break;
            }
        }
        r.steps = st.step;
        r.t_final = st.t;
        r.piola_max = max_abs(piola_residual(st.pack));
        if (out.on() && c.output.snapshots) {
            write_snapshot((out.dir() / "final_positions.epfs").string(), st.eta.positions());
            out.add("final_positions.epfs");
            write_snapshot((out.dir() / "final_velocity.epfs").string(), st.v);
            out.add("final_velocity.epfs");
        }
        r.final_state = std::move(st);
    } catch (const std::exception& e) {
        r.exit_code = exit_error;
        r.status = "error";
        r.message = e.what();
    }
    finish_files(r.steps);
    return r;
}

// ---- sweep -----------------------------------------------------------------------

namespace {
std::string opt_num(const std::optional<double>& x) { return x ? num(*x) : "-"; }
}  // namespace

std::string SweepTable::text() const {
    std::string s = "value,status,t_final,steps,max_v_norm,j_min,j_max,piola_max,piola_slope,dv_prev,dv_ratio,message\n";
    for (const auto& row : rows) {
        const RunSummary& r = row.run;
        std::string msg = r.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        s += row.value + "," + r.status + "," + num(r.t_final) + "," + std::to_string(r.steps) + "," +
             num(r.max_v_norm) + "," + num(r.j_min) + "," + num(r.j_max) + "," + num(r.piola_max) + "," +
             opt_num(row.piola_slope) + "," + opt_num(row.dv_prev) + "," + opt_num(row.dv_ratio) + "," + msg + "\n";
    }
    return s;
}

SweepTable sweep(const ScenarioConfig& base, const std::string& axis, const std::vector<std::string>& values,
                 const std::string& out_dir) {
    if (values.empty()) throw PreconditionError("sweep needs at least one value");
    if (!config_key_numeric(axis)) throw PreconditionError("sweep axis '" + axis + "' is not a numeric key");
    SweepTable t;
    t.axis = axis;
    for (const auto& v : values) {
        SweepRow row;
        row.value = v;
        try {
            ScenarioConfig c = base;
            set_config_value(c, axis, v);
            RunOptions o;
            o.write_files = !out_dir.empty();
            if (o.write_files) o.out_dir = (fs::path(out_dir) / (axis + "=" + v)).string();
            row.run = run_scenario(c, o);
        } catch (const std::exception& e) {
            row.run.exit_code = exit_error;
            row.run.status = "error";
            row.run.message = e.what();
        }
        t.rows.push_back(std::move(row));
    }
    for (std::size_t i = 1; i < t.rows.size(); ++i) {
        SweepRow& cur = t.rows[i];
        const SweepRow& prev = t.rows[i - 1];
        if (cur.run.final_state && prev.run.final_state && cur.run.final_state->v.grid == prev.run.final_state->v.grid)
            cur.dv_prev = l2_norm(cur.run.final_state->v - prev.run.final_state->v);
        if (cur.dv_prev && prev.dv_prev && *cur.dv_prev > 0.0) cur.dv_ratio = *prev.dv_prev / *cur.dv_prev;
        if (cur.run.final_state && prev.run.final_state && cur.run.piola_max > 0.0 && prev.run.piola_max > 0.0) {
            double a = to_double(prev.value), b = to_double(cur.value);
            if (a > 0.0 && b > 0.0 && a != b)
                cur.piola_slope = -std::log(cur.run.piola_max / prev.run.piola_max) / std::log(b / a);
        }
    }
    return t;
}

// ---- verify ----------------------------------------------------------------------

std::uint64_t split_seed(std::uint64_t root, const std::string& label) {
    std::uint64_t h = fnv1a(label) ^ (root + 0x9e3779b97f4a7c15ull);
    // splitmix64 finaliser
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

std::vector<std::string> verify_suites() { return {"identities", "inequalities", "elliptic", "gravity"}; }

namespace {

using Checks = std::vector<VerifyCheck>;

void add_le(Checks& out, const std::string& suite, const std::string& name, double value, double threshold) {
    out.push_back({suite, name, value, threshold, std::isfinite(value) && value <= threshold});
}

double uniform(std::mt19937_64& rng, double a, double b) {
    return a + (b - a) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// Smooth periodic displacement made of a few random modes. Tangential wavenumbers stay
// at most 1 so the quadratic cofactor is resolved without aliasing on 8-point grids.
FlowMap random_map(const SlabGrid& g, std::mt19937_64& rng, double amplitude) {
    struct Mode {
        int k1, k2, m, comp;
        double a, phase;
    };
    std::vector<Mode> modes;
    for (int j = 0; j < 4; ++j) {
        Mode md;
        md.k1 = g.n1 > 1 ? static_cast<int>(rng() % 2) : 0;
        md.k2 = g.n2 > 1 ? static_cast<int>(rng() % 2) : 0;
        md.m = 1 + static_cast<int>(rng() % 3);
        md.comp = static_cast<int>(rng() % 3);
        md.a = uniform(rng, -amplitude, amplitude);
        md.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        modes.push_back(md);
    }
    VectorField d = sample_vector(g, [&](double x1, double x2, double x3) {
        std::array<double, 3> r{0, 0, 0};
        for (const auto& md : modes)
            r[md.comp] += md.a * std::sin(2.0 * std::numbers::pi * (md.k1 * x1 + md.k2 * x2) + md.phase) *
                          std::cos(md.m * std::numbers::pi * x3 / g.length3);
        return r;
    });
    return FlowMap(identity3, d);
}

Checks identities_suite(const VerifyOptions& opt) {
    const std::string S = "identities";
    Checks out;
    std::mt19937_64 rng(split_seed(opt.seed, S));
    SlabGrid g(8, 8, 32, 1.0);
    FlowMap eta = random_map(g, rng, 0.02);
    DeformationPack pack = build_deformation(eta);
    if (opt.corrupt_cofactor) pack.Fstar(g.index(3, 4, 16), 4) += 0.05;
    add_le(out, S, "piola_residual", max_abs(piola_residual(pack)), 1e-3);

    Mat3 lin{1.1, 0.05, 0.0, -0.02, 0.95, 0.0, 0.03, 0.01, 1.02};
    lin[2] = 0.0;
    lin[5] = 0.0;
    FlowMap linear(lin, VectorField(g));
    add_le(out, S, "piola_linear", max_abs(piola_residual(build_deformation(linear))), 1e-13);

    double cof = 0.0;
    for (std::size_t n = 0; n < g.size(); ++n)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) {
                double a = 0.0;
                for (int i = 0; i < 3; ++i) a += pack.Fstar(n, 3 * k + i) * pack.F(n, 3 * i + j);
                cof = std::max(cof, std::abs(a - (k == j ? pack.J(n) : 0.0)));
            }
    add_le(out, S, "cofactor_inverse", cof, 1e-12);

    VectorField v = random_map(g, rng, 0.1).displacement;
    DeformationPack clean = build_deformation(eta);
    FinvRateParts parts = ddt_identity_decompose(v, clean);
    TensorField direct = ddt_finv_over_j(v, clean);
    add_le(out, S, "finv_rate_decomposition", max_abs(parts.total() - direct) / std::max(1e-300, max_abs(direct)),
           1e-10);

    DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
    GravityConfig off;
    off.enabled = false;
    FlowState st = initial_state(p, v, 0.0, off);
    st = step(st, 1e-3, p, off).first;
    add_le(out, S, "x_forms", compute_X_forms(st, st.pack, p).max_rel_diff, 1e-10);
    return out;
}

Checks inequalities_suite(const VerifyOptions& opt) {
    const std::string S = "inequalities";
    Checks out;
    SlabGrid g(8, 8, 64, 1.0);
    FamilyBounds rec = recorded_family_bounds();
    FamilyBounds b = family_sweep(g, family_seed, 25);
    add_le(out, S, "hardy_s1_family", b.hardy_s1, rec.hardy_s1);
    add_le(out, S, "hardy_s2_family", b.hardy_s2, rec.hardy_s2);
    add_le(out, S, "embedding_p1_family", b.embedding_p1, rec.embedding_p1);
    add_le(out, S, "embedding_p2_family", b.embedding_p2, rec.embedding_p2);
    add_le(out, S, "embedding_ones_p2", std::abs(embedding_verifier(ScalarField(g, 1.0), 2) / 12.0 - 1.0), 1e-2);
    ScalarField f = family_member(g, split_seed(opt.seed, S), 0);
    double h1 = hardy_verifier(f, 1), h1s = hardy_verifier(2.5 * f, 1);
    double e2 = embedding_verifier(f, 2), e2s = embedding_verifier(2.5 * f, 2);
    add_le(out, S, "homogeneity", std::max(std::abs(h1 - h1s) / h1, std::abs(e2 - e2s) / e2), 1e-12);
    return out;
}

Checks elliptic_suite(const VerifyOptions& opt) {
    const std::string S = "elliptic";
    Checks out;
    std::mt19937_64 rng(split_seed(opt.seed, S));
    const double pi = std::numbers::pi;
    {
        SlabGrid g(1, 1, 65, 1.0);
        ScalarField rhs = sample_scalar(g, [&](double, double, double x) { return -std::sin(pi * x); });
        ScalarField phi = slab_poisson(rhs, BoundaryKind::dirichlet, FaceField(g));
        ScalarField ex = sample_scalar(g, [&](double, double, double x) { return std::sin(pi * x) / (pi * pi); });
        add_le(out, S, "poisson_dirichlet_sine", max_abs(phi - ex), 1e-4);
    }
    {
        SlabGrid g(8, 8, 64, 1.0);
        double a[6];
        for (double& x : a) x = uniform(rng, 0.5, 1.5);
        VectorField w = sample_vector(g, [&](double x1, double x2, double x3) {
            return std::array<double, 3>{a[0] * std::sin(2 * pi * x1) * x3 * x3 + 0.1 * a[3],
                                         a[1] * std::cos(pi * x3) * std::cos(2 * pi * x2) + 0.3,
                                         a[2] * std::sin(pi * x3) * std::cos(2 * pi * x1) + a[4] * x3 +
                                             a[5] * x3 * x3 * std::sin(2 * pi * x2)};
        });
        HodgeData d;
        d.div = divergence(w);
        d.curl = curl(w);
        d.normal_trace = trace(component(w, 2));
        d.mean1 = integrate(component(w, 0));
        d.mean2 = integrate(component(w, 1));
        HodgeResult h = hodge_reconstruct(d, 1e-2);
        add_le(out, S, "hodge_round_trip", l2_norm(h.w - w) / l2_norm(w), 5e-3);
    }
    {
        SlabGrid g(1, 1, 65, 1.0);
        XProblem pr;
        pr.jbar = ScalarField(g, 1.0);
        pr.b = TensorField(g);
        for (std::size_t n = 0; n < g.size(); ++n)
            for (int i = 0; i < 3; ++i) pr.b(n, 4 * i) = 1.0;
        pr.weight = ScalarField(g, 1.0);
        pr.kappa = 0.05;
        pr.gamma = 2.0;
        pr.reaction = ScalarField(g, 1.0);
        pr.x0 = sample_scalar(g, [&](double, double, double x) { return std::sin(pi * x); });
        GalerkinBasis basis(g, 0, 4);
        double T = 1.0, dt = 1e-2;
        XSolution sol = solve_x(pr, basis, T, dt, 100);
        double rate = 2.0 * pr.kappa * pi * pi + pr.kappa;
        double c0 = sol.coeffs.front()[0], c1 = sol.coeffs.back()[0];
        double measured = -std::log(c1 / c0) / (sol.times.back() - sol.times.front());
        add_le(out, S, "x_decay_rate", std::abs(measured - rate) / rate, 2.0 * dt * rate);
    }
    {
        SlabGrid g(4, 1, 33, 1.0);
        XProblem pr;
        pr.jbar = ScalarField(g, 1.0);
        pr.b = TensorField(g);
        for (std::size_t n = 0; n < g.size(); ++n)
            for (int i = 0; i < 3; ++i) pr.b(n, 4 * i) = 1.0;
        pr.weight = sample_scalar(g, [&](double, double, double x) { return std::sin(pi * x); });
        pr.kappa = 0.1;
        double c[4], f[4];
        for (int k = 0; k < 4; ++k) {
            c[k] = uniform(rng, -1.0, 1.0);
            f[k] = uniform(rng, 1.0, 6.0);
        }
        pr.forcing = [&, g](double t) {
            return sample_scalar(g, [&](double x1, double, double x3) {
                return std::sin(pi * x3) * (c[0] * std::cos(f[0] * t) + c[1] * std::sin(2 * pi * x1) * std::cos(f[1] * t)) +
                       std::sin(2 * pi * x3) * (c[2] * std::sin(f[2] * t) + c[3] * std::cos(2 * pi * x1));
            });
        };
        GalerkinBasis basis(g, 1, 6);
        XSolution sol = solve_x(pr, basis, 0.5, 1e-2, 5);
        double worst = -1e300;
        for (const auto& row : sol.ledger) worst = std::max(worst, (row.lhs() - row.rhs()) / std::max(row.rhs(), 1e-300));
        add_le(out, S, "x_energy_ledger", worst, 0.0);
    }
    return out;
}

Checks gravity_suite(const VerifyOptions& opt) {
    const std::string S = "gravity";
    Checks out;
    std::mt19937_64 rng(split_seed(opt.seed, S));
    const double pi = std::numbers::pi;
    GravityConfig cfg;
    {
        SlabGrid g(1, 1, 128, 1.0);
        DensityProfile p = make_profile(ProfileKind::sine, 2.0, g);
        FlowMap eta = identity_map(g);
        DeformationPack pack = build_deformation(eta);
        VectorField G = force(p.rho0, eta, pack, cfg);
        add_le(out, S, "poisson_identity_plane", max_abs(poisson_identity_residual(G, p.rho0, pack)), 2e-2);
        ScalarField ex = sample_scalar(g, [&](double, double, double x) { return std::cos(pi * x) / pi; });
        add_le(out, S, "plane_force_sine", max_abs(component(G, 2) - ex) / max_abs(ex), 1e-3);
    }
    {
        double amp = uniform(rng, 0.5, 1.5);
        SlabGrid g3(8, 8, 33, 1.0), gp(1, 1, 33, 1.0);
        auto rho = [&](double, double, double x) { return amp * std::sin(pi * x); };
        ScalarField r3 = sample_scalar(g3, rho), rp = sample_scalar(gp, rho);
        FlowMap e3 = identity_map(g3), ep = identity_map(gp);
        VectorField G3 = force(r3, e3, build_deformation(e3), cfg);
        VectorField Gp = force(rp, ep, build_deformation(ep), cfg);
        double err = 0.0;
        for (std::size_t n = 0; n < g3.size(); ++n) {
            int i1, i2, i3;
            g3.coords(n, i1, i2, i3);
            err = std::max(err, std::abs(G3(n, 2) - Gp(static_cast<std::size_t>(i3), 2)));
        }
        add_le(out, S, "lattice_vs_plane", err / max_abs(component(Gp, 2)), 5e-3);
    }
    return out;
}

}  // namespace

std::vector<VerifyCheck> verify(const std::string& suite, const VerifyOptions& opt) {
    if (suite == "all") {
        Checks all;
        for (const auto& s : verify_suites()) {
            Checks c = verify(s, opt);
            all.insert(all.end(), c.begin(), c.end());
        }
        return all;
    }
    if (suite == "identities") return identities_suite(opt);
    if (suite == "inequalities") return inequalities_suite(opt);
    if (suite == "elliptic") return elliptic_suite(opt);
    if (suite == "gravity") return gravity_suite(opt);
    throw PreconditionError("unknown verify suite '" + suite + "'");
}

bool all_pass(const std::vector<VerifyCheck>& checks) {
    return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.pass; });
}

std::string verify_summary(const std::vector<VerifyCheck>& checks) {
    std::string s;
    std::map<std::string, std::pair<int, int>> per_suite;
    std::vector<std::string> order;
    for (const auto& c : checks) {
        s += c.suite + " " + c.name + " value=" + num(c.value) + " threshold=" + num(c.threshold) + " " +
             (c.pass ? "PASS" : "FAIL") + "\n";
        if (!per_suite.count(c.suite)) order.push_back(c.suite);
        auto& t = per_suite[c.suite];
        ++t.second;
        if (c.pass) ++t.first;
    }
    for (const auto& name : order) {
        auto [pass, total] = per_suite[name];
        s += "suite " + name + " " + std::to_string(pass) + "/" + std::to_string(total) + " " +
             (pass == total ? "PASS" : "FAIL") + "\n";
    }
    s += std::string("overall ") + (all_pass(checks) ? "PASS" : "FAIL") + "\n";
    return s;
}

}  // namespace epsolver
