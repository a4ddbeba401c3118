#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epsolver/diagnostics.hpp"
#include "epsolver/dynamics.hpp"

namespace epsolver {

// ---- scenario configuration ---------------------------------------------------

struct ScenarioConfig {
    struct {
        int n1 = 1, n2 = 1, n3 = 128;
        double length3 = 1.0;
    } grid;
    struct {
        std::string kind = "sine";
        double gamma = 2.0;
        double amplitude = 1.0;
        std::string table;
        bool smooth = false;
    } profile;
    // zero; mode: u^component = A cos(2 pi (k1 x1 + k2 x2)) sin(m pi x3 / L3);
    // gradient: u = A grad[cos(2 pi (k1 x1 + k2 x2)) sin(m pi x3 / L3)].
    struct {
        std::string kind = "zero";
        double amplitude = 0.0;
        int component = 3;
        int k1 = 1, k2 = 0, m = 1;
    } velocity;
    struct {
        double kappa = 0.0;
        double cfl_safety = 0.5;
        double t_end = 0.1;
        long max_steps = 100000;
        int history_depth = 5;
        double dt = 0.0;  // 0: CFL step
    } dynamics;
    struct {
        bool enabled = true;
        int image_layers = 8;
        std::string selfcell_rule = "polar-subgrid";
        bool tail_correction = true;
    } gravity;
    struct {
        int kmax_tangential = 2;
        int mmax_normal = 12;
    } elliptic;
    struct {
        int s_max = 1;
        bool fixed_point = false;
    } diagnostics;
    struct {
        std::string directory = "out";
        int cadence = 1;
        bool snapshots = false;
    } output;
    std::uint64_t seed = 1;
};

struct ConfigError : std::runtime_error {
    int line;
    std::string key;
    ConfigError(int l, const std::string& k, const std::string& what);
};

// Strict INI: "key = value" with dotted keys, optional [section] prefixes, '#' or ';'
// comments. Unknown and repeated keys are errors.
ScenarioConfig parse_config(const std::string& text, const std::string& source = "<config>");
ScenarioConfig load_config(const std::string& path);
// Every key with its value, defaults included; doubles in shortest round-trip form.
std::string echo_config(const ScenarioConfig& c);
std::vector<std::string> config_keys();
bool config_key_numeric(const std::string& key);
// Sets one key from text as the parser would (line 0 in errors).
void set_config_value(ScenarioConfig& c, const std::string& key, const std::string& value);
std::string format_double(double x);

SlabGrid make_grid(const ScenarioConfig& c);
DensityProfile build_profile(const ScenarioConfig& c, const SlabGrid& g);
VectorField build_velocity(const ScenarioConfig& c, const SlabGrid& g);
GravityConfig gravity_config(const ScenarioConfig& c);

// ---- run ------------------------------------------------------------------------

enum ExitCode { exit_ok = 0, exit_error = 1, exit_usage = 2, exit_j_window = 3, exit_invertibility = 4 };

struct RunOptions {
    std::string out_dir;  // empty: config output.directory
    bool dry_run = false;
    bool write_files = true;
};

struct RunSummary {
    int exit_code = exit_ok;
    std::string status = "ok";
    std::string message;
    long steps = 0;
    double t_final = 0.0;
    double max_v_norm = 0.0;    // max over levels of ||v||_0
    double piola_max = 0.0;     // at the final level
    double j_min = 1.0, j_max = 1.0;  // over the run
    double energy_reference = 0.0;
    double energy_max_ratio = 0.0;    // max E(t) / E(0) after the reference is fixed
    bool energy_complete = false;
    double vacuum_min_ratio = 1.0;    // over the run
    bool vacuum_negative = true;
    double curl_residual = 0.0;       // final
    AprioriTracker apriori;
    double wall_seconds = 0.0;
    std::optional<FlowState> final_state;
    std::vector<std::string> files;   // written, relative to the directory
};

RunSummary run_scenario(const ScenarioConfig& c, const RunOptions& opt = {});

// Step sizes: the CFL (or fixed) step, shortened so that the remaining time is split into
// equal steps instead of ending on a sliver.
double next_step(double t, double t_end, double dt);

std::uint64_t fnv1a(const std::string& bytes);
std::string fnv1a_hex(std::uint64_t h);
std::string build_id();

// ---- sweep -----------------------------------------------------------------------

struct SweepRow {
    std::string value;
    RunSummary run;
    std::optional<double> dv_prev;      // ||v - v_prev||_0 at t_end, same grid only
    std::optional<double> dv_ratio;     // dv_prev(previous row) / dv_prev
    std::optional<double> piola_slope;  // -dlog piola / dlog value
};

struct SweepTable {
    std::string axis;
    std::vector<SweepRow> rows;
    std::string text() const;
};

SweepTable sweep(const ScenarioConfig& base, const std::string& axis, const std::vector<std::string>& values,
                 const std::string& out_dir = "");

// ---- verify ----------------------------------------------------------------------

struct VerifyCheck {
    std::string suite;
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

struct VerifyOptions {
    std::uint64_t seed = 7;
    bool corrupt_cofactor = false;  // fault injection for the identities suite
};

std::vector<std::string> verify_suites();
std::vector<VerifyCheck> verify(const std::string& suite, const VerifyOptions& opt = {});
std::string verify_summary(const std::vector<VerifyCheck>& checks);
bool all_pass(const std::vector<VerifyCheck>& checks);

// Per-suite seed split from the root seed.
std::uint64_t split_seed(std::uint64_t root, const std::string& label);

}  // namespace epsolver
