#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epsolver/app.hpp"

using namespace epsolver;

namespace {

ScenarioConfig scenario_or_default(const std::string& path) {
    return path.empty() ? ScenarioConfig{} : load_config(path);
}

std::vector<std::string> split_values(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& item : raw) {
        std::size_t start = 0;
        while (start <= item.size()) {
            std::size_t comma = item.find(',', start);
            std::string v = item.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!v.empty()) out.push_back(v);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lagrangian vacuum-boundary slab solver"};
    app.require_subcommand(1);

    std::string scenario, out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;

    auto* run = app.add_subcommand("run", "run one scenario");
    bool dry_run = false;
    run->add_option("--scenario", scenario, "scenario file (INI)");
    run->add_option("--out", out_dir, "output directory (overrides output.directory)");
    auto* run_seed = run->add_option("--seed", seed, "root seed (overrides the config)");
    run->add_flag("--dry-run", dry_run, "write the echoed config and manifest only");

    auto* sw = app.add_subcommand("sweep", "run a scenario over values of one numeric key");
    std::string axis;
    std::vector<std::string> values;
    sw->add_option("--scenario", scenario, "scenario file (INI)");
    sw->add_option("--axis", axis, "config key to vary")->required();
    sw->add_option("--values", values, "values, comma separated or repeated");
    sw->add_option("--out", out_dir, "directory for per-run outputs");
    auto* sw_seed = sw->add_option("--seed", seed, "root seed (overrides the config)");

    auto* ver = app.add_subcommand("verify", "run property suites");
    std::string suite = "all";
    std::uint64_t verify_seed = 7;
    std::string fault;
    ver->add_option("suite", suite, "identities, inequalities, elliptic, gravity or all")
        ->check(CLI::IsMember({"identities", "inequalities", "elliptic", "gravity", "all"}));
    ver->add_option("--seed", verify_seed, "root seed");
    ver->add_option("--inject", fault, "fault injection fixture")->check(CLI::IsMember({"corrupt-cofactor"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        if (*run) {
            ScenarioConfig c = scenario_or_default(scenario);
            seed_given = run_seed->count() > 0;
            if (seed_given) c.seed = seed;
            RunOptions o;
            o.out_dir = out_dir;
            o.dry_run = dry_run;
            RunSummary r = run_scenario(c, o);
            std::printf("status %s steps %ld t %.17g max_v %.17g wall %.3fs\n", r.status.c_str(), r.steps, r.t_final,
                        r.max_v_norm, r.wall_seconds);
            if (!r.message.empty()) std::fprintf(stderr, "%s\n", r.message.c_str());
            return r.exit_code;
        }
        if (*sw) {
            ScenarioConfig c = scenario_or_default(scenario);
            if (sw_seed->count() > 0) c.seed = seed;
            SweepTable t = sweep(c, axis, split_values(values), out_dir);
            std::fputs(t.text().c_str(), stdout);
            return 0;
        }
        if (*ver) {
            VerifyOptions o;
            o.seed = verify_seed;
            o.corrupt_cofactor = fault == "corrupt-cofactor";
            auto checks = verify(suite, o);
            std::fputs(verify_summary(checks).c_str(), stdout);
            return all_pass(checks) ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return exit_usage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_error;
    }
    return exit_usage;
}
