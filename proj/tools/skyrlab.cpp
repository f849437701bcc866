#include "skyrlab/app.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App cli{"skyrlab: exact diagonalization and driven dynamics of skyrmion spin lattices"};
    cli.require_subcommand(1);

    std::string config;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out;
    bool dump_lattice = false;

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"diagonalize", "lowest eigenpairs and ground-state observables"},
        {"sweep", "phase diagram over a (J, B) grid"},
        {"evolve", "time evolution of the full lattice state"},
        {"gate", "single-qubit gate on the lowest two lattice levels"},
        {"lindblad", "two-level evolution with T1/T2 decoherence"},
        {"readout", "readout rotations and the Bell circuit"},
        {"dmi-series", "static or driven comparison over DMI strengths"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = cli.add_subcommand(name, help);
        sub->add_option("--config", config, "JSON run configuration")->required();
        sub->add_option("--workers", workers, "worker threads for sweeps");
        sub->add_option("--seed", seed, "seed for every random choice");
        sub->add_option("--out", out, "output directory");
        sub->add_flag("--dump-lattice", dump_lattice, "write lattice.json to the output directory");
    }

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = cli.exit(e);
        return rc == 0 ? 0 : skyrlab::app::kConfigInvalid;
    }

    CLI::App* sub = cli.get_subcommands().front();
    skyrlab::app::Overrides ov;
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--workers")) ov.workers = workers;
    if (sub->count("--out")) ov.out = out;
    ov.dump_lattice = dump_lattice;
    return skyrlab::app::main_entry(sub->get_name(), config, ov, std::cout, std::cerr);
}
