// catuda: command-line experiment runner.
//
//   catuda run <config> [--seed-override N]... [--output-dir DIR] [--enable-idx]
//   catuda validate <config>
//   catuda dump-data <config> [--seed-override N] [--output-dir DIR]

#include "catuda/errors.hpp"
#include "catuda/eval.hpp"
#include "catuda/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

struct Overrides {
    std::vector<std::uint64_t> seeds;
    std::string output_dir;
    bool enable_idx = false;
};

catuda::ExperimentConfig load(const std::string& path, const Overrides& o) {
    auto cfg = catuda::load_config(path);
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    return cfg;
}

int cmd_run(const std::string& path, const Overrides& o) {
    const auto cfg = load(path, o);
    if (cfg.scenario == catuda::Scenario::idx_digits && !o.enable_idx) {
        std::cerr << "error: scenario idx_digits reads external IDX files; pass --enable-idx to allow it\n";
        return 2;
    }
    std::cerr << "config " << catuda::config_hash(cfg) << " -> " << cfg.output_dir.string() << '\n';
    const auto result = catuda::run_experiment(cfg, true, &std::cerr);
    if (result.error) {
        std::cerr << "error: training aborted: " << *result.error << '\n';
        return 3;
    }
    std::cout << catuda::to_string(cfg.scenario) << ": target accuracy " << result.cell << '\n';
    return 0;
}

int cmd_validate(const std::string& path, const Overrides& o) {
    const auto cfg = load(path, o);
    std::cout << catuda::resolved_yaml(cfg);
    std::cout << "# config_hash: " << catuda::config_hash(cfg) << '\n';
    return 0;
}

int cmd_dump_data(const std::string& path, const Overrides& o) {
    const auto cfg = load(path, o);
    if (cfg.scenario == catuda::Scenario::idx_digits && !o.enable_idx) {
        std::cerr << "error: scenario idx_digits reads external IDX files; pass --enable-idx to allow it\n";
        return 2;
    }
    std::filesystem::create_directories(cfg.output_dir);
    for (const auto seed : cfg.seeds) {
        const auto file = cfg.output_dir / ("data_" + std::to_string(seed) + ".csv");
        std::ofstream out(file, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + file.string());
        catuda::write_dataset_csv(out, catuda::make_dataset(cfg, seed));
        std::cerr << "wrote " << file.string() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cluster alignment with a teacher: unsupervised domain adaptation experiments"};
    app.require_subcommand(1);

    Overrides o;
    std::string config;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", config, "YAML experiment configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed-override", o.seeds, "Replace the seed list (repeatable)");
        sub->add_option("--output-dir", o.output_dir, "Replace output_dir");
    };

    auto* run = app.add_subcommand("run", "Train every seed and write metrics, features and summary.json");
    add_common(run);
    run->add_flag("--enable-idx", o.enable_idx, "Allow the idx_digits scenario to read IDX files");

    auto* validate = app.add_subcommand("validate", "Print the resolved configuration without training");
    add_common(validate);

    auto* dump = app.add_subcommand("dump-data", "Write the generated datasets as CSV");
    add_common(dump);
    dump->add_flag("--enable-idx", o.enable_idx, "Allow the idx_digits scenario to read IDX files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config, o);
        if (*validate) return cmd_validate(config, o);
        if (*dump) return cmd_dump_data(config, o);
    } catch (const catuda::ConfigError& e) {
        std::cerr << config << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
