// Command-line front end: generate synthetic bag streams, run the
// continual training benchmark, aggregate run directories.

#include <cstdio>
#include <exception>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "comel/cli_commands.hpp"

namespace {

int run_seeds_parallel(const comel::TrainOptions& base, const std::vector<std::uint64_t>& seeds,
                       int jobs) {
    std::vector<std::thread> pool;
    std::vector<std::string> errors(seeds.size());
    std::atomic<size_t> next{0};
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(seeds.size())));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (size_t i = next.fetch_add(1); i < seeds.size(); i = next.fetch_add(1)) {
                comel::TrainOptions opt = base;
                opt.seed = seeds[i];
                opt.out_dir = base.out_dir + "/seed_" + std::to_string(seeds[i]);
                try {
                    comel::cmd_train(opt);
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            }
        });
    for (auto& t : pool) t.join();
    int status = 0;
    for (size_t i = 0; i < seeds.size(); ++i)
        if (!errors[i].empty()) {
            std::cerr << "seed " << seeds[i] << " failed: " << errors[i] << "\n";
            status = 3;
        }
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual multiple-instance-learning benchmark"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dataset_dir, report_csv;
    std::uint64_t seed = 1;
    int jobs = 1;
    bool force = false, regen = false, resume = false;
    int num_seeds = 1;
    std::vector<std::string> ablate;
    std::vector<std::string> run_dirs;

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset directory");
    generate->add_option("--config", config_path, "config file");
    generate->add_option("--out", out_dir, "output directory")->required();
    generate->add_option("--seed", seed, "base seed");
    generate->add_flag("--force", force, "overwrite an existing directory");
    generate->add_flag("--regen", regen, "rebuild from the seed recorded in the manifest");

    CLI::App* train = app.add_subcommand("train", "run the continual training sequence");
    train->add_option("--config", config_path, "config file");
    train->add_option("--data", dataset_dir, "dataset directory (defaults to in-memory generation)");
    train->add_option("--out", out_dir, "run output directory")->required();
    train->add_option("--seed", seed, "run seed");
    train->add_option("--seeds", num_seeds, "number of consecutive seeds starting at --seed");
    train->add_option("--jobs", jobs, "parallel seeds");
    train->add_option("--ablate", ablate, "disable a component: gdat|bppl|owlora|projection|lin");
    train->add_flag("--resume", resume, "continue from the newest checkpoint in --out");

    CLI::App* report = app.add_subcommand("report", "aggregate run directories into a table");
    report->add_option("dirs", run_dirs, "run directories");
    report->add_option("--csv", report_csv, "also write a CSV table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) {
            comel::cmd_generate({config_path, out_dir, seed, force, regen});
            std::cout << "dataset written to " << out_dir << "\n";
            return 0;
        }
        if (train->parsed()) {
            comel::TrainOptions opt{config_path, dataset_dir, out_dir, seed, ablate, resume};
            if (num_seeds > 1) {
                std::vector<std::uint64_t> seeds;
                for (int i = 0; i < num_seeds; ++i) seeds.push_back(seed + static_cast<std::uint64_t>(i));
                return run_seeds_parallel(opt, seeds, jobs);
            }
            comel::RunResult result = comel::cmd_train(opt);
            std::cout << "run complete: acc_bag=" << result.summary.acc_bag
                      << " acc_inst=" << result.summary.acc_inst;
            if (result.summary.forget_inst) std::cout << " forget_inst=" << *result.summary.forget_inst;
            std::cout << "\nwrote " << out_dir << "/metrics.csv and summary.json\n";
            return 0;
        }
        if (report->parsed()) {
            std::cout << comel::cmd_report({run_dirs, report_csv});
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
