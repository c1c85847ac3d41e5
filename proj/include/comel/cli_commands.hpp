#pragma once

#include <string>
#include <vector>

#include "comel/bench.hpp"

namespace comel {

struct GenerateOptions {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 1;
    bool force = false;
    bool regen = false;  // rebuild from the seed recorded in the manifest
};

struct TrainOptions {
    std::string config_path;
    std::string dataset_dir;  // optional; generated in memory when empty
    std::string out_dir;
    std::uint64_t seed = 1;
    std::vector<std::string> ablate;
    bool resume = false;
};

struct ReportOptions {
    std::vector<std::string> run_dirs;
    std::string out_csv;  // optional
};

// Subcommand bodies; they throw std::invalid_argument for usage/config
// problems and std::runtime_error for everything else.
void cmd_generate(const GenerateOptions& opt);
RunResult cmd_train(const TrainOptions& opt);
std::string cmd_report(const ReportOptions& opt);  // returns the aligned text table

// Run-directory artifacts.
std::string metrics_csv_string(const RunResult& result);
void write_run_outputs(const std::string& out_dir, const RunConfig& config, std::uint64_t seed,
                       const RunResult& result);
std::string file_sha1(const std::string& path);

}  // namespace comel
