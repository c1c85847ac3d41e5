#pragma once

#include <string>

#include "comel/bppl.hpp"
#include "comel/mil.hpp"
#include "comel/owlora.hpp"
#include "comel/synth.hpp"
#include "comel/trainer.hpp"

namespace comel {

// Full description of one run. Defaults mirror the reference
// hyperparameters (eta=0.1; T=0.35/0.5 pair; epsilon=0.99; d=16;
// lambda3=1.0; F=16; 2 blocks; 100 epochs; Adam 1e-4 with cosine
// annealing and weight decay 1e-5).
struct RunConfig {
    std::string label = "run";
    int num_tasks = 5;
    int bags_per_task = 60;
    bool joint = false;  // merge every task into one dataset
    SynthConfig synth;
    GdatConfig gdat;      // model_dim 0 resolves to the feature dim
    BpplConfig bppl;      // positive classes filled from the regime
    OwloraConfig owlora;
    TrainConfig train;

    MilConfig mil_config(const Sequence& seq) const;
    void validate() const;
};

RunConfig default_config();

// Flat `section.key = value` text file; '#' starts a comment. Unknown
// keys are rejected.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

// Canonical serialization: every key in fixed order. Round-trips
// through parse_config_text and feeds the run's content hash.
std::string canonical_config_string(const RunConfig& config);

// --ablate {gdat|bppl|owlora|projection|lin}
void apply_ablation(RunConfig& config, const std::string& which);

}  // namespace comel
