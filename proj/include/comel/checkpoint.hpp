#pragma once

#include <string>

#include "comel/bench.hpp"

namespace comel {

struct Checkpoint {
    int task_index = 0;
    std::string config_digest;
    MilModel model;
    MetricsMatrix matrix;
    std::vector<EpochLog> training_log;
};

// Directory layout: manifest.json plus one CMLM blob per tensor
// (adapter factors as layer@t<k>.{u,s,v}).
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace comel
