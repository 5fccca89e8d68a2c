#ifndef TDCAL_COMMANDS_HPP
#define TDCAL_COMMANDS_HPP

#include <string>
#include <vector>

#include "calibrate.hpp"
#include "config.hpp"
#include "envsim.hpp"

namespace tdcal {

// gen | train | eval | band | stop-sim | search | export. Each command is a
// pure function of (config, input files) writing into the configured output
// directory. Throws tdcal::Error on failure.
void run_command(const std::string& command, const Config& cfg);

// config-to-module translation, shared with the C API
std::vector<Env> envs_from_config(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);
PredictorDims predictor_dims_from(const Config& cfg, int input_dim);

// per-step failure scores (1 - success) for each rollout, optionally
// restricted to successful rollouts
std::vector<std::vector<double>> failure_sequences(const Predictor& f, const Dataset& d,
                                                   bool successes_only);

void cmd_gen(const Config& cfg);
void cmd_train(const Config& cfg);
void cmd_eval(const Config& cfg);
void cmd_band(const Config& cfg);
void cmd_stopsim(const Config& cfg);
void cmd_search(const Config& cfg);
void cmd_export(const Config& cfg);

} // namespace tdcal

#endif
