// tdcal command-line front end. All work happens behind the C API in
// libtdcal; this binary only parses arguments and maps status codes to the
// documented exit codes (0 ok, 2 config, 3 data, 4 numeric divergence).

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tdcal.h"

namespace {

int exit_code(tdcal_status s) {
    switch (s) {
    case TDCAL_OK: return 0;
    case TDCAL_ERR_CONFIG:
    case TDCAL_ERR_INVALID: return 2;
    case TDCAL_ERR_DATA:
    case TDCAL_ERR_IO:
    case TDCAL_ERR_BUDGET: return 3;
    case TDCAL_ERR_NUMERIC: return 4;
    default: return 1;
    }
}

struct CommandArgs {
    std::string config;
    std::vector<std::string> overrides;
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Calibrated success prediction for episodic tasks"};
    app.require_subcommand(1);

    const std::vector<std::string> commands = {"gen",      "train",  "eval", "band",
                                               "stop-sim", "search", "export"};
    std::map<std::string, CommandArgs> args;
    for (const std::string& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", args[name].config, "run configuration file")->required();
        sub->add_option("--set", args[name].overrides, "override a config key (key=value)");
        if (name == "band" || name == "stop-sim")
            sub->add_option_function<double>(
                "--alpha",
                [&args, name](double a) {
                    args[name].overrides.push_back("band.alpha=" + std::to_string(a));
                },
                "miscoverage level");
    }

    CLI11_PARSE(app, argc, argv);

    const std::string name = app.get_subcommands().front()->get_name();
    const CommandArgs& a = args[name];
    std::vector<const char*> overrides;
    overrides.reserve(a.overrides.size());
    for (const std::string& o : a.overrides) overrides.push_back(o.c_str());

    tdcal_status s = tdcal_run(name.c_str(), a.config.c_str(),
                               overrides.empty() ? nullptr : overrides.data(), overrides.size());
    if (s != TDCAL_OK) std::fprintf(stderr, "tdcal %s: %s\n", name.c_str(), tdcal_last_error());
    return exit_code(s);
}
