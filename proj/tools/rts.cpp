// rts: partition-function estimation from the command line.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rts/experiment.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;

  void attach(CLI::App* app, bool need_config) {
    auto* opt = app->add_option("--config", config, "experiment manifest (INI)");
    if (need_config) opt->required()->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "override [run] seed");
    app->add_option("--out", out, "override [run] out directory");
    app->add_option("--threads", threads, "worker threads (0 = hardware)");
  }

  rts::app::ExperimentConfig load() const {
    return rts::app::parse_experiment(rts::Config::load(config), {seed, out, threads});
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rao-Blackwellized tempered sampling and friends"};
  app.require_subcommand(1);

  Common est, train, sweep, hmc;
  auto* c_est = app.add_subcommand("estimate", "run init + main tempering and write estimates.json");
  est.attach(c_est, true);
  auto* c_train = app.add_subcommand("train", "train an RBM while tracking log Z");
  train.attach(c_train, true);
  auto* c_sweep = app.add_subcommand("sweep-k", "bootstrap RMSE across ladder sizes");
  sweep.attach(c_sweep, true);
  auto* c_hmc = app.add_subcommand("hmc-tune", "tune HMC step sizes for the GMM model");
  hmc.attach(c_hmc, true);

  std::string params;
  auto* c_oracle = app.add_subcommand("oracle", "print the exact log Z of an RBMPARM1 file");
  c_oracle->add_option("params", params, "RBMPARM1 file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*c_oracle) return rts::app::cmd_oracle(params, std::cout);
    if (*c_est) return rts::app::cmd_estimate(est.load(), std::cerr);
    if (*c_train) return rts::app::cmd_train(train.load(), std::cerr);
    if (*c_sweep) return rts::app::cmd_sweep_k(sweep.load(), std::cerr);
    if (*c_hmc) return rts::app::cmd_hmc_tune(hmc.load(), std::cerr);
  } catch (const rts::ConfigError& e) {
    std::cerr << "rts: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "rts: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
