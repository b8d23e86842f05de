// Experiment CLI: generate initial conditions, train a policy, evaluate it
// under disturbances, and merge result tables.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "arpl/errors.hpp"
#include "arpl/io.hpp"

namespace {

std::vector<double> parse_sweep(const std::string& spec) {
  std::vector<double> values;
  std::size_t at = 0;
  while (at < spec.size()) {
    std::size_t comma = spec.find(',', at);
    if (comma == std::string::npos) comma = spec.size();
    values.push_back(std::stod(spec.substr(at, comma - at)));
    at = comma + 1;
  }
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-optimization-guided adversarially regularized policy learning"};
  app.require_subcommand(1);

  std::string config_path, init_path, out_path, checkpoint_path, sweep_spec;
  std::vector<std::string> report_inputs;

  auto* gen = app.add_subcommand("gen-init", "Sample trajectory initial conditions");
  gen->add_option("--config", config_path, "Run config JSON")->required();
  gen->add_option("--out", out_path, "Output init file")->required();

  auto* train = app.add_subcommand("train", "Run the full ADMM training loop");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--init", init_path, "Initial-condition file from gen-init")->required();
  train->add_option("--out-dir", out_path, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under disturbances");
  eval->add_option("--config", config_path, "Run config JSON")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Policy checkpoint");
  eval->add_option("--out-dir", out_path, "Output directory")->required();
  eval->add_option("--eps-sweep", sweep_spec,
                   "Comma-separated perturbation bounds; retrains and evaluates per value");

  auto* report = app.add_subcommand("report", "Merge percentile CSVs into one table");
  report->add_option("--out", out_path, "Merged CSV path")->required();
  report->add_option("inputs", report_inputs, "percentiles.csv files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      arpl::io::gen_init_command(arpl::io::load_config(config_path), out_path);
    } else if (train->parsed()) {
      arpl::io::train_command(arpl::io::load_config(config_path), init_path, out_path);
    } else if (eval->parsed()) {
      const auto sweep = sweep_spec.empty() ? std::vector<double>{} : parse_sweep(sweep_spec);
      if (sweep.empty() && checkpoint_path.empty()) {
        throw arpl::ConfigError("eval: --checkpoint required unless --eps-sweep is given");
      }
      arpl::io::eval_command(arpl::io::load_config(config_path), checkpoint_path, out_path,
                             sweep);
    } else if (report->parsed()) {
      arpl::io::report_command(out_path, report_inputs);
    }
  } catch (const arpl::IncompatibilityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const arpl::TrainingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const arpl::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
