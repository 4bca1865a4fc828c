// Command-line driver for the risk-model pipeline. Each subcommand runs one
// stage against a JSON config (stages communicate through files in the
// config's output_dir); run-all chains the full sequence in memory. All
// failures exit nonzero with one machine-parseable line on stderr:
//   error: <class>: <detail>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowrisk/error.hpp"
#include "flowrisk/pipeline.hpp"

namespace {

struct CliArgs {
  std::string stage;
  std::string config_path;
  std::string input_override;
  std::string output_override;
  std::string threshold_override;  // label threshold, e.g. "6" or "12"
};

int run(const CliArgs& args) {
  flowrisk::PipelineConfig config = flowrisk::load_config(args.config_path);
  if (!args.input_override.empty()) config.input = args.input_override;
  if (!args.output_override.empty()) config.output_dir = args.output_override;
  if (!args.threshold_override.empty()) {
    double threshold = 0.0;
    if (!flowrisk::parse_double(args.threshold_override, threshold))
      flowrisk::fail("config-invalid",
                     "--threshold is not a number: " + args.threshold_override);
    config.ingest.label_spec.threshold = threshold;
  }

  if (args.stage == "run-all") {
    flowrisk::run_all(config);
  } else {
    flowrisk::PipelineState state;
    std::vector<std::string> log;
    flowrisk::run_stage(args.stage, config, state, log);
    flowrisk::write_run_log(config, log);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thrombus-risk model pipeline"};
  app.require_subcommand(1);

  CliArgs args;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "generate a synthetic dataset with planted structure"},
      {"prepare", "ingest the dataset and write the train/validation/test split"},
      {"screen", "structural and model-based column screening"},
      {"train-baseline", "fit the post-screen baseline model and report metrics"},
      {"engineer", "derive SQ/LOG/IX feature specs from the screened columns"},
      {"select", "recursive feature elimination and final model fit"},
      {"evaluate", "score the final model on the held-out test split"},
      {"importance", "permutation importance on the validation split"},
      {"export", "emit the closed-form solver expression"},
      {"run-all", "run every stage in order"},
  };
  for (const auto& [name, description] : stages) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", args.config_path, "pipeline config JSON")
        ->required();
    sub->add_option("--input", args.input_override, "override the config's input CSV");
    sub->add_option("--output-dir", args.output_override,
                    "override the config's output directory");
    sub->add_option("--threshold", args.threshold_override,
                    "override the label threshold (sAP units)");
    sub->callback([&args, name = name] { args.stage = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return run(args);
  } catch (const flowrisk::Error& e) {
    std::cerr << "error: " << e.error_class() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
