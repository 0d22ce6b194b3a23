#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sentdecomp/pipeline.hpp"

namespace pl = sentdecomp::pipeline;

namespace {

int report_error(const sentdecomp::Error& e) {
  std::cerr << pl::error_record(e).dump() << std::endl;
  return pl::exit_code(e.code());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse decomposition of mean-pooled sentence embeddings"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string seed_text;
  std::string output_dir;
  for (pl::Subcommand s : pl::all_subcommands()) {
    CLI::App* sub = app.add_subcommand(std::string(pl::to_string(s)));
    sub->add_option("--config", config_path, "Pipeline configuration (JSON)");
    sub->add_option("--seed", seed_text, "Root seed; overrides SENTDECOMP_SEED and the config");
    sub->add_option("--output", output_dir, "Output directory; overrides SENTDECOMP_OUTPUT_DIR and the config");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? 0 : 2;
  }

  try {
    const pl::Subcommand subcommand = pl::parse_subcommand(app.get_subcommands().front()->get_name());
    pl::PipelineConfig config = config_path.empty() ? pl::parse_config(nlohmann::json::object(), ".")
                                                    : pl::load_config(config_path);
    pl::apply_overrides(config, pl::environment_overrides());
    pl::Overrides flags;
    if (!output_dir.empty()) flags.output_dir = output_dir;
    if (!seed_text.empty()) flags.seed = pl::parse_seed(seed_text);
    pl::apply_overrides(config, flags);

    const pl::RunResult result = pl::run(subcommand, config);
    nlohmann::json status = {{"subcommand", std::string(pl::to_string(subcommand))}, {"seed", config.seed}};
    nlohmann::json artifacts = nlohmann::json::array();
    for (const auto& p : result.artifacts) artifacts.push_back(p.string());
    status["artifacts"] = artifacts;
    if (!result.info.empty()) status["info"] = result.info;
    std::cout << status.dump() << std::endl;
    return 0;
  } catch (const sentdecomp::Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"module", "cli"}, {"message", e.what()}, {"exit_code", 1}}.dump()
              << std::endl;
    return 1;
  }
}
