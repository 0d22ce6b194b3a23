#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentdecomp/attribution.hpp"
#include "sentdecomp/corpus.hpp"
#include "sentdecomp/dictlearn.hpp"
#include "sentdecomp/error.hpp"
#include "sentdecomp/probes.hpp"

namespace sentdecomp::pipeline {

struct ProbeSection {
  std::vector<probes::ProbeTarget> targets{probes::ProbeTarget::kPos, probes::ProbeTarget::kDep,
                                           probes::ProbeTarget::kPosition};
  std::vector<probes::ProbeArch> archs{probes::ProbeArch::kLinear, probes::ProbeArch::kMlp};
  bool baselines = true;  // shuffled-label probes and random predictions
  probes::ProbeHyper hyper;
};

struct SweepSection {
  std::size_t n_trials = 8;
  std::size_t max_threads = 0;
  dictlearn::SearchSpace space;
};

enum class AnalysisSplit { kAll, kTrain, kVal, kTest };

struct AttributionSection {
  std::vector<LabelKind> kinds{LabelKind::kPos, LabelKind::kDep};
  attribution::NormalizationOrder order = attribution::NormalizationOrder::kAverageThenNormalize;
  AnalysisSplit split = AnalysisSplit::kAll;
};

struct PipelineConfig {
  std::filesystem::path corpus_path;  // defaults to <output_dir>/corpus
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  SplitSpec split;  // split.seed is derived from `seed`
  SyntheticSpec synth;
  ProbeSection probe;
  dictlearn::DictConfig dict;
  SweepSection sweep;
  AttributionSection attribution;
};

// Relative paths resolve against `base_dir`. Throws kConfig on unknown keys,
// wrong types or invalid values.
PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& file);

struct Overrides {
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
};

// SENTDECOMP_OUTPUT_DIR and SENTDECOMP_SEED.
Overrides environment_overrides();

// Later overrides win; a changed output_dir also moves a defaulted corpus_path.
void apply_overrides(PipelineConfig& config, const Overrides& overrides);

std::uint64_t parse_seed(std::string_view text);

enum class Subcommand { kValidate, kSynth, kProbe, kDictTrain, kSweep, kPoolAnalyze, kAttribute, kReport };

std::string_view to_string(Subcommand s);
Subcommand parse_subcommand(std::string_view name);
const std::vector<Subcommand>& all_subcommands();

struct RunResult {
  std::vector<std::filesystem::path> artifacts;
  nlohmann::json info = nlohmann::json::object();
};

RunResult run(Subcommand subcommand, const PipelineConfig& config);

// 2 config, 3 missing artifact, 4 numerical failure, 1 anything else.
int exit_code(ErrorCode code);

nlohmann::json error_record(const Error& error);

}  // namespace sentdecomp::pipeline
