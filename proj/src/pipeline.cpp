#include "sentdecomp/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>

#include "sentdecomp/blob_io.hpp"
#include "sentdecomp/csv.hpp"
#include "sentdecomp/random.hpp"

namespace sentdecomp::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "cli";
constexpr const char* kModelDir = "dict_model";
constexpr std::size_t kTopAtoms = 10;

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::kConfig, kModule, what); }

void check_keys(const json& j, const std::string& section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) config_error("'" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      config_error("unknown key '" + it.key() + "' in " + section);
    }
  }
}

template <typename T>
T get_as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    config_error("'" + where + "' has the wrong type");
  }
}

std::size_t get_count(const json& j, const std::string& where) {
  if (!j.is_number_integer() || j.get<std::int64_t>() < 0) {
    config_error("'" + where + "' must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

double get_number(const json& j, const std::string& where) {
  if (!j.is_number()) config_error("'" + where + "' must be a number");
  return j.get<double>();
}

std::vector<std::string> get_strings(const json& j, const std::string& where) {
  if (!j.is_array()) config_error("'" + where + "' must be an array of strings");
  std::vector<std::string> out;
  for (const json& v : j) {
    if (!v.is_string()) config_error("'" + where + "' must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

LabelKind parse_label_kind(std::string_view name) {
  if (name == "pos") return LabelKind::kPos;
  if (name == "dep") return LabelKind::kDep;
  config_error("unknown class kind '" + std::string(name) + "'");
}

AnalysisSplit parse_analysis_split(std::string_view name) {
  if (name == "all") return AnalysisSplit::kAll;
  if (name == "train") return AnalysisSplit::kTrain;
  if (name == "val") return AnalysisSplit::kVal;
  if (name == "test") return AnalysisSplit::kTest;
  config_error("unknown analysis split '" + std::string(name) + "'");
}

dictlearn::Range parse_range(const json& j, const std::string& where, bool log_scale) {
  if (!j.is_array() || j.size() != 2) config_error("'" + where + "' must be [lo, hi]");
  dictlearn::Range r{get_number(j[0], where), get_number(j[1], where), log_scale};
  if (!(r.lo <= r.hi) || (log_scale && !(r.lo > 0.0))) config_error("'" + where + "' is not a valid range");
  return r;
}

void parse_search_space(const json& j, dictlearn::SearchSpace& s) {
  check_keys(j, "search_space",
             {"lr", "k", "nonlinearity", "alpha_pos", "alpha_dep", "alpha_static", "alpha_sparse", "l1_ctx",
              "l1_static", "epochs", "batch_size", "topk"});
  if (j.contains("lr")) s.lr = parse_range(j["lr"], "search_space.lr", true);
  if (j.contains("k")) {
    if (!j["k"].is_array() || j["k"].empty()) config_error("'search_space.k' must be a non-empty array");
    s.k.clear();
    for (const json& v : j["k"]) s.k.push_back(get_count(v, "search_space.k"));
  }
  if (j.contains("nonlinearity")) {
    s.nonlinearities.clear();
    for (const std::string& n : get_strings(j["nonlinearity"], "search_space.nonlinearity")) {
      s.nonlinearities.push_back(dictlearn::parse_nonlinearity(n));
    }
    if (s.nonlinearities.empty()) config_error("'search_space.nonlinearity' must not be empty");
  }
  if (j.contains("alpha_pos")) s.alpha_pos = parse_range(j["alpha_pos"], "search_space.alpha_pos", false);
  if (j.contains("alpha_dep")) s.alpha_dep = parse_range(j["alpha_dep"], "search_space.alpha_dep", false);
  if (j.contains("alpha_static")) s.alpha_static = parse_range(j["alpha_static"], "search_space.alpha_static", false);
  if (j.contains("alpha_sparse")) s.alpha_sparse = parse_range(j["alpha_sparse"], "search_space.alpha_sparse", false);
  if (j.contains("l1_ctx")) s.l1_ctx = parse_range(j["l1_ctx"], "search_space.l1_ctx", true);
  if (j.contains("l1_static")) s.l1_static = parse_range(j["l1_static"], "search_space.l1_static", true);
  if (j.contains("epochs")) s.epochs = get_count(j["epochs"], "search_space.epochs");
  if (j.contains("batch_size")) s.batch_size = get_count(j["batch_size"], "search_space.batch_size");
  if (j.contains("topk")) {
    if (j["topk"].is_null()) s.topk.reset();
    else s.topk = get_count(j["topk"], "search_space.topk");
  }
}

void parse_probe(const json& j, ProbeSection& p) {
  check_keys(j, "probe", {"targets", "archs", "baselines", "hyper"});
  if (j.contains("targets")) {
    p.targets.clear();
    for (const std::string& t : get_strings(j["targets"], "probe.targets")) p.targets.push_back(probes::parse_target(t));
  }
  if (j.contains("archs")) {
    p.archs.clear();
    for (const std::string& a : get_strings(j["archs"], "probe.archs")) p.archs.push_back(probes::parse_arch(a));
  }
  if (j.contains("baselines")) p.baselines = get_as<bool>(j["baselines"], "probe.baselines");
  if (j.contains("hyper")) {
    const json& h = j["hyper"];
    check_keys(h, "probe.hyper", {"batch_size", "lr", "max_epochs", "patience", "hidden"});
    if (h.contains("batch_size")) p.hyper.batch_size = get_count(h["batch_size"], "probe.hyper.batch_size");
    if (h.contains("lr")) p.hyper.lr = get_number(h["lr"], "probe.hyper.lr");
    if (h.contains("max_epochs")) p.hyper.max_epochs = get_count(h["max_epochs"], "probe.hyper.max_epochs");
    if (h.contains("patience")) p.hyper.patience = get_count(h["patience"], "probe.hyper.patience");
    if (h.contains("hidden")) p.hyper.hidden = get_count(h["hidden"], "probe.hyper.hidden");
  }
  if (p.hyper.batch_size == 0 || p.hyper.max_epochs == 0 || p.hyper.patience == 0 || !(p.hyper.lr > 0.0)) {
    config_error("probe batch_size, max_epochs, patience and lr must be positive");
  }
}

void parse_synth(const json& j, SyntheticSpec& s) {
  check_keys(j, "synth",
             {"k", "d", "n_sentences", "tokens_per_sentence", "active_atoms", "noise_std", "num_pos_labels",
              "support", "max_abs_cosine"});
  if (j.contains("k")) s.k = get_count(j["k"], "synth.k");
  if (j.contains("d")) s.d = get_count(j["d"], "synth.d");
  if (j.contains("n_sentences")) s.n_sentences = get_count(j["n_sentences"], "synth.n_sentences");
  if (j.contains("tokens_per_sentence")) {
    s.tokens_per_sentence = get_count(j["tokens_per_sentence"], "synth.tokens_per_sentence");
  }
  if (j.contains("active_atoms")) s.active_atoms = get_count(j["active_atoms"], "synth.active_atoms");
  if (j.contains("noise_std")) s.noise_std = get_number(j["noise_std"], "synth.noise_std");
  if (j.contains("num_pos_labels")) s.num_pos_labels = get_count(j["num_pos_labels"], "synth.num_pos_labels");
  if (j.contains("support")) {
    const std::string mode = get_as<std::string>(j["support"], "synth.support");
    if (mode == "grouped") s.support = SupportMode::kLabelGrouped;
    else if (mode == "uniform") s.support = SupportMode::kUniform;
    else config_error("'synth.support' must be 'grouped' or 'uniform'");
  }
  if (j.contains("max_abs_cosine")) s.max_abs_cosine = get_number(j["max_abs_cosine"], "synth.max_abs_cosine");
}

void parse_dict(const json& j, PipelineConfig& c) {
  if (!j.is_object()) config_error("'dict' must be an object");
  json plain = j;
  if (plain.contains("sweep")) {
    const json& s = plain["sweep"];
    check_keys(s, "dict.sweep", {"n_trials", "max_threads", "search_space"});
    if (s.contains("n_trials")) c.sweep.n_trials = get_count(s["n_trials"], "dict.sweep.n_trials");
    if (s.contains("max_threads")) c.sweep.max_threads = get_count(s["max_threads"], "dict.sweep.max_threads");
    if (s.contains("search_space")) parse_search_space(s["search_space"], c.sweep.space);
    if (c.sweep.n_trials == 0) config_error("'dict.sweep.n_trials' must be positive");
    plain.erase("sweep");
  }
  c.dict = dictlearn::dict_config_from_json(plain, c.dict);
}

void parse_attribution(const json& j, AttributionSection& a) {
  check_keys(j, "attribution", {"class_kinds", "normalization_order", "split"});
  if (j.contains("class_kinds")) {
    a.kinds.clear();
    for (const std::string& k : get_strings(j["class_kinds"], "attribution.class_kinds")) {
      a.kinds.push_back(parse_label_kind(k));
    }
  }
  if (j.contains("normalization_order")) {
    a.order = attribution::parse_normalization_order(
        get_as<std::string>(j["normalization_order"], "attribution.normalization_order"));
  }
  if (j.contains("split")) a.split = parse_analysis_split(get_as<std::string>(j["split"], "attribution.split"));
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

bool corpus_path_defaulted(const PipelineConfig& c) { return c.corpus_path == c.output_dir / "corpus"; }

// --- run helpers -----------------------------------------------------------

struct Artifacts {
  const PipelineConfig& config;
  RunResult& result;

  fs::path path(const std::string& name) const { return config.output_dir / name; }

  void write(const std::string& name, const std::string& text) {
    write_text_file(path(name), text, kModule);
    result.artifacts.push_back(path(name));
  }
};

void ensure_output_dir(const PipelineConfig& c) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw Error(ErrorCode::kIo, kModule, "cannot create output directory " + c.output_dir.string());
}

Corpus load_input_corpus(const PipelineConfig& c) {
  std::error_code ec;
  if (!fs::is_directory(c.corpus_path, ec)) {
    throw Error(ErrorCode::kMissingArtifact, "corpus-io", "no corpus at " + c.corpus_path.string());
  }
  return load_corpus(c.corpus_path);
}

CorpusSplits make_splits(const PipelineConfig& c, const Corpus& corpus) {
  SplitSpec spec = c.split;
  spec.seed = derive_seed(c.seed, "split");
  return split_corpus(corpus, spec);
}

const Corpus& analysis_corpus(const PipelineConfig& c, const Corpus& corpus, const CorpusSplits& splits) {
  switch (c.attribution.split) {
    case AnalysisSplit::kTrain: return splits.train;
    case AnalysisSplit::kVal: return splits.val;
    case AnalysisSplit::kTest: return splits.test;
    case AnalysisSplit::kAll: break;
  }
  return corpus;
}

dictlearn::SavedModel load_trained_model(const PipelineConfig& c, const Corpus& corpus) {
  dictlearn::SavedModel saved = dictlearn::load_model(c.output_dir / kModelDir);
  dictlearn::check_compatible(saved, corpus);
  return saved;
}

json evaluation_json(const dictlearn::Evaluation& e) {
  return {{"val_recon", e.val_recon},
          {"l1_s_contextual", e.l1_s_contextual},
          {"f1_pos", e.f1_pos},
          {"f1_dep", e.f1_dep}};
}

std::string label_name(const std::vector<std::string>& vocab, const dictlearn::AtomLabel& l) {
  return l.support == 0 ? std::string() : vocab.at(l.label);
}

// Saves the model, its history, its evaluation and the atom label table.
void write_trained(Artifacts& out, const dictlearn::TrainResult& trained, const dictlearn::DictConfig& config,
                   const CorpusSplits& splits) {
  dictlearn::save_model(trained.model, config, splits.train, out.path(kModelDir));
  out.result.artifacts.push_back(out.path(kModelDir));
  out.write("train_history.csv", dictlearn::history_csv(trained.history));

  json eval;
  eval["config"] = dictlearn::to_json(config);
  eval["epochs"] = trained.history.size();
  eval["val"] = evaluation_json(dictlearn::evaluate(trained.model, splits.val));
  if (splits.test.num_tokens() > 0) eval["test"] = evaluation_json(dictlearn::evaluate(trained.model, splits.test));
  out.write("dict_eval.json", eval.dump(2) + "\n");

  const auto pos = dictlearn::atom_label_assignment(trained.model, splits.train, LabelKind::kPos);
  const auto dep = dictlearn::atom_label_assignment(trained.model, splits.train, LabelKind::kDep);
  std::string table = csv_row({"atom", "pos_label", "pos_confidence", "pos_support", "dep_label", "dep_confidence",
                               "dep_support"});
  for (std::size_t j = 0; j < pos.size(); ++j) {
    table += csv_row({std::to_string(j), label_name(splits.train.pos_vocab, pos[j]), format_number(pos[j].confidence),
                      std::to_string(pos[j].support), label_name(splits.train.dep_vocab, dep[j]),
                      format_number(dep[j].confidence), std::to_string(dep[j].support)});
  }
  out.write("atom_labels.csv", table);
}

json synthetic_spec_json(const SyntheticSpec& s) {
  return {{"k", s.k},
          {"d", s.d},
          {"n_sentences", s.n_sentences},
          {"tokens_per_sentence", s.tokens_per_sentence},
          {"active_atoms", s.active_atoms},
          {"noise_std", s.noise_std},
          {"num_pos_labels", s.num_pos_labels},
          {"support", s.support == SupportMode::kLabelGrouped ? "grouped" : "uniform"},
          {"max_abs_cosine", s.max_abs_cosine},
          {"seed", s.seed}};
}

// --- subcommands -------------------------------------------------------------

void run_validate(const PipelineConfig& c, RunResult& result) {
  const Corpus corpus = load_input_corpus(c);
  validate_corpus(corpus);
  result.info = {{"corpus", c.corpus_path.string()},
                 {"model_name", corpus.model_name},
                 {"num_sentences", corpus.num_sentences},
                 {"num_tokens", corpus.num_tokens()},
                 {"dim_contextual", corpus.dim_contextual()},
                 {"dim_static", corpus.dim_static()}};
}

void run_synth(const PipelineConfig& c, RunResult& result) {
  SyntheticSpec spec = c.synth;
  spec.seed = derive_seed(c.seed, "synth");
  SyntheticCorpus synthetic;
  try {
    synthetic = generate_synthetic(spec);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument) throw Error(ErrorCode::kConfig, e.module(), e.what());
    throw;
  }
  synthetic.corpus.manifest_extras["synthetic"] = synthetic_spec_json(spec);
  save_corpus(synthetic.corpus, c.corpus_path);
  result.artifacts.push_back(c.corpus_path);
  result.info = {{"num_sentences", synthetic.corpus.num_sentences}, {"num_tokens", synthetic.corpus.num_tokens()}};
}

void run_probe(const PipelineConfig& c, RunResult& result) {
  const Corpus corpus = load_input_corpus(c);
  const CorpusSplits splits = make_splits(c, corpus);
  ensure_output_dir(c);
  Artifacts out{c, result};
  std::vector<probes::ProbeResultRow> rows;
  std::vector<probes::SvdAlignment> alignments;
  for (probes::ProbeTarget target : c.probe.targets) {
    const std::string tname(probes::to_string(target));
    for (probes::ProbeArch arch : c.probe.archs) {
      const std::string aname(probes::to_string(arch));
      std::vector<probes::ProbeMode> modes{probes::ProbeMode::kStandard};
      if (c.probe.baselines) modes.push_back(probes::ProbeMode::kShuffled);
      for (probes::ProbeMode mode : modes) {
        const std::uint64_t seed =
            derive_seed(c.seed, "probe/" + tname + "/" + aname + "/" + std::string(probes::to_string(mode)));
        const probes::TrainedProbe trained = probes::train_probe(splits.train, splits.val, target, arch,
                                                                 c.probe.hyper, mode, seed);
        rows.push_back({corpus.model_name, target, aname, mode, trained.metrics.accuracy, trained.metrics.macro_f1,
                        seed});
        if (arch == probes::ProbeArch::kLinear && mode == probes::ProbeMode::kStandard) {
          alignments.push_back({target, trained.model.classes, probes::probe_svd_alignment(trained.model)});
        }
      }
    }
    if (c.probe.baselines) {
      const std::uint64_t seed = derive_seed(c.seed, "probe/" + tname + "/random");
      const probes::ProbeMetrics m = probes::random_baseline(splits.val, target, seed);
      rows.push_back({corpus.model_name, target, "none", probes::ProbeMode::kRandom, m.accuracy, m.macro_f1, seed});
    }
  }
  out.write("probe_results.csv", probes::probe_results_csv(rows));
  out.write("svd_alignment.csv", probes::svd_alignment_csv(alignments));
}

void run_dict_train(const PipelineConfig& c, RunResult& result) {
  const Corpus corpus = load_input_corpus(c);
  const CorpusSplits splits = make_splits(c, corpus);
  ensure_output_dir(c);
  Artifacts out{c, result};
  dictlearn::DictConfig config = c.dict;
  config.seed = derive_seed(c.seed, "dict-train");
  try {
    const dictlearn::TrainResult trained = dictlearn::train(splits.train, splits.val, config);
    write_trained(out, trained, config, splits);
  } catch (const dictlearn::TrainingDiverged& e) {
    out.write("train_history.csv", dictlearn::history_csv(e.history()));
    throw;
  }
}

void run_sweep(const PipelineConfig& c, RunResult& result) {
  const Corpus corpus = load_input_corpus(c);
  const CorpusSplits splits = make_splits(c, corpus);
  ensure_output_dir(c);
  Artifacts out{c, result};
  const std::vector<dictlearn::TrialRow> rows = dictlearn::sweep(
      splits.train, splits.val, c.sweep.space, c.sweep.n_trials, derive_seed(c.seed, "sweep"), c.sweep.max_threads);
  out.write("sweep.csv", dictlearn::sweep_csv(rows));

  json trials = json::array();
  for (const dictlearn::TrialRow& r : rows) {
    json t = {{"trial", r.trial}, {"config", dictlearn::to_json(r.config)}};
    if (r.ok()) t["eval"] = evaluation_json(r.eval);
    else t["error"] = r.error;
    trials.push_back(t);
  }
  out.write("sweep_trials.json", trials.dump(2) + "\n");

  const std::optional<std::size_t> best = dictlearn::best_trial(rows);
  if (!best) throw Error(ErrorCode::kDivergence, "dictlearn", "every sweep trial failed");
  const dictlearn::TrialRow& row = rows[*best];
  out.write("best_trial.json",
            json({{"trial", row.trial}, {"config", dictlearn::to_json(row.config)}, {"eval", evaluation_json(row.eval)}})
                    .dump(2) +
                "\n");
  // Retraining with the trial's own seed reproduces the trial's model.
  const dictlearn::TrainResult trained = dictlearn::train(splits.train, splits.val, row.config);
  write_trained(out, trained, row.config, splits);
}

void run_pool_analyze(const PipelineConfig& c, RunResult& result) {
  const Corpus corpus = load_input_corpus(c);
  const CorpusSplits splits = make_splits(c, corpus);
  const dictlearn::SavedModel saved = load_trained_model(c, corpus);
  const Corpus& data = analysis_corpus(c, corpus, splits);
  Artifacts out{c, result};
  out.write("atom_stats.csv", attribution::atom_stats_csv(attribution::atom_stats(saved.model, data)));
  const attribution::AttributionReport report =
      attribution::corpus_contributions(saved.model, data, c.attribution.order);
  out.write("atom_contributions.csv", attribution::atom_contributions_csv(report));
  result.info = {{"sentences", report.sentences}, {"degenerate", report.degenerate}};
}

void run_attribute(const PipelineConfig& c, RunResult& result) {
  const Corpus corpus = load_input_corpus(c);
  const CorpusSplits splits = make_splits(c, corpus);
  const dictlearn::SavedModel saved = load_trained_model(c, corpus);
  const Corpus& data = analysis_corpus(c, corpus, splits);
  Artifacts out{c, result};
  for (LabelKind kind : c.attribution.kinds) {
    const std::string kname(to_string(kind));
    const attribution::ClassAttribution ca = attribution::class_attribution(saved.model, data, kind, c.attribution.order);
    out.write("class_attribution_" + kname + ".csv", attribution::class_attribution_csv(ca));
    std::string pi = csv_row({"atom", "class", "pi"});
    for (Eigen::Index j = 0; j < ca.fractions.pi.rows(); ++j) {
      for (Eigen::Index k = 0; k < ca.fractions.pi.cols(); ++k) {
        pi += csv_row({std::to_string(j), ca.classes[static_cast<std::size_t>(k)], format_number(ca.fractions.pi(j, k))});
      }
    }
    out.write("class_fractions_" + kname + ".csv", pi);
  }
}

double parse_double(const std::string& text) {
  if (text == "nan") return std::nan("");
  try {
    return std::stod(text);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidFormat, kModule, "not a number: '" + text + "'");
  }
}

json read_json_artifact(const fs::path& p) {
  try {
    return json::parse(read_text_file(p, kModule));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidFormat, kModule, p.filename().string() + ": " + e.what());
  }
}

void run_report(const PipelineConfig& c, RunResult& result) {
  const fs::path dir = c.output_dir;
  std::error_code ec;
  auto exists = [&](const std::string& name) { return fs::is_regular_file(dir / name, ec); };
  json summary = json::object();
  json sources = json::array();

  if (exists("probe_results.csv")) {
    const CsvTable t = parse_csv(read_text_file(dir / "probe_results.csv", kModule));
    json probes_json = json::array();
    for (const auto& row : t.rows) {
      probes_json.push_back({{"model_name", row.at(t.column("model_name"))},
                             {"target", row.at(t.column("target"))},
                             {"arch", row.at(t.column("arch"))},
                             {"mode", row.at(t.column("mode"))},
                             {"accuracy", parse_double(row.at(t.column("accuracy")))},
                             {"macro_f1", parse_double(row.at(t.column("macro_f1")))}});
    }
    summary["probes"] = probes_json;
    sources.push_back("probe_results.csv");
  }
  if (exists("dict_eval.json")) {
    summary["dictionary"] = read_json_artifact(dir / "dict_eval.json");
    sources.push_back("dict_eval.json");
  }
  if (exists("best_trial.json")) {
    summary["best_trial"] = read_json_artifact(dir / "best_trial.json");
    sources.push_back("best_trial.json");
  }
  if (exists("atom_contributions.csv")) {
    const CsvTable t = parse_csv(read_text_file(dir / "atom_contributions.csv", kModule));
    struct Entry {
      std::size_t atom;
      double a;
      double a_norm;
    };
    std::vector<Entry> entries;
    for (const auto& row : t.rows) {
      entries.push_back({static_cast<std::size_t>(std::stoull(row.at(t.column("atom")))),
                         parse_double(row.at(t.column("a"))), parse_double(row.at(t.column("a_norm")))});
    }
    auto key = [](const Entry& e) { return std::isnan(e.a_norm) ? std::abs(e.a) : std::abs(e.a_norm); };
    std::stable_sort(entries.begin(), entries.end(), [&](const Entry& x, const Entry& y) { return key(x) > key(y); });
    entries.resize(std::min(entries.size(), kTopAtoms));

    std::map<std::size_t, std::vector<std::string>> labels;
    std::optional<CsvTable> label_table;
    if (exists("atom_labels.csv")) {
      label_table = parse_csv(read_text_file(dir / "atom_labels.csv", kModule));
      for (const auto& row : label_table->rows) labels[std::stoull(row.at(0))] = row;
      sources.push_back("atom_labels.csv");
    }
    json top = json::array();
    for (const Entry& e : entries) {
      json item = {{"atom", e.atom}, {"a", e.a}, {"a_norm", e.a_norm}};
      if (label_table && labels.count(e.atom)) {
        const auto& row = labels[e.atom];
        item["pos_label"] = row.at(label_table->column("pos_label"));
        item["pos_confidence"] = parse_double(row.at(label_table->column("pos_confidence")));
        item["dep_label"] = row.at(label_table->column("dep_label"));
        item["dep_confidence"] = parse_double(row.at(label_table->column("dep_confidence")));
      }
      top.push_back(item);
    }
    summary["top_atoms"] = top;
    sources.push_back("atom_contributions.csv");
  }
  json shares = json::object();
  for (const char* kind : {"pos", "dep"}) {
    const std::string name = std::string("class_attribution_") + kind + ".csv";
    if (!exists(name)) continue;
    const CsvTable t = parse_csv(read_text_file(dir / name, kModule));
    json list = json::array();
    for (const auto& row : t.rows) {
      list.push_back({{"class", row.at(t.column("class"))}, {"share", parse_double(row.at(t.column("share")))}});
    }
    shares[kind] = list;
    sources.push_back(name);
  }
  if (!shares.empty()) summary["class_shares"] = shares;

  if (sources.empty()) {
    throw Error(ErrorCode::kMissingArtifact, kModule, "no pipeline artifacts in " + dir.string());
  }
  std::sort(sources.begin(), sources.end());
  summary["sources"] = sources;
  Artifacts out{c, result};
  out.write("summary.json", summary.dump(2) + "\n");
}

}  // namespace

PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  check_keys(j, "config",
             {"corpus_path", "output_dir", "seed", "split", "synth", "probe", "dict", "attribution"});
  PipelineConfig c;
  bool corpus_given = false;
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j["output_dir"], "output_dir");
  c.output_dir = resolve(base_dir, c.output_dir);
  if (j.contains("corpus_path")) {
    c.corpus_path = resolve(base_dir, get_as<std::string>(j["corpus_path"], "corpus_path"));
    corpus_given = true;
  }
  if (!corpus_given) c.corpus_path = c.output_dir / "corpus";
  if (j.contains("seed")) c.seed = get_count(j["seed"], "seed");
  if (j.contains("split")) {
    const json& s = j["split"];
    check_keys(s, "split", {"train", "val", "test"});
    if (s.contains("train")) c.split.train_frac = get_number(s["train"], "split.train");
    if (s.contains("val")) c.split.val_frac = get_number(s["val"], "split.val");
    if (s.contains("test")) c.split.test_frac = get_number(s["test"], "split.test");
    const double total = c.split.train_frac + c.split.val_frac + c.split.test_frac;
    if (c.split.train_frac <= 0.0 || c.split.val_frac < 0.0 || c.split.test_frac < 0.0 || std::abs(total - 1.0) > 1e-9) {
      config_error("split fractions must be non-negative, train positive, and sum to 1");
    }
  }
  if (j.contains("synth")) parse_synth(j["synth"], c.synth);
  if (j.contains("probe")) parse_probe(j["probe"], c.probe);
  if (j.contains("dict")) parse_dict(j["dict"], c);
  if (j.contains("attribution")) parse_attribution(j["attribution"], c.attribution);
  return c;
}

PipelineConfig load_config(const fs::path& file) {
  std::error_code ec;
  if (!fs::is_regular_file(file, ec)) config_error("config file not found: " + file.string());
  json j;
  try {
    j = json::parse(read_text_file(file, kModule));
  } catch (const json::parse_error& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j, fs::absolute(file).parent_path());
}

std::uint64_t parse_seed(std::string_view text) {
  std::uint64_t value = 0;
  const auto [ptr, err] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (err != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    config_error("seed must be a non-negative integer, got '" + std::string(text) + "'");
  }
  return value;
}

Overrides environment_overrides() {
  Overrides o;
  if (const char* dir = std::getenv("SENTDECOMP_OUTPUT_DIR"); dir && *dir) o.output_dir = fs::path(dir);
  if (const char* seed = std::getenv("SENTDECOMP_SEED"); seed && *seed) o.seed = parse_seed(seed);
  return o;
}

void apply_overrides(PipelineConfig& config, const Overrides& overrides) {
  if (overrides.output_dir) {
    const bool move_corpus = corpus_path_defaulted(config);
    config.output_dir = fs::absolute(*overrides.output_dir);
    if (move_corpus) config.corpus_path = config.output_dir / "corpus";
  }
  if (overrides.seed) config.seed = *overrides.seed;
}

std::string_view to_string(Subcommand s) {
  switch (s) {
    case Subcommand::kValidate: return "validate";
    case Subcommand::kSynth: return "synth";
    case Subcommand::kProbe: return "probe";
    case Subcommand::kDictTrain: return "dict-train";
    case Subcommand::kSweep: return "sweep";
    case Subcommand::kPoolAnalyze: return "pool-analyze";
    case Subcommand::kAttribute: return "attribute";
    case Subcommand::kReport: return "report";
  }
  return "unknown";
}

const std::vector<Subcommand>& all_subcommands() {
  static const std::vector<Subcommand> all{Subcommand::kValidate,  Subcommand::kSynth,       Subcommand::kProbe,
                                           Subcommand::kDictTrain, Subcommand::kSweep,       Subcommand::kPoolAnalyze,
                                           Subcommand::kAttribute, Subcommand::kReport};
  return all;
}

Subcommand parse_subcommand(std::string_view name) {
  for (Subcommand s : all_subcommands()) {
    if (to_string(s) == name) return s;
  }
  config_error("unknown subcommand '" + std::string(name) + "'");
}

RunResult run(Subcommand subcommand, const PipelineConfig& config) {
  RunResult result;
  switch (subcommand) {
    case Subcommand::kValidate: run_validate(config, result); break;
    case Subcommand::kSynth: run_synth(config, result); break;
    case Subcommand::kProbe: run_probe(config, result); break;
    case Subcommand::kDictTrain: run_dict_train(config, result); break;
    case Subcommand::kSweep: run_sweep(config, result); break;
    case Subcommand::kPoolAnalyze: run_pool_analyze(config, result); break;
    case Subcommand::kAttribute: run_attribute(config, result); break;
    case Subcommand::kReport: run_report(config, result); break;
  }
  return result;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return 2;
    case ErrorCode::kMissingArtifact:
    case ErrorCode::kMissingFile: return 3;
    case ErrorCode::kNonFinite:
    case ErrorCode::kDivergence: return 4;
    default: return 1;
  }
}

json error_record(const Error& error) {
  return {{"error", std::string(sentdecomp::to_string(error.code()))},
          {"module", error.module()},
          {"message", error.what()},
          {"exit_code", exit_code(error.code())}};
}

}  // namespace sentdecomp::pipeline
