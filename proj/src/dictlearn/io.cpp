#include <cstdio>

#include "sentdecomp/blob_io.hpp"
#include "sentdecomp/dictlearn.hpp"
#include "sentdecomp/random.hpp"

namespace sentdecomp::dictlearn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "dictlearn";

struct TensorFile {
  DictModel::Slot slot;
  const char* file;
};

constexpr TensorFile kTensorFiles[] = {
    {DictModel::kEncCtx, "E_ctx.f32"},        {DictModel::kBiasCtx, "b_ctx.f32"},
    {DictModel::kEncStatic, "E_static.f32"},  {DictModel::kBiasStatic, "b_static.f32"},
    {DictModel::kDict, "D.f32"},              {DictModel::kDictStatic, "D_static.f32"},
    {DictModel::kHeadPos, "W_pos.f32"},       {DictModel::kBiasPos, "b_pos.f32"},
    {DictModel::kHeadDep, "W_dep.f32"},       {DictModel::kBiasDep, "b_dep.f32"},
};

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::kConfig, kModule, what); }

double number_field(const json& j, const char* key) {
  if (!j[key].is_number()) config_error(std::string("'") + key + "' must be a number");
  return j[key].get<double>();
}

std::size_t count_field(const json& j, const char* key) {
  if (!j[key].is_number_unsigned()) config_error(std::string("'") + key + "' must be a non-negative integer");
  return j[key].get<std::size_t>();
}

}  // namespace

json to_json(const DictConfig& c) {
  json j;
  j["k"] = c.k;
  j["nonlinearity"] = std::string(to_string(c.nonlinearity));
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["alpha_pos"] = c.alpha_pos;
  j["alpha_dep"] = c.alpha_dep;
  j["alpha_static"] = c.alpha_static;
  j["alpha_sparse"] = c.alpha_sparse;
  j["l1_ctx"] = c.l1_ctx;
  j["l1_static"] = c.l1_static;
  j["topk"] = c.topk ? json(*c.topk) : json(nullptr);
  j["seed"] = c.seed;
  return j;
}

DictConfig dict_config_from_json(const json& j, DictConfig c) {
  if (!j.is_object()) config_error("dictionary config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "k") c.k = count_field(j, "k");
    else if (key == "nonlinearity") {
      if (!it->is_string()) config_error("'nonlinearity' must be a string");
      c.nonlinearity = parse_nonlinearity(it->get<std::string>());
    } else if (key == "lr") c.lr = number_field(j, "lr");
    else if (key == "epochs") c.epochs = count_field(j, "epochs");
    else if (key == "batch_size") c.batch_size = count_field(j, "batch_size");
    else if (key == "alpha_pos") c.alpha_pos = number_field(j, "alpha_pos");
    else if (key == "alpha_dep") c.alpha_dep = number_field(j, "alpha_dep");
    else if (key == "alpha_static") c.alpha_static = number_field(j, "alpha_static");
    else if (key == "alpha_sparse") c.alpha_sparse = number_field(j, "alpha_sparse");
    else if (key == "l1_ctx") c.l1_ctx = number_field(j, "l1_ctx");
    else if (key == "l1_static") c.l1_static = number_field(j, "l1_static");
    else if (key == "topk") {
      if (it->is_null()) c.topk.reset();
      else c.topk = count_field(j, "topk");
    } else if (key == "seed") c.seed = count_field(j, "seed");
    else config_error("unknown dictionary config key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string vocab_hash(const std::vector<std::string>& vocab) {
  std::string joined;
  for (const std::string& v : vocab) {
    joined += v;
    joined += '\n';
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a64(joined)));
  return hex;
}

void save_model(const DictModel& model, const DictConfig& config, const Corpus& corpus, const fs::path& dir) {
  model.check();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, kModule, "cannot create " + dir.string());

  json meta;
  meta["format"] = "sentdecomp-dict";
  meta["version"] = 1;
  meta["config"] = to_json(config);
  meta["nonlinearity"] = std::string(to_string(model.nonlinearity));
  meta["topk"] = model.topk ? json(*model.topk) : json(nullptr);
  meta["k"] = model.k();
  meta["dim_contextual"] = model.dim_contextual();
  meta["dim_static"] = model.dim_static();
  meta["num_pos"] = model.num_pos();
  meta["num_dep"] = model.num_dep();
  meta["model_name"] = corpus.model_name;
  meta["pos_vocab_hash"] = vocab_hash(corpus.pos_vocab);
  meta["dep_vocab_hash"] = vocab_hash(corpus.dep_vocab);
  json tensors = json::object();
  for (const TensorFile& tf : kTensorFiles) {
    const Matrix& m = model[tf.slot];
    tensors[tf.file] = {m.rows(), m.cols()};
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = m.cast<float>();
    write_f32_blob(dir / tf.file, std::span<const float>(row_major.data(), static_cast<std::size_t>(row_major.size())),
                   kModule);
  }
  meta["tensors"] = tensors;
  write_text_file(dir / "model.json", meta.dump(2) + "\n", kModule);
}

SavedModel load_model(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_regular_file(dir / "model.json", ec)) {
    throw Error(ErrorCode::kMissingArtifact, kModule, "no model.json in " + dir.string());
  }
  json meta;
  try {
    meta = json::parse(read_text_file(dir / "model.json", kModule));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidFormat, kModule, std::string("model.json: ") + e.what());
  }
  SavedModel saved;
  try {
    saved.config = dict_config_from_json(meta.at("config"));
    saved.model = DictModel::zeros(meta.at("k").get<std::size_t>(), meta.at("dim_contextual").get<std::size_t>(),
                                   meta.at("dim_static").get<std::size_t>(), meta.at("num_pos").get<std::size_t>(),
                                   meta.at("num_dep").get<std::size_t>(),
                                   parse_nonlinearity(meta.at("nonlinearity").get<std::string>()));
    if (!meta.at("topk").is_null()) saved.model.topk = meta.at("topk").get<std::size_t>();
    saved.pos_vocab_hash = meta.at("pos_vocab_hash").get<std::string>();
    saved.dep_vocab_hash = meta.at("dep_vocab_hash").get<std::string>();
    saved.model_name = meta.at("model_name").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidFormat, kModule, std::string("model.json: ") + e.what());
  }
  for (const TensorFile& tf : kTensorFiles) {
    Matrix& m = saved.model[tf.slot];
    const std::vector<float> values =
        read_f32_blob(dir / tf.file, static_cast<std::size_t>(m.size()), kModule);
    m = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), m.rows(),
                                                                                              m.cols())
            .cast<double>();
  }
  saved.model.check();
  return saved;
}

void check_compatible(const SavedModel& saved, const Corpus& corpus) {
  if (saved.model.dim_contextual() != corpus.dim_contextual() || saved.model.dim_static() != corpus.dim_static()) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "model dimensions do not match the corpus");
  }
  if (saved.pos_vocab_hash != vocab_hash(corpus.pos_vocab) || saved.dep_vocab_hash != vocab_hash(corpus.dep_vocab)) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "model was trained on a different label vocabulary");
  }
}

}  // namespace sentdecomp::dictlearn
