#include "pdx/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <type_traits>

#include <zlib.h>

namespace pdx {

using nlohmann::json;

// Field lists, shared by the reader and the writer.

template <typename V>
void fields(V& v, EngineConfig& c) {
  v("d_model", c.d_model);
  v("n_layers", c.n_layers);
  v("n_heads", c.n_heads);
  v("max_features", c.max_features);
  v("max_classes", c.max_classes);
  v("ff_width", c.ff_width);
}

template <typename V>
void fields(V& v, PriorTaskConfig& c) {
  v("min_features", c.min_features);
  v("max_features", c.max_features);
  v("min_classes", c.min_classes);
  v("max_classes", c.max_classes);
  v("min_hidden", c.min_hidden);
  v("max_hidden", c.max_hidden);
  v("max_relevant_features", c.max_relevant_features);
  v("activations", c.activations);
  v("label_noise", c.label_noise);
  v("min_samples", c.min_samples);
  v("max_samples", c.max_samples);
  v("support_fraction", c.support_fraction);
}

template <typename V>
void fields(V& v, EngineTrainingConfig& c) {
  v("steps", c.steps);
  v("tasks_per_step", c.tasks_per_step);
  v("lr", c.lr);
}

template <typename V>
void fields(V& v, VolumeSpec& c) {
  v("depth", c.depth);
  v("height", c.height);
  v("width", c.width);
  v("patch", c.patch);
}

template <typename V>
void fields(V& v, SyntheticMultimodalConfig& c) {
  v("samples", c.samples);
  v("classes", c.classes);
  v("class_priors", c.class_priors);
  v.section("volume", c.volume);
  v("categorical_columns", c.categorical_columns);
  v("continuous_columns", c.continuous_columns);
  v("min_cardinality", c.min_cardinality);
  v("max_cardinality", c.max_cardinality);
  v("coupling", c.coupling);
  v("label_noise", c.label_noise);
  v("missing_rate", c.missing_rate);
  v("image_signal", c.image_signal);
  v("tabular_signal", c.tabular_signal);
  v("voxel_noise", c.voxel_noise);
}

template <typename V>
void fields(V& v, TabularDatasetSpec& c) {
  v("name", c.name);
  v("samples", c.samples);
  v("features", c.features);
  v("classes", c.classes);
  v("context", c.context);
  v("balanced", c.balanced);
  v("separation", c.separation);
}

template <typename V>
void fields(V& v, SplitConfig& c) {
  v("train", c.train);
  v("validation", c.validation);
  v("test", c.test);
}

template <typename V>
void fields(V& v, MmtmConfig& c) {
  v("d_model", c.d_model);
  v("heads", c.heads);
  v("ff_width", c.ff_width);
  v("visual_depth", c.visual_depth);
  v("tabular_depth", c.tabular_depth);
  v("fusion_depth", c.fusion_depth);
  v("continuous_hidden", c.continuous_hidden);
  v("mask_ratio_image", c.mask_ratio_image);
  v("mask_ratio_tabular", c.mask_ratio_tabular);
  v("lr", c.lr);
  v("batch_size", c.batch_size);
  v("epochs", c.epochs);
}

template <typename V>
void fields(V& v, DptConfig& c) {
  v("lambda_align", c.lambda_align);
  v("lambda_icl", c.lambda_icl);
  v("lr", c.lr);
  v("epochs", c.epochs);
  v("steps_per_epoch", c.steps_per_epoch);
  v("support_fraction", c.support_fraction);
  v("final_lr_fraction", c.final_lr_fraction);
  v("fixed_episode", c.fixed_episode);
  v("best_epoch", c.best_epoch);
  v("init_scale", c.init_scale);
  v("depth", c.depth);
}

template <typename V>
void fields(V& v, ParametricHeadConfig& c) {
  v("hidden", c.hidden);
  v("epochs", c.epochs);
  v("lr", c.lr);
}

template <typename V>
void fields(V& v, FinetuneConfig& c) {
  v("steps", c.steps);
  v("lr", c.lr);
  v("support_fraction", c.support_fraction);
  v("max_rows", c.max_rows);
}

template <typename V>
void fields(V& v, ExperimentConfig& c) {
  v("seeds", c.seeds);
  v("ratios", c.ratios);
  v.section("head", c.head);
  v.section("finetune", c.finetune);
  v("tabular_validation", c.tabular_validation);
  v("tabular_test_cap", c.tabular_test_cap);
}

template <typename V>
void fields(V& v, RunConfig& c) {
  v("seed", c.seed);
  v("output_dir", c.output_dir);
  v.section("engine", c.engine);
  v.section("prior", c.prior);
  v.section("engine_training", c.engine_training);
  v.section("multimodal", c.multimodal);
  v.section("tabular", c.tabular);
  v.section("split", c.split);
  v.section("mmtm", c.mmtm);
  v.section("dpt", c.dpt);
  v.section("eval", c.eval);
}

namespace {

class Writer {
 public:
  template <typename T>
  void operator()(const char* key, const T& value) {
    out[key] = value;
  }
  template <typename S>
  void section(const char* key, S& s) {
    Writer sub;
    fields(sub, s);
    out[key] = std::move(sub.out);
  }
  json out = json::object();
};

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
  }

  template <typename T>
  void operator()(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    read(j_.at(key), out, where(key));
  }

  template <typename S>
  void section(const char* key, S& s) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    Reader sub(j_.at(key), where(key));
    fields(sub, s);
    sub.finish();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown config key '" + where(item.key()) + "'");
    }
  }

 private:
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T>
  static void read(const json& v, T& out, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a nonnegative integer");
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      out = v.get<std::string>();
    } else {
      // Vectors of the scalar kinds above.
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T items;
      for (std::size_t i = 0; i < v.size(); ++i) {
        typename T::value_type item{};
        read(v[i], item, at + "[" + std::to_string(i) + "]");
        items.push_back(std::move(item));
      }
      out = std::move(items);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename S>
json write(const S& s) {
  S copy = s;
  Writer w;
  fields(w, copy);
  return std::move(w.out);
}

template <typename S>
S read(const json& j, const std::string& path) {
  S s;
  Reader r(j, path);
  fields(r, s);
  r.finish();
  return s;
}

}  // namespace

void RunConfig::validate() const {
  engine.validate();
  prior.validate(engine);
  if (engine_training.steps < 1 || engine_training.tasks_per_step < 1 || !(engine_training.lr > 0.0)) {
    throw ConfigError("engine_training: steps and tasks_per_step must be >= 1 and lr positive");
  }
  multimodal.validate();
  tabular.validate();
  const double total = split.train + split.validation + split.test;
  if (!(split.train > 0.0 && split.validation >= 0.0 && split.test > 0.0) || std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must be nonnegative with positive train/test and sum to 1");
  }
  mmtm.validate();
  dpt.validate();
  experiment().validate();
  if (multimodal.classes > engine.max_classes || tabular.classes > engine.max_classes) {
    throw ConfigError("dataset class counts exceed engine.max_classes");
  }
  if (mmtm.d_model > engine.max_features || tabular.features > engine.max_features) {
    throw ConfigError("feature widths exceed engine.max_features");
  }
}

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e = eval;
  e.seed = seed;
  e.dpt = dpt;
  return e;
}

json to_json(const RunConfig& cfg) { return write(cfg); }
json to_json(const EngineConfig& c) { return write(c); }
json to_json(const PriorTaskConfig& c) { return write(c); }
json to_json(const MmtmConfig& c) { return write(c); }
json to_json(const DptConfig& c) { return write(c); }
json to_json(const SyntheticMultimodalConfig& c) { return write(c); }
json to_json(const TabularDatasetSpec& c) { return write(c); }

EngineConfig engine_config_from_json(const json& j) { return read<EngineConfig>(j, "engine"); }
PriorTaskConfig prior_config_from_json(const json& j) { return read<PriorTaskConfig>(j, "prior"); }
MmtmConfig mmtm_config_from_json(const json& j) { return read<MmtmConfig>(j, "mmtm"); }
DptConfig dpt_config_from_json(const json& j) { return read<DptConfig>(j, "dpt"); }
SyntheticMultimodalConfig multimodal_config_from_json(const json& j) {
  return read<SyntheticMultimodalConfig>(j, "multimodal");
}
TabularDatasetSpec tabular_spec_from_json(const json& j) { return read<TabularDatasetSpec>(j, "tabular"); }

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg = read<RunConfig>(j, "");
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  RunConfig cfg = run_config_from_json(j);
  if (const char* env = std::getenv("PDX_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw ConfigError("PDX_SEED must be a nonnegative integer");
    cfg.seed = seed;
  }
  return cfg;
}

std::string config_hash(const json& j) {
  const std::string text = j.dump();
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()),
                          static_cast<uInt>(text.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace pdx
