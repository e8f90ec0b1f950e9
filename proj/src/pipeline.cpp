#include "pdx/pipeline.hpp"

#include <fstream>

#ifndef PDX_GIT_DESCRIBE
#define PDX_GIT_DESCRIBE "unknown"
#endif

namespace pdx {

using nlohmann::json;

namespace {

void require_kind(const Checkpoint& ckpt, const std::string& kind, const std::filesystem::path& path) {
  if (!ckpt.meta.contains("kind") || ckpt.meta["kind"] != kind) {
    throw CorruptionError(path.string() + ": not a " + kind + " checkpoint");
  }
}

template <typename F>
auto meta_or_corrupt(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw CorruptionError(path.string() + ": bad metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptionError(path.string() + ": bad metadata: " + e.what());
  }
}

}  // namespace

void save_engine(const Engine& engine, const PriorTaskConfig& prior, const std::filesystem::path& path,
                 StorageType storage) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "engine"}, {"engine", to_json(engine.config())}, {"prior", to_json(prior)}};
  ckpt.tensors = tensors_from(engine.params());
  checkpoint_save(ckpt, path, storage);
}

Engine load_engine(const std::filesystem::path& path) {
  const Checkpoint ckpt = checkpoint_load(path);
  require_kind(ckpt, "engine", path);
  const EngineConfig cfg = meta_or_corrupt(path, [&] {
    EngineConfig c = engine_config_from_json(ckpt.meta.at("engine"));
    c.validate();
    return c;
  });
  SeededRng unused(0);
  Engine engine(cfg, unused);
  load_into(engine.params(), ckpt);
  return engine;
}

json schema_to_json(const TabularSchema& schema) {
  json cols = json::array();
  for (const auto& c : schema.columns) {
    cols.push_back({{"name", c.name},
                    {"kind", c.kind == ColumnKind::categorical ? "categorical" : "continuous"},
                    {"cardinality", c.cardinality},
                    {"mean", c.mean},
                    {"std", c.stddev}});
  }
  return cols;
}

TabularSchema schema_from_json(const json& j) {
  TabularSchema schema;
  for (const auto& c : j) {
    TabularColumn col;
    col.name = c.at("name").get<std::string>();
    const auto kind = c.at("kind").get<std::string>();
    if (kind != "categorical" && kind != "continuous") throw ConfigError("schema: unknown column kind " + kind);
    col.kind = kind == "categorical" ? ColumnKind::categorical : ColumnKind::continuous;
    col.cardinality = c.at("cardinality").get<int>();
    col.mean = c.at("mean").get<double>();
    col.stddev = c.at("std").get<double>();
    schema.columns.push_back(col);
  }
  schema.validate();
  return schema;
}

void save_mmtm(const Mmtm& model, const std::filesystem::path& path, StorageType storage) {
  const auto& v = model.volume();
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "mmtm"},
               {"mmtm", to_json(model.config())},
               {"volume", {{"depth", v.depth}, {"height", v.height}, {"width", v.width}, {"patch", v.patch}}},
               {"schema", schema_to_json(model.schema())}};
  ckpt.tensors = tensors_from(model.params());
  checkpoint_save(ckpt, path, storage);
}

Mmtm load_mmtm(const std::filesystem::path& path) {
  const Checkpoint ckpt = checkpoint_load(path);
  require_kind(ckpt, "mmtm", path);
  SeededRng unused(0);
  Mmtm model = meta_or_corrupt(path, [&] {
    const MmtmConfig cfg = mmtm_config_from_json(ckpt.meta.at("mmtm"));
    const auto& v = ckpt.meta.at("volume");
    const VolumeSpec volume{v.at("depth").get<std::size_t>(), v.at("height").get<std::size_t>(),
                            v.at("width").get<std::size_t>(), v.at("patch").get<std::size_t>()};
    return Mmtm(cfg, volume, schema_from_json(ckpt.meta.at("schema")), unused);
  });
  load_into(model.params(), ckpt);
  return model;
}

void save_adapter(const Adapter& adapter, const DptConfig& cfg, const std::filesystem::path& path,
                  StorageType storage) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "adapter"},
               {"in", adapter.in()},
               {"out", adapter.out()},
               {"depth", adapter.depth()},
               {"dpt", to_json(cfg)}};
  ckpt.tensors = tensors_from(adapter.params());
  checkpoint_save(ckpt, path, storage);
}

Adapter load_adapter(const std::filesystem::path& path) {
  const Checkpoint ckpt = checkpoint_load(path);
  require_kind(ckpt, "adapter", path);
  SeededRng unused(0);
  Adapter adapter = meta_or_corrupt(path, [&] {
    return Adapter(ckpt.meta.at("in").get<std::size_t>(), ckpt.meta.at("out").get<std::size_t>(), unused, 0.0,
                   ckpt.meta.at("depth").get<std::size_t>());
  });
  load_into(adapter.params(), ckpt);
  return adapter;
}

// --- stages ------------------------------------------------------------------

MultimodalDataset generate_multimodal(const RunConfig& cfg) {
  SeededRng rng(cfg.seed, streams::multimodal_data);
  return gen_multimodal(cfg.multimodal, rng);
}

TabularDataset generate_tabular(const RunConfig& cfg) {
  SeededRng rng(cfg.seed, streams::tabular_data);
  return gen_tabular(cfg.tabular, rng);
}

SplitIndices multimodal_split(const RunConfig& cfg, std::span<const int> labels) {
  SeededRng rng(cfg.seed, streams::split);
  const double fractions[] = {cfg.split.train, cfg.split.validation, cfg.split.test};
  return split_stratified(labels, fractions, rng);
}

MultimodalDataset imputed(const MultimodalDataset& data, const SplitIndices& split) {
  MultimodalDataset out = data;
  out.tables = impute_mean(data.tables, data.missing, split.train);
  std::fill(out.missing.begin(), out.missing.end(), 0);
  return out;
}

EnginePretrainResult run_engine_pretraining(const RunConfig& cfg, std::function<void(std::size_t, double)> on_step) {
  SeededRng rng(cfg.seed, streams::engine);
  EnginePretrainOptions options;
  options.steps = cfg.engine_training.steps;
  options.tasks_per_step = cfg.engine_training.tasks_per_step;
  options.lr = cfg.engine_training.lr;
  options.on_step = std::move(on_step);
  return pretrain_engine(cfg.engine, cfg.prior, options, rng);
}

MmtmPretrainResult run_mmtm_pretraining(const RunConfig& cfg, const MultimodalDataset& raw,
                                        std::function<void(std::size_t, double)> on_epoch) {
  const SplitIndices split = multimodal_split(cfg, raw.labels);
  const MultimodalDataset data = imputed(raw, split);
  SeededRng rng(cfg.seed, streams::mmtm);
  return pretrain_mmtm(data, split.train, cfg.mmtm, rng, {std::move(on_epoch)});
}

FeatureBench make_feature_bench(const RunConfig& cfg, const MultimodalDataset& raw, const Mmtm& trained) {
  FeatureBench bench;
  bench.split = multimodal_split(cfg, raw.labels);
  const MultimodalDataset data = imputed(raw, bench.split);
  bench.labels = data.labels;
  bench.classes = data.classes;
  bench.features = extract_features(trained, data);
  SeededRng init(cfg.seed, streams::random_mmtm);
  const Mmtm random(trained.config(), trained.volume(), trained.schema(), init);
  bench.random_features = extract_features(random, data);
  return bench;
}

// --- manifests ---------------------------------------------------------------

std::string build_git_describe() { return PDX_GIT_DESCRIBE; }

json make_manifest(const std::string& command, const RunConfig& cfg, const json& extra) {
  const json config = to_json(cfg);
  json seeds = json::array();
  for (std::size_t s = 0; s < cfg.eval.seeds; ++s) seeds.push_back({{"index", s}, {"seed", cfg.seed}, {"stream", 1000 + s}});
  json m = {{"command", command},
            {"config", config},
            {"config_hash", config_hash(config)},
            {"seed", cfg.seed},
            {"experiment_seeds", seeds},
            {"git_describe", build_git_describe()}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  return m;
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

}  // namespace pdx
