// pdx: command-line driver for data generation, pretraining, prompt tuning
// and the evaluation protocols.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pdx/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pdx;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kCorrupt = 3, kDiverged = 4 };

struct Common {
  std::string config;
  bool verbose = false;
};

void log_progress(bool verbose, const char* what, std::size_t i, double loss, std::size_t every) {
  if (verbose && (i % every == 0)) std::fprintf(stderr, "%s %zu loss %.5f\n", what, i, loss);
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--ratios: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("--ratios: empty list");
  return out;
}

MultimodalDataset require_multimodal(const std::string& dir) {
  if (dataset_kind(dir) != "multimodal") throw ConfigError(dir + " does not hold a multimodal dataset");
  return load_multimodal(dir);
}

/// Checks that a stored dataset matches the effective config's schema shape.
void check_compatible(const MultimodalDataset& data, const Mmtm& mmtm) {
  if (data.volume.voxels() != mmtm.volume().voxels() || data.volume.patch != mmtm.volume().patch ||
      data.schema.size() != mmtm.schema().size()) {
    throw ConfigError("dataset and MMTM checkpoint disagree on volume or schema shape");
  }
}

void write_report_set(const fs::path& dir, const std::string& stem, const json& report, const std::string& text,
                      const json& manifest) {
  write_json(dir / (stem + ".json"), report);
  write_text(dir / (stem + ".txt"), text);
  write_json(dir / "manifest.json", manifest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-tuned in-context diagnosis pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON run configuration (defaults when omitted)");
  app.add_flag("-v,--verbose", common.verbose, "Print training progress to stderr");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_kind, gen_out;
  gen->add_option("--kind", gen_kind, "multimodal or tabular")->required()->check(CLI::IsMember({"multimodal", "tabular"}));
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--config", common.config, "JSON run configuration");

  // pretrain-engine
  auto* pe = app.add_subcommand("pretrain-engine", "Meta-train the in-context engine on the synthetic prior");
  std::string pe_out;
  bool pe_f32 = false;
  pe->add_option("--out", pe_out, "Checkpoint path")->required();
  pe->add_option("--config", common.config, "JSON run configuration");
  pe->add_flag("--f32", pe_f32, "Store values as 32-bit floats");

  // pretrain-mmtm
  auto* pm = app.add_subcommand("pretrain-mmtm", "Masked multimodal pretraining");
  std::string pm_data, pm_out;
  pm->add_option("--data", pm_data, "Multimodal dataset directory")->required();
  pm->add_option("--out", pm_out, "Checkpoint path")->required();
  pm->add_option("--config", common.config, "JSON run configuration");

  // train-dpt
  auto* td = app.add_subcommand("train-dpt", "Train the prompt adapter against the frozen engine");
  std::string td_data, td_mmtm, td_engine, td_out;
  bool td_fixed = false;
  std::optional<double> td_align, td_icl;
  td->add_option("--data", td_data, "Multimodal dataset directory")->required();
  td->add_option("--mmtm", td_mmtm, "MMTM checkpoint")->required();
  td->add_option("--engine", td_engine, "Engine checkpoint")->required();
  td->add_option("--out", td_out, "Adapter checkpoint path")->required();
  td->add_option("--config", common.config, "JSON run configuration");
  td->add_flag("--fixed-episode", td_fixed, "Keep one support/query partition for all epochs");
  td->add_option("--lambda-align", td_align, "Weight of the alignment loss");
  td->add_option("--lambda-icl", td_icl, "Weight of the in-context classification loss");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate trained artifacts on the test split");
  std::string ev_data, ev_artifacts, ev_out;
  ev->add_option("--data", ev_data, "Multimodal dataset directory")->required();
  ev->add_option("--artifacts", ev_artifacts, "Directory with engine.pdx, mmtm.pdx and adapter.pdx")->required();
  ev->add_option("--out", ev_out, "Report JSON path")->required();
  ev->add_option("--config", common.config, "JSON run configuration");

  // sweep-context
  auto* sw = app.add_subcommand("sweep-context", "Context-ratio sweep on the multimodal benchmark");
  std::string sw_data, sw_mmtm, sw_engine, sw_out, sw_ratios;
  std::optional<std::size_t> sw_seeds;
  sw->add_option("--data", sw_data, "Multimodal dataset directory")->required();
  sw->add_option("--mmtm", sw_mmtm, "MMTM checkpoint")->required();
  sw->add_option("--engine", sw_engine, "Engine checkpoint")->required();
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--ratios", sw_ratios, "Comma-separated context ratios");
  sw->add_option("--seeds", sw_seeds, "Number of experiment seeds");
  sw->add_option("--config", common.config, "JSON run configuration");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Component ablations on the multimodal benchmark");
  std::string ab_data, ab_mmtm, ab_engine, ab_out;
  std::optional<std::size_t> ab_seeds;
  ab->add_option("--data", ab_data, "Multimodal dataset directory")->required();
  ab->add_option("--mmtm", ab_mmtm, "MMTM checkpoint")->required();
  ab->add_option("--engine", ab_engine, "Engine checkpoint")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--seeds", ab_seeds, "Number of experiment seeds");
  ab->add_option("--config", common.config, "JSON run configuration");

  // compare-tabular
  auto* ct = app.add_subcommand("compare-tabular", "Raw vs finetuned engine vs prompt tuning on tabular data");
  std::string ct_spec, ct_engine, ct_out, ct_data;
  std::optional<std::size_t> ct_seeds;
  ct->add_option("--spec", ct_spec, "Tabular dataset spec (JSON); defaults to the config's tabular section");
  ct->add_option("--data", ct_data, "Tabular dataset directory (instead of --spec)");
  ct->add_option("--engine", ct_engine, "Engine checkpoint")->required();
  ct->add_option("--out", ct_out, "Output directory")->required();
  ct->add_option("--seeds", ct_seeds, "Number of experiment seeds");
  ct->add_option("--config", common.config, "JSON run configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig cfg = load_run_config(common.config);
    const bool verbose = common.verbose;

    if (*gen) {
      const json provenance = {{"config", to_json(cfg)}, {"seed", cfg.seed}};
      if (gen_kind == "multimodal") {
        save_multimodal(generate_multimodal(cfg), gen_out, provenance.dump());
      } else {
        save_tabular(generate_tabular(cfg), cfg.tabular, gen_out, provenance.dump());
      }
      write_json(fs::path(gen_out) / "manifest.json", make_manifest("gen-data", cfg, {{"kind", gen_kind}}));
    } else if (*pe) {
      auto result = run_engine_pretraining(cfg, [&](std::size_t i, double l) { log_progress(verbose, "step", i, l, 100); });
      save_engine(result.engine, cfg.prior, pe_out, pe_f32 ? StorageType::f32 : StorageType::f64);
      write_json(pe_out + ".manifest.json",
                 make_manifest("pretrain-engine", cfg, {{"loss_curve", result.loss_curve}}));
    } else if (*pm) {
      const MultimodalDataset data = require_multimodal(pm_data);
      auto result = run_mmtm_pretraining(cfg, data, [&](std::size_t i, double l) { log_progress(verbose, "epoch", i, l, 1); });
      save_mmtm(result.model, pm_out);
      write_json(pm_out + ".manifest.json", make_manifest("pretrain-mmtm", cfg, {{"epoch_loss", result.epoch_loss}}));
    } else if (*td) {
      if (td_align) cfg.dpt.lambda_align = *td_align;
      if (td_icl) cfg.dpt.lambda_icl = *td_icl;
      if (td_fixed) cfg.dpt.fixed_episode = true;
      cfg.validate();
      const MultimodalDataset data = require_multimodal(td_data);
      const Mmtm mmtm = load_mmtm(td_mmtm);
      check_compatible(data, mmtm);
      const Engine engine = load_engine(td_engine);
      const FeatureBench bench = make_feature_bench(cfg, data, mmtm);
      SeededRng rng(cfg.seed, streams::dpt);
      const Matrix h_train = bench.features.select_rows(bench.split.train);
      const Matrix h_val = bench.features.select_rows(bench.split.validation);
      const auto y_train = select<int>(bench.labels, bench.split.train);
      const auto y_val = select<int>(bench.labels, bench.split.validation);
      const DptResult result = train_dpt(h_train, y_train, h_val, y_val, bench.classes, engine, cfg.dpt, rng);
      save_adapter(result.adapter, cfg.dpt, td_out);
      json curve = json::array();
      for (const auto& r : result.curve) {
        curve.push_back({{"epoch", r.epoch}, {"l_align", r.l_align}, {"l_icl", r.l_icl}, {"l_total", r.l_total},
                         {"val_acc", r.val_acc}});
        if (verbose) std::fprintf(stderr, "%s\n", curve.back().dump().c_str());
      }
      write_json(td_out + ".manifest.json",
                 make_manifest("train-dpt", cfg, {{"curve", curve}, {"selected_epoch", result.selected_epoch}}));
    } else if (*ev) {
      const MultimodalDataset data = require_multimodal(ev_data);
      const fs::path dir(ev_artifacts);
      const Engine engine = load_engine(dir / "engine.pdx");
      const Mmtm mmtm = load_mmtm(dir / "mmtm.pdx");
      const Adapter adapter = load_adapter(dir / "adapter.pdx");
      check_compatible(data, mmtm);
      const FeatureBench bench = make_feature_bench(cfg, data, mmtm);
      const Matrix h_train = bench.features.select_rows(bench.split.train);
      const Matrix h_test = bench.features.select_rows(bench.split.test);
      const auto y_train = select<int>(bench.labels, bench.split.train);
      const auto y_test = select<int>(bench.labels, bench.split.test);
      const Metrics dpt = compute_metrics(predict_dpt(adapter, engine, h_train, y_train, h_test, bench.classes), y_test,
                                          bench.classes);
      const Metrics raw =
          compute_metrics(predict_raw(engine, h_train, y_train, h_test, bench.classes), y_test, bench.classes);
      json report = {{"experiment", "evaluate"}, {"dpt", to_json(dpt)}, {"raw-engine", to_json(raw)}};
      write_json(ev_out, report);
      write_json(ev_out + ".manifest.json", make_manifest("evaluate", cfg, {{"artifacts", ev_artifacts}}));
    } else if (*sw) {
      if (!sw_ratios.empty()) cfg.eval.ratios = parse_ratios(sw_ratios);
      if (sw_seeds) cfg.eval.seeds = *sw_seeds;
      cfg.validate();
      const MultimodalDataset data = require_multimodal(sw_data);
      const Mmtm mmtm = load_mmtm(sw_mmtm);
      check_compatible(data, mmtm);
      const Engine engine = load_engine(sw_engine);
      const SweepResult result = run_context_sweep(make_feature_bench(cfg, data, mmtm), engine, cfg.experiment());
      write_report_set(sw_out, "sweep", to_json(result), to_text(result), make_manifest("sweep-context", cfg));
      write_text(fs::path(sw_out) / "sweep.csv", to_csv(result));
      std::cout << to_text(result);
    } else if (*ab) {
      if (ab_seeds) cfg.eval.seeds = *ab_seeds;
      cfg.validate();
      const MultimodalDataset data = require_multimodal(ab_data);
      const Mmtm mmtm = load_mmtm(ab_mmtm);
      check_compatible(data, mmtm);
      const Engine engine = load_engine(ab_engine);
      const AblationResult result = run_ablations(make_feature_bench(cfg, data, mmtm), engine, cfg.experiment());
      json settings = json::array();
      for (const auto& r : result.rows) settings.push_back({{"method", r.method}, {"settings", r.settings}});
      write_report_set(ab_out, "ablation", to_json(result), to_text(result),
                       make_manifest("ablate", cfg, {{"variants", settings}}));
      std::cout << to_text(result);
    } else if (*ct) {
      if (ct_seeds) cfg.eval.seeds = *ct_seeds;
      if (!ct_spec.empty() && !ct_data.empty()) throw ConfigError("compare-tabular takes --spec or --data, not both");
      TabularDatasetSpec spec = cfg.tabular;
      TabularDataset data;
      if (!ct_spec.empty()) {
        std::ifstream is(ct_spec);
        if (!is) throw ConfigError("cannot open spec file " + ct_spec);
        json j;
        try {
          j = json::parse(is);
        } catch (const json::exception& e) {
          throw ConfigError(ct_spec + ": " + e.what());
        }
        spec = tabular_spec_from_json(j);
        spec.validate();
        cfg.tabular = spec;
        data = generate_tabular(cfg);
      } else if (ct_data.empty()) {
        data = generate_tabular(cfg);
      } else {
        if (dataset_kind(ct_data) != "tabular") throw ConfigError(ct_data + " does not hold a tabular dataset");
        data = load_tabular(ct_data, &spec);
        cfg.tabular = spec;
      }
      cfg.validate();
      const Engine engine = load_engine(ct_engine);
      const TabularComparison result = run_tabular_comparison(data, spec, engine, cfg.experiment());
      write_report_set(ct_out, "comparison", to_json(result), to_text(result), make_manifest("compare-tabular", cfg));
      std::cout << to_text(result);
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const CorruptionError& e) {
    std::cerr << "corrupt input: " << e.what() << '\n';
    return kCorrupt;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
