#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "taskweave/config.hpp"
#include "taskweave/metrics.hpp"
#include "taskweave/synth_bench.hpp"
#include "taskweave/trainer.hpp"

namespace fs = std::filesystem;
using namespace taskweave;

namespace {

RunConfig build_config(const std::string& config_path,
                       const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int run_generate(const std::string& out, int num_items, int num_val,
                 std::uint64_t seed, double snr, int clips, int dim_video,
                 int dim_text, int max_windows, int min_window_len,
                 int max_window_len) {
  SynthConfig cfg;
  cfg.num_items = num_items;
  cfg.clips = clips;
  cfg.dim_video = dim_video;
  cfg.dim_text = dim_text;
  cfg.max_windows = max_windows;
  cfg.min_window_len = min_window_len;
  cfg.max_window_len = max_window_len;
  cfg.snr = snr;
  cfg.seed = seed;
  fs::create_directories(out);
  generate_to_dir(cfg, out, "train");
  if (num_val > 0) {
    SynthConfig val_cfg = cfg;
    val_cfg.num_items = num_val;
    val_cfg.seed = seed + 1;
    generate_to_dir(val_cfg, out, "val");
  }
  std::cout << "wrote " << num_items << " train";
  if (num_val > 0) std::cout << " + " << num_val << " val";
  std::cout << " items to " << out << "\n";
  return 0;
}

int run_train(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  Trainer trainer(cfg);
  trainer.load_data();
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
  trainer.train(&metrics);
  trainer.save_checkpoint(fs::path(out_dir) / "checkpoint.bin");
  if (!trainer.val_items().empty()) {
    auto [mr, hd] = trainer.evaluate(trainer.val_items());
    std::cout << eval_report(mr, hd).dump(2) << "\n";
  }
  std::cout << "checkpoint written to " << out_dir << "/checkpoint.bin\n";
  return 0;
}

int run_predict(const std::string& checkpoint, const std::string& data,
                const std::string& features, const std::string& out) {
  Trainer trainer = Trainer::from_checkpoint(checkpoint);
  const auto items =
      load_dataset(data, features.empty()
                             ? fs::path(trainer.config().data_features)
                             : fs::path(features),
                   trainer.config().clip_length);
  save_predictions(trainer.predict(items), out);
  std::cout << "wrote " << items.size() << " prediction records to " << out
            << "\n";
  return 0;
}

int run_evaluate(const std::string& preds_path, const std::string& gt_path,
                 const std::string& report_path) {
  const auto preds = load_predictions(preds_path);
  const auto gts = load_annotations(gt_path);
  std::map<std::string, const PredictionRecord*> by_qid;
  for (const auto& p : preds) by_qid[p.qid] = &p;
  std::vector<EvalItem> mr_items;
  std::vector<HdEvalItem> hd_items;
  for (const auto& gt : gts) {
    const auto it = by_qid.find(gt.qid);
    if (it == by_qid.end())
      throw ValidationError("no prediction for qid " + gt.qid);
    mr_items.push_back({it->second->pred_windows, gt.relevant_windows});
    hd_items.push_back({it->second->pred_saliency, gt.saliency_labels});
  }
  const auto report = eval_report(mr_map(mr_items), hd_eval(hd_items));
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_ablate(const RunConfig& base, const std::string& axis,
               const std::string& out_dir) {
  std::vector<std::pair<std::string, RunConfig>> grid;
  if (axis == "feedback") {
    for (const char* mode :
         {"none", "mr2hd", "hd2mr", "bi", "mr_then_hd", "hd_then_mr"}) {
      RunConfig c = base;
      c.set("feedback.mode", mode);
      grid.emplace_back(std::string("feedback=") + mode, c);
    }
  } else if (axis == "loss") {
    for (const char* type : {"sum", "weighted_sum", "task_dependent"}) {
      RunConfig c = base;
      c.set("loss.type", type);
      grid.emplace_back(std::string("loss=") + type, c);
    }
  } else if (axis == "experts") {
    const std::pair<const char*, const char*> combos[] = {
        {"identity", "identity"},    {"linear", "linear"},
        {"cnn", "cnn"},              {"transformer", "transformer"},
        {"transformer", "identity"}, {"cnn", "identity"}};
    for (const auto& [mr, hd] : combos) {
      RunConfig c = base;
      c.set("experts.mr", mr);
      c.set("experts.hd", hd);
      grid.emplace_back(std::string("experts=") + mr + "/" + hd, c);
    }
  } else {
    throw ValidationError("unknown ablation axis: " + axis);
  }

  fs::create_directories(out_dir);
  nlohmann::json table = nlohmann::json::array();
  std::cout << "cell                          R1@0.5  R1@0.7  mAP@.5  mAP@.75 "
               "Avg.mAP HD.mAP  HIT@1\n";
  for (const auto& [name, cfg] : grid) {
    Trainer trainer(cfg);
    trainer.load_data();
    trainer.train(nullptr);
    auto [mr, hd] = trainer.evaluate(trainer.val_items());
    nlohmann::json row = eval_report(mr, hd);
    row["cell"] = name;
    table.push_back(row);
    std::printf("%-28s %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f\n",
                name.c_str(), mr.r1_050, mr.r1_070, mr.map_050, mr.map_075,
                mr.map_avg, hd.map, hd.hit1);
  }
  std::ofstream out(fs::path(out_dir) / ("ablate_" + axis + ".json"));
  out << table.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint video moment retrieval and highlight detection trainer"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data",
                                 "generate a synthetic planted-window dataset");
  std::string gen_out;
  SynthConfig gen_defaults;
  int gen_items = 200, gen_val = 50, gen_clips = 75, gen_dv = 64, gen_dt = 64,
      gen_maxw = 3, gen_minlen = gen_defaults.min_window_len,
      gen_maxlen = gen_defaults.max_window_len;
  std::uint64_t gen_seed = 7;
  double gen_snr = 3.0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--num-items", gen_items, "training items");
  gen->add_option("--num-val", gen_val, "validation items");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--snr", gen_snr, "signal-to-noise ratio");
  gen->add_option("--clips", gen_clips, "clips per video");
  gen->add_option("--dim-video", gen_dv, "video feature dimension");
  gen->add_option("--dim-text", gen_dt, "text feature dimension");
  gen->add_option("--max-windows", gen_maxw, "max planted windows per item");
  gen->add_option("--min-window", gen_minlen, "min window length in clips");
  gen->add_option("--max-window", gen_maxlen, "max window length in clips");

  // train
  auto* train = app.add_subcommand("train", "train a model from a config");
  std::string train_config, train_out = "run";
  std::vector<std::string> train_sets;
  train->add_option("--config", train_config, "config file (key = value lines)");
  train->add_option("--set", train_sets, "override: key=value");
  train->add_option("--out", train_out, "output directory");

  // predict
  auto* predict = app.add_subcommand("predict", "run inference from a checkpoint");
  std::string pr_ckpt, pr_data, pr_features, pr_out;
  predict->add_option("--checkpoint", pr_ckpt)->required();
  predict->add_option("--data", pr_data, "annotations JSONL")->required();
  predict->add_option("--features", pr_features, "features directory");
  predict->add_option("--out", pr_out, "predictions JSONL")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score predictions against labels");
  std::string ev_preds, ev_gt, ev_report;
  eval->add_option("--preds", ev_preds)->required();
  eval->add_option("--gt", ev_gt)->required();
  eval->add_option("--report", ev_report, "report JSON path");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  std::string ab_axis, ab_config, ab_out = "ablation";
  std::vector<std::string> ab_sets;
  ablate->add_option("--axis", ab_axis, "experts | loss | feedback")->required();
  ablate->add_option("--config", ab_config, "base config file");
  ablate->add_option("--set", ab_sets, "override: key=value");
  ablate->add_option("--out", ab_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return run_generate(gen_out, gen_items, gen_val, gen_seed, gen_snr,
                          gen_clips, gen_dv, gen_dt, gen_maxw, gen_minlen,
                          gen_maxlen);
    if (train->parsed())
      return run_train(build_config(train_config, train_sets), train_out);
    if (predict->parsed())
      return run_predict(pr_ckpt, pr_data, pr_features, pr_out);
    if (eval->parsed()) return run_evaluate(ev_preds, ev_gt, ev_report);
    if (ablate->parsed())
      return run_ablate(build_config(ab_config, ab_sets), ab_axis, ab_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
