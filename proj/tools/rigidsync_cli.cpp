#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "rigidsync/rigidsync.hpp"

namespace fs = std::filesystem;
using namespace rigidsync;

namespace {

// 2 = the inputs were wrong (files, config, flags); 3 = the math gave up.
int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ParseError:
    case ErrorCode::IoError:
    case ErrorCode::InvalidConfig:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::LengthMismatch:
    case ErrorCode::InvalidLabels:
    case ErrorCode::EmptyInput:
    case ErrorCode::EmptyCloud:
    case ErrorCode::TemperatureNonPositive:
      return 2;
    default:
      return 3;
  }
}

struct Options {
  std::string config_path;
  std::string out_dir;
  std::string scene_path;   // sync/eval/ablate: scan bundle to read
  std::string result_path;  // eval: result document to score
  uint64_t seed = 0;
  int iters = 4;
  double alpha = 0.15;
  int parts = 0;
  int runs = 5;
  bool no_sync = false;
  bool unweighted = false;
  bool unnormalized_z = false;

  // the subcommand that actually parsed, for asking which flags were given:
  // a flag present on the command line beats the config file
  const CLI::App* cmd = nullptr;

  bool given(const std::string& flag) const { return cmd->count(flag) > 0; }
};

Json config_document(const Options& o) {
  if (o.config_path.empty()) return Json::object();
  return parse_json(read_text(o.config_path), o.config_path);
}

PipelineConfig pipeline_config(const Options& o, const Json& doc) {
  PipelineConfig cfg = pipeline_config_from_json(doc);
  if (o.given("--iters")) cfg.iterations = o.iters;
  if (o.given("--alpha")) cfg.alpha = o.alpha;
  if (o.given("--parts")) cfg.parts_override = o.parts;
  if (o.no_sync) cfg.no_sync = true;
  if (o.unweighted) cfg.unweighted = true;
  if (o.unnormalized_z) cfg.unnormalized_z = true;
  return cfg;
}

SceneConfig scene_config(const Options& o, const Json& doc) {
  SceneConfig scene;
  if (doc.contains("scene")) scene = scene_config_from_json(doc.at("scene"));
  if (o.given("--seed")) scene.seed = o.seed;
  if (o.given("--parts")) scene.parts = o.parts;
  return scene;
}

int cmd_gen(const Options& o) {
  const SceneBundle bundle = generate_scene(scene_config(o, config_document(o)));
  save_scans(o.out_dir, bundle.scans, &bundle.gt_labels);
  save_ground_truth((fs::path(o.out_dir) / "ground_truth.json").string(), bundle);
  std::printf("generated scene: scans=%d points=%d parts=%d seed=%llu -> %s\n",
              bundle.config.scans, bundle.config.points, bundle.config.parts,
              static_cast<unsigned long long>(bundle.config.seed), o.out_dir.c_str());
  return 0;
}

int cmd_sync(const Options& o) {
  const PipelineConfig cfg = pipeline_config(o, config_document(o));
  const ScanSet scans = load_scans(o.scene_path);
  const PipelineResult result = run_pipeline(scans, cfg);
  for (const IterationState& it : result.iterations)
    std::printf("iteration %d: parts=%d\n", it.index, it.estimated_parts);
  save_result((fs::path(o.out_dir) / "result.json").string(), result);
  std::printf("final parts=%d (%zu iterations) -> %s/result.json\n",
              result.final_state().estimated_parts, result.iterations.size(),
              o.out_dir.c_str());
  return 0;
}

// Rebuilds the pairwise flow a (labels, poses) pair implies and scores it the
// same way for the prediction and the ground truth, so eval depends only on
// the saved documents, never on pipeline internals.
PairTable<FlowField> flows_from(const PoseSet& poses, const std::vector<int>& labels, int parts,
                                const ScanSet& scans) {
  AbsoluteSegmentation seg;
  seg.parts = parts;
  seg.hard_labels = labels;
  const int k = scans.scan_count();
  PairTable<FlowField> flows(k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      if (a != b) flows.at(a, b) = rigid_flow(poses, seg, scans, a, b);
  return flows;
}

int cmd_eval(const Options& o) {
  const ScanSet scans = load_scans(o.scene_path);
  fs::path scene_dir(o.scene_path);
  if (!fs::is_directory(scene_dir)) scene_dir = scene_dir.parent_path();
  const GroundTruth gt = load_ground_truth((scene_dir / "ground_truth.json").string());
  const LoadedResult result = load_result(o.result_path);

  const int k = scans.scan_count();
  const int n = scans.points_per_scan();
  require(static_cast<int>(gt.labels.size()) == k * n, ErrorCode::ShapeMismatch,
          "ground-truth labels do not cover the scans");
  require(static_cast<int>(result.labels.size()) == k * n, ErrorCode::ShapeMismatch,
          "result labels do not cover the scans");
  require(result.poses.part_count() == result.estimated_parts, ErrorCode::ShapeMismatch,
          "result poses do not match its part count");

  const MetricsReport report = compute_report(
      result.labels, gt.labels, k, n, result.estimated_parts, gt.parts,
      flows_from(result.poses, result.labels, result.estimated_parts, scans),
      flows_from(gt.poses, gt.labels, gt.parts, scans));

  // flat key-value lines, same names and order as the JSON document
  const Json j = report_to_json(report);
  for (const auto& [key, value] : j.items())
    std::printf("%s %.17g\n", key.c_str(), value.get<double>());
  if (!o.out_dir.empty())
    save_report((fs::path(o.out_dir) / "report.json").string(), report);
  return 0;
}

int cmd_ablate(const Options& o) {
  const Json doc = config_document(o);
  const PipelineConfig base = pipeline_config(o, doc);
  SceneConfig scene = scene_config(o, doc);
  require(o.runs >= 1, ErrorCode::InvalidConfig, "--runs must be at least 1");

  struct Variant {
    const char* name;
    bool no_sync, unweighted, unnormalized_z;
  };
  const Variant variants[] = {
      {"S,W", false, false, false},   // full pipeline
      {"S,NW", false, true, false},   // synchronized, unweighted
      {"NS", true, false, false},     // raw front-end flows
      {"UNZ", false, false, true},    // unnormalized segmentation kernel
  };

  Json runs = Json::array();
  double sum_epe[4] = {}, sum_miou[4] = {}, sum_ri[4] = {};
  for (int r = 0; r < o.runs; ++r) {
    scene.seed = o.seed + static_cast<uint64_t>(r);
    const SceneBundle bundle = generate_scene(scene);
    for (int v = 0; v < 4; ++v) {
      PipelineConfig cfg = base;
      cfg.no_sync = variants[v].no_sync;
      cfg.unweighted = variants[v].unweighted;
      cfg.unnormalized_z = variants[v].unnormalized_z;
      const PipelineResult result = run_pipeline(bundle.scans, cfg);
      const IterationState& fin = result.final_state();
      const MetricsReport report =
          compute_report(fin.seg.hard_labels, bundle.gt_labels, scene.scans, scene.points,
                         fin.estimated_parts, scene.parts, fin.rigid_flows, bundle.gt_flows);
      sum_epe[v] += report.epe3d_mean;
      sum_miou[v] += report.miou_multi;
      sum_ri[v] += report.ri_multi;
      Json row;
      row["seed"] = scene.seed;
      row["variant"] = variants[v].name;
      row["report"] = report_to_json(report);
      runs.push_back(std::move(row));
    }
  }

  Json summary;
  std::printf("%-6s %14s %12s %12s   (means over %d seeds)\n", "variant", "epe3d_mean",
              "miou_multi", "ri_multi", o.runs);
  for (int v = 0; v < 4; ++v) {
    const double inv = 1.0 / o.runs;
    std::printf("%-6s %14.6g %12.4f %12.4f\n", variants[v].name, sum_epe[v] * inv,
                sum_miou[v] * inv, sum_ri[v] * inv);
    Json row;
    row["epe3d_mean"] = sum_epe[v] * inv;
    row["miou_multi"] = sum_miou[v] * inv;
    row["ri_multi"] = sum_ri[v] * inv;
    summary[variants[v].name] = std::move(row);
  }

  Json out;
  out["base_seed"] = o.seed;
  out["runs"] = std::move(runs);
  out["summary"] = std::move(summary);
  write_text_atomic((fs::path(o.out_dir) / "ablate.json").string(), out.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-scan rigid multi-body synchronization"};
  app.require_subcommand(1);
  Options o;

  const auto add_common = [&](CLI::App* cmd, bool out_required) {
    cmd->add_option("--config", o.config_path, "JSON config document");
    cmd->add_option("--seed", o.seed, "scene seed");
    cmd->add_option("--iters", o.iters, "refinement iterations")->default_val(4);
    cmd->add_option("--alpha", o.alpha, "part-count eigengap threshold")->default_val(0.15);
    cmd->add_option("--parts", o.parts, "part count override");
    cmd->add_flag("--no-sync", o.no_sync, "skip correspondence synchronization");
    cmd->add_flag("--unweighted", o.unweighted, "uniform pair weights");
    cmd->add_flag("--unnormalized-z", o.unnormalized_z, "skip kernel normalization");
    auto* out = cmd->add_option("--out", o.out_dir, "output directory");
    if (out_required) out->required();
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic scene bundle");
  add_common(gen, true);

  CLI::App* sync = app.add_subcommand("sync", "run the pipeline on a scan bundle");
  sync->add_option("scene", o.scene_path, "scene directory or manifest path")->required();
  add_common(sync, true);

  CLI::App* eval = app.add_subcommand("eval", "score a result against ground truth");
  eval->add_option("scene", o.scene_path, "scene directory or manifest path")->required();
  eval->add_option("result", o.result_path, "result.json from sync")->required();
  add_common(eval, false);

  CLI::App* ablate = app.add_subcommand("ablate", "compare pipeline variants over seeds");
  ablate->add_option("--runs", o.runs, "number of seeds to run")->default_val(5);
  add_common(ablate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    o.cmd = app.get_subcommands().front();
    if (app.got_subcommand(gen)) return cmd_gen(o);
    if (app.got_subcommand(sync)) return cmd_sync(o);
    if (app.got_subcommand(eval)) return cmd_eval(o);
    return cmd_ablate(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
