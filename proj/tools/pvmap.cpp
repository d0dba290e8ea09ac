#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pvmap/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pvmap;

namespace {

struct CommonOpts {
  std::string config;
  std::uint64_t seed = 0;
  bool strict = false;
  bool keep = false;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config, "pipeline config file (key = value lines)")->required();
  o.seed_opt = cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_flag("--strict", o.strict, "treat warnings as fatal");
  cmd->add_flag("--keep-intermediates", o.keep, "keep per-stage files in the output directory");
}

PipelineConfig config_from(const CommonOpts& o) {
  PipelineConfig cfg = load_pipeline_config(o.config);
  if (o.seed_opt->count() > 0) cfg.seed = o.seed;
  if (o.strict) cfg.strict = true;
  if (o.keep) cfg.keep_intermediates = true;
  return cfg;
}

void print_log(const StageLog& log) {
  for (const std::string& n : log.notes) std::cout << "[note] " << n << "\n";
  for (const std::string& w : log.warnings) std::cerr << "[warn] " << w << "\n";
}

void enforce_strict(const PipelineConfig& cfg, const StageLog& log) {
  if (cfg.strict && !log.warnings.empty())
    throw ConflictError("strict mode: " + std::to_string(log.warnings.size()) +
                        " warnings, first: " + log.warnings.front());
}

std::string stage_path(const PipelineConfig& cfg, const char* name) {
  return cfg.io.out_dir + "/" + name;
}

PlantParams preset_plant(const std::string& name) {
  if (name == "pp1-desk") return pp1_desk();
  if (name == "pp2-desk") return pp2_desk();
  throw InputError("unknown preset \"" + name + "\" (expected pp1-desk or pp2-desk)");
}

NoiseProfile preset_noise(const std::string& name, std::uint64_t seed) {
  if (name == "zero-noise") return zero_noise(seed);
  if (name == "paper-noise") return paper_noise(seed);
  throw InputError("unknown noise profile \"" + name +
                   "\" (expected zero-noise or paper-noise)");
}

void cmd_simulate(const std::string& preset, const std::string& noise_name, std::uint64_t seed,
                  const std::string& out, bool render_images) {
  PlantParams params = preset_plant(preset);
  GroundTruthPlant plant = make_plant(params);
  std::vector<CameraFrame> frames = plan_cameras(plant, desk_capture());
  NoiseProfile noise = preset_noise(noise_name, seed);
  SimScene scene = simulate_scene(plant, frames, noise, render_images);

  fs::create_directories(out);
  save_camera_frames(out + "/cameras.json", scene.frames);
  DetectionMap dets;
  for (std::size_t f = 0; f < scene.frames.size(); ++f)
    dets[scene.frames[f].frame_id] = scene.detections[f];
  save_detections(out + "/detections.json", dets);
  save_cloud(out + "/cloud.txt", scene.cloud);
  save_truth(out + "/truth.json", scene.plant);
  if (render_images) {
    fs::create_directories(out + "/images");
    for (std::size_t f = 0; f < scene.frames.size(); ++f)
      save_ppm(out + "/images/" + scene.frames[f].frame_id + ".ppm", scene.images[f]);
  }
  std::string conf;
  conf += "io.cameras = " + out + "/cameras.json\n";
  conf += "io.detections = " + out + "/detections.json\n";
  conf += "io.cloud = " + out + "/cloud.txt\n";
  if (render_images) conf += "io.images_dir = " + out + "/images\n";
  conf += "io.truth = " + out + "/truth.json\n";
  conf += "io.out_dir = " + out + "/result\n";
  // Dedup radius must stay below the cross-row module distance of the layout
  // (0.47 of the box diagonal for the landscape preset) while still catching
  // detector duplicates, which land within a few pixels of each other.
  conf += "detect.fusion_min_sep = 0.25\n";
  conf += "infer.rows_per_bench = " + std::to_string(params.rows_per_bench) + "\n";
  conf += "seed = " + std::to_string(seed) + "\n";
  save_text(out + "/pipeline.conf", conf);

  int total = 0;
  for (const auto& d : scene.detections) total += static_cast<int>(d.size());
  std::cout << "simulated " << plant.modules.size() << " modules, " << scene.frames.size()
            << " frames, " << total << " detections -> " << out << "\n";
}

void cmd_fuse(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  if (cfg.io.cameras.empty()) throw InputError("config: io.cameras is required");
  if (cfg.io.detections.empty()) throw InputError("config: io.detections is required");
  std::vector<CameraFrame> cameras = load_camera_frames(cfg.io.cameras);
  DetectionMap dets = load_detections(cfg.io.detections);
  StageLog log;
  std::map<std::string, FusedFrame> fused = run_fuse_stage(cameras, dets, cfg.detect, log);
  print_log(log);
  enforce_strict(cfg, log);
  fs::create_directories(cfg.io.out_dir);
  save_fused(stage_path(cfg, "fused.json"), fused);
  std::cout << "fused " << fused.size() << " frames -> " << stage_path(cfg, "fused.json")
            << "\n";
}

void cmd_infer(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  std::map<std::string, FusedFrame> fused = load_fused(stage_path(cfg, "fused.json"));
  std::vector<Correction> corrections;
  if (!cfg.io.corrections.empty()) corrections = load_corrections(cfg.io.corrections);
  StageLog log;
  std::map<std::string, StructureFrame> structures =
      run_infer_stage(fused, cfg.io.images_dir, corrections, cfg.infer, cfg.seed, log);
  print_log(log);
  enforce_strict(cfg, log);
  save_structures(stage_path(cfg, "structure.json"), structures);
  std::cout << "inferred structure for " << structures.size() << " frames -> "
            << stage_path(cfg, "structure.json") << "\n";
}

void cmd_lift(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  if (cfg.io.cameras.empty()) throw InputError("config: io.cameras is required");
  if (cfg.io.cloud.empty()) throw InputError("config: io.cloud is required");
  std::map<std::string, StructureFrame> structures =
      load_structures(stage_path(cfg, "structure.json"));
  std::vector<CameraFrame> cameras = load_camera_frames(cfg.io.cameras);
  PointCloud cloud = load_cloud(cfg.io.cloud);
  StageLog log;
  std::map<std::string, LiftedStructure> lifted =
      run_lift_stage(structures, cameras, cloud, cfg.lift, log);
  print_log(log);
  enforce_strict(cfg, log);
  save_lifted(stage_path(cfg, "lifted.json"), lifted);
  std::cout << "lifted " << lifted.size() << " frames -> " << stage_path(cfg, "lifted.json")
            << "\n";
}

void cmd_match(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  if (cfg.io.cameras.empty()) throw InputError("config: io.cameras is required");
  std::map<std::string, StructureFrame> structures =
      load_structures(stage_path(cfg, "structure.json"));
  std::map<std::string, LiftedStructure> lifted = load_lifted(stage_path(cfg, "lifted.json"));
  std::vector<CameraFrame> cameras = load_camera_frames(cfg.io.cameras);
  std::vector<FrameData> frames = assemble_frames(structures, lifted, cameras);
  StageLog log;
  GlobalStructure G = run_match_stage(frames, cfg.match, cfg.infer, log);
  print_log(log);
  enforce_strict(cfg, log);
  save_global(stage_path(cfg, "global.json"), G);
  std::cout << "matched " << G.modules.size() << " modules in " << G.benches.size()
            << " benches -> " << stage_path(cfg, "global.json") << "\n";
}

void cmd_optimize(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  if (cfg.io.cameras.empty()) throw InputError("config: io.cameras is required");
  GlobalStructure G = load_global(stage_path(cfg, "global.json"));
  std::vector<CameraFrame> cameras = load_camera_frames(cfg.io.cameras);
  if (cameras.empty()) throw InputError(cfg.io.cameras + ": no camera frames");
  StageLog log;
  BuildModelResult result =
      run_optimize_stage(G, cfg.optimize, cameras.front().geo_origin, cfg.seed, log);
  print_log(log);
  enforce_strict(cfg, log);
  save_model(stage_path(cfg, "model.json"), result);
  std::cout << "optimized " << result.model.modules.size() << " modules -> "
            << stage_path(cfg, "model.json") << "\n";
}

void print_eval_summary(const Json& ev) {
  if (ev.contains("score")) {
    const Json& s = ev["score"];
    std::printf("score: recall %.6f, rmse %.6g m, tuple accuracy %.6f, spurious %d\n",
                s["recall"].get<double>(), s["rmse"].get<double>(),
                s["tuple_accuracy"].get<double>(), s["spurious"].get<int>());
  }
  if (ev.contains("reference")) {
    const Json& r = ev["reference"];
    std::printf("reference: %d pairs, rmse %.6g m\n", r["pairs"].get<int>(),
                r["rmse"].get<double>());
  }
  const Json& sp = ev["spacing"];
  std::printf("spacing medians: row %.6g m, column %.6g m\n",
              sp["row_spacing"]["median"].get<double>(),
              sp["column_spacing"]["median"].get<double>());
}

void cmd_evaluate(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  BuildModelResult result = load_model(stage_path(cfg, "model.json"));
  std::optional<BuildModelResult> reference;
  if (!cfg.io.reference.empty()) reference = load_model(cfg.io.reference);
  std::optional<GroundTruthPlant> truth;
  if (!cfg.io.truth.empty()) truth = load_truth(cfg.io.truth);
  Json ev = build_evaluation(result, reference ? &reference->model : nullptr, cfg.eval_anchors,
                             truth ? &*truth : nullptr);
  save_json(stage_path(cfg, "evaluation.json"), ev);
  save_text(stage_path(cfg, "stats.csv"), stats_csv(ev));
  save_json(stage_path(cfg, "modules.geojson"), model_geojson(result.model));
  save_text(stage_path(cfg, "model.csv"), model_csv(result));
  print_eval_summary(ev);
}

void cmd_run(const CommonOpts& o) {
  PipelineConfig cfg = config_from(o);
  PipelineOutcome outcome = run_pipeline(cfg);
  print_log(outcome.log);
  std::cout << "model: " << outcome.result.model.modules.size() << " modules, "
            << outcome.result.model.benches.size() << " benches, "
            << outcome.global.report.repairs << " repairs -> " << cfg.io.out_dir << "\n";
  print_eval_summary(outcome.evaluation);
}

void cmd_render_overlay(const CommonOpts& o, const std::string& frame) {
  PipelineConfig cfg = config_from(o);
  std::map<std::string, StructureFrame> structures =
      load_structures(stage_path(cfg, "structure.json"));
  fs::create_directories(cfg.io.out_dir + "/overlays");
  int written = 0;
  for (const auto& [frame_id, sf] : structures) {
    if (!frame.empty() && frame_id != frame) continue;
    std::string href =
        cfg.io.images_dir.empty() ? "" : cfg.io.images_dir + "/" + frame_id + ".ppm";
    save_text(cfg.io.out_dir + "/overlays/" + frame_id + ".svg",
              structure_svg(sf.structure, sf.detections, href));
    ++written;
  }
  if (!frame.empty() && written == 0) throw InputError("no structure for frame " + frame);
  std::cout << "wrote " << written << " overlays -> " << cfg.io.out_dir << "/overlays\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aerial PV plant mapping pipeline"};
  app.require_subcommand(1);

  // simulate
  std::string sim_preset, sim_noise = "zero-noise", sim_out;
  std::uint64_t sim_seed = 0;
  bool sim_render = false;
  CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic scene with ground truth");
  sim->add_option("--preset", sim_preset, "plant preset: pp1-desk or pp2-desk")->required();
  sim->add_option("--noise", sim_noise, "noise profile: zero-noise or paper-noise");
  sim->add_option("--seed", sim_seed, "noise seed");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_flag("--render-images", sim_render, "also render flat-shaded frames");

  CommonOpts fuse_o, infer_o, lift_o, match_o, opt_o, eval_o, run_o, overlay_o;
  CLI::App* fuse = app.add_subcommand("fuse-detections", "filter and fuse detector outputs");
  add_common(fuse, fuse_o);
  CLI::App* infer = app.add_subcommand("infer", "infer per-image rows, gaps and sectors");
  add_common(infer, infer_o);
  CLI::App* lift = app.add_subcommand("lift", "lift image structure into the point cloud");
  add_common(lift, lift_o);
  CLI::App* match = app.add_subcommand("match", "fuse per-image structures across frames");
  add_common(match, match_o);
  CLI::App* opt = app.add_subcommand("optimize", "fit bench axes and respace modules");
  add_common(opt, opt_o);
  CLI::App* eval = app.add_subcommand("evaluate", "evaluate a built model");
  add_common(eval, eval_o);
  CLI::App* run = app.add_subcommand("run", "run the whole pipeline");
  add_common(run, run_o);
  std::string overlay_frame;
  CLI::App* overlay = app.add_subcommand("render-overlay", "write structure overlays as SVG");
  add_common(overlay, overlay_o);
  overlay->add_option("--frame", overlay_frame, "render just this frame");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) cmd_simulate(sim_preset, sim_noise, sim_seed, sim_out, sim_render);
    if (fuse->parsed()) cmd_fuse(fuse_o);
    if (infer->parsed()) cmd_infer(infer_o);
    if (lift->parsed()) cmd_lift(lift_o);
    if (match->parsed()) cmd_match(match_o);
    if (opt->parsed()) cmd_optimize(opt_o);
    if (eval->parsed()) cmd_evaluate(eval_o);
    if (run->parsed()) cmd_run(run_o);
    if (overlay->parsed()) cmd_render_overlay(overlay_o, overlay_frame);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const ConflictError& e) {
    std::cerr << "conflict: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
