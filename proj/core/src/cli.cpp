#include "covtrack/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "covtrack/errors.hpp"
#include "covtrack/metrics.hpp"
#include "covtrack/mot_io.hpp"
#include "covtrack/synth.hpp"
#include "covtrack/tracker.hpp"

namespace covtrack::cli {

namespace fs = std::filesystem;

namespace {

std::string frame_name(const char* prefix, int frame_one_based) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%06d.tdfg", prefix, frame_one_based);
  return buf;
}

struct LoadedScene {
  SequenceFrames frames;
  std::vector<GroundTruthTrack> tracks;
};

LoadedScene load_scene(const fs::path& dir, bool require_gt) {
  LoadedScene scene;
  for (int t = 1;; ++t) {
    const fs::path feat = dir / frame_name("feat", t);
    const fs::path heat = dir / frame_name("heat", t);
    if (!fs::exists(feat) || !fs::exists(heat)) break;
    scene.frames.features.push_back(read_grid_file(feat));
    scene.frames.heatmaps.push_back(read_grid_file(heat));
  }
  if (scene.frames.features.empty()) {
    throw IoError("no frame grids found under " + dir.string());
  }
  const fs::path gt = dir / "gt.txt";
  if (fs::exists(gt)) {
    scene.tracks = mot_to_tracks(parse_mot_csv(read_text_file(gt)),
                                 scene.frames.frame_count());
  } else if (require_gt) {
    throw IoError("scene " + dir.string() + " has no gt.txt");
  }
  return scene;
}

void write_effective_config(CLI::App* cmd, const fs::path& outdir) {
  write_text_file(outdir / "effective.cfg", cmd->config_to_str(true, false));
}

void add_config_option(CLI::App* cmd, std::string& path) {
  cmd->add_option("--config", path,
                  "key=value config file; command-line flags take precedence")
      ->option_text("FILE");
  // Every scalar option may appear twice (config first, flag second); the
  // later occurrence wins.
  cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

/// Expands `--config FILE` into inline `--key=value` arguments placed right
/// after the subcommand name, so explicitly passed flags override the file.
std::vector<std::string> apply_config_file(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::string config_path;
  std::vector<std::string> stripped;
  stripped.push_back(args[0]);  // subcommand name stays first
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      ++i;
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      stripped.push_back(args[i]);
    }
  }
  if (config_path.empty()) return args;

  std::vector<std::string> expanded;
  expanded.push_back(stripped[0]);
  std::istringstream in(read_text_file(config_path));
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    line = line.substr(first, last - first + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ParseError("config entries must look like key=value", line_no);
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (const auto key_end = key.find_last_not_of(" \t"); key_end != std::string::npos) {
      key = key.substr(0, key_end + 1);
    }
    if (const auto val_start = value.find_first_not_of(" \t");
        val_start != std::string::npos) {
      value = value.substr(val_start);
    } else {
      value.clear();
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (value.empty()) continue;
    expanded.push_back("--" + key + "=" + value);
  }
  for (std::size_t i = 1; i < stripped.size(); ++i) expanded.push_back(stripped[i]);
  return expanded;
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SceneConfig cfg;
  std::vector<std::string> occlusions;  // object:first:last, 0-based frames
};

int run_synth(const SynthArgs& args, CLI::App* cmd) {
  SceneConfig cfg = args.cfg;
  for (const std::string& text : args.occlusions) {
    OcclusionSpan span;
    if (std::sscanf(text.c_str(), "%d:%d:%d", &span.object_index, &span.first_frame,
                    &span.last_frame) != 3) {
      throw ConfigError("occlusion spec must be object:first:last, got '" + text + "'");
    }
    cfg.occlusions.push_back(span);
  }

  const std::vector<GroundTruthTrack> full = generate_scene(cfg);
  const std::vector<GroundTruthTrack> tracks = subsample(full, cfg.frame_stride);

  const fs::path outdir(args.out);
  fs::create_directories(outdir);
  write_text_file(outdir / "gt.txt", write_mot_csv(tracks_to_mot(tracks)));

  const int frame_count = tracks.empty() ? 0 : static_cast<int>(tracks.front().points.size());
  for (int t = 0; t < frame_count; ++t) {
    const RenderedFrame frame = render_frame(tracks, t, cfg);
    write_grid_file(outdir / frame_name("feat", t + 1), frame.features);
    write_grid_file(outdir / frame_name("heat", t + 1), frame.heatmap);
  }
  write_effective_config(cmd, outdir);
  std::cout << "scene with " << cfg.object_count << " objects, " << frame_count
            << " frames written to " << outdir.string() << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string scene;
  std::string out;
  TrainOptions opt;
};

int run_train(const TrainArgs& args, CLI::App* cmd) {
  const LoadedScene scene = load_scene(args.scene, /*require_gt=*/true);
  const TrainResult result = train_embedding(scene.frames, scene.tracks, args.opt);

  const fs::path outdir(args.out);
  fs::create_directories(outdir);
  write_checkpoint_file(outdir / "sigma.tdsw", result.net);

  std::string log;
  for (std::size_t s = 0; s < result.losses.size(); ++s) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), result.losses[s]);
    log += std::to_string(s) + "," + std::string(buf, ptr) + "\n";
  }
  write_text_file(outdir / "train_log.txt", log);
  write_effective_config(cmd, outdir);

  std::cout << "trained " << result.losses.size() << " steps, final loss "
            << (result.losses.empty() ? 0.0 : result.losses.back()) << ", checkpoint "
            << (outdir / "sigma.tdsw").string() << "\n";
  if (result.skipped_pairs > 0) {
    std::cout << "skipped " << result.skipped_pairs
              << " frame pairs without usable supervision\n";
  }
  return 0;
}

// --- track ------------------------------------------------------------------

struct TrackArgs {
  std::string scene;
  std::string weights;
  std::string out;
  std::string mode = "cva";
  std::string weight_mode = "average";
  std::string offset_source = "extrapolated";
  std::string embedding_policy = "latest";
  bool no_mfw = false;
  TrackOptions opt;
};

int run_track(const TrackArgs& args, CLI::App* cmd) {
  const LoadedScene scene = load_scene(args.scene, /*require_gt=*/false);
  EmbeddingNet net = read_checkpoint_file(args.weights);

  TrackOptions opt = args.opt;
  opt.mode = args.mode == "baseline" ? AssociationMode::kBaselineZeroOffset
                                     : AssociationMode::kCostVolume;
  opt.weight_mode =
      args.weight_mode == "confidence" ? WeightMode::kConfidence : WeightMode::kAverage;
  opt.offset_source = args.offset_source == "direct" ? MfwOffsetSource::kDirect
                                                     : MfwOffsetSource::kExtrapolated;
  opt.embedding_policy = args.embedding_policy == "ema"
                             ? EmbeddingPolicy::kExponentialAverage
                             : EmbeddingPolicy::kLatest;
  opt.use_mfw = !args.no_mfw;

  const TrackResult result = track_sequence(scene.frames, net, opt);

  const fs::path outdir(args.out);
  fs::create_directories(outdir);
  write_text_file(outdir / "results.txt", write_mot_csv(result.records));
  write_effective_config(cmd, outdir);
  std::cout << result.records.size() << " labeled detections written to "
            << (outdir / "results.txt").string() << "\n";
  return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string gt;
  std::string results;
  std::string out;
  double iou_threshold = 0.5;
};

int run_eval(const EvalArgs& args, CLI::App* cmd) {
  const FrameObjects gt = mot_to_frame_objects(parse_mot_csv(read_text_file(args.gt)));
  const FrameObjects hyp =
      mot_to_frame_objects(parse_mot_csv(read_text_file(args.results)));
  const EvalReport report = evaluate(gt, hyp, args.iou_threshold);

  const std::string text = report_to_text(report);
  std::cout << text;
  if (!args.out.empty()) {
    const fs::path outdir(args.out);
    fs::create_directories(outdir);
    write_text_file(outdir / "report.txt", text);
    write_text_file(outdir / "report.json", report_to_json(report));
    write_effective_config(cmd, outdir);
  }
  return 0;
}

// --- inspect-offsets --------------------------------------------------------

struct InspectArgs {
  std::string scene;
  std::string weights;
  std::string out;
  int frame = 1;  // 0-based index of the current frame; offsets look back one
  double temperature = kDefaultTemperature;
  int arrow_step = 2;
};

void draw_line(std::vector<unsigned char>& rgb, int height, int width, int y0, int x0,
               int y1, int x1, unsigned char r, unsigned char g, unsigned char b) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  int x = x0;
  int y = y0;
  while (true) {
    if (y >= 0 && y < height && x >= 0 && x < width) {
      const std::size_t at = (static_cast<std::size_t>(y) * width + x) * 3;
      rgb[at] = r;
      rgb[at + 1] = g;
      rgb[at + 2] = b;
    }
    if (x == x1 && y == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

int run_inspect(const InspectArgs& args, CLI::App* cmd) {
  const LoadedScene scene = load_scene(args.scene, /*require_gt=*/false);
  if (args.frame < 1 || args.frame >= scene.frames.frame_count()) {
    throw InputError("inspect-offsets: frame must lie in [1, frame_count)");
  }
  EmbeddingNet net = read_checkpoint_file(args.weights);

  const FeatureGrid ep_cur =
      embed_frame(net, scene.frames.features[static_cast<std::size_t>(args.frame)]);
  const FeatureGrid ep_prev =
      embed_frame(net, scene.frames.features[static_cast<std::size_t>(args.frame - 1)]);
  const OffsetField field = compute_offsets(ep_cur, ep_prev, args.temperature);

  const FeatureGrid& heat = scene.frames.heatmaps[static_cast<std::size_t>(args.frame)];
  const int scale = heat.stride;
  const int height = heat.height * scale;
  const int width = heat.width * scale;
  std::vector<unsigned char> rgb(static_cast<std::size_t>(height) * width * 3, 0);

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = std::clamp(heat.at(y / scale, x / scale, 0), 0.0, 1.0);
      const unsigned char g = static_cast<unsigned char>(std::lround(v * 255.0));
      const std::size_t at = (static_cast<std::size_t>(y) * width + x) * 3;
      rgb[at] = g;
      rgb[at + 1] = g;
      rgb[at + 2] = g;
    }
  }

  for (int cy = 0; cy < field.height; cy += args.arrow_step) {
    for (int cx = 0; cx < field.width; cx += args.arrow_step) {
      if (heat.at(cy, cx, 0) < 0.2) continue;
      const int y0 = cy * scale;
      const int x0 = cx * scale;
      const int y1 = y0 + static_cast<int>(std::lround(field.vertical(cy, cx)));
      const int x1 = x0 + static_cast<int>(std::lround(field.horizontal(cy, cx)));
      draw_line(rgb, height, width, y0, x0, y1, x1, 255, 64, 64);
      draw_line(rgb, height, width, y1, x1, y1, x1, 255, 255, 64);
    }
  }

  const fs::path outdir(args.out);
  fs::create_directories(outdir);
  char name[48];
  std::snprintf(name, sizeof(name), "offsets_%06d.ppm", args.frame);
  write_ppm(outdir / name, height, width, rgb);
  write_effective_config(cmd, outdir);
  std::cout << "offset overlay written to " << (outdir / name).string() << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

int run(const std::vector<std::string>& raw_args) {
  std::vector<std::string> args;
  try {
    args = apply_config_file(raw_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::vector<const char*> argv_vec;
  argv_vec.push_back("covtrack");
  for (const std::string& a : args) argv_vec.push_back(a.c_str());
  const int argc = static_cast<int>(argv_vec.size());
  const char* const* argv = argv_vec.data();

  CLI::App app{"cost-volume multi-object tracking toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  std::string synth_config, train_config, track_config, eval_config, inspect_config;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene");
  add_config_option(synth_cmd, synth_config);
  synth_cmd->add_option("--out", synth_args.out, "output directory")->required();
  synth_cmd->add_option("--seed", synth_args.cfg.seed, "scene seed")->capture_default_str();
  synth_cmd->add_option("--objects", synth_args.cfg.object_count, "object count")
      ->capture_default_str();
  synth_cmd->add_option("--frames", synth_args.cfg.frame_count, "frames before subsampling")
      ->capture_default_str();
  synth_cmd->add_option("--height", synth_args.cfg.grid_height, "grid height in cells")
      ->capture_default_str();
  synth_cmd->add_option("--width", synth_args.cfg.grid_width, "grid width in cells")
      ->capture_default_str();
  synth_cmd->add_option("--stride", synth_args.cfg.stride, "input pixels per cell")
      ->capture_default_str();
  synth_cmd->add_option("--speed-min", synth_args.cfg.min_speed, "min speed, px/frame")
      ->capture_default_str();
  synth_cmd->add_option("--speed-max", synth_args.cfg.max_speed, "max speed, px/frame")
      ->capture_default_str();
  synth_cmd->add_option("--appearance-dim", synth_args.cfg.appearance_dim,
                        "feature channels")
      ->capture_default_str();
  synth_cmd->add_option("--noise", synth_args.cfg.noise, "feature noise level")
      ->capture_default_str();
  synth_cmd->add_option("--frame-stride", synth_args.cfg.frame_stride,
                        "keep every n-th frame")
      ->capture_default_str();
  synth_cmd->add_option("--box-width", synth_args.cfg.box_width, "object box width, px")
      ->capture_default_str();
  synth_cmd->add_option("--box-height", synth_args.cfg.box_height, "object box height, px")
      ->capture_default_str();
  synth_cmd->add_option("--occlude", synth_args.occlusions,
                        "occlusion span object:first:last (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "fit the embedding network");
  add_config_option(train_cmd, train_config);
  train_cmd->add_option("--scene", train_args.scene, "scene directory")->required();
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_option("--steps", train_args.opt.steps, "optimizer steps")
      ->capture_default_str();
  train_cmd->add_option("--lr", train_args.opt.learning_rate, "learning rate")
      ->capture_default_str();
  train_cmd->add_option("--beta", train_args.opt.beta, "focal exponent")
      ->capture_default_str();
  train_cmd->add_option("--temperature", train_args.opt.temperature, "softmax temperature")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_args.opt.seed, "weight init seed")
      ->capture_default_str();
  train_cmd->add_option("--embed-dim", train_args.opt.embed_dim, "embedding channels")
      ->capture_default_str();
  train_cmd->add_option("--hidden-dim", train_args.opt.hidden_dim, "hidden channels")
      ->capture_default_str();
  train_cmd->add_option("--layers", train_args.opt.layer_count, "layer count")
      ->capture_default_str();

  TrackArgs track_args;
  CLI::App* track_cmd = app.add_subcommand("track", "run the tracking pipeline");
  add_config_option(track_cmd, track_config);
  track_cmd->add_option("--scene", track_args.scene, "scene directory")->required();
  track_cmd->add_option("--weights", track_args.weights, "embedding checkpoint")->required();
  track_cmd->add_option("--out", track_args.out, "output directory")->required();
  track_cmd->add_option("--mode", track_args.mode, "association mode")
      ->check(CLI::IsMember({"cva", "baseline"}))
      ->capture_default_str();
  track_cmd->add_option("--T", track_args.opt.previous_count, "previous frames aggregated")
      ->capture_default_str();
  track_cmd->add_option("--threshold", track_args.opt.round_two_threshold,
                        "round-two similarity threshold")
      ->capture_default_str();
  track_cmd->add_option("--max-age", track_args.opt.max_age, "tracklet retirement age")
      ->capture_default_str();
  track_cmd->add_flag("--no-mfw", track_args.no_mfw, "disable feature warping");
  track_cmd->add_option("--score-threshold", track_args.opt.score_threshold,
                        "peak detection threshold")
      ->capture_default_str();
  track_cmd->add_option("--temperature", track_args.opt.temperature, "softmax temperature")
      ->capture_default_str();
  track_cmd->add_option("--weight-mode", track_args.weight_mode, "aggregation weights")
      ->check(CLI::IsMember({"average", "confidence"}))
      ->capture_default_str();
  track_cmd->add_option("--mfw-offsets", track_args.offset_source, "warp offset source")
      ->check(CLI::IsMember({"extrapolated", "direct"}))
      ->capture_default_str();
  track_cmd->add_option("--embedding-policy", track_args.embedding_policy,
                        "tracklet embedding update")
      ->check(CLI::IsMember({"latest", "ema"}))
      ->capture_default_str();
  track_cmd->add_option("--ema-alpha", track_args.opt.ema_alpha,
                        "old-embedding weight under ema")
      ->capture_default_str();
  track_cmd->add_option("--box-width", track_args.opt.default_box_width,
                        "box width for unmatched peaks")
      ->capture_default_str();
  track_cmd->add_option("--box-height", track_args.opt.default_box_height,
                        "box height for unmatched peaks")
      ->capture_default_str();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score results against ground truth");
  add_config_option(eval_cmd, eval_config);
  eval_cmd->add_option("--gt", eval_args.gt, "ground-truth CSV")->required();
  eval_cmd->add_option("--results", eval_args.results, "tracking results CSV")->required();
  eval_cmd->add_option("--out", eval_args.out, "report output directory");
  eval_cmd->add_option("--iou", eval_args.iou_threshold, "match IoU threshold")
      ->capture_default_str();

  InspectArgs inspect_args;
  CLI::App* inspect_cmd =
      app.add_subcommand("inspect-offsets", "render an offset-arrow overlay image");
  add_config_option(inspect_cmd, inspect_config);
  inspect_cmd->add_option("--scene", inspect_args.scene, "scene directory")->required();
  inspect_cmd->add_option("--weights", inspect_args.weights, "embedding checkpoint")
      ->required();
  inspect_cmd->add_option("--out", inspect_args.out, "output directory")->required();
  inspect_cmd->add_option("--frame", inspect_args.frame, "0-based current frame index")
      ->capture_default_str();
  inspect_cmd->add_option("--temperature", inspect_args.temperature, "softmax temperature")
      ->capture_default_str();
  inspect_cmd->add_option("--arrow-step", inspect_args.arrow_step, "cells between arrows")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_args, synth_cmd);
    if (train_cmd->parsed()) return run_train(train_args, train_cmd);
    if (track_cmd->parsed()) return run_track(track_args, track_cmd);
    if (eval_cmd->parsed()) return run_eval(eval_args, eval_cmd);
    if (inspect_cmd->parsed()) return run_inspect(inspect_args, inspect_cmd);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "no command given\n";
  return 2;
}

}  // namespace covtrack::cli
