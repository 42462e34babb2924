#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "covtrack/embedding.hpp"
#include "covtrack/grid.hpp"
#include "covtrack/metrics.hpp"
#include "covtrack/synth.hpp"

namespace covtrack {

/// One MOTChallenge CSV row:
/// frame,id,left,top,width,height,conf,x,y,z — id is -1 for raw detections,
/// the world coordinates stay -1 placeholders for 2D data.
struct MotRecord {
  int frame = 1;
  int id = -1;
  double left = 0.0;
  double top = 0.0;
  double width = 0.0;
  double height = 0.0;
  double conf = 1.0;
  double x = -1.0;
  double y = -1.0;
  double z = -1.0;
};

std::vector<MotRecord> parse_mot_csv(std::string_view text);

/// Canonical form: records sorted by (frame, id), numbers in shortest
/// round-trip notation, one trailing newline.
std::string write_mot_csv(std::vector<MotRecord> records);

/// Binary feature-grid file. Layout, all little-endian:
///   magic "TDFG" | version u32 | height u32 | width u32 | channels u32 |
///   stride u32 | payload: height*width*channels IEEE-754 binary32,
///   row-major, channel-last.
void write_grid(std::ostream& out, const FeatureGrid& grid);
FeatureGrid read_grid(std::istream& in);
void write_grid_file(const std::filesystem::path& path, const FeatureGrid& grid);
FeatureGrid read_grid_file(const std::filesystem::path& path);

/// Binary embedding checkpoint. Layout, all little-endian:
///   magic "TDSW" | version u32 | input_channels u32 | layer_count u32 |
///   per layer: in u32, out u32, relu u32 |
///   per layer: weights binary32[in*out] row-major, bias binary32[out].
void write_checkpoint(std::ostream& out, const EmbeddingNet& net);
EmbeddingNet read_checkpoint(std::istream& in);
void write_checkpoint_file(const std::filesystem::path& path, const EmbeddingNet& net);
EmbeddingNet read_checkpoint_file(const std::filesystem::path& path);

/// Binary PPM (P6) image; rgb holds height*width*3 bytes.
void write_ppm(const std::filesystem::path& path, int height, int width,
               std::span<const unsigned char> rgb);

/// Ground truth to MOT rows (visible points only, 1-based frames).
std::vector<MotRecord> tracks_to_mot(std::span<const GroundTruthTrack> tracks);

/// Inverse of tracks_to_mot: every track spans all frames, frames without a
/// row are marked invisible (carrying the nearest known geometry). When
/// frame_count is 0 the largest frame index decides the span.
std::vector<GroundTruthTrack> mot_to_tracks(std::span<const MotRecord> records,
                                            int frame_count = 0);

/// Group rows by frame for the evaluator. Rows with id -1 are rejected when
/// `require_ids` is set.
FrameObjects mot_to_frame_objects(std::span<const MotRecord> records,
                                  bool require_ids = true);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace covtrack
