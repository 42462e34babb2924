#include "covtrack/mot_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "covtrack/errors.hpp"

namespace covtrack {

namespace {

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_field_double(std::string_view field, long line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("malformed numeric field '" + std::string(field) + "'", line);
  }
  return v;
}

int parse_field_int(std::string_view field, long line) {
  int v = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("malformed integer field '" + std::string(field) + "'", line);
  }
  return v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in, const char* what) {
  const std::uint32_t bits = get_u32(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_f32_block(std::ostream& out, std::span<const double> values) {
  for (double v : values) put_f32(out, static_cast<float>(v));
}

void get_f32_block(std::istream& in, std::span<double> values, const char* what) {
  for (double& v : values) v = static_cast<double>(get_f32(in, what));
}

void expect_magic(std::istream& in, const char* magic, const char* kind) {
  char buf[4];
  in.read(buf, 4);
  if (in.gcount() != 4) {
    throw FormatError(std::string("truncated ") + kind + " header");
  }
  if (std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic for ") + kind + " file");
  }
}

constexpr std::uint32_t kGridVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::vector<MotRecord> parse_mot_csv(std::string_view text) {
  std::vector<MotRecord> records;
  long line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.size() - pos
                                                                           : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (fields.size() != 10) {
      throw ParseError("expected 10 comma-separated fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }

    MotRecord rec;
    rec.frame = parse_field_int(fields[0], line_no);
    rec.id = parse_field_int(fields[1], line_no);
    rec.left = parse_field_double(fields[2], line_no);
    rec.top = parse_field_double(fields[3], line_no);
    rec.width = parse_field_double(fields[4], line_no);
    rec.height = parse_field_double(fields[5], line_no);
    rec.conf = parse_field_double(fields[6], line_no);
    rec.x = parse_field_double(fields[7], line_no);
    rec.y = parse_field_double(fields[8], line_no);
    rec.z = parse_field_double(fields[9], line_no);
    if (rec.frame < 1) {
      throw ParseError("frame index must be >= 1", line_no);
    }
    if (rec.width <= 0.0 || rec.height <= 0.0) {
      throw ParseError("box extents must be positive", line_no);
    }
    records.push_back(rec);
  }
  return records;
}

std::string write_mot_csv(std::vector<MotRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const MotRecord& a, const MotRecord& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  std::string out;
  for (const MotRecord& r : records) {
    out += std::to_string(r.frame);
    out += ',';
    out += std::to_string(r.id);
    out += ',';
    out += format_number(r.left);
    out += ',';
    out += format_number(r.top);
    out += ',';
    out += format_number(r.width);
    out += ',';
    out += format_number(r.height);
    out += ',';
    out += format_number(r.conf);
    out += ',';
    out += format_number(r.x);
    out += ',';
    out += format_number(r.y);
    out += ',';
    out += format_number(r.z);
    out += '\n';
  }
  return out;
}

void write_grid(std::ostream& out, const FeatureGrid& grid) {
  grid.validate();
  out.write("TDFG", 4);
  put_u32(out, kGridVersion);
  put_u32(out, static_cast<std::uint32_t>(grid.height));
  put_u32(out, static_cast<std::uint32_t>(grid.width));
  put_u32(out, static_cast<std::uint32_t>(grid.channels));
  put_u32(out, static_cast<std::uint32_t>(grid.stride));
  put_f32_block(out, grid.data);
  if (!out) {
    throw IoError("short write while emitting grid file");
  }
}

FeatureGrid read_grid(std::istream& in) {
  expect_magic(in, "TDFG", "grid");
  const std::uint32_t version = get_u32(in, "grid version");
  if (version != kGridVersion) {
    throw FormatError("unsupported grid version " + std::to_string(version));
  }
  const std::uint32_t h = get_u32(in, "grid height");
  const std::uint32_t w = get_u32(in, "grid width");
  const std::uint32_t c = get_u32(in, "grid channels");
  const std::uint32_t s = get_u32(in, "grid stride");
  if (h == 0 || w == 0 || c == 0 || s == 0) {
    throw FormatError("grid header contains zero dimension");
  }
  FeatureGrid grid(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c),
                   static_cast<int>(s));
  get_f32_block(in, grid.data, "grid payload");
  // A valid file ends exactly at the payload boundary.
  char extra;
  if (in.read(&extra, 1); in.gcount() != 0) {
    throw FormatError("grid payload longer than header declares");
  }
  return grid;
}

void write_grid_file(const std::filesystem::path& path, const FeatureGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_grid(out, grid);
}

FeatureGrid read_grid_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_grid(in);
}

void write_checkpoint(std::ostream& out, const EmbeddingNet& net) {
  out.write("TDSW", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(net.input_channels()));
  put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const EmbeddingLayer& layer : net.layers()) {
    put_u32(out, static_cast<std::uint32_t>(layer.weight.rows));
    put_u32(out, static_cast<std::uint32_t>(layer.weight.cols));
    put_u32(out, layer.relu ? 1 : 0);
  }
  for (const EmbeddingLayer& layer : net.layers()) {
    put_f32_block(out, layer.weight.data);
    put_f32_block(out, layer.bias);
  }
  if (!out) {
    throw IoError("short write while emitting checkpoint");
  }
}

EmbeddingNet read_checkpoint(std::istream& in) {
  expect_magic(in, "TDSW", "checkpoint");
  const std::uint32_t version = get_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t input_channels = get_u32(in, "checkpoint input channels");
  const std::uint32_t layer_count = get_u32(in, "checkpoint layer count");
  if (layer_count == 0 || layer_count > 64) {
    throw FormatError("implausible checkpoint layer count");
  }
  std::vector<EmbeddingLayer> layers(layer_count);
  for (EmbeddingLayer& layer : layers) {
    const std::uint32_t rows = get_u32(in, "layer rows");
    const std::uint32_t cols = get_u32(in, "layer cols");
    const std::uint32_t relu = get_u32(in, "layer activation");
    if (rows == 0 || cols == 0) {
      throw FormatError("checkpoint layer with zero dimension");
    }
    layer.weight = Matrix(static_cast<int>(rows), static_cast<int>(cols));
    layer.bias.assign(cols, 0.0);
    layer.relu = relu != 0;
  }
  if (layers.front().weight.rows != static_cast<int>(input_channels)) {
    throw FormatError("checkpoint input channels disagree with first layer");
  }
  for (EmbeddingLayer& layer : layers) {
    get_f32_block(in, layer.weight.data, "layer weights");
    get_f32_block(in, layer.bias, "layer bias");
  }
  return EmbeddingNet::from_layers(std::move(layers));
}

void write_checkpoint_file(const std::filesystem::path& path, const EmbeddingNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, net);
}

EmbeddingNet read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

void write_ppm(const std::filesystem::path& path, int height, int width,
               std::span<const unsigned char> rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ShapeError("write_ppm: pixel buffer does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw IoError("short write while emitting " + path.string());
}

std::vector<MotRecord> tracks_to_mot(std::span<const GroundTruthTrack> tracks) {
  std::vector<MotRecord> records;
  for (const GroundTruthTrack& track : tracks) {
    for (std::size_t t = 0; t < track.points.size(); ++t) {
      const TrackPoint& p = track.points[t];
      if (!p.visible) continue;
      MotRecord rec;
      rec.frame = static_cast<int>(t) + 1;
      rec.id = track.id;
      rec.left = p.cx - p.width / 2.0;
      rec.top = p.cy - p.height / 2.0;
      rec.width = p.width;
      rec.height = p.height;
      rec.conf = 1.0;
      records.push_back(rec);
    }
  }
  return records;
}

std::vector<GroundTruthTrack> mot_to_tracks(std::span<const MotRecord> records,
                                            int frame_count) {
  int frames = frame_count;
  for (const MotRecord& r : records) frames = std::max(frames, r.frame);

  std::vector<GroundTruthTrack> tracks;
  auto find_track = [&](int id) -> GroundTruthTrack& {
    for (GroundTruthTrack& t : tracks) {
      if (t.id == id) return t;
    }
    GroundTruthTrack t;
    t.id = id;
    t.points.resize(static_cast<std::size_t>(frames));
    for (TrackPoint& p : t.points) p.visible = false;
    tracks.push_back(std::move(t));
    return tracks.back();
  };

  for (const MotRecord& r : records) {
    if (r.id < 0) {
      throw DataError("ground-truth record without identity in frame " +
                      std::to_string(r.frame));
    }
    GroundTruthTrack& track = find_track(r.id);
    TrackPoint& p = track.points[static_cast<std::size_t>(r.frame - 1)];
    if (p.visible) {
      throw DataError("identity " + std::to_string(r.id) + " duplicated in frame " +
                      std::to_string(r.frame));
    }
    p.cx = r.left + r.width / 2.0;
    p.cy = r.top + r.height / 2.0;
    p.width = r.width;
    p.height = r.height;
    p.visible = true;
  }

  // Invisible frames keep the nearest known geometry so renderers and
  // supervision builders see sane boxes.
  for (GroundTruthTrack& track : tracks) {
    int last_known = -1;
    for (std::size_t t = 0; t < track.points.size(); ++t) {
      if (track.points[t].visible) {
        last_known = static_cast<int>(t);
      } else if (last_known >= 0) {
        TrackPoint p = track.points[static_cast<std::size_t>(last_known)];
        p.visible = false;
        track.points[t] = p;
      }
    }
    int next_known = -1;
    for (int t = static_cast<int>(track.points.size()) - 1; t >= 0; --t) {
      if (track.points[static_cast<std::size_t>(t)].visible) {
        next_known = t;
      } else if (next_known >= 0 && track.points[static_cast<std::size_t>(t)].width == 0.0) {
        TrackPoint p = track.points[static_cast<std::size_t>(next_known)];
        p.visible = false;
        track.points[static_cast<std::size_t>(t)] = p;
      }
    }
  }

  std::sort(tracks.begin(), tracks.end(),
            [](const GroundTruthTrack& a, const GroundTruthTrack& b) { return a.id < b.id; });
  return tracks;
}

FrameObjects mot_to_frame_objects(std::span<const MotRecord> records, bool require_ids) {
  FrameObjects out;
  for (const MotRecord& r : records) {
    if (require_ids && r.id < 0) {
      throw DataError("record in frame " + std::to_string(r.frame) +
                      " carries no identity");
    }
    out[r.frame].push_back(IdBox{r.id, Box{r.left, r.top, r.width, r.height}});
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write while emitting " + path.string());
}

}  // namespace covtrack
