// Copyright Contributors to the FringeForge Project
// SPDX-License-Identifier: Apache-2.0

#include "fringeforge/io.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace fringeforge {

using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

void append_doubles(std::string& out, const double* v, std::size_t n) {
  const std::size_t at = out.size();
  out.resize(at + n * sizeof(double));
  std::memcpy(out.data() + at, v, n * sizeof(double));
}

json parse_json(const std::string& text, const fs::path& where) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, where.string() + ": " + e.what());
  }
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

template <int R, int C>
Eigen::Matrix<double, R, C> matrix_from(const json& j) {
  Eigen::Matrix<double, R, C> m;
  if (!j.is_array() || j.size() != R) throw Error(ErrorCode::Parse, "matrix row count");
  for (int r = 0; r < R; ++r) {
    if (!j[r].is_array() || j[r].size() != C) throw Error(ErrorCode::Parse, "matrix column count");
    for (int c = 0; c < C; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json device_json(const ProjectionMatrix& p) {
  return {{"K", matrix_json(p.K)}, {"R", matrix_json(p.R)}, {"T", {p.T.x(), p.T.y(), p.T.z()}}};
}

ProjectionMatrix device_from(const json& j) {
  const Mat3 k = matrix_from<3, 3>(j.at("K"));
  const Mat3 r = matrix_from<3, 3>(j.at("R"));
  const auto& t = j.at("T");
  if (!t.is_array() || t.size() != 3) throw Error(ErrorCode::Parse, "T must have 3 entries");
  const Vec3 tv(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  if (k(0, 1) != 0.0 || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0) {
    throw Error(ErrorCode::Parse, "K must be a zero-skew pinhole matrix");
  }
  return make_pinhole(k(0, 0), k(1, 1), k(0, 2), k(1, 2), r, tv);
}

}  // namespace

std::string read_text(const fs::path& path) { return read_bytes(path); }

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text); }

void write_pgm16(const fs::path& path, const Image& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  out.reserve(out.size() + image.size() * 2);
  for (double v : image.data) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    const auto s = static_cast<std::uint16_t>(std::lround(c * 65535.0));
    out.push_back(static_cast<char>(s >> 8));
    out.push_back(static_cast<char>(s & 0xff));
  }
  write_bytes(path, out);
}

void write_png8(const fs::path& path, const Image& image, double lo, double hi, const Mask* mask) {
  if (mask && !mask->same_shape(image)) throw Error(ErrorCode::ShapeMismatch, "png mask");
  if (image.width < 1 || image.height < 1) throw Error(ErrorCode::InvalidConfig, "empty image for " + path.string());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<png_byte> pixels(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = image[i];
    if (!std::isfinite(v) || (mask && !(*mask)[i])) continue;
    pixels[i] = static_cast<png_byte>(std::lround(255.0 * std::clamp((v - lo) / span, 0.0, 1.0)));
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error(ErrorCode::Io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
    throw Error(ErrorCode::Io, "png encoding failed for " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int v = 0; v < image.height; ++v) png_write_row(png, pixels.data() + static_cast<std::size_t>(v) * image.width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(f) != 0) throw Error(ErrorCode::Io, "short write to " + path.string());
}

void write_points_csv(const fs::path& path, const PointCloud& cloud) {
  std::ostringstream out;
  out.precision(17);
  out << "u,v,x,y,z\n";
  const bool prov = cloud.has_provenance();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << (prov ? cloud.source_pixels[i][0] : -1) << ',' << (prov ? cloud.source_pixels[i][1] : -1) << ',' << p.x()
        << ',' << p.y() << ',' << p.z() << '\n';
  }
  write_bytes(path, out.str());
}

Image read_pgm16(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  std::istringstream in(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  auto skip = [&] {
    while (in && std::isspace(in.peek())) in.get();
    while (in && in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      while (in && std::isspace(in.peek())) in.get();
    }
  };
  in >> magic;
  skip();
  in >> w;
  skip();
  in >> h;
  skip();
  in >> maxval;
  if (magic != "P5" || !in || w < 0 || h < 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorCode::Parse, path.string() + ": not a binary PGM");
  }
  in.get();
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() < offset + n * bpp) throw Error(ErrorCode::Parse, path.string() + ": truncated PGM");
  Image img(w, h);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned s = bpp == 2 ? (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
    img[i] = static_cast<double>(s) / maxval;
  }
  return img;
}

void write_image_binary(const fs::path& path, const Image& image, const Mask* mask, const std::string& kind) {
  std::vector<double> v = image.data;
  if (mask) {
    if (!mask->same_shape(image)) throw Error(ErrorCode::ShapeMismatch, "mask and image differ");
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!(*mask)[i]) v[i] = std::numeric_limits<double>::quiet_NaN();
  }
  std::string out;
  append_doubles(out, v.data(), v.size());
  write_bytes(path, out);
  json meta = {{"width", image.width}, {"height", image.height}, {"kind", kind}};
  write_bytes(sidecar(path), meta.dump(2) + "\n");
}

Image read_image_binary(const fs::path& path, Mask* mask, std::string* kind) {
  const json meta = parse_json(read_bytes(sidecar(path)), sidecar(path));
  const int w = meta.at("width").get<int>(), h = meta.at("height").get<int>();
  if (w < 0 || h < 0) throw Error(ErrorCode::Parse, path.string() + ": negative size");
  const std::string bytes = read_bytes(path);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != n * sizeof(double)) throw Error(ErrorCode::Parse, path.string() + ": size disagrees with sidecar");
  Image img(w, h);
  std::memcpy(img.data.data(), bytes.data(), bytes.size());
  if (mask) {
    *mask = Mask(w, h, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(img[i])) {
        img[i] = 0.0;
      } else {
        (*mask)[i] = 1;
      }
    }
  }
  if (kind) *kind = meta.value("kind", std::string());
  return img;
}

void write_phase_map(const fs::path& path, const PhaseMap& map) {
  std::vector<double> v = map.values;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!map.mask[i]) v[i] = std::numeric_limits<double>::quiet_NaN();
  std::string out;
  append_doubles(out, v.data(), v.size());
  write_bytes(path, out);
  json meta = {{"width", map.width},
               {"height", map.height},
               {"kind", map.kind == PhaseKind::Wrapped ? "wrapped" : "absolute"},
               {"n_s", map.fringe_count}};
  write_bytes(sidecar(path), meta.dump(2) + "\n");
}

PhaseMap read_phase_map(const fs::path& path) {
  const json meta = parse_json(read_bytes(sidecar(path)), sidecar(path));
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind != "wrapped" && kind != "absolute") throw Error(ErrorCode::Parse, "unknown phase kind " + kind);
  Mask mask;
  const Image img = read_image_binary(path, &mask);
  PhaseMap map(img.width, img.height, kind == "wrapped" ? PhaseKind::Wrapped : PhaseKind::Absolute,
               meta.at("n_s").get<int>());
  map.values = img.data;
  map.mask = mask.data;
  return map;
}

void write_depth(const fs::path& path, const DepthImage& depth) {
  write_image_binary(path, depth.depth, &depth.mask, "depth");
}

DepthImage read_depth(const fs::path& path) {
  DepthImage d;
  d.depth = read_image_binary(path, &d.mask);
  return d;
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
  std::ostringstream out;
  out.precision(17);
  out << "ply\nformat ascii 1.0\n";
  if (cloud.has_provenance())
    for (std::size_t i = 0; i < cloud.size(); ++i)
      out << "comment pixel " << i << ' ' << cloud.source_pixels[i][0] << ' ' << cloud.source_pixels[i][1] << '\n';
  out << "element vertex " << cloud.size() << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const Vec3& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  write_bytes(path, out.str());
}

PointCloud read_ply(const fs::path& path) {
  std::istringstream in(read_bytes(path));
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw Error(ErrorCode::Parse, path.string() + ": missing ply magic");
  std::size_t count = 0;
  bool ascii = false;
  std::vector<std::pair<std::size_t, std::array<int, 2>>> pixels;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (word == "comment") {
      std::string tag;
      std::size_t i = 0;
      int u = 0, v = 0;
      if (ls >> tag && tag == "pixel" && ls >> i >> u >> v) pixels.push_back({i, {u, v}});
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") throw Error(ErrorCode::Parse, path.string() + ": unsupported element " + name);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw Error(ErrorCode::Parse, path.string() + ": only ascii PLY is supported");
  PointCloud cloud;
  cloud.points.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    double x, y, z;
    if (!(in >> x >> y >> z)) throw Error(ErrorCode::Parse, path.string() + ": truncated vertex list");
    cloud.points[i] = Vec3(x, y, z);
  }
  if (!pixels.empty()) {
    if (pixels.size() != count) throw Error(ErrorCode::Parse, path.string() + ": partial provenance");
    cloud.source_pixels.resize(count);
    for (const auto& [i, uv] : pixels) {
      if (i >= count) throw Error(ErrorCode::Parse, path.string() + ": provenance index out of range");
      cloud.source_pixels[i] = uv;
    }
  }
  return cloud;
}

void write_scene(const fs::path& dir, const SceneSurface& scene) {
  write_image_binary(dir / "depth.bin", scene.depth, nullptr, "height_field");
  write_image_binary(dir / "albedo.bin", scene.albedo, nullptr, "albedo");
}

SceneSurface read_scene(const fs::path& dir, const ProjectionMatrix& camera) {
  SceneSurface s;
  s.depth = read_image_binary(dir / "depth.bin");
  s.albedo = read_image_binary(dir / "albedo.bin");
  if (!s.depth.same_shape(s.albedo)) throw Error(ErrorCode::ShapeMismatch, dir.string() + ": layer sizes differ");
  s.width = s.depth.width;
  s.height = s.depth.height;
  s.normals = normals_from_depth(s.depth, camera);
  return s;
}

std::string calibration_to_json(const Calibration& c) {
  json j = {{"camera", device_json(c.camera)},
            {"projector", device_json(c.projector)},
            {"projector_width", c.projector_width},
            {"projector_height", c.projector_height}};
  return j.dump(2) + "\n";
}

Calibration calibration_from_json(const std::string& text) {
  const json j = parse_json(text, "calibration");
  try {
    Calibration c;
    c.camera = device_from(j.at("camera"));
    c.projector = device_from(j.at("projector"));
    c.projector_width = j.at("projector_width").get<int>();
    c.projector_height = j.at("projector_height").get<int>();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("calibration: ") + e.what());
  }
}

void save_model(const fs::path& path, const ModelParams& m) {
  m.validate();
  json shapes = json::array();
  for (const Layer& l : m.layers) shapes.push_back({l.weight.rows(), l.weight.cols(), l.bias.size()});
  const json header = {{"format", "fringeforge-model-1"},
                       {"architecture", to_string(m.architecture)},
                       {"classes", m.classes},
                       {"seed", m.seed},
                       {"widths", m.widths},
                       {"shapes", shapes},
                       {"class_names", m.class_names},
                       {"points", m.points},
                       {"input_size", m.input_size},
                       {"depth_scale", m.depth_scale}};
  const std::string text = header.dump();
  std::string out(8, '\0');
  const std::uint64_t len = text.size();
  std::memcpy(out.data(), &len, 8);
  out += text;
  for (const Layer& l : m.layers) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = l.weight;
    append_doubles(out, w.data(), static_cast<std::size_t>(w.size()));
    append_doubles(out, l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  write_bytes(path, out);
}

ModelParams load_model(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  std::uint64_t len = 0;
  if (bytes.size() < 8) throw Error(ErrorCode::Parse, path.string() + ": truncated model");
  std::memcpy(&len, bytes.data(), 8);
  if (bytes.size() < 8 + len) throw Error(ErrorCode::Parse, path.string() + ": truncated model header");
  const json h = parse_json(bytes.substr(8, len), path);
  ModelParams m;
  try {
    if (h.at("format").get<std::string>() != "fringeforge-model-1") throw Error(ErrorCode::Parse, "unknown model format");
    m.architecture = parse_architecture(h.at("architecture").get<std::string>());
    m.classes = h.at("classes").get<int>();
    m.seed = h.at("seed").get<std::uint64_t>();
    m.widths = h.at("widths").get<std::vector<int>>();
    m.class_names = h.at("class_names").get<std::vector<std::string>>();
    m.points = h.at("points").get<std::size_t>();
    m.input_size = h.at("input_size").get<int>();
    m.depth_scale = h.at("depth_scale").get<double>();
    std::size_t at = 8 + len;
    for (const auto& s : h.at("shapes")) {
      const auto rows = s.at(0).get<Eigen::Index>(), cols = s.at(1).get<Eigen::Index>(), nb = s.at(2).get<Eigen::Index>();
      const std::size_t need = static_cast<std::size_t>(rows * cols + nb) * sizeof(double);
      if (rows < 0 || cols < 0 || nb < 0 || bytes.size() < at + need) throw Error(ErrorCode::Parse, "truncated weights");
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w(rows, cols);
      std::memcpy(w.data(), bytes.data() + at, static_cast<std::size_t>(rows * cols) * sizeof(double));
      at += static_cast<std::size_t>(rows * cols) * sizeof(double);
      Layer l;
      l.weight = w;
      l.bias.resize(nb);
      std::memcpy(l.bias.data(), bytes.data() + at, static_cast<std::size_t>(nb) * sizeof(double));
      at += static_cast<std::size_t>(nb) * sizeof(double);
      m.layers.push_back(std::move(l));
    }
    if (at != bytes.size()) throw Error(ErrorCode::Parse, "trailing bytes after weights");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Parse) throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
    throw;
  }
  m.validate();
  return m;
}

}  // namespace fringeforge
