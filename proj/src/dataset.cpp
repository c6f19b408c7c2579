#include "cdikt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <tuple>

#include <jpeglib.h>
#include <png.h>

#include "cdikt/cluster.hpp"
#include "cdikt/rng.hpp"

namespace cdikt {

namespace fs = std::filesystem;

namespace {

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> interleave(const Image& image) {
  std::vector<std::uint8_t> out(3 * image.height * image.width);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out[(y * image.width + x) * 3 + c] = quantize(image.at(c, y, x));
  return out;
}

Image planar(const std::uint8_t* rgb, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(rgb[(y * w + x) * 3 + c]) / 255.0f;
  return img;
}

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return planar(buf.data(), img.height, img.width);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path.string());
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buf;
  // No C++ objects with destructors may be created between setjmp and the
  // last libjpeg call.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw DataError("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t w = cinfo.output_width, h = cinfo.output_height;
  buf.resize(w * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return planar(buf.data(), h, w);
}

}  // namespace

Image read_image(const fs::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw DataError("unsupported image type: " + path.string());
}

void write_png(const fs::path& path, const Image& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  const auto buf = interleave(image);
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_jpeg(const fs::path& path, const Image& image, int quality) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto buf = interleave(image);
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(buf.data() + static_cast<std::size_t>(cinfo.next_scanline) * image.width * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

Image resize_bilinear(const Image& image, std::size_t size) {
  if (image.height == 0 || image.width == 0) throw DataError("resize: empty image");
  if (image.height == size && image.width == size) return image;
  Image out(size, size);
  // Pixel-centre alignment: output centre (i + 0.5) maps to input (i + 0.5) * in/out.
  auto source = [](std::size_t i, std::size_t in, std::size_t out_n) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, in - 1);
    return std::tuple{lo, hi, static_cast<float>(s - static_cast<double>(lo))};
  };
  for (std::size_t y = 0; y < size; ++y) {
    const auto [y0, y1, fy] = source(y, image.height, size);
    for (std::size_t x = 0; x < size; ++x) {
      const auto [x0, x1, fx] = source(x, image.width, size);
      for (std::size_t c = 0; c < 3; ++c) {
        const float top = image.at(c, y0, x0) * (1 - fx) + image.at(c, y0, x1) * fx;
        const float bottom = image.at(c, y1, x0) * (1 - fx) + image.at(c, y1, x1) * fx;
        out.at(c, y, x) = top * (1 - fy) + bottom * fy;
      }
    }
  }
  return out;
}

Tensor to_tensor(const Image& image) {
  std::vector<double> data(image.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(image.pixels[i]) - 0.5;
  return Tensor({3, image.height, image.width}, std::move(data));
}

namespace {

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = lower_extension(entry.path());
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ImageRecord> load_images(const fs::path& dir, const std::string& prefix, std::size_t size,
                                     std::vector<std::string>& warnings) {
  std::vector<ImageRecord> out;
  for (const auto& p : sorted_images(dir)) {
    try {
      out.push_back({prefix + p.filename().string(), resize_bilinear(read_image(p), size)});
    } catch (const DataError& e) {
      warnings.push_back(std::string("skipped unreadable image: ") + e.what());
    }
  }
  return out;
}

}  // namespace

LoadReport load_dataset(const fs::path& root, std::size_t image_size) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  if (image_size == 0) throw std::invalid_argument("load_dataset: image size must be positive");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  LoadReport rep;
  for (const auto& dir : dirs) {
    LocationRecord rec;
    rec.location_id = dir.filename().string();
    rec.satellite_images = load_images(dir / "satellite", rec.location_id + "/satellite/", image_size, rep.warnings);
    if (rec.satellite_images.empty()) {
      rep.rejected.push_back(rec.location_id + ": no readable satellite image");
      continue;
    }
    rec.drone_images = load_images(dir / "drone", rec.location_id + "/drone/", image_size, rep.warnings);
    rep.records.push_back(std::move(rec));
  }
  return rep;
}

UnpairedPool::UnpairedPool(std::vector<PoolImage> images) : images_(std::move(images)) {}

std::size_t UnpairedPool::count(View view) const {
  return static_cast<std::size_t>(
      std::count_if(images_.begin(), images_.end(), [&](const PoolImage& p) { return p.view == view; }));
}

SealedLocations::SealedLocations(std::vector<std::string> location_ids, std::vector<std::size_t> index_of_image)
    : location_ids_(std::move(location_ids)), index_of_image_(std::move(index_of_image)) {}

SupervisionSplit split_supervision(const std::vector<LocationRecord>& records, double gt_ratio,
                                   std::uint64_t seed) {
  if (!(gt_ratio >= 0.0 && gt_ratio <= 1.0)) throw std::invalid_argument("gt_ratio must lie in [0,1]");
  const auto n_paired = static_cast<std::size_t>(std::lround(gt_ratio * static_cast<double>(records.size())));
  if (gt_ratio > 0.0 && n_paired == 0) {
    throw DataError("gt_ratio " + format_double(gt_ratio) + " selects no location out of " +
                    std::to_string(records.size()) + "; at least one paired location is required");
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<bool> is_paired(records.size(), false);
  for (std::size_t i = 0; i < n_paired; ++i) is_paired[order[i]] = true;

  SupervisionSplit split;
  split.gt_ratio = gt_ratio;
  split.seed = seed;
  struct Entry {
    PoolImage image;
    std::size_t location;
  };
  std::vector<Entry> pool;
  std::vector<std::string> pool_locations;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (is_paired[i]) {
      split.paired.push_back(records[i]);
      continue;
    }
    const std::size_t loc = pool_locations.size();
    pool_locations.push_back(records[i].location_id);
    for (const auto& im : records[i].satellite_images) pool.push_back({{"", View::kSatellite, im.image}, loc});
    for (const auto& im : records[i].drone_images) pool.push_back({{"", View::kDrone, im.image}, loc});
  }
  // Shuffled order and positional ids keep the grouping by location out of
  // the training-visible handle.
  Rng pool_rng(derive_seed(seed, "pool"));
  pool_rng.shuffle(std::span<Entry>(pool));
  std::vector<PoolImage> images;
  std::vector<std::size_t> sealed;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    char id[24];
    std::snprintf(id, sizeof id, "u%06zu", i);
    pool[i].image.id = id;
    images.push_back(std::move(pool[i].image));
    sealed.push_back(pool[i].location);
  }
  split.unpaired = UnpairedPool(std::move(images));
  split.sealed = SealedLocations(std::move(pool_locations), std::move(sealed));
  return split;
}

void write_split_manifest(const fs::path& path, const SupervisionSplit& split) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "gt_ratio=" << format_double(split.gt_ratio) << "\n";
  out << "seed=" << split.seed << "\n";
  out << "paired_count=" << split.paired.size() << "\n";
  for (const auto& r : split.paired) out << "paired=" << r.location_id << "\n";
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SplitManifest read_split_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  SplitManifest m;
  std::string line;
  std::size_t lineno = 0;
  std::size_t declared = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    try {
      if (key == "gt_ratio") m.gt_ratio = std::stod(value);
      else if (key == "seed") m.seed = std::stoull(value);
      else if (key == "paired_count") declared = std::stoul(value);
      else if (key == "paired") m.paired.push_back(value);
      else throw ParseError(lineno, "unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ParseError(lineno, "bad value for '" + key + "'");
    }
  }
  if (declared != m.paired.size()) throw ParseError(lineno, "paired_count does not match listed locations");
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

void SyntheticSpec::validate() const {
  if (num_locations == 0) throw std::invalid_argument("synthetic spec: num_locations must be positive");
  if (latent_dim < 12) throw std::invalid_argument("synthetic spec: latent_dim must be at least 12");
  if (image_size < 8) throw std::invalid_argument("synthetic spec: image_size must be at least 8");
  if (view_transform_strength < 0.0 || view_transform_strength > 1.0) {
    throw std::invalid_argument("synthetic spec: view_transform_strength must lie in [0,1]");
  }
  if (confusion < 0.0) throw std::invalid_argument("synthetic spec: confusion must be non-negative");
  if (cross_view_gap < 0.0 || cross_view_gap > 1.0) {
    throw std::invalid_argument("synthetic spec: cross_view_gap must lie in [0,1]");
  }
  if (style > 1) throw std::invalid_argument("synthetic spec: style must be 0 or 1");
  if (id_prefix.empty() || id_prefix.find('/') != std::string::npos) {
    throw std::invalid_argument("synthetic spec: id_prefix must be a non-empty file name");
  }
}

namespace {

struct Shape2d {
  double cx, cy, size;
  float rgb[3];
  int kind;  // 0 disc, 1 square, 2 triangle
};

struct Scene {
  float background[3];
  double frequency, angle, amplitude;
  std::vector<Shape2d> shapes;
};

double unit_clamp(double v) { return std::clamp(v, 0.0, 1.0); }

// Scene parameters from a code in [0,1]^latent_dim.
Scene decode(const std::vector<double>& z, std::uint32_t style) {
  Scene s;
  for (int c = 0; c < 3; ++c) s.background[c] = static_cast<float>(0.15 + 0.7 * unit_clamp(z[c]));
  s.frequency = 3.0 + 9.0 * unit_clamp(z[3]);
  s.angle = std::numbers::pi * z[4];
  s.amplitude = 0.08 + 0.12 * unit_clamp(z[5]);
  for (std::size_t base = 6, i = 0; base + 6 <= z.size(); base += 6, ++i) {
    Shape2d sh;
    sh.cx = 0.15 + 0.7 * z[base];
    sh.cy = 0.15 + 0.7 * z[base + 1];
    sh.size = 0.07 + 0.1 * unit_clamp(z[base + 2]);
    for (int c = 0; c < 3; ++c) sh.rgb[c] = static_cast<float>(unit_clamp(z[base + 3 + c]));
    sh.kind = static_cast<int>(i % 3);
    s.shapes.push_back(sh);
  }
  if (style == 1) {
    // Second domain: rotated palette, inverted background tone.
    for (auto& sh : s.shapes) {
      const float r = sh.rgb[0];
      sh.rgb[0] = sh.rgb[1];
      sh.rgb[1] = sh.rgb[2];
      sh.rgb[2] = 1.0f - r;
    }
    for (float& c : s.background) c = 1.0f - c;
  }
  return s;
}

bool inside(const Shape2d& sh, double x, double y, std::uint32_t style) {
  const double dx = x - sh.cx, dy = y - sh.cy;
  bool in = false;
  double edge = 0.0;  // distance-like measure, 1 at the boundary
  switch (sh.kind) {
    case 0:
      edge = std::sqrt(dx * dx + dy * dy) / sh.size;
      break;
    case 1:
      edge = std::max(std::abs(dx), std::abs(dy)) / (0.85 * sh.size);
      break;
    default: {
      // Upward triangle: below the two slanted edges and above the base.
      const double h = 1.6 * sh.size;
      const double v = (dy + 0.5 * h) / h;  // 0 at apex, 1 at base
      edge = (v < 0.0 || v > 1.0) ? 2.0 : std::abs(dx) / (v * 0.95 * sh.size + 1e-12);
      break;
    }
  }
  in = edge <= 1.0;
  // The second domain draws outlines instead of filled shapes.
  if (style == 1) in = in && edge >= 0.55;
  return in;
}

void shade(const Scene& s, double x, double y, std::uint32_t style, float out[3]) {
  double t;
  const double u = x * std::cos(s.angle) + y * std::sin(s.angle);
  if (style == 0) {
    t = s.amplitude * std::sin(2.0 * std::numbers::pi * s.frequency * u);
  } else {
    const double v = -x * std::sin(s.angle) + y * std::cos(s.angle);
    const bool a = std::fmod(std::floor(u * s.frequency) + std::floor(v * s.frequency), 2.0) != 0.0;
    t = a ? s.amplitude : -s.amplitude;
  }
  for (int c = 0; c < 3; ++c) out[c] = static_cast<float>(s.background[c] + t);
  for (const auto& sh : s.shapes) {
    if (inside(sh, x, y, style)) {
      for (int c = 0; c < 3; ++c) out[c] = sh.rgb[c];
    }
  }
}

struct ViewTransform {
  double angle = 0.0, scale = 1.0, dx = 0.0, dy = 0.0;
};

// 2x2 supersampled render. Output pixel centre p maps to scene point
// R(-angle) (p - c - offset) / scale + c.
Image render(const Scene& s, const ViewTransform& t, std::size_t size, std::uint32_t style) {
  Image img(size, size);
  const double ca = std::cos(-t.angle), sa = std::sin(-t.angle);
  const double inv = 1.0 / static_cast<double>(size);
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      float acc[3] = {0, 0, 0};
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double u = (static_cast<double>(px) + 0.25 + 0.5 * sx) * inv - 0.5 - t.dx;
          const double v = (static_cast<double>(py) + 0.25 + 0.5 * sy) * inv - 0.5 - t.dy;
          const double x = (ca * u - sa * v) / t.scale + 0.5;
          const double y = (sa * u + ca * v) / t.scale + 0.5;
          float rgb[3];
          shade(s, x, y, style, rgb);
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
        }
      }
      for (int c = 0; c < 3; ++c) img.at(c, py, px) = acc[c] * 0.25f;
    }
  }
  return img;
}

// Satellite sensor response: desaturate toward luma, lift shadows and tint.
void satellite_response(Image& img, double gap) {
  const std::size_t n = img.height * img.width;
  constexpr float tint[3] = {0.06f, 0.03f, -0.04f};
  for (std::size_t i = 0; i < n; ++i) {
    float* px[3] = {&img.pixels[i], &img.pixels[n + i], &img.pixels[2 * n + i]};
    const float luma = 0.299f * *px[0] + 0.587f * *px[1] + 0.114f * *px[2];
    for (int c = 0; c < 3; ++c) {
      float v = *px[c] + static_cast<float>(0.6 * gap) * (luma - *px[c]);
      v = std::pow(std::clamp(v, 0.0f, 1.0f), static_cast<float>(1.0 - 0.4 * gap));
      *px[c] = v + static_cast<float>(gap) * tint[c];
    }
  }
}

Image quantized(Image img) {
  for (float& v : img.pixels) v = static_cast<float>(quantize(v)) / 255.0f;
  return img;
}

}  // namespace

std::vector<SyntheticLocation> synth_render(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<SyntheticLocation> out;
  for (std::size_t l = 0; l < spec.num_locations; ++l) {
    Rng rng(derive_seed(derive_seed(spec.seed, "location"), l));
    std::vector<double> z(spec.latent_dim);
    for (double& v : z) v = rng.uniform();
    SyntheticLocation loc;
    char id[32];
    std::snprintf(id, sizeof id, "%s%04zu", spec.id_prefix.c_str(), l);
    loc.location_id = id;
    ViewTransform overhead;
    overhead.scale = 1.0 - 0.35 * spec.cross_view_gap;
    Image satellite = render(decode(z, spec.style), overhead, spec.image_size, spec.style);
    satellite_response(satellite, spec.cross_view_gap);
    loc.satellite = quantized(std::move(satellite));
    const double k = spec.view_transform_strength;
    const std::size_t views = spec.drone_views_per_location;
    // Views are frames of one orbit: heading sweeps the range evenly from a
    // random start while altitude (scale) changes along the pass.
    const double phase = 0.5 * k * std::numbers::pi * rng.uniform(-1.0, 1.0);
    const double step_jitter = views > 1 ? 0.25 / static_cast<double>(views - 1) : 0.5;
    for (std::size_t d = 0; d < views; ++d) {
      const double along = views > 1 ? 2.0 * static_cast<double>(d) / static_cast<double>(views - 1) - 1.0 : 0.0;
      const double u = along + step_jitter * rng.uniform(-1.0, 1.0);
      ViewTransform t;
      t.angle = phase + k * std::numbers::pi * u;
      t.scale = 1.0 + 0.3 * k * u;
      t.dx = 0.1 * k * rng.uniform(-1.0, 1.0);
      t.dy = 0.1 * k * rng.uniform(-1.0, 1.0);
      std::vector<double> jittered = z;
      for (double& v : jittered) v += spec.confusion * rng.normal();
      Image img = render(decode(jittered, spec.style), t, spec.image_size, spec.style);
      for (float& p : img.pixels) p += static_cast<float>(spec.confusion * rng.normal());
      loc.drones.push_back(quantized(std::move(img)));
    }
    out.push_back(std::move(loc));
  }
  return out;
}

namespace {

std::string drone_file_name(std::size_t d) {
  char name[16];
  std::snprintf(name, sizeof name, "%02zu.png", d);
  return name;
}

}  // namespace

void synth_generate(const SyntheticSpec& spec, const fs::path& root) {
  const auto locations = synth_render(spec);
  fs::create_directories(root);
  for (const auto& loc : locations) {
    const fs::path dir = root / loc.location_id;
    fs::create_directories(dir / "satellite");
    fs::create_directories(dir / "drone");
    write_png(dir / "satellite" / "0.png", loc.satellite);
    for (std::size_t d = 0; d < loc.drones.size(); ++d) write_png(dir / "drone" / drone_file_name(d), loc.drones[d]);
  }
}

std::vector<LocationRecord> synthetic_records(const std::vector<SyntheticLocation>& locations) {
  std::vector<LocationRecord> out;
  for (const auto& loc : locations) {
    LocationRecord r;
    r.location_id = loc.location_id;
    r.satellite_images.push_back({loc.location_id + "/satellite/0.png", loc.satellite});
    for (std::size_t d = 0; d < loc.drones.size(); ++d) {
      r.drone_images.push_back({loc.location_id + "/drone/" + drone_file_name(d), loc.drones[d]});
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cdikt
