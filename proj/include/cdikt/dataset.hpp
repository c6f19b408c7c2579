#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdikt/cdis.hpp"
#include "cdikt/tensor.hpp"

namespace cdikt {

// Malformed or inconsistent dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Planar RGB in [0,1], layout [3,H,W].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), pixels(3 * h * w, 0.0f) {}
  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
};

// PNG (8 or 16 bit, any colour type) and baseline JPEG. Greyscale is
// replicated to three channels, alpha dropped. Throws DataError.
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_jpeg(const std::filesystem::path& path, const Image& image, int quality = 95);

Image resize_bilinear(const Image& image, std::size_t size);

// Centred network input: pixel - 0.5.
Tensor to_tensor(const Image& image);

struct ImageRecord {
  std::string name;  // "<location>/<satellite|drone>/<file>"
  Image image;       // already resized to the configured size
};

struct LocationRecord {
  std::string location_id;
  std::vector<ImageRecord> satellite_images;
  std::vector<ImageRecord> drone_images;
};

struct LoadReport {
  std::vector<LocationRecord> records;
  std::vector<std::string> rejected;  // locations dropped, with reason
  std::vector<std::string> warnings;  // unreadable images skipped
};

// Reads <root>/<location>/{satellite,drone}/*.png|jpg|jpeg, sorted by
// location id and file name.
LoadReport load_dataset(const std::filesystem::path& root, std::size_t image_size);

// An image from the unpaired pool: only an opaque id, its view and pixels.
struct PoolImage {
  std::string id;
  View view = View::kDrone;
  Image image;
};

// Training-visible handle of the unpaired pool. It deliberately offers no
// way to ask which location an image came from.
class UnpairedPool {
 public:
  UnpairedPool() = default;
  explicit UnpairedPool(std::vector<PoolImage> images);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const PoolImage& operator[](std::size_t i) const { return images_.at(i); }
  std::size_t count(View view) const;
  const std::vector<PoolImage>& images() const { return images_; }

 private:
  std::vector<PoolImage> images_;
};

// Location index of every pool image, kept apart from the pool for purity
// diagnostics and evaluation on synthetic data.
class SealedLocations {
 public:
  SealedLocations() = default;
  SealedLocations(std::vector<std::string> location_ids, std::vector<std::size_t> index_of_image);

  const std::vector<std::string>& location_ids() const { return location_ids_; }
  // One entry per pool image, in pool order.
  const std::vector<std::size_t>& indices() const { return index_of_image_; }

 private:
  std::vector<std::string> location_ids_;
  std::vector<std::size_t> index_of_image_;
};

struct SupervisionSplit {
  double gt_ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<LocationRecord> paired;  // location labels exposed
  UnpairedPool unpaired;
  SealedLocations sealed;
};

// Samples round(gt_ratio * N) locations for the paired subset; every image
// of the other locations goes to the pool under a shuffled opaque id.
SupervisionSplit split_supervision(const std::vector<LocationRecord>& records, double gt_ratio,
                                   std::uint64_t seed);

// Text manifest: gt_ratio, seed and the paired location ids, for replay.
void write_split_manifest(const std::filesystem::path& path, const SupervisionSplit& split);
struct SplitManifest {
  double gt_ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> paired;
};
SplitManifest read_split_manifest(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t num_locations = 32;
  std::size_t drone_views_per_location = 6;
  // Scene code length; each block of 6 values past the first 6 adds one shape.
  std::size_t latent_dim = 30;
  double view_transform_strength = 0.5;  // rotation/scale/offset range of drone views
  double confusion = 0.1;                // sigma of drone appearance noise
  // Systematic satellite-side difference in [0,1]: wider footprint and a
  // flatter, warmer sensor response.
  double cross_view_gap = 0.0;
  std::size_t image_size = 96;
  std::uint32_t style = 0;               // 0 and 1 render disjoint visual domains
  std::string id_prefix = "L";
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticLocation {
  std::string location_id;
  Image satellite;
  std::vector<Image> drones;
};

// Deterministic in the spec; the images are exactly what write_synthetic
// stores (quantized to 8 bits).
std::vector<SyntheticLocation> synth_render(const SyntheticSpec& spec);
// Writes the standard directory layout under root.
void synth_generate(const SyntheticSpec& spec, const std::filesystem::path& root);
// The records load_dataset would return for the generated tree, without
// touching the disk.
std::vector<LocationRecord> synthetic_records(const std::vector<SyntheticLocation>& locations);

}  // namespace cdikt
