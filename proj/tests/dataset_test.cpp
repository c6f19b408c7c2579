#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "cdikt/dataset.hpp"
#include "cdikt/eval.hpp"
#include "test_util.hpp"

using namespace cdikt;
namespace fs = std::filesystem;

namespace {

// The pool must not be able to answer "where was this image taken".
template <typename Pool>
concept ExposesLocation = requires(const Pool& p) { p.location(0); } ||
                          requires(const Pool& p) { p.location_id(0); } ||
                          requires(const Pool& p) { p[0].location; } ||
                          requires(const Pool& p) { p[0].location_id; } ||
                          requires(const Pool& p) { p.sealed(); };
static_assert(!ExposesLocation<UnpairedPool>);

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("cdikt_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Image solid(std::size_t size, float r, float g, float b) {
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

std::vector<LocationRecord> fake_records(std::size_t n, std::size_t drones) {
  std::vector<LocationRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    LocationRecord r;
    r.location_id = "loc" + std::to_string(1000 + i);
    r.satellite_images.push_back({r.location_id + "/satellite/0.png", solid(4, 0.1f * static_cast<float>(i % 10), 0, 0)});
    for (std::size_t d = 0; d < drones; ++d) r.drone_images.push_back({r.location_id + "/drone/x.png", solid(4, 0, 0, 0)});
    out.push_back(std::move(r));
  }
  return out;
}

bool files_equal(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {});
}

}  // namespace

TEST(ImageIo, PngRoundTripIsExactAfterQuantization) {
  TempDir dir("png");
  Image img(5, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.0f;
  write_png(dir.path() / "a.png", img);
  Image back = read_image(dir.path() / "a.png");
  ASSERT_EQ(back.height, 5u);
  ASSERT_EQ(back.width, 7u);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(ImageIo, JpegDecodesApproximately) {
  TempDir dir("jpeg");
  Image img = solid(16, 0.8f, 0.4f, 0.2f);
  write_jpeg(dir.path() / "a.jpg", img);
  Image back = read_image(dir.path() / "a.jpg");
  ASSERT_EQ(back.height, 16u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.03);
}

TEST(ImageIo, CorruptFilesRaiseDataError) {
  TempDir dir("corrupt");
  std::ofstream(dir.path() / "bad.png") << "not a png";
  std::ofstream(dir.path() / "bad.jpg") << "not a jpeg";
  EXPECT_THROW(read_image(dir.path() / "bad.png"), DataError);
  EXPECT_THROW(read_image(dir.path() / "bad.jpg"), DataError);
  EXPECT_THROW(read_image(dir.path() / "bad.gif"), DataError);
}

TEST(Resize, ConstantImageStaysConstant) {
  Image r = resize_bilinear(solid(10, 0.25f, 0.5f, 0.75f), 7);
  ASSERT_EQ(r.height, 7u);
  for (std::size_t y = 0; y < 7; ++y) EXPECT_FLOAT_EQ(r.at(1, y, 3), 0.5f);
}

TEST(Resize, DownsampleByTwoAveragesPairs) {
  Image img(2, 4);
  const float row[4] = {0.0f, 1.0f, 0.2f, 0.6f};
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = row[x];
  // Non-square input, square output: x maps 4 -> 2 and y maps 2 -> 2.
  Image r = resize_bilinear(img, 2);
  EXPECT_FLOAT_EQ(r.at(0, 0, 0), 0.5f);
  EXPECT_FLOAT_EQ(r.at(0, 1, 1), 0.4f);
}

TEST(ToTensor, CentresPixels) {
  Tensor t = to_tensor(solid(3, 0.5f, 1.0f, 0.0f));
  EXPECT_EQ(t.shape(), (Shape{3, 3, 3}));
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[9], 0.5);
  EXPECT_EQ(t[18], -0.5);
}

TEST(LoadDataset, EmptyRootGivesNoRecords) {
  TempDir dir("empty_root");
  auto rep = load_dataset(dir.path(), 8);
  EXPECT_TRUE(rep.records.empty());
  EXPECT_TRUE(rep.rejected.empty());
}

TEST(LoadDataset, CountsOrderingAndRejections) {
  TempDir dir("layout");
  for (std::string loc : {"c", "a", "b"}) {
    fs::create_directories(dir.path() / loc / "satellite");
    fs::create_directories(dir.path() / loc / "drone");
    write_png(dir.path() / loc / "satellite" / "s.png", solid(12, 0.5f, 0.5f, 0.5f));
    write_png(dir.path() / loc / "drone" / "2.png", solid(12, 0.1f, 0.5f, 0.5f));
    write_jpeg(dir.path() / loc / "drone" / "1.jpg", solid(12, 0.2f, 0.5f, 0.5f));
  }
  fs::create_directories(dir.path() / "z" / "drone");
  write_png(dir.path() / "z" / "drone" / "0.png", solid(12, 0.1f, 0.1f, 0.1f));
  std::ofstream(dir.path() / "a" / "drone" / "3.png") << "garbage";
  std::ofstream(dir.path() / "README.txt") << "ignored";

  auto rep = load_dataset(dir.path(), 8);
  ASSERT_EQ(rep.records.size(), 3u);
  std::vector<std::string> ids;
  for (const auto& r : rep.records) {
    ids.push_back(r.location_id);
    EXPECT_EQ(r.drone_images.size(), 2u);
    EXPECT_EQ(r.satellite_images.front().image.height, 8u);
  }
  EXPECT_EQ(ids, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(rep.records[0].drone_images[0].name, "a/drone/1.jpg");
  ASSERT_EQ(rep.rejected.size(), 1u);
  EXPECT_NE(rep.rejected[0].find("z"), std::string::npos);
  ASSERT_EQ(rep.warnings.size(), 1u);

  auto again = load_dataset(dir.path(), 8);
  ASSERT_EQ(again.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(again.records[i].location_id, rep.records[i].location_id);
    EXPECT_EQ(again.records[i].drone_images[1].image.pixels, rep.records[i].drone_images[1].image.pixels);
  }
}

TEST(Split, PaperRatioOnHundredLocations) {
  auto split = split_supervision(fake_records(100, 2), 0.02, 7);
  EXPECT_EQ(split.paired.size(), 2u);
  EXPECT_EQ(split.unpaired.size(), 98u * 3u);
  EXPECT_EQ(split.unpaired.count(View::kSatellite), 98u);
  EXPECT_EQ(split.sealed.location_ids().size(), 98u);
  std::set<std::string> paired;
  for (const auto& r : split.paired) paired.insert(r.location_id);
  for (const auto& l : split.sealed.location_ids()) EXPECT_EQ(paired.count(l), 0u);
}

TEST(Split, ExtremeRatios) {
  auto all = split_supervision(fake_records(10, 1), 1.0, 1);
  EXPECT_EQ(all.paired.size(), 10u);
  EXPECT_TRUE(all.unpaired.empty());
  auto none = split_supervision(fake_records(10, 1), 0.0, 1);
  EXPECT_TRUE(none.paired.empty());
  EXPECT_EQ(none.unpaired.size(), 20u);
}

TEST(Split, RatioRoundingToZeroIsAnError) {
  EXPECT_THROW(split_supervision(fake_records(10, 1), 0.02, 1), DataError);
  EXPECT_THROW(split_supervision(fake_records(10, 1), 1.5, 1), std::invalid_argument);
}

TEST(Split, DeterministicAndSeedDependent) {
  auto recs = fake_records(50, 1);
  auto a = split_supervision(recs, 0.2, 3), b = split_supervision(recs, 0.2, 3), c = split_supervision(recs, 0.2, 4);
  auto ids = [](const SupervisionSplit& s) {
    std::vector<std::string> v;
    for (const auto& r : s.paired) v.push_back(r.location_id);
    return v;
  };
  EXPECT_EQ(ids(a), ids(b));
  EXPECT_NE(ids(a), ids(c));
  EXPECT_EQ(a.sealed.indices(), b.sealed.indices());
}

TEST(Split, PoolIdsAreOpaque) {
  auto split = split_supervision(fake_records(20, 3), 0.1, 5);
  for (const auto& img : split.unpaired.images()) {
    EXPECT_EQ(img.id.find("loc"), std::string::npos) << img.id;
    EXPECT_EQ(img.id[0], 'u');
  }
  // Pool order is shuffled, so neighbours are not grouped by location.
  const auto& idx = split.sealed.indices();
  std::size_t same_as_next = 0;
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) same_as_next += idx[i] == idx[i + 1];
  EXPECT_LT(same_as_next, idx.size() / 4);
}

TEST(Split, ManifestRoundTrip) {
  TempDir dir("manifest");
  auto split = split_supervision(fake_records(30, 1), 0.1, 9);
  write_split_manifest(dir.path() / "split.txt", split);
  auto m = read_split_manifest(dir.path() / "split.txt");
  EXPECT_EQ(m.gt_ratio, 0.1);
  EXPECT_EQ(m.seed, 9u);
  ASSERT_EQ(m.paired.size(), 3u);
  EXPECT_EQ(m.paired[0], split.paired[0].location_id);
}

TEST(Synth, DegenerateSpecGivesIdenticalViews) {
  SyntheticSpec spec;
  spec.num_locations = 3;
  spec.drone_views_per_location = 2;
  spec.view_transform_strength = 0.0;
  spec.confusion = 0.0;
  spec.image_size = 24;
  for (const auto& loc : synth_render(spec))
    for (const auto& d : loc.drones) EXPECT_EQ(d.pixels, loc.satellite.pixels);
}

TEST(Synth, SameSeedGivesByteIdenticalTrees) {
  SyntheticSpec spec;
  spec.num_locations = 3;
  spec.drone_views_per_location = 2;
  spec.image_size = 24;
  spec.seed = 7;
  TempDir a("synth_a"), b("synth_b");
  synth_generate(spec, a.path());
  synth_generate(spec, b.path());
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    ++files;
    EXPECT_TRUE(files_equal(entry.path(), b.path() / fs::relative(entry.path(), a.path())));
  }
  EXPECT_EQ(files, 9u);
  auto rep = load_dataset(a.path(), 24);
  ASSERT_EQ(rep.records.size(), 3u);
  EXPECT_TRUE(rep.rejected.empty());
  const auto rendered = synth_render(spec);
  EXPECT_EQ(rep.records[1].drone_images[1].image.pixels, rendered[1].drones[1].pixels);
}

TEST(Synth, InMemoryRecordsMatchTheLoadedTree) {
  SyntheticSpec spec;
  spec.num_locations = 3;
  spec.drone_views_per_location = 2;
  spec.image_size = 24;
  TempDir dir("synth_mem");
  synth_generate(spec, dir.path());
  const auto loaded = load_dataset(dir.path(), 24).records;
  const auto direct = synthetic_records(synth_render(spec));
  ASSERT_EQ(loaded.size(), direct.size());
  for (std::size_t l = 0; l < loaded.size(); ++l) {
    EXPECT_EQ(loaded[l].location_id, direct[l].location_id);
    ASSERT_EQ(loaded[l].drone_images.size(), direct[l].drone_images.size());
    for (std::size_t d = 0; d < loaded[l].drone_images.size(); ++d) {
      EXPECT_EQ(loaded[l].drone_images[d].name, direct[l].drone_images[d].name);
      EXPECT_EQ(loaded[l].drone_images[d].image.pixels, direct[l].drone_images[d].image.pixels);
    }
    EXPECT_EQ(loaded[l].satellite_images[0].name, direct[l].satellite_images[0].name);
  }
}

TEST(Synth, StylesProduceDifferentImages) {
  SyntheticSpec spec;
  spec.num_locations = 1;
  spec.image_size = 24;
  auto a = synth_render(spec);
  spec.style = 1;
  auto b = synth_render(spec);
  EXPECT_NE(a[0].satellite.pixels, b[0].satellite.pixels);
}

TEST(Synth, RawPixelNearestNeighbourFindsEveryLocationWithoutNoise) {
  SyntheticSpec spec;
  spec.num_locations = 4;
  spec.drone_views_per_location = 5;
  spec.confusion = 0.0;
  spec.view_transform_strength = 0.15;
  spec.image_size = 32;
  spec.seed = 3;
  auto locs = synth_render(spec);
  auto raw = [](const Image& img, const std::string& id, const std::string& loc) {
    Embedding e;
    e.id = id;
    e.location = loc;
    e.vector.assign(img.pixels.begin(), img.pixels.end());
    double m = 0.0;
    for (double v : e.vector) m += v;
    m /= static_cast<double>(e.vector.size());
    double ss = 0.0;
    for (double& v : e.vector) ss += (v -= m) * v;
    for (double& v : e.vector) v /= std::sqrt(ss);
    return e;
  };
  std::vector<Embedding> gallery, queries;
  for (const auto& l : locs) {
    gallery.push_back(raw(l.satellite, l.location_id + "s", l.location_id));
    for (std::size_t d = 0; d < l.drones.size(); ++d) {
      queries.push_back(raw(l.drones[d], l.location_id + std::to_string(d), l.location_id));
    }
  }
  auto result = rank_gallery(queries, gallery);
  EXPECT_EQ(recall_at_k(result, relevance_by_location(queries, gallery), 1), 1.0);
}

TEST(Synth, InvalidSpecRejected) {
  SyntheticSpec spec;
  spec.num_locations = 0;
  EXPECT_THROW(synth_render(spec), std::invalid_argument);
  spec.num_locations = 2;
  spec.style = 3;
  EXPECT_THROW(synth_render(spec), std::invalid_argument);
}

TEST(Synth, CrossViewGapChangesOnlySatellites) {
  SyntheticSpec spec;
  spec.num_locations = 2;
  spec.drone_views_per_location = 3;
  spec.image_size = 24;
  const auto plain = synth_render(spec);
  spec.cross_view_gap = 0.5;
  const auto shifted = synth_render(spec);
  for (std::size_t l = 0; l < plain.size(); ++l) {
    EXPECT_NE(plain[l].satellite.pixels, shifted[l].satellite.pixels);
    for (std::size_t d = 0; d < plain[l].drones.size(); ++d) {
      EXPECT_EQ(plain[l].drones[d].pixels, shifted[l].drones[d].pixels);
    }
  }
  spec.cross_view_gap = 1.5;
  EXPECT_THROW(synth_render(spec), std::invalid_argument);
}

// Views are successive frames of one pass, so neighbours along the pass
// look more alike than its two ends.
TEST(Synth, ViewsFollowAnOrbit) {
  SyntheticSpec spec;
  spec.num_locations = 6;
  spec.drone_views_per_location = 8;
  spec.confusion = 0.0;
  spec.view_transform_strength = 0.6;
  spec.image_size = 32;
  auto dist = [](const Image& a, const Image& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
    return s;
  };
  for (const auto& loc : synth_render(spec)) {
    double adjacent = 0.0;
    for (std::size_t d = 0; d + 1 < loc.drones.size(); ++d) adjacent += dist(loc.drones[d], loc.drones[d + 1]);
    adjacent /= static_cast<double>(loc.drones.size() - 1);
    EXPECT_LT(adjacent, dist(loc.drones.front(), loc.drones.back())) << loc.location_id;
  }
}
