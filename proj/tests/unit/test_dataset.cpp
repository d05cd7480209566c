#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <tuple>

#include <Eigen/Dense>

#include "scd/alignment/global_align.hpp"
#include "scd/dataset/pairs.hpp"
#include "scd/dataset/scene.hpp"
#include "scd/dataset/synth.hpp"
#include "scd/errors.hpp"

using namespace scd;
using Eigen::Vector3d;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scd_test_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthSpec small_spec(std::size_t frames = 4, std::size_t h = 12, std::size_t w = 16) {
  SynthSpec s;
  s.frames = frames;
  s.height = h;
  s.width = w;
  return s;
}

SceneDataset bare_scene(std::size_t n) {
  SceneDataset ds;
  ds.height = 2;
  ds.width = 2;
  for (std::size_t k = 0; k < n; ++k) {
    Frame f;
    f.id = static_cast<int>(k);
    f.image = Image(2, 2);
    PointMap pm(f.id, 2, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      pm.set_point(i, Vector3d(k + 0.5, i * 1.25, -3.0));
      pm.valid[i] = 1;
    }
    f.label = pm;
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("load_scene rejects empty or malformed directories") {
  const fs::path dir = fresh_dir("empty");
  CHECK_THROWS_AS(load_scene(dir), LoadError);
  CHECK_THROWS_AS(load_scene(dir / "missing"), LoadError);
  fs::create_directories(dir / "images");
  CHECK_THROWS_AS(load_scene(dir), LoadError);

  // gap in ids
  Image img(4, 4);
  write_png(image_path(dir, 0), img);
  write_png(image_path(dir, 2), img);
  CHECK_THROWS_AS(load_scene(dir), LoadError);

  // corrupt frame is named in the message
  write_png(image_path(dir, 1), img);
  std::ofstream(image_path(dir, 2), std::ios::trunc) << "not a png";
  try {
    load_scene(dir);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("load_scene keeps capture order and native labels bitwise") {
  const fs::path dir = fresh_dir("three");
  SynthScene synth = synth_scene(small_spec(3), 7);
  save_scene(synth.dataset, dir);
  const SceneDataset ds = load_scene(dir);
  REQUIRE(ds.frames.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(ds.frames[k].id == k);
    REQUIRE(ds.frames[k].label);
    // labels are stored as float32; compare against the float-rounded source
    const PointMap& src = *synth.dataset.frames[k].label;
    const PointMap& got = *ds.frames[k].label;
    bool exact = true;
    for (std::size_t i = 0; i < src.points.size(); ++i) {
      exact = exact && got.points[i] == static_cast<double>(static_cast<float>(src.points[i]));
    }
    CHECK(exact);
    CHECK(got.valid == src.valid);
    CHECK(ds.frames[k].image.data == synth.dataset.frames[k].image.data);
  }
  CHECK(ds.height == 12);
  CHECK(ds.width == 16);

  // a second load at the (explicit) native size is bitwise identical
  const SceneDataset again = load_scene(dir, Resolution{12, 16});
  for (int k = 0; k < 3; ++k) {
    CHECK(same_bits(again.frames[k].label->points, ds.frames[k].label->points));
    CHECK(again.frames[k].image.data == ds.frames[k].image.data);
  }
}

TEST_CASE("load_scene resizes images bilinearly and labels by nearest neighbour") {
  const fs::path dir = fresh_dir("resize");
  SynthScene synth = synth_scene(small_spec(2, 8, 8), 3);
  save_scene(synth.dataset, dir);
  const SceneDataset ds = load_scene(dir, Resolution{4, 4});
  CHECK(ds.height == 4);
  CHECK(ds.width == 4);
  const SceneDataset native = load_scene(dir);
  const PointMap& full = *native.frames[1].label;
  const PointMap& small = *ds.frames[1].label;
  // every resized point is one of the source points, never a blend
  std::set<std::tuple<double, double, double>> source;
  for (std::size_t i = 0; i < full.pixels(); ++i) {
    const Vector3d p = full.point(i);
    source.emplace(p.x(), p.y(), p.z());
  }
  for (std::size_t i = 0; i < small.pixels(); ++i) {
    const Vector3d p = small.point(i);
    CHECK(source.count({p.x(), p.y(), p.z()}) == 1);
  }
  // 2x downsampling with half-pixel centres averages 2x2 blocks
  const Image& big = native.frames[0].image;
  const Image& half = ds.frames[0].image;
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      const float expect = 0.25f * (big.at(1, 2 * y, 2 * x) + big.at(1, 2 * y + 1, 2 * x) +
                                    big.at(1, 2 * y, 2 * x + 1) + big.at(1, 2 * y + 1, 2 * x + 1));
      CHECK(half.at(1, y, x) == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("non-finite label points load as invalid") {
  const fs::path dir = fresh_dir("nonfinite");
  SceneDataset ds = bare_scene(2);
  save_scene(ds, dir);
  // poke non-finite float32 values straight into the stored point arrays
  auto poke = [](const fs::path& file, std::size_t index, float value) {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    std::string header;
    std::getline(f, header);
    f.seekp(static_cast<std::streamoff>(header.size() + 1 + 4 * index));
    f.write(reinterpret_cast<const char*>(&value), 4);
  };
  poke(label_path(dir, 0), 3, std::numeric_limits<float>::quiet_NaN());
  poke(label_path(dir, 1), 0, std::numeric_limits<float>::infinity());
  const SceneDataset back = load_scene(dir);
  CHECK(back.frames[0].label->valid == std::vector<std::uint8_t>{1, 0, 1, 1});  // float 3 = pixel 1 x
  CHECK(back.frames[1].label->valid == std::vector<std::uint8_t>{0, 1, 1, 1});
}

TEST_CASE("meta.json label scale and pairs.txt are read back") {
  const fs::path dir = fresh_dir("meta");
  SceneDataset ds = scale_labels(bare_scene(3), 100.0);
  ds.name = "office";
  ds.pair_list = std::vector<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}};
  save_scene(ds, dir);
  const SceneDataset back = load_scene(dir);
  CHECK(back.name == "office");
  CHECK(back.label_scale == 100.0);
  REQUIRE(back.pair_list);
  CHECK(*back.pair_list == *ds.pair_list);

  // one-directional list gets its reverses
  std::ofstream(dir / "pairs.txt", std::ios::trunc) << "0 2\n# comment\n\n1 2\n";
  const auto completed = load_scene(dir).pair_list.value();
  CHECK(completed == std::vector<std::pair<int, int>>{{0, 2}, {2, 0}, {1, 2}, {2, 1}});

  std::ofstream(dir / "pairs.txt", std::ios::trunc) << "0 7\n";
  CHECK_THROWS_AS(load_scene(dir), LoadError);
  std::ofstream(dir / "pairs.txt", std::ios::trunc) << "0 1 2\n";
  CHECK_THROWS_AS(load_scene(dir), LoadError);
  std::ofstream(dir / "pairs.txt", std::ios::trunc) << "1 1\n";
  CHECK_THROWS_AS(load_scene(dir), LoadError);
}

TEST_CASE("generate_pairs examples") {
  CHECK(generate_pairs(bare_scene(2), 1).pairs == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}});
  CHECK(generate_pairs(bare_scene(4), 2).pairs.size() == 10);
  CHECK(generate_pairs(bare_scene(1), 3).pairs.empty());
  CHECK(generate_pairs(bare_scene(0), 3).pairs.empty());
  CHECK(generate_pairs(bare_scene(3), 1).pairs ==
        std::vector<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}});
  CHECK_THROWS_AS(generate_pairs(bare_scene(3), 0), ConfigError);
}

TEST_CASE("generate_pairs: both orders of every unordered pair, exact window coverage") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 12)(rng);
    const int window = std::uniform_int_distribution<int>(1, 6)(rng);
    const auto pairs = generate_pairs(bare_scene(n), window).pairs;
    const std::set<std::pair<int, int>> set(pairs.begin(), pairs.end());
    CHECK(set.size() == pairs.size());
    std::size_t expected = 0;
    for (int i = 0; i < static_cast<int>(n); ++i) {
      for (int j = 0; j < static_cast<int>(n); ++j) {
        const bool want = i != j && std::abs(i - j) <= window;
        expected += want ? 1 : 0;
        CHECK(set.count({i, j}) == (want ? 1u : 0u));
      }
    }
    CHECK(pairs.size() == expected);
    for (const auto& [a, b] : pairs) CHECK(set.count({b, a}) == 1);
  }
}

TEST_CASE("scale_labels") {
  const SceneDataset ds = bare_scene(3);
  const SceneDataset same = scale_labels(ds, 1.0);
  for (int k = 0; k < 3; ++k) CHECK(same_bits(same.frames[k].label->points, ds.frames[k].label->points));
  CHECK(same.label_scale == 1.0);

  const SceneDataset up = scale_labels(ds, 100.0);
  CHECK(up.label_scale == 100.0);
  const SceneDataset back = scale_labels(up, 0.01);
  CHECK(back.label_scale == doctest::Approx(1.0).epsilon(1e-12));
  for (int k = 0; k < 3; ++k) {
    const auto& a = back.frames[k].label->points;
    const auto& b = ds.frames[k].label->points;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a[i] - b[i]) <= 1e-6 * std::max(std::abs(b[i]), 1e-12));
    }
  }
  CHECK_THROWS_AS(scale_labels(ds, 0.0), ConfigError);
  CHECK_THROWS_AS(scale_labels(ds, -2.0), ConfigError);
}

TEST_CASE("split sizes, determinism and errors") {
  const SceneDataset ds = bare_scene(10);
  const SplitSpec s = split(ds, 0.2, 5);
  CHECK(s.heldout.size() == 2);
  CHECK(s.train.size() == 8);
  std::vector<int> all = s.train;
  all.insert(all.end(), s.heldout.begin(), s.heldout.end());
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  const SplitSpec t = split(ds, 0.2, 5);
  CHECK(t.train == s.train);
  CHECK(t.heldout == s.heldout);

  CHECK(split(ds, 0.01, 1).heldout.size() == 1);
  CHECK_THROWS_AS(split(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split(ds, 0.99, 1), ConfigError);
  CHECK_THROWS_AS(split(bare_scene(1), 0.5, 1), ConfigError);

  // unlabelled frames are not split
  SceneDataset partial = bare_scene(4);
  partial.frames[2].label.reset();
  const SplitSpec p = split(partial, 0.3, 2);
  CHECK(p.heldout.size() + p.train.size() == 3);
  CHECK(std::find(p.train.begin(), p.train.end(), 2) == p.train.end());
  CHECK(std::find(p.heldout.begin(), p.heldout.end(), 2) == p.heldout.end());
}

TEST_CASE("split holds out each frame with the nominal frequency") {
  const SceneDataset ds = bare_scene(10);
  std::vector<int> counts(10, 0);
  const int seeds = 1000;
  for (int seed = 0; seed < seeds; ++seed) {
    for (int id : split(ds, 0.2, static_cast<std::uint64_t>(seed)).heldout) ++counts[id];
  }
  for (int c : counts) {
    const double freq = static_cast<double>(c) / seeds;
    CHECK(freq >= 0.15);
    CHECK(freq <= 0.25);
  }
}

TEST_CASE("synth: camera facing a z = 1 wall sees (0,0,1) at the centre pixel") {
  SynthSpec s;
  s.height = 5;
  s.width = 7;
  s.focal = 3.0;
  s.room_min = Vector3d(-2.0, -2.0, -2.0);
  s.room_max = Vector3d(2.0, 2.0, 1.0);
  s.poses = {Sim3::identity()};
  const SynthScene scene = synth_scene(s, 0);
  const PointMap& label = *scene.dataset.frames[0].label;
  const Vector3d centre = label.point(2 * 7 + 3);
  CHECK(centre.x() == 0.0);
  CHECK(centre.y() == 0.0);
  CHECK(centre.z() == 1.0);
  // neighbouring pixel: one pixel right is 1/f to the right on the z = 1 wall
  const Vector3d right = label.point(2 * 7 + 4);
  CHECK(right.x() == doctest::Approx(1.0 / 3.0));
  CHECK(right.z() == 1.0);
  CHECK(label.valid_count() == 35);
}

TEST_CASE("synth: every label point lies on a wall along its pixel ray") {
  SynthSpec s = small_spec(3, 9, 11);
  const SynthScene scene = synth_scene(s, 4);
  for (std::size_t k = 0; k < 3; ++k) {
    const Sim3& pose = scene.cam_to_world[k];
    CHECK(orthonormality_error(pose.rotation) < 1e-12);
    CHECK(pose.rotation.determinant() == doctest::Approx(1.0));
    const PointMap& label = *scene.dataset.frames[k].label;
    for (std::size_t v = 0; v < 9; ++v) {
      for (std::size_t u = 0; u < 11; ++u) {
        const Vector3d p = label.point(v * 11 + u);
        double wall_gap = 1e9;
        for (int a = 0; a < 3; ++a) {
          wall_gap = std::min({wall_gap, std::abs(p(a) - s.room_min(a)), std::abs(p(a) - s.room_max(a))});
          CHECK(p(a) >= s.room_min(a) - 1e-12);
          CHECK(p(a) <= s.room_max(a) + 1e-12);
        }
        CHECK(wall_gap == 0.0);
        // the camera-frame point is a positive multiple of the pixel ray
        const Vector3d cam = inverse(pose).apply(p);
        const Vector3d ray = pixel_ray(u, v, 9, 11, scene.focal);
        CHECK(cam.z() > 0.0);
        CHECK((cam / cam.z() - ray).norm() < 1e-9);
      }
    }
  }
}

TEST_CASE("synth: pairwise maps recover the ground-truth poses") {
  for (double jitter : {0.0, 0.3}) {
    SynthSpec s = small_spec(6, 10, 12);
    s.pair_scale_jitter = jitter;
    s.pair_invalid_fraction = 0.05;
    const SynthScene scene = synth_scene(s, 21);
    const AlignmentResult r = global_align(scene.pairs, 0);
    REQUIRE(r.frames.size() == 6);
    CHECK(r.warnings.empty());
    const auto self_maps = self_maps_from_pairs(scene.pairs);
    // world = camera 0 at the scale of its own self map
    const double s0 = self_maps.at(0).point(0).norm() /
                      inverse(scene.cam_to_world[0]).apply(scene.dataset.frames[0].label->point(0)).norm();
    for (int k = 0; k < 6; ++k) {
      // camera k relative to camera 0, at the origin's pair scale
      Sim3 rel = compose(inverse(scene.cam_to_world[0]), scene.cam_to_world[k]);
      rel.translation *= s0;
      const Sim3& got = r.frames.at(k).to_world;
      CHECK((got.rotation - rel.rotation).norm() < 1e-6);
      CHECK((got.translation - rel.translation).norm() < 1e-6);
      // scale depends on frame k's own pair scale; check it through the points
      const PointMap& self = self_maps.at(k);
      const PointMap& label = *scene.dataset.frames[k].label;
      double worst = 0.0;
      for (std::size_t i = 0; i < self.pixels(); ++i) {
        if (!self.is_valid(i)) continue;
        const Vector3d expect = s0 * inverse(scene.cam_to_world[0]).apply(label.point(i));
        worst = std::max(worst, (got.apply(self.point(i)) - expect).norm());
      }
      CHECK(worst < 1e-6);
    }
    for (const auto& e : r.residuals) CHECK(e.rmse < 1e-9);
  }
}

TEST_CASE("synth: determinism, teacher files and errors") {
  SynthSpec s = small_spec(3);
  s.label_invalid_fraction = 0.1;
  s.pair_invalid_fraction = 0.1;
  const SynthScene a = synth_scene(s, 9), b = synth_scene(s, 9), c = synth_scene(s, 10);
  for (int k = 0; k < 3; ++k) {
    CHECK(a.dataset.frames[k].image.data == b.dataset.frames[k].image.data);
    CHECK(same_bits(a.dataset.frames[k].label->points, b.dataset.frames[k].label->points));
    CHECK(a.dataset.frames[k].label->valid == b.dataset.frames[k].label->valid);
  }
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(same_bits(a.pairs[i].map_src.points, b.pairs[i].map_src.points));
    CHECK(a.pairs[i].map_src.valid == b.pairs[i].map_src.valid);
  }
  CHECK_FALSE(same_bits(a.dataset.frames[1].label->points, c.dataset.frames[1].label->points));

  const fs::path dir = fresh_dir("teacher");
  save_teacher_pairs(a.pairs, dir);
  const PairSpec found = discover_teacher_pairs(dir);
  CHECK(found.pairs.size() == a.pairs.size());
  const auto loaded = load_teacher_pairs(dir, found);
  for (const auto& p : loaded) {
    const auto it = std::find_if(a.pairs.begin(), a.pairs.end(), [&](const PairPrediction& q) {
      return q.ref_id == p.ref_id && q.src_id == p.src_id;
    });
    REQUIRE(it != a.pairs.end());
    CHECK(p.map_ref.valid == it->map_ref.valid);
    CHECK(p.map_src.frame_id == p.src_id);
  }
  CHECK_THROWS_AS(load_teacher_pairs(dir, PairSpec{{{0, 2}, {5, 6}}}), LoadError);
  CHECK_THROWS_AS(discover_teacher_pairs(fresh_dir("no_teacher")), LoadError);

  SynthSpec bad = small_spec(2);
  bad.arc_radius = 2.95;  // within 0.2 of the z walls
  CHECK_THROWS_AS(synth_scene(bad, 0), GenerationError);
  bad.arc_radius = 10.0;
  CHECK_THROWS_AS(synth_scene(bad, 0), GenerationError);
  SynthSpec none = small_spec(0);
  CHECK_THROWS_AS(synth_scene(none, 0), ConfigError);
}

TEST_CASE("png round trip is lossless for 8-bit values") {
  const fs::path dir = fresh_dir("png");
  Image img(3, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37) % 256) / 255.f;
  write_png(dir / "a.png", img);
  const Image back = read_png(dir / "a.png");
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  CHECK(back.data == img.data);
  CHECK(resize_bilinear(img, 3, 5).data == img.data);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), LoadError);
}
