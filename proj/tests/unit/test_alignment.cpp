#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "scd/alignment/global_align.hpp"
#include "scd/alignment/ply.hpp"
#include "scd/alignment/umeyama.hpp"
#include "scd/errors.hpp"
#include "support/alignment_oracle.hpp"

using namespace scd;
using scd::testing::make_oracle_scene;
using scd::testing::oracle_pairs;
using scd::testing::random_rotation;
using Eigen::Vector3d;

namespace fs = std::filesystem;

namespace {

std::vector<Vector3d> random_points(std::size_t n, std::mt19937_64& rng, double range = 3.0) {
  std::uniform_real_distribution<double> u(-range, range);
  std::vector<Vector3d> pts(n);
  for (auto& p : pts) p = Vector3d(u(rng), u(rng), u(rng));
  return pts;
}

std::vector<Vector3d> transformed(const Sim3& t, const std::vector<Vector3d>& pts) {
  std::vector<Vector3d> out;
  for (const auto& p : pts) out.push_back(t.apply(p));
  return out;
}

double sum_squared(const Sim3& t, const std::vector<Vector3d>& src,
                   const std::vector<Vector3d>& dst) {
  double s = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) s += (t.apply(src[k]) - dst[k]).squaredNorm();
  return s;
}

double max_point_error(const PointMap& a, const PointMap& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.pixels(); ++i) {
    if (a.is_valid(i)) worst = std::max(worst, (a.point(i) - b.point(i)).norm());
  }
  return worst;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("scd_test_alignment_" + name);
}

}  // namespace

TEST_CASE("umeyama examples") {
  std::mt19937_64 rng(1);
  const auto src = random_points(10, rng);

  const Sim3 same = umeyama(src, src);
  CHECK((same.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(same.scale == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.translation.norm() < 1e-12);

  std::vector<Vector3d> shifted;
  for (const auto& p : src) shifted.push_back(p + Vector3d(1, 2, 3));
  const Sim3 t = umeyama(src, shifted);
  CHECK((t.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(t.scale == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((t.translation - Vector3d(1, 2, 3)).norm() < 1e-12);
}

TEST_CASE("umeyama recovers 100 random similarities") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> scale(0.5, 2.0), shift(-5.0, 5.0);
  double worst_rmse = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Sim3 truth;
    truth.rotation = random_rotation(rng);
    truth.scale = scale(rng);
    truth.translation = Vector3d(shift(rng), shift(rng), shift(rng));
    const auto src = random_points(50, rng);
    const auto dst = transformed(truth, src);
    const Sim3 est = umeyama(src, dst);
    double sum = 0.0;
    for (const auto& p : src) sum += (est.apply(p) - truth.apply(p)).squaredNorm();
    worst_rmse = std::max(worst_rmse, std::sqrt(sum / 50.0));
    CHECK(est.scale == doctest::Approx(truth.scale).epsilon(1e-10));
    CHECK(est.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(worst_rmse <= 1e-9);
}

TEST_CASE("umeyama without scale fixes s to one") {
  std::mt19937_64 rng(3);
  Sim3 truth;
  truth.rotation = random_rotation(rng);
  truth.translation = Vector3d(0.5, -1, 2);
  const auto src = random_points(20, rng);
  const Sim3 est = umeyama(src, transformed(truth, src), false);
  CHECK(est.scale == 1.0);
  CHECK((est.rotation - truth.rotation).norm() < 1e-10);
}

TEST_CASE("umeyama rejects degenerate inputs") {
  const std::vector<Vector3d> two{{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(umeyama(two, two), DegenerateError);

  std::vector<Vector3d> line;
  for (int k = 0; k < 10; ++k) line.push_back(Vector3d(k, 2 * k, -k));
  CHECK_THROWS_AS(umeyama(line, line), DegenerateError);

  const std::vector<Vector3d> same(5, Vector3d(1, 1, 1));
  CHECK_THROWS_AS(umeyama(same, same), DegenerateError);

  std::mt19937_64 rng(4);
  const auto src = random_points(6, rng);
  const std::vector<Vector3d> fewer(src.begin(), src.begin() + 5);
  CHECK_THROWS_AS(umeyama(src, fewer), DegenerateError);

  // A plane is enough.
  std::vector<Vector3d> plane;
  for (int k = 0; k < 9; ++k) plane.push_back(Vector3d(k % 3, k / 3, 0));
  CHECK_NOTHROW(umeyama(plane, plane));
}

TEST_CASE("umeyama handles reflection-like data with det +1") {
  std::mt19937_64 rng(5);
  const auto src = random_points(30, rng);
  std::vector<Vector3d> mirrored;
  for (const auto& p : src) mirrored.push_back(Vector3d(p.x(), p.y(), -p.z()));
  const Sim3 t = umeyama(src, mirrored);
  CHECK(t.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(scd::orthonormality_error(t.rotation) < 1e-12);
}

TEST_CASE("umeyama beats 1000 random candidates on noisy data") {
  std::mt19937_64 rng(6);
  Sim3 truth;
  truth.rotation = random_rotation(rng);
  truth.scale = 1.3;
  truth.translation = Vector3d(1, -2, 0.5);
  const auto src = random_points(40, rng);
  auto dst = transformed(truth, src);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& p : dst) p += Vector3d(noise(rng), noise(rng), noise(rng));

  const Sim3 best = umeyama(src, dst);
  const double best_cost = sum_squared(best, src, dst);
  std::normal_distribution<double> small(0.0, 0.02);
  std::uniform_real_distribution<double> scale(0.5, 2.0), shift(-3.0, 3.0);
  for (int k = 0; k < 1000; ++k) {
    Sim3 cand;
    if (k % 2 == 0) {
      // Perturbation of the optimum.
      const Eigen::AngleAxisd da(small(rng), Vector3d(small(rng), small(rng), 1.0).normalized());
      cand.rotation = da.toRotationMatrix() * best.rotation;
      cand.scale = best.scale * (1.0 + small(rng));
      cand.translation = best.translation + Vector3d(small(rng), small(rng), small(rng));
    } else {
      cand.rotation = random_rotation(rng);
      cand.scale = scale(rng);
      cand.translation = Vector3d(shift(rng), shift(rng), shift(rng));
    }
    CHECK(best_cost <= sum_squared(cand, src, dst));
  }
}

TEST_CASE("sim3 algebra") {
  std::mt19937_64 rng(7);
  Sim3 t;
  t.rotation = random_rotation(rng);
  t.scale = 1.7;
  t.translation = Vector3d(-1, 4, 2);

  PointMap pm(3, 4, 5);
  std::uniform_real_distribution<double> u(-2, 2);
  for (std::size_t i = 0; i < pm.pixels(); ++i) {
    pm.set_point(i, Vector3d(u(rng), u(rng), u(rng)));
    pm.valid[i] = i % 4 != 0;
  }
  pm.points[0] = std::numeric_limits<double>::quiet_NaN();  // invalid pixel

  const PointMap same = apply_sim3(Sim3::identity(), pm);
  CHECK(same.valid == pm.valid);
  CHECK(max_point_error(pm, same) == 0.0);

  const PointMap round = apply_sim3(compose(t, inverse(t)), pm);
  CHECK(max_point_error(pm, round) <= 1e-9);

  const PointMap moved = apply_sim3(t, pm);
  CHECK(moved.valid == pm.valid);
  CHECK(std::isnan(moved.points[0]));
  for (std::size_t i = 1; i < pm.pixels(); ++i) {
    if (!pm.is_valid(i)) continue;
    // Brute-force per-point arithmetic.
    for (int r = 0; r < 3; ++r) {
      double v = t.translation(r);
      for (int c = 0; c < 3; ++c) v += t.scale * t.rotation(r, c) * pm.points[3 * i + c];
      CHECK(moved.points[3 * i + r] == doctest::Approx(v).epsilon(1e-13));
    }
  }

  // Long chains stay orthonormal with det +1.
  Sim3 chain = Sim3::identity();
  for (int k = 0; k < 5000; ++k) {
    Sim3 step;
    step.rotation = random_rotation(rng);
    chain = compose(chain, step);
    REQUIRE(orthonormality_error(chain.rotation) <= 1e-9);
  }
  CHECK(chain.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::Matrix3d drifted = random_rotation(rng);
  drifted(0, 1) += 1e-4;
  const Eigen::Matrix3d fixed = reorthonormalize(drifted);
  CHECK(orthonormality_error(fixed) < 1e-12);
  CHECK(fixed.determinant() == doctest::Approx(1.0));
}

TEST_CASE("estimate_edge examples") {
  std::mt19937_64 rng(8);
  const auto scene = make_oracle_scene(2, 6, 7, rng);

  SUBCASE("same frame construction gives identity") {
    PairPrediction pair;
    pair.ref_id = 1;
    pair.src_id = 0;
    pair.map_ref = scene.in_frame(1, 1);
    pair.map_src = scene.in_frame(0, 0);  // src points already in src frame
    const auto e = estimate_edge(pair, scene.in_frame(0, 0));
    CHECK((e.transform.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(e.transform.translation.norm() < 1e-12);
    CHECK(e.rmse < 1e-12);
  }
  SUBCASE("known relative pose") {
    PairPrediction pair;
    pair.ref_id = 0;
    pair.src_id = 1;
    pair.map_ref = scene.in_frame(0, 0);
    pair.map_src = scene.in_frame(1, 0);
    const auto e = estimate_edge(pair, scene.in_frame(1, 1));
    const Sim3 truth = compose(inverse(scene.cam_to_world[0]), scene.cam_to_world[1]);
    CHECK((e.transform.rotation - truth.rotation).norm() < 1e-6);
    CHECK((e.transform.translation - truth.translation).norm() < 1e-6);
    CHECK(e.transform.scale == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(e.points == scene.in_frame(1, 1).valid_count());
  }
  SUBCASE("too few jointly valid pixels") {
    PairPrediction pair;
    pair.ref_id = 0;
    pair.src_id = 1;
    pair.map_ref = scene.in_frame(0, 0);
    pair.map_src = scene.in_frame(1, 0);
    PointMap self = scene.in_frame(1, 1);
    std::fill(self.valid.begin(), self.valid.end(), 0);
    self.valid[0] = self.valid[1] = 1;
    pair.map_src.valid[0] = pair.map_src.valid[1] = 1;
    CHECK_THROWS_AS(estimate_edge(pair, self), DegenerateError);
  }
}

TEST_CASE("global_align on a single frame") {
  std::mt19937_64 rng(9);
  const auto scene = make_oracle_scene(1, 4, 4, rng);
  const PointMap self = scene.in_frame(0, 0);
  const auto result = global_align({}, 0, {{0, self}});
  REQUIRE(result.frames.size() == 1);
  const auto& f = result.frames.at(0);
  CHECK(f.to_world.rotation == Eigen::Matrix3d::Identity());
  CHECK(f.to_world.translation == Vector3d::Zero());
  CHECK(f.to_world.scale == 1.0);
  CHECK(f.world.points == self.points);
  CHECK(f.world.valid == self.valid);
  CHECK(result.residuals.empty());
}

TEST_CASE("global_align recovers a six-frame chain") {
  std::mt19937_64 rng(10);
  const auto scene = make_oracle_scene(6, 8, 10, rng);
  const auto pairs = oracle_pairs(scene, 2, rng);
  const auto result = global_align(pairs, 0);
  REQUIRE(result.frames.size() == 6);
  CHECK(result.warnings.empty());

  const auto& origin = result.frames.at(0);
  CHECK(origin.parent == -1);
  CHECK(origin.to_world.rotation == Eigen::Matrix3d::Identity());
  CHECK(origin.to_world.translation == Vector3d::Zero());
  CHECK(origin.to_world.scale == 1.0);

  for (std::size_t f = 0; f < 6; ++f) {
    CHECK(max_point_error(result.frames.at(static_cast<int>(f)).world, scene.in_frame(f, 0)) <= 1e-6);
  }
  // BFS with ascending neighbours: 1 and 2 hang off 0, 3 off 1, 4 and 5 off 2 and 3.
  CHECK(result.frames.at(1).parent == 0);
  CHECK(result.frames.at(2).parent == 0);
  CHECK(result.frames.at(3).parent == 1);
  CHECK(result.frames.at(4).parent == 2);
  CHECK(result.frames.at(5).parent == 3);

  CHECK(result.residuals.size() == pairs.size());
  for (const auto& r : result.residuals) CHECK(r.rmse <= 1e-9);
  for (std::size_t k = 1; k < result.residuals.size(); ++k) {
    CHECK(std::make_pair(result.residuals[k - 1].ref_id, result.residuals[k - 1].src_id) <
          std::make_pair(result.residuals[k].ref_id, result.residuals[k].src_id));
  }

  // Another origin: world is that frame's camera frame.
  const auto from3 = global_align(pairs, 3);
  for (std::size_t f = 0; f < 6; ++f) {
    CHECK(max_point_error(from3.frames.at(static_cast<int>(f)).world, scene.in_frame(f, 3)) <= 1e-6);
  }
}

TEST_CASE("global_align absorbs per-pair teacher scale") {
  std::mt19937_64 rng(11);
  const auto scene = make_oracle_scene(5, 6, 6, rng);
  const auto pairs = oracle_pairs(scene, 2, rng, 0.3);
  const auto result = global_align(pairs, 0);
  // World scale is that of the origin's self map, taken from pair (0, 1).
  const double s0 = pairs[0].map_ref.point(0).norm() / scene.in_frame(0, 0).point(0).norm();
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(max_point_error(result.frames.at(static_cast<int>(f)).world, scene.in_frame(f, 0, s0)) <= 1e-6);
  }
  for (const auto& r : result.residuals) CHECK(r.rmse <= 1e-9);
}

TEST_CASE("noise on one map shows up in that edge's residual") {
  std::mt19937_64 rng(12);
  const double sigma = 0.01;
  const auto scene = make_oracle_scene(6, 16, 16, rng, 0.0);
  auto pairs = oracle_pairs(scene, 2, rng);
  std::normal_distribution<double> noise(0.0, sigma);
  auto& noisy = pairs[0];  // (0, 1)
  REQUIRE(noisy.ref_id == 0);
  REQUIRE(noisy.src_id == 1);
  for (double& v : noisy.map_src.points) v += noise(rng);
  const auto result = global_align(pairs, 0);
  const auto it = std::find_if(result.residuals.begin(), result.residuals.end(),
                               [](const EdgeResidual& r) { return r.ref_id == 0 && r.src_id == 1; });
  REQUIRE(it != result.residuals.end());
  CHECK(it->rmse >= 0.5 * sigma);
  CHECK(it->rmse <= 2.0 * sigma);
}

TEST_CASE("disconnected graphs name their components") {
  std::mt19937_64 rng(13);
  const auto scene = make_oracle_scene(4, 4, 4, rng, 0.0);
  std::vector<PairPrediction> pairs;
  for (auto [a, b] : {std::pair{0, 1}, {1, 0}, {2, 3}, {3, 2}}) {
    PairPrediction p;
    p.ref_id = a;
    p.src_id = b;
    p.map_ref = scene.in_frame(a, a);
    p.map_src = scene.in_frame(b, a);
    pairs.push_back(p);
  }
  try {
    global_align(pairs, 0);
    FAIL("expected AlignmentError");
  } catch (const AlignmentError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("{0, 1}") != std::string::npos);
    CHECK(msg.find("{2, 3}") != std::string::npos);
  }
  CHECK_THROWS_AS(global_align(pairs, 7), AlignmentError);
}

TEST_CASE("degenerate edges are dropped with a warning") {
  std::mt19937_64 rng(14);
  const auto scene = make_oracle_scene(4, 6, 6, rng, 0.0);
  auto pairs = oracle_pairs(scene, 2, rng);
  auto it = std::find_if(pairs.begin(), pairs.end(),
                         [](const PairPrediction& p) { return p.ref_id == 1 && p.src_id == 2; });
  REQUIRE(it != pairs.end());
  std::fill(it->map_src.valid.begin(), it->map_src.valid.end(), 0);
  it->map_src.valid[0] = it->map_src.valid[5] = 1;

  const auto result = global_align(pairs, 0);
  CHECK(result.frames.size() == 4);
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("(1,2)") != std::string::npos);
  for (const auto& r : result.residuals) CHECK_FALSE((r.ref_id == 1 && r.src_id == 2));
  CHECK(result.residuals.size() == pairs.size() - 1);
}

TEST_CASE("global_align does not depend on pair order") {
  std::mt19937_64 rng(15);
  const auto scene = make_oracle_scene(6, 6, 6, rng);
  auto pairs = oracle_pairs(scene, 2, rng, 0.2);
  const auto a = global_align(pairs, 0);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const auto b = global_align(pairs, 0);
  for (const auto& [id, f] : a.frames) {
    const auto& g = b.frames.at(id);
    CHECK(f.to_world.rotation == g.to_world.rotation);
    CHECK(f.to_world.translation == g.to_world.translation);
    CHECK(f.to_world.scale == g.to_world.scale);
  }
  CHECK(alignment_report(a).dump() == alignment_report(b).dump());

  auto dup = pairs;
  dup.push_back(pairs[0]);
  CHECK_THROWS_AS(global_align(dup, 0), ContractError);
}

TEST_CASE("alignment_residual matches the report") {
  std::mt19937_64 rng(16);
  const auto scene = make_oracle_scene(4, 5, 5, rng);
  const auto pairs = oracle_pairs(scene, 1, rng);
  const auto result = global_align(pairs, 0);
  std::map<int, Sim3> world;
  for (const auto& [id, f] : result.frames) world[id] = f.to_world;
  const auto again = alignment_residual(pairs, world);
  REQUIRE(again.size() == result.residuals.size());
  for (std::size_t k = 0; k < again.size(); ++k) CHECK(again[k].rmse == result.residuals[k].rmse);

  // A wrong transform for frame 2 shows up on its edges only.
  world[2].translation += Vector3d(0.1, 0, 0);
  for (const auto& r : alignment_residual(pairs, world)) {
    const bool touches = r.ref_id == 2 || r.src_id == 2;
    CHECK((r.rmse > 0.05) == touches);
  }
  const auto j = sim3_to_json(world[2]);
  const Sim3 back = sim3_from_json(j);
  CHECK(back.rotation == world[2].rotation);
  CHECK(back.translation == world[2].translation);
}

TEST_CASE("pointmap files round-trip byte-identically") {
  std::mt19937_64 rng(17);
  const auto scene = make_oracle_scene(1, 5, 6, rng, 0.3);
  PointMap pm = scene.in_frame(0, 0);
  pm.frame_id = 12;
  for (std::size_t i = 0; i < pm.pixels(); ++i) {
    if (!pm.is_valid(i)) pm.points[3 * i] = std::numeric_limits<double>::quiet_NaN();
  }
  const fs::path a = temp_path("a.pts"), b = temp_path("b.pts");
  save_pointmap(pm, a);
  const PointMap loaded = load_pointmap(a);
  CHECK(loaded.frame_id == 12);
  CHECK(loaded.height == 5);
  CHECK(loaded.width == 6);
  CHECK(loaded.valid == pm.valid);
  save_pointmap(loaded, b);
  CHECK(slurp(a) == slurp(b));
  CHECK(max_point_error(pm, loaded) < 1e-5);

  std::string bytes = slurp(a);
  SUBCASE("bad mask byte") {
    bytes[bytes.size() - 1] = 7;
    std::ofstream(b, std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_pointmap(b), LoadError);
  }
  SUBCASE("truncated") {
    std::ofstream(b, std::ios::binary) << bytes.substr(0, bytes.size() - 4);
    CHECK_THROWS_AS(load_pointmap(b), LoadError);
  }
  SUBCASE("non-finite point under a set mask is invalid") {
    const std::size_t header = bytes.find('\n') + 1;
    const std::size_t pixel = static_cast<std::size_t>(
        std::find(pm.valid.begin(), pm.valid.end(), 1) - pm.valid.begin());
    const float inf = std::numeric_limits<float>::infinity();
    std::memcpy(&bytes[header + 12 * pixel], &inf, 4);
    std::ofstream(b, std::ios::binary) << bytes;
    CHECK_FALSE(load_pointmap(b).is_valid(pixel));
  }
  fs::remove(a);
  fs::remove(b);
}

TEST_CASE("ply export") {
  std::mt19937_64 rng(18);
  const auto scene = make_oracle_scene(1, 4, 5, rng, 0.25);
  const PointMap pm = scene.in_frame(0, 0);
  std::vector<std::uint8_t> rgb(pm.pixels() * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i);
  const fs::path path = temp_path("cloud.ply");
  const std::size_t masked = pm.pixels() - pm.valid_count();
  CHECK(write_ply(path, pm, rgb) == pm.pixels() - masked);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "ply");
  std::getline(in, line);
  CHECK(line == "format ascii 1.0");
  std::size_t declared = 0;
  std::vector<std::string> props;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "element") {
      std::string name;
      ss >> name >> declared;
      CHECK(name == "vertex");
    } else if (kw == "property") {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
    }
  }
  CHECK(props == std::vector<std::string>{"x", "y", "z", "red", "green", "blue"});
  CHECK(declared == pm.valid_count());
  std::size_t rows = 0;
  std::size_t pixel = 0;
  while (std::getline(in, line)) {
    while (!pm.is_valid(pixel)) ++pixel;
    std::istringstream ss(line);
    double x, y, z;
    unsigned r, g, b;
    REQUIRE(static_cast<bool>(ss >> x >> y >> z >> r >> g >> b));
    CHECK(x == doctest::Approx(pm.point(pixel).x()).epsilon(1e-7));
    CHECK(r == rgb[3 * pixel]);
    ++rows;
    ++pixel;
  }
  CHECK(rows == declared);
  CHECK_THROWS_AS(write_ply(path, pm, std::vector<std::uint8_t>(5)), DimensionError);
  fs::remove(path);
}
