// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "taskmod/common/error.hpp"
#include "taskmod/synthdata/batch.hpp"
#include "taskmod/synthdata/synth.hpp"

using namespace taskmod;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("taskmod_synth_" + name);
  fs::remove_all(p);
  return p;
}

Scene flat_background(int s) {
  Scene sc;
  sc.size = s;
  sc.seed = 3;
  sc.background = {0.0, 0.0, 0.1};
  sc.background_albedo = {0.5, 0.5, 0.5};
  return sc;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("generate_scene: deterministic, 2-6 shapes, unique ranks, bounded slopes") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene a = generate_scene(seed, 64);
    const Scene b = generate_scene(seed, 64);
    REQUIRE(a.shapes.size() == b.shapes.size());
    CHECK(a.shapes.size() >= 2);
    CHECK(a.shapes.size() <= 6);
    std::set<int> ranks;
    for (std::size_t i = 0; i < a.shapes.size(); ++i) {
      const auto& s = a.shapes[i];
      CHECK(s.cx == b.shapes[i].cx);
      CHECK(s.plane.base == b.shapes[i].plane.base);
      ranks.insert(s.z_rank);
      CHECK(2.0 * s.a >= 64.0 / 6.0);
      CHECK(2.0 * s.a <= 64.0 / 2.0);
      CHECK(plane_normal(s.plane)[2] >= 0.8 - 1e-12);
    }
    CHECK(ranks.size() == a.shapes.size());
    CHECK(plane_normal(a.background)[2] >= 0.8 - 1e-12);
  }
  CHECK(generate_scene(1, 64).shapes[0].cx != generate_scene(2, 64).shapes[0].cx);
  CHECK_THROWS_AS(generate_scene(0, 15), ConfigError);
}

TEST_CASE("render: background-only scene") {
  Scene sc = flat_background(20);
  sc.background = {0.3, -0.2, 0.1};
  const Sample s = render(sc);
  const auto n = plane_normal(sc.background);
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK(s.edge[i] == 0);
    CHECK(s.seg[i] == 0);
    CHECK(s.valid[i] == 0);
    for (std::size_t c = 0; c < 3; ++c) CHECK(s.normals[c * 400 + i] == static_cast<float>(n[c]));
  }
  sc.background = {0.0, 0.0, 0.1};
  const Sample flat = render(sc);
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK(flat.normals[i] == 0.0f);
    CHECK(flat.normals[400 + i] == 0.0f);
    CHECK(flat.normals[800 + i] == 1.0f);
  }
}

TEST_CASE("render: centred square gives a boundary ring of edges") {
  Scene sc = flat_background(16);
  SceneShape sq;
  sq.kind = ShapeKind::Rect;
  sq.cx = 8.0;
  sq.cy = 8.0;
  sq.a = 4.0;  // covers pixel centres 4.5 .. 11.5
  sq.b = 4.0;
  sq.z_rank = 1;
  sq.plane = {0.1, 0.2, 1.0};
  sq.albedo = {0.9, 0.1, 0.1};
  sc.shapes.push_back(sq);
  const Sample s = render(sc);
  // brute-force 4-neighbourhood oracle on the inside test
  auto inside = [](int x, int y) { return x >= 4 && x <= 11 && y >= 4 && y <= 11; };
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      bool ring = false;
      const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx[k], ny = y + dy[k];
        if (nx < 0 || ny < 0 || nx >= 16 || ny >= 16) continue;
        ring |= inside(nx, ny) != inside(x, y);
      }
      const auto i = static_cast<std::size_t>(y * 16 + x);
      CHECK(s.edge[i] == (ring ? 1 : 0));
      CHECK(s.seg[i] == (inside(x, y) ? 2 : 0));
      CHECK(s.valid[i] == (inside(x, y) ? 1 : 0));
    }
  }
}

TEST_CASE("render: sample invariants over random scenes") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene sc = generate_scene(seed, 32);
    const Sample s = render(sc);
    const auto owner = owner_map(sc);
    const std::size_t px = 32 * 32;
    for (std::size_t i = 0; i < px; ++i) {
      CHECK(s.depth[i] > 0.0f);
      CHECK(s.seg[i] <= 3);
      const double n0 = s.normals[i], n1 = s.normals[px + i], n2 = s.normals[2 * px + i];
      CHECK(std::abs(std::sqrt(n0 * n0 + n1 * n1 + n2 * n2) - 1.0) < 1e-6);
      CHECK(n2 > 0.0);
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(s.image[c * px + i] >= 0.0f);
        CHECK(s.image[c * px + i] <= 1.0f);
      }
      // edge iff a 4-neighbour has another owner
      const int x = static_cast<int>(i % 32), y = static_cast<int>(i / 32);
      bool diff = false;
      if (x > 0) diff |= owner[i - 1] != owner[i];
      if (x < 31) diff |= owner[i + 1] != owner[i];
      if (y > 0) diff |= owner[i - 32] != owner[i];
      if (y < 31) diff |= owner[i + 32] != owner[i];
      CHECK(s.edge[i] == (diff ? 1 : 0));
      // depth = z_far - h of the owner's plane
      const Plane& pl = owner[i] >= 0 ? sc.shapes[static_cast<std::size_t>(owner[i])].plane : sc.background;
      const double h = pl.base + pl.p * ((x + 0.5) / 32 - 0.5) + pl.q * ((y + 0.5) / 32 - 0.5);
      CHECK(s.depth[i] == static_cast<float>(kZFar - h));
    }
  }
}

TEST_CASE("dataset: reproducible across worker counts and round-trips bitwise") {
  const Dataset a = generate_dataset(7, 32, 3, 2, 1);
  const Dataset b = generate_dataset(7, 32, 3, 2, 3);
  REQUIRE(a.train.size() == 3);
  REQUIRE(a.test.size() == 2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.train[i] == b.train[i]);
  CHECK(a.test[1] == render(generate_scene(7 + 4, 32)));

  const auto dir = scratch("roundtrip");
  write_dataset(dir, a);
  const Dataset r = read_dataset(dir);
  CHECK(r.manifest.n_train == 3);
  CHECK(r.manifest.seed == 7);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.train[i] == a.train[i]);
  for (std::size_t i = 0; i < 2; ++i) CHECK(r.test[i] == a.test[i]);

  const auto dir2 = scratch("roundtrip2");
  write_dataset(dir2, generate_dataset(7, 32, 3, 2, 2));
  CHECK(bytes_of(dir / "train.mtsb") == bytes_of(dir2 / "train.mtsb"));
  CHECK(bytes_of(dir / "manifest.json") == bytes_of(dir2 / "manifest.json"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("dataset: corrupt magic, truncation, trailing bytes, count mismatch") {
  const auto dir = scratch("corrupt");
  write_dataset(dir, generate_dataset(1, 16, 2, 1, 1));
  const auto train = dir / "train.mtsb";
  auto bytes = bytes_of(train);

  auto rewrite = [&](const std::vector<char>& b) {
    std::ofstream os(train, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto bad = bytes;
  bad[0] = 'X';
  rewrite(bad);
  CHECK_THROWS_WITH_AS(read_split(train), doctest::Contains("magic"), FormatError);
  rewrite(std::vector<char>(bytes.begin(), bytes.end() - 5));
  CHECK_THROWS_WITH_AS(read_split(train), doctest::Contains("truncated"), FormatError);
  auto longer = bytes;
  longer.push_back(0);
  rewrite(longer);
  CHECK_THROWS_WITH_AS(read_split(train), doctest::Contains("trailing"), FormatError);
  rewrite(bytes);
  CHECK(read_split(train).size() == 2);

  // manifest claims three training samples
  {
    std::ifstream is(dir / "manifest.json");
    auto j = nlohmann::json::parse(is);
    j["n_train"] = 3;
    std::ofstream os(dir / "manifest.json");
    os << j.dump();
  }
  CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("manifest lists 3"), FormatError);
  CHECK_THROWS_AS(read_split(dir / "absent.mtsb"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("make_batch stacks samples in order") {
  const Dataset d = generate_dataset(2, 16, 3, 0, 1);
  const Batch b = make_batch(d.train, {2, 0});
  CHECK(b.images.shape == ad::Shape{2, 3, 16, 16});
  CHECK(b.targets.seg.shape == ad::Shape{2, 1, 16, 16});
  CHECK(b.images[0] == static_cast<double>(d.train[2].image[0]));
  CHECK(b.targets.depth[256] == static_cast<double>(d.train[0].depth[0]));
  CHECK(b.targets.normals[3 * 256 + 256] == static_cast<double>(d.train[0].normals[256]));
  CHECK_THROWS_AS(make_batch(d.train, {}), ConfigError);
  CHECK_THROWS_AS(make_batch(d.train, {5}), ConfigError);
}
