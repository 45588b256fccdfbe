// SPDX-License-Identifier: Apache-2.0
//
// Synthetic scenes of slanted planar shapes over a slanted background, with
// closed-form ground truth for edges, segmentation, normals and depth.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace taskmod {

enum class ShapeKind : std::uint8_t { Circle = 1, Rect = 2, Triangle = 3 };

// Height h = base + p*u + q*v with u, v the pixel-centre coordinates divided
// by S and shifted to [-0.5, 0.5].
struct Plane {
  double p = 0.0;
  double q = 0.0;
  double base = 0.0;
};

struct SceneShape {
  ShapeKind kind = ShapeKind::Circle;
  double cx = 0.0;  // centre, pixels
  double cy = 0.0;
  double a = 0.0;  // circle radius, rect half-width, triangle circumradius
  double b = 0.0;  // rect half-height
  double angle = 0.0;  // triangle rotation, radians
  int z_rank = 0;      // larger ranks occlude smaller ones
  Plane plane;
  std::array<double, 3> albedo{};
};

struct Scene {
  int size = 0;
  std::uint64_t seed = 0;
  std::vector<SceneShape> shapes;
  Plane background;
  std::array<double, 3> background_albedo{};
};

inline constexpr double kZFar = 4.0;
inline constexpr int kNumSegClasses = 4;

struct Sample {
  int size = 0;
  std::vector<float> image;         // [3,S,S], values in [0,1]
  std::vector<std::uint8_t> edge;   // [S,S]
  std::vector<std::uint8_t> seg;    // [S,S], 0 background, else ShapeKind
  std::vector<float> normals;       // [3,S,S]
  std::vector<float> depth;         // [S,S]
  std::vector<std::uint8_t> valid;  // [S,S], 1 off the background

  bool operator==(const Sample& other) const;  // bitwise on float arrays
};

bool covers(const SceneShape& shape, double x, double y);
// Index of the shape owning each pixel centre, -1 for background.
std::vector<int> owner_map(const Scene& scene);
// Unit normal of a plane: normalize(-p, -q, 1).
std::array<double, 3> plane_normal(const Plane& plane);

// 2-6 shapes with diameters in [S/6, S/2]; deterministic in (seed, S).
// Throws ConfigError when S < 16.
Scene generate_scene(std::uint64_t seed, int size);
Sample render(const Scene& scene);

struct DatasetManifest {
  std::string format = "MTSB1";
  std::uint32_t version = 1;
  std::uint64_t seed = 0;
  int size = 0;
  std::int64_t n_train = 0;
  std::int64_t n_test = 0;
  std::vector<std::string> tasks{"edge", "seg", "norm", "depth"};
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Sample i of the combined train+test sequence uses scene seed seed + i.
// Work is spread over `threads` workers (0 = TASKMOD_THREADS or hardware).
Dataset generate_dataset(std::uint64_t seed, int size, std::int64_t n_train, std::int64_t n_test, int threads = 0);

// MTSB1 split files. Throws FormatError on a bad magic, version, truncation
// or trailing bytes, IoError when the file cannot be opened.
void write_split(const std::filesystem::path& path, const std::vector<Sample>& samples, int size);
std::vector<Sample> read_split(const std::filesystem::path& path);

// dir/train.mtsb, dir/test.mtsb and dir/manifest.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
// Also checks the manifest counts and size against the split files.
Dataset read_dataset(const std::filesystem::path& dir);

// Worker count from TASKMOD_THREADS, else hardware concurrency, at least 1.
int default_threads();

}  // namespace taskmod
