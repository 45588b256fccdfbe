// SPDX-License-Identifier: Apache-2.0

#include "taskmod/synthdata/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>

#include <json.hpp>

#include "taskmod/common/error.hpp"
#include "taskmod/common/rng.hpp"

namespace taskmod {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'M', 'T', 'S', 'B', '1', 0, 0, 0};
constexpr double kMaxSlope = 0.75;  // |(p,q)| <= 0.75 keeps n_z >= 0.8

double edge_side(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

Plane random_plane(Rng& rng, int size, double base) {
  Plane pl;
  pl.p = rng.uniform(-0.02, 0.02) * size;
  pl.q = rng.uniform(-0.02, 0.02) * size;
  const double m = std::hypot(pl.p, pl.q);
  if (m > kMaxSlope) {
    pl.p *= kMaxSlope / m;
    pl.q *= kMaxSlope / m;
  }
  pl.base = base;
  return pl;
}

std::array<double, 3> random_albedo(Rng& rng) {
  return {rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)};
}

}  // namespace

bool Sample::operator==(const Sample& o) const {
  auto same = [](const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  };
  return size == o.size && same(image, o.image) && edge == o.edge && seg == o.seg && same(normals, o.normals) &&
         same(depth, o.depth) && valid == o.valid;
}

bool covers(const SceneShape& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= s.a * s.a;
    case ShapeKind::Rect:
      return std::abs(dx) <= s.a && std::abs(dy) <= s.b;
    case ShapeKind::Triangle: {
      std::array<double, 6> v{};
      for (int k = 0; k < 3; ++k) {
        const double t = s.angle + 2.0 * std::numbers::pi * k / 3.0;
        v[static_cast<std::size_t>(2 * k)] = s.cx + s.a * std::cos(t);
        v[static_cast<std::size_t>(2 * k + 1)] = s.cy + s.a * std::sin(t);
      }
      const double d0 = edge_side(v[0], v[1], v[2], v[3], x, y);
      const double d1 = edge_side(v[2], v[3], v[4], v[5], x, y);
      const double d2 = edge_side(v[4], v[5], v[0], v[1], x, y);
      return (d0 >= 0 && d1 >= 0 && d2 >= 0) || (d0 <= 0 && d1 <= 0 && d2 <= 0);
    }
  }
  return false;
}

std::vector<int> owner_map(const Scene& scene) {
  const int s = scene.size;
  std::vector<int> owner(static_cast<std::size_t>(s * s), -1);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      int best = -1;
      for (std::size_t k = 0; k < scene.shapes.size(); ++k) {
        const auto& sh = scene.shapes[k];
        if (!covers(sh, x + 0.5, y + 0.5)) continue;
        if (best < 0 || sh.z_rank > scene.shapes[static_cast<std::size_t>(best)].z_rank) best = static_cast<int>(k);
      }
      owner[static_cast<std::size_t>(y * s + x)] = best;
    }
  }
  return owner;
}

std::array<double, 3> plane_normal(const Plane& pl) {
  const double n = std::sqrt(pl.p * pl.p + pl.q * pl.q + 1.0);
  return {-pl.p / n, -pl.q / n, 1.0 / n};
}

Scene generate_scene(std::uint64_t seed, int size) {
  if (size < 16) throw ConfigError("scene size must be at least 16, got " + std::to_string(size));
  Rng rng(mix_seed(seed, "scene"));
  Scene sc;
  sc.size = size;
  sc.seed = seed;
  sc.background = random_plane(rng, size, rng.uniform(0.0, 0.2));
  sc.background_albedo = random_albedo(rng);
  const auto n = static_cast<int>(rng.uniform_int(2, 6));
  // z ranks 1..n in random order
  std::vector<int> ranks(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ranks[static_cast<std::size_t>(i)] = i + 1;
  for (int i = n - 1; i > 0; --i) std::swap(ranks[static_cast<std::size_t>(i)], ranks[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  const double dmin = size / 6.0, dmax = size / 2.0;
  for (int i = 0; i < n; ++i) {
    SceneShape sh;
    sh.kind = static_cast<ShapeKind>(rng.uniform_int(1, 3));
    const double d = rng.uniform(dmin, dmax);
    sh.cx = rng.uniform(0.0, size);
    sh.cy = rng.uniform(0.0, size);
    sh.a = d / 2.0;
    sh.b = sh.kind == ShapeKind::Rect ? rng.uniform(dmin, dmax) / 2.0 : 0.0;
    sh.angle = sh.kind == ShapeKind::Triangle ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
    sh.z_rank = ranks[static_cast<std::size_t>(i)];
    sh.plane = random_plane(rng, size, 0.4 + 0.4 * sh.z_rank + rng.uniform(0.0, 0.1));
    sh.albedo = random_albedo(rng);
    sc.shapes.push_back(sh);
  }
  return sc;
}

Sample render(const Scene& scene) {
  const int s = scene.size;
  const auto plane_px = static_cast<std::size_t>(s * s);
  Sample out;
  out.size = s;
  out.image.resize(3 * plane_px);
  out.edge.assign(plane_px, 0);
  out.seg.assign(plane_px, 0);
  out.normals.resize(3 * plane_px);
  out.depth.resize(plane_px);
  out.valid.assign(plane_px, 0);

  const auto owner = owner_map(scene);
  const double ln = std::sqrt(0.4 * 0.4 + 0.5 * 0.5 + 1.0);
  const std::array<double, 3> light{-0.4 / ln, -0.5 / ln, 1.0 / ln};
  Rng noise(mix_seed(scene.seed, "noise"));
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const auto i = static_cast<std::size_t>(y * s + x);
      const int o = owner[i];
      const SceneShape* sh = o >= 0 ? &scene.shapes[static_cast<std::size_t>(o)] : nullptr;
      const Plane& pl = sh ? sh->plane : scene.background;
      const auto& albedo = sh ? sh->albedo : scene.background_albedo;
      const double u = (x + 0.5) / s - 0.5, v = (y + 0.5) / s - 0.5;
      const double h = pl.base + pl.p * u + pl.q * v;
      const auto n = plane_normal(pl);
      const double shade = 0.25 + 0.75 * std::max(0.0, n[0] * light[0] + n[1] * light[1] + n[2] * light[2]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = albedo[c] * shade + 0.01 * noise.normal();
        out.image[c * plane_px + i] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        out.normals[c * plane_px + i] = static_cast<float>(n[c]);
      }
      out.depth[i] = static_cast<float>(kZFar - h);
      out.seg[i] = sh ? static_cast<std::uint8_t>(sh->kind) : 0;
      out.valid[i] = sh ? 1 : 0;
      bool boundary = false;
      if (x > 0) boundary |= owner[i - 1] != o;
      if (x + 1 < s) boundary |= owner[i + 1] != o;
      if (y > 0) boundary |= owner[i - static_cast<std::size_t>(s)] != o;
      if (y + 1 < s) boundary |= owner[i + static_cast<std::size_t>(s)] != o;
      out.edge[i] = boundary ? 1 : 0;
    }
  }
  return out;
}

int default_threads() {
  if (const char* env = std::getenv("TASKMOD_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

Dataset generate_dataset(std::uint64_t seed, int size, std::int64_t n_train, std::int64_t n_test, int threads) {
  if (n_train < 0 || n_test < 0) throw ConfigError("sample counts must be non-negative");
  if (size < 16) throw ConfigError("scene size must be at least 16, got " + std::to_string(size));
  const std::int64_t total = n_train + n_test;
  std::vector<Sample> all(static_cast<std::size_t>(total));
  const int workers = static_cast<int>(std::min<std::int64_t>(std::max(1, threads > 0 ? threads : default_threads()),
                                                              std::max<std::int64_t>(1, total)));
  auto work = [&](int w) {
    for (std::int64_t i = w; i < total; i += workers) {
      all[static_cast<std::size_t>(i)] = render(generate_scene(seed + static_cast<std::uint64_t>(i), size));
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  Dataset d;
  d.manifest.seed = seed;
  d.manifest.size = size;
  d.manifest.n_train = n_train;
  d.manifest.n_test = n_test;
  d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + n_train));
  d.test.assign(std::make_move_iterator(all.begin() + n_train), std::make_move_iterator(all.end()));
  return d;
}

namespace {

template <class T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void put_array(std::ofstream& os, const std::vector<T>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  void take(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(name_ + ": truncated file (needed " + std::to_string(pos_ + n) + " bytes, have " +
                        std::to_string(bytes_.size()) + ")");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  template <class T>
  std::vector<T> get_array(std::size_t n) {
    std::vector<T> v(n);
    take(v.data(), n * sizeof(T));
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_split(const std::filesystem::path& path, const std::vector<Sample>& samples, int size) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(samples.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(size));
  for (const auto& s : samples) {
    if (s.size != size) throw FormatError("write_split: sample of size " + std::to_string(s.size) + " in a size-" + std::to_string(size) + " split");
    put_array(os, s.image);
    put_array(os, s.edge);
    put_array(os, s.seg);
    put_array(os, s.normals);
    put_array(os, s.depth);
    put_array(os, s.valid);
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<Sample> read_split(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  std::array<char, 8> magic{};
  r.take(magic.data(), magic.size());
  if (magic != kMagic) throw FormatError(path.string() + ": bad magic (not an MTSB1 file)");
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw FormatError(path.string() + ": unsupported MTSB1 version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  const auto size = r.get<std::uint32_t>();
  const std::size_t px = static_cast<std::size_t>(size) * size;
  std::vector<Sample> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample s;
    s.size = static_cast<int>(size);
    s.image = r.get_array<float>(3 * px);
    s.edge = r.get_array<std::uint8_t>(px);
    s.seg = r.get_array<std::uint8_t>(px);
    s.normals = r.get_array<float>(3 * px);
    s.depth = r.get_array<float>(px);
    s.valid = r.get_array<std::uint8_t>(px);
    out.push_back(std::move(s));
  }
  if (r.remaining() != 0) {
    throw FormatError(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes after " +
                      std::to_string(n) + " records");
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_split(dir / "train.mtsb", data.train, data.manifest.size);
  write_split(dir / "test.mtsb", data.test, data.manifest.size);
  const auto& m = data.manifest;
  const nlohmann::json j{{"format", m.format},
                         {"version", m.version},
                         {"seed", m.seed},
                         {"size", m.size},
                         {"n_train", m.n_train},
                         {"n_test", m.n_test},
                         {"tasks", m.tasks},
                         {"files", {{"train", "train.mtsb"}, {"test", "test.mtsb"}}}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed for " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw IoError("cannot open " + mpath.string());
  Dataset d;
  try {
    const auto j = nlohmann::json::parse(is);
    auto& m = d.manifest;
    m.format = j.at("format").get<std::string>();
    m.version = j.at("version").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.size = j.at("size").get<int>();
    m.n_train = j.at("n_train").get<std::int64_t>();
    m.n_test = j.at("n_test").get<std::int64_t>();
    m.tasks = j.at("tasks").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath.string() + ": malformed manifest: " + e.what());
  }
  if (d.manifest.format != "MTSB1") throw FormatError(mpath.string() + ": unknown format '" + d.manifest.format + "'");
  d.train = read_split(dir / "train.mtsb");
  d.test = read_split(dir / "test.mtsb");
  auto check = [&](const std::vector<Sample>& split, std::int64_t want, const char* name) {
    if (static_cast<std::int64_t>(split.size()) != want) {
      throw FormatError(std::string("manifest lists ") + std::to_string(want) + " " + name + " samples, file holds " +
                        std::to_string(split.size()));
    }
    for (const auto& s : split) {
      if (s.size != d.manifest.size) {
        throw FormatError(std::string(name) + " split has size " + std::to_string(s.size) + ", manifest says " +
                          std::to_string(d.manifest.size));
      }
    }
  };
  check(d.train, d.manifest.n_train, "train");
  check(d.test, d.manifest.n_test, "test");
  return d;
}

}  // namespace taskmod
