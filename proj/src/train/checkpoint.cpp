// SPDX-License-Identifier: Apache-2.0

#include "taskmod/train/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "taskmod/common/error.hpp"

namespace taskmod {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'T', 'C', 'K', '1', 0, 0, 0};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string name) : b_(std::move(bytes)), name_(std::move(name)) {}
  void take(void* dst, std::size_t n) {
    if (pos_ + n > b_.size()) throw FormatError(name_ + ": truncated checkpoint");
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  template <class T>
  T get() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::vector<char> b_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put(os, kVersion);
  put(os, static_cast<std::uint32_t>(store.size()));
  nlohmann::json side = nlohmann::json::array();
  for (const auto& [id, e] : store.entries()) {
    put(os, static_cast<std::uint32_t>(id.size()));
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    put(os, static_cast<std::uint8_t>(e.owner.kind));
    put(os, static_cast<std::int32_t>(e.owner.task));
    put(os, static_cast<std::uint8_t>(e.role));
    put(os, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape) put(os, static_cast<std::int64_t>(d));
    os.write(reinterpret_cast<const char*>(e.value.data.data()), static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    side.push_back({{"id", id}, {"shape", e.value.shape}, {"owner", to_string(e.owner)}, {"role", std::string(to_string(e.role))}});
  }
  if (!os) throw IoError("write failed for " + path.string());
  const auto side_path = std::filesystem::path(path.string() + ".json");
  std::ofstream js(side_path);
  if (!js) throw IoError("cannot write " + side_path.string());
  js << nlohmann::json{{"format", "MTCK1"}, {"version", kVersion}, {"parameters", side}}.dump(2) << '\n';
  if (!js) throw IoError("write failed for " + side_path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Reader r({std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()}, path.string());
  std::array<char, 8> magic{};
  r.take(magic.data(), magic.size());
  if (magic != kMagic) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  const auto count = r.get<std::uint32_t>();
  ParameterStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string id(r.get<std::uint32_t>(), '\0');
    r.take(id.data(), id.size());
    const auto kind = r.get<std::uint8_t>();
    const auto task = r.get<std::int32_t>();
    const auto role = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(Owner::Kind::Discriminator) || role > static_cast<std::uint8_t>(Role::BnRunning)) {
      throw FormatError(path.string() + ": bad owner or role for '" + id + "'");
    }
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError(path.string() + ": bad rank for '" + id + "'");
    ad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.get<std::int64_t>());
      if (shape.back() < 0 || shape.back() > (std::int64_t{1} << 32)) throw FormatError(path.string() + ": bad shape for '" + id + "'");
      n *= static_cast<std::size_t>(shape.back());
    }
    if (n * sizeof(double) > r.remaining()) throw FormatError(path.string() + ": truncated checkpoint");
    ad::Tensor t(shape);
    r.take(t.data.data(), n * sizeof(double));
    store.add(id, std::move(t), Owner{static_cast<Owner::Kind>(kind), task}, static_cast<Role>(role));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after checkpoint records");
  return store;
}

void require_same_layout(const ParameterStore& expected, const ParameterStore& actual) {
  if (expected.size() != actual.size()) {
    throw IncompatibleError("checkpoint holds " + std::to_string(actual.size()) + " parameters, network expects " +
                            std::to_string(expected.size()));
  }
  for (const auto& [id, e] : expected.entries()) {
    if (!actual.contains(id)) throw IncompatibleError("checkpoint lacks parameter '" + id + "'");
    const auto& a = actual.at(id);
    if (a.value.shape != e.value.shape || !(a.owner == e.owner) || a.role != e.role) {
      throw IncompatibleError("checkpoint parameter '" + id + "' has a different layout");
    }
  }
}

}  // namespace taskmod
