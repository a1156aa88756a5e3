#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace mvx {

struct Fnv1a64 {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  void update(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= b[i];
      state *= 0x100000001b3ULL;
    }
  }
  std::uint64_t digest() const { return state; }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

// Single-file container for named double arrays plus a JSON manifest.
// Binary doubles round-trip bit-exactly; the same container backs extractor
// archives, full model checkpoints and trained explainer heads.
class WeightArchive {
 public:
  nlohmann::json manifest;

  void put(const std::string& name, std::vector<int> shape, std::vector<double> data) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    if (n != data.size())
      throw std::invalid_argument("archive: shape/data mismatch for " + name);
    for (auto& a : arrays_)
      if (a.name == name) {
        a.shape = std::move(shape);
        a.data = std::move(data);
        return;
      }
    arrays_.push_back({name, std::move(shape), std::move(data)});
  }

  void put_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::MatrixXd>(data.data(), m.rows(), m.cols()) = m;
    put(name, {static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::move(data));
  }

  void put_vector(const std::string& name, const Eigen::VectorXd& v) {
    std::vector<double> data(v.data(), v.data() + v.size());
    put(name, {static_cast<int>(v.size())}, std::move(data));
  }

  bool has(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return true;
    return false;
  }

  const NamedArray& get(const std::string& name) const {
    for (const auto& a : arrays_)
      if (a.name == name) return a;
    throw std::runtime_error("archive: no array named " + name);
  }

  Eigen::MatrixXd get_matrix(const std::string& name) const {
    const auto& a = get(name);
    if (a.shape.size() != 2) throw std::runtime_error("archive: " + name + " is not a matrix");
    return Eigen::Map<const Eigen::MatrixXd>(a.data.data(), a.shape[0], a.shape[1]);
  }

  Eigen::VectorXd get_vector(const std::string& name) const {
    const auto& a = get(name);
    if (a.shape.size() != 1) throw std::runtime_error("archive: " + name + " is not a vector");
    return Eigen::Map<const Eigen::VectorXd>(a.data.data(), a.shape[0]);
  }

  const std::vector<NamedArray>& arrays() const { return arrays_; }

  // Hash over array names, shapes and raw double bytes, in stored order.
  std::uint64_t content_hash() const {
    Fnv1a64 h;
    for (const auto& a : arrays_) {
      h.update(a.name.data(), a.name.size());
      h.update(a.shape.data(), a.shape.size() * sizeof(int));
      h.update(a.data.data(), a.data.size() * sizeof(double));
    }
    return h.digest();
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write archive: " + path);
    const std::string m = manifest.dump();
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u64(out, m.size());
    out.write(m.data(), static_cast<std::streamsize>(m.size()));
    write_u32(out, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& a : arrays_) {
      write_u32(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      write_u32(out, static_cast<std::uint32_t>(a.shape.size()));
      for (int d : a.shape) write_u32(out, static_cast<std::uint32_t>(d));
      write_u64(out, a.data.size());
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("short write to archive: " + path);
  }

  static WeightArchive load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open archive: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
      throw std::runtime_error("not a weight archive: " + path);
    if (read_u32(in) != kVersion)
      throw std::runtime_error("unsupported archive version in " + path);
    WeightArchive ar;
    const std::uint64_t mlen = read_u64(in);
    std::string m(mlen, '\0');
    in.read(m.data(), static_cast<std::streamsize>(mlen));
    ar.manifest = nlohmann::json::parse(m);
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedArray a;
      const std::uint32_t nlen = read_u32(in);
      a.name.resize(nlen);
      in.read(a.name.data(), nlen);
      const std::uint32_t ndim = read_u32(in);
      a.shape.resize(ndim);
      for (std::uint32_t d = 0; d < ndim; ++d) a.shape[d] = static_cast<int>(read_u32(in));
      const std::uint64_t n = read_u64(in);
      a.data.resize(n);
      in.read(reinterpret_cast<char*>(a.data.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
      if (!in) throw std::runtime_error("truncated archive: " + path);
      ar.arrays_.push_back(std::move(a));
    }
    return ar;
  }

 private:
  static constexpr const char kMagic[5] = "MVXA";
  static constexpr std::uint32_t kVersion = 1;

  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }

  std::vector<NamedArray> arrays_;
};

}  // namespace mvx
