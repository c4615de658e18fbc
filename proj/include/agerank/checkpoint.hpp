#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "agerank/io.hpp"
#include "agerank/tensor.hpp"

namespace agerank {

/// Checkpoint file: "RCKP", u32 version, u64 header length, JSON header,
/// then the named f32 blocks back to back in header order (little-endian).
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> blocks;

  void put(std::string name, Tensor<float> t) {
    for (auto& [n, v] : blocks) {
      if (n == name) {
        v = std::move(t);
        return;
      }
    }
    blocks.emplace_back(std::move(name), std::move(t));
  }

  bool has(const std::string& name) const {
    for (const auto& [n, v] : blocks)
      if (n == name) return true;
    return false;
  }

  const Tensor<float>& get(const std::string& name) const {
    for (const auto& [n, v] : blocks)
      if (n == name) return v;
    throw io::IoError("checkpoint: missing block '" + name + "'");
  }

  std::string encode() const {
    nlohmann::json h = header;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [n, t] : blocks) index.push_back({{"name", n}, {"shape", t.shape()}});
    h["blocks"] = index;
    const std::string text = h.dump();
    io::ByteWriter w;
    w.bytes("RCKP", 4);
    w.u32(1);
    w.u64(text.size());
    w.bytes(text.data(), text.size());
    for (const auto& [n, t] : blocks) w.f32s(t.raw(), t.size());
    return w.take();
  }

  static Checkpoint decode(const std::string& bytes, const std::string& context = "checkpoint") {
    io::ByteReader r(bytes, context);
    if (bytes.size() < 4 || bytes.compare(0, 4, "RCKP") != 0) throw io::IoError(context + ": bad magic");
    r.bytes(4, "magic");
    if (const auto v = r.u32(); v != 1) throw io::IoError(context + ": unsupported version " + std::to_string(v));
    const auto len = r.u64();
    Checkpoint c;
    c.header = nlohmann::json::parse(r.bytes(len, "header"));
    for (const auto& b : c.header.at("blocks")) {
      Shape shape = b.at("shape").get<Shape>();
      Tensor<float> t(shape);
      r.f32s(t.raw(), t.size(), "block " + b.at("name").get<std::string>());
      c.blocks.emplace_back(b.at("name").get<std::string>(), std::move(t));
    }
    c.header.erase("blocks");
    return c;
  }

  void save(const std::filesystem::path& path) const { io::atomic_write(path, encode()); }
  static Checkpoint load(const std::filesystem::path& path) { return decode(io::read_file(path), path.string()); }
};

}  // namespace agerank
