// SPDX-License-Identifier: Apache-2.0
//
// Single-file parameter container: a magic line, a length-prefixed JSON
// header naming every array, then the raw little-endian payloads in header
// order. Loading is strict: the file and the registered parameters must
// agree on names and shapes exactly, so round trips are bit-exact.

#ifndef STEVE_CHECKPOINT_HPP
#define STEVE_CHECKPOINT_HPP

#include "steve/autodiff.hpp"
#include "steve/tensor.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace steve {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace ckpt_detail {

inline constexpr char kMagic[] = "STEVE-CKPT-1\n";
inline constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<Param<T>*>& params,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["dtype"] = ckpt_detail::dtype_name<T>();
  header["meta"] = meta;
  header["params"] = nlohmann::json::array();
  for (const Param<T>* p : params) {
    check(!p->name.empty(), "checkpoint: unnamed parameter");
    header["params"].push_back(
        {{"name", p->name},
         {"shape", p->value.shape()},
         {"bytes", p->value.numel() * static_cast<std::int64_t>(sizeof(T))}});
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  out.write(ckpt_detail::kMagic,
            static_cast<std::streamsize>(ckpt_detail::kMagicLen));
  const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
  unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                         static_cast<unsigned char>((len >> 8) & 0xff),
                         static_cast<unsigned char>((len >> 16) & 0xff),
                         static_cast<unsigned char>((len >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(lb), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const Param<T>* p : params)
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.numel() * sizeof(T)));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

/// Header-only read: returns the stored meta object without touching any
/// parameter payloads, so a model can be constructed from its own echo.
inline nlohmann::json read_checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[ckpt_detail::kMagicLen];
  in.read(magic, static_cast<std::streamsize>(ckpt_detail::kMagicLen));
  if (!in || std::memcmp(magic, ckpt_detail::kMagic, ckpt_detail::kMagicLen) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  unsigned char lb[4];
  in.read(reinterpret_cast<char*>(lb), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                            (static_cast<std::uint32_t>(lb[1]) << 8) |
                            (static_cast<std::uint32_t>(lb[2]) << 16) |
                            (static_cast<std::uint32_t>(lb[3]) << 24);
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  try {
    return nlohmann::json::parse(hs).value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " +
                             e.what());
  }
}

/// Restores every registered parameter from the file and returns the stored
/// meta object. Name or shape disagreements in either direction are errors.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path,
                               const std::vector<Param<T>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);

  char magic[ckpt_detail::kMagicLen];
  in.read(magic, static_cast<std::streamsize>(ckpt_detail::kMagicLen));
  if (!in || std::memcmp(magic, ckpt_detail::kMagic, ckpt_detail::kMagicLen) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);

  unsigned char lb[4];
  in.read(reinterpret_cast<char*>(lb), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                            (static_cast<std::uint32_t>(lb[1]) << 8) |
                            (static_cast<std::uint32_t>(lb[2]) << 16) |
                            (static_cast<std::uint32_t>(lb[3]) << 24);
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " +
                             e.what());
  }
  if (header.value("dtype", "") != ckpt_detail::dtype_name<T>())
    throw std::runtime_error("checkpoint: dtype mismatch in " + path);

  const auto& entries = header.at("params");
  if (entries.size() != params.size())
    throw std::runtime_error(
        "checkpoint: parameter count mismatch in " + path + " (file " +
        std::to_string(entries.size()) + ", model " +
        std::to_string(params.size()) + ")");

  // Payloads are stored in header order; the registered set may be ordered
  // differently, so match by name and require a bijection.
  std::vector<bool> loaded(params.size(), false);
  for (const auto& entry : entries) {
    const std::string name = entry.at("name");
    Param<T>* match = nullptr;
    std::size_t idx = 0;
    for (std::size_t p = 0; p < params.size(); ++p)
      if (params[p]->name == name) {
        match = params[p];
        idx = p;
        break;
      }
    if (!match)
      throw std::runtime_error("checkpoint: " + path +
                               " holds unknown parameter " + name);
    if (loaded[idx])
      throw std::runtime_error("checkpoint: " + path +
                               " holds duplicate parameter " + name);
    loaded[idx] = true;
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (shape != match->value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name +
                               " in " + path);
    in.read(reinterpret_cast<char*>(match->value.data()),
            static_cast<std::streamsize>(match->value.numel() * sizeof(T)));
    if (!in)
      throw std::runtime_error("checkpoint: truncated payload for " + name +
                               " in " + path);
  }
  return header.value("meta", nlohmann::json::object());
}

}  // namespace steve

#endif  // STEVE_CHECKPOINT_HPP
