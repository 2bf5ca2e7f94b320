#pragma once

#include <filesystem>
#include <string>

#include "nlosid/ann.hpp"
#include "nlosid/error.hpp"
#include "nlosid/nlsh.hpp"

namespace nlosid::ann {

// NLNW network file, little-endian:
//
//   "NLNW" u16 version u16 reserved u32 n_bins u32 n_classes u32 n_locations
//   3 × { u32 n_layers, n_layers × { u8 kind u32 units u32 kernels
//                                    u32 width u32 stride } }
//   u32 n_tensors, n_tensors × { u32 rank, rank × u32 dim, f64 values }
//
// Layer groups are conv branch, dense branch, trunk. Tensors follow the
// network's parameter declaration order.

inline constexpr char kNetMagic[4] = {'N', 'L', 'N', 'W'};
inline constexpr std::uint16_t kNetVersion = 1;

inline std::string encode_network(const TwoHeadNetwork& net) {
  nlsh::detail::Writer w;
  w.bytes(kNetMagic, 4);
  w.u16(kNetVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(net.n_bins));
  w.u32(static_cast<std::uint32_t>(net.n_classes));
  w.u32(static_cast<std::uint32_t>(net.n_locations));
  for (const auto* group : {&net.arch.conv_branch, &net.arch.dense_branch, &net.arch.trunk}) {
    w.u32(static_cast<std::uint32_t>(group->size()));
    for (const auto& s : *group) {
      w.u8(static_cast<std::uint8_t>(s.kind));
      w.u32(static_cast<std::uint32_t>(s.units));
      w.u32(static_cast<std::uint32_t>(s.kernels));
      w.u32(static_cast<std::uint32_t>(s.width));
      w.u32(static_cast<std::uint32_t>(s.stride));
    }
  }
  w.u32(static_cast<std::uint32_t>(net.parameters.size()));
  for (const auto& t : net.parameters) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values) w.f64(v);
  }
  return w.data();
}

inline TwoHeadNetwork decode_network(const std::string& data) {
  nlsh::detail::Reader r(data, "NLNW");
  if (data.size() < 4 || std::string(r.take(4), 4) != std::string(kNetMagic, 4))
    throw DataError("NLNW: bad magic (not a network file)");
  const auto version = r.u16();
  if (version != kNetVersion)
    throw DataError("NLNW: unsupported version " + std::to_string(version) + " (expected " +
                    std::to_string(kNetVersion) + ")");
  r.u16();
  const std::size_t n_bins = r.u32();
  const int n_classes = static_cast<int>(r.u32());
  const int n_locations = static_cast<int>(r.u32());
  Architecture arch;
  for (auto* group : {&arch.conv_branch, &arch.dense_branch, &arch.trunk}) {
    const auto n = r.u32();
    if (n > 1024) throw DataError("NLNW: implausible layer count");
    for (std::uint32_t i = 0; i < n; ++i) {
      LayerSpec s;
      const auto kind = r.u8();
      if (kind > static_cast<std::uint8_t>(LayerKind::softmax_head)) throw DataError("NLNW: unknown layer kind");
      s.kind = static_cast<LayerKind>(kind);
      s.units = static_cast<int>(r.u32());
      s.kernels = static_cast<int>(r.u32());
      s.width = static_cast<int>(r.u32());
      s.stride = static_cast<int>(r.u32());
      group->push_back(s);
    }
  }
  TwoHeadNetwork net;
  try {
    net = build_network_shapes(arch, n_bins, n_classes, n_locations);
  } catch (const ShapeError& e) {
    throw DataError(std::string("NLNW: invalid architecture: ") + e.what());
  }
  const auto n_tensors = r.u32();
  if (n_tensors != net.parameters.size())
    throw DataError("NLNW: " + std::to_string(n_tensors) + " tensors, architecture needs " +
                    std::to_string(net.parameters.size()));
  for (auto& t : net.parameters) {
    const auto rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != t.shape)
      throw DataError("NLNW: tensor shape " + Tensor::shape_string(shape) + " != expected " +
                      Tensor::shape_string(t.shape));
    for (auto& v : t.values) v = r.f64();
    if (!t.all_finite()) throw DataError("NLNW: non-finite parameter value");
  }
  if (r.remaining() != 0) throw DataError("NLNW: " + std::to_string(r.remaining()) + " trailing bytes");
  return net;
}

inline void save_network(const std::filesystem::path& path, const TwoHeadNetwork& net) {
  nlsh::write_file(path, encode_network(net));
}

inline TwoHeadNetwork load_network(const std::filesystem::path& path) {
  try {
    return decode_network(nlsh::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace nlosid::ann
