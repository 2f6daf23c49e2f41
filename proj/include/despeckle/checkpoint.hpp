#pragma once

// DSPKNET1 network checkpoint.
//
//   magic "DSPKNET1" | u16 version (1) | u16 layer count
//   per layer:
//     u32 in_channels | u32 out_channels | u32 K | u8 has_bn | u8 has_relu | 2 zero bytes
//     kernels (out, in, row, col) | bias (layers without BN only)
//     gamma | beta | running_mean | running_var (BN layers only)
//   optional optimizer block:
//     magic "DSPKOPT1" | u64 step | u32 array count | per array: u32 length, values
//
// Integers little-endian, every value an IEEE-754 binary32 little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "despeckle/binary_io.hpp"
#include "despeckle/network.hpp"
#include "despeckle/train.hpp"

namespace despeckle {

inline constexpr std::string_view kNetMagic = "DSPKNET1";
inline constexpr std::string_view kOptMagic = "DSPKOPT1";
inline constexpr std::uint16_t kNetVersion = 1;

struct OptimizerSnapshot {
  OptimizerState opt;
  std::uint64_t step = 0;
};

struct Checkpoint {
  NetworkParams params;
  std::optional<OptimizerSnapshot> optimizer;
};

/// Size in bytes of a checkpoint without optimizer block.
inline std::size_t checkpoint_size(const ArchitectureSpec& arch) {
  return 12 + 16 * arch.layers.size() + 4 * count_parameters(arch).stored();
}

inline std::vector<std::uint8_t> encode_checkpoint(const NetworkParams& net,
                                                   const std::optional<OptimizerSnapshot>& opt = std::nullopt) {
  validate_params(net);
  io::ByteWriter w;
  auto floats = [&w](std::span<const double> v) {
    for (double x : v) w.f32(static_cast<float>(x));
  };
  w.bytes(kNetMagic);
  w.u16(kNetVersion);
  w.u16(static_cast<std::uint16_t>(net.layers.size()));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& spec = net.arch.layers[i];
    const auto& l = net.layers[i];
    w.u32(static_cast<std::uint32_t>(spec.in_channels));
    w.u32(static_cast<std::uint32_t>(spec.out_channels));
    w.u32(static_cast<std::uint32_t>(spec.kernel));
    w.u8(spec.has_bn ? 1 : 0);
    w.u8(spec.has_relu ? 1 : 0);
    w.pad_to(4);
    floats(l.kernels.data());
    if (l.has_bias()) floats(l.bias);
    if (l.bn) {
      floats(l.bn->gamma);
      floats(l.bn->beta);
      floats(l.bn->running_mean);
      floats(l.bn->running_var);
    }
  }
  if (opt) {
    w.bytes(kOptMagic);
    w.u64(opt->step);
    w.u32(static_cast<std::uint32_t>(opt->opt.velocity.size()));
    for (const auto& v : opt->opt.velocity) {
      w.u32(static_cast<std::uint32_t>(v.size()));
      floats(v);
    }
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "DSPKNET1");
  r.expect_magic(kNetMagic);
  const std::uint16_t version = r.u16();
  if (version != kNetVersion) r.fail("unsupported version " + std::to_string(version));
  const std::uint16_t layer_count = r.u16();
  if (layer_count == 0) r.fail("no layers");

  Checkpoint ck;
  auto floats = [&r](std::span<double> v) {
    for (double& x : v) x = r.f32();
  };
  for (std::uint16_t i = 0; i < layer_count; ++i) {
    LayerSpec spec;
    spec.in_channels = r.u32();
    spec.out_channels = r.u32();
    spec.kernel = r.u32();
    const std::uint8_t bn = r.u8(), rl = r.u8();
    if (bn > 1 || rl > 1) r.fail("layer flags must be 0 or 1");
    spec.has_bn = bn == 1;
    spec.has_relu = rl == 1;
    r.skip_to_alignment(4);
    if (spec.in_channels == 0 || spec.out_channels == 0 || spec.kernel == 0 || spec.kernel % 2 == 0)
      r.fail("invalid layer descriptor");
    const std::size_t weights = spec.out_channels * spec.in_channels * spec.kernel * spec.kernel;
    if (r.remaining() / 4 < weights) r.fail("truncated kernel data");

    ConvLayerParams l;
    l.kernels = Tensor4(Dims{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
    floats(l.kernels.data());
    if (spec.has_bn) {
      l.bn = BatchNormState::identity(spec.out_channels);
      floats(l.bn->gamma);
      floats(l.bn->beta);
      floats(l.bn->running_mean);
      floats(l.bn->running_var);
    } else {
      l.bias.assign(spec.out_channels, 0.0);
      floats(l.bias);
    }
    ck.params.arch.layers.push_back(spec);
    ck.params.layers.push_back(std::move(l));
  }
  try {
    validate_params(ck.params);
  } catch (const Error& e) {
    r.fail(e.what());
  }

  if (!r.at_end()) {
    r.expect_magic(kOptMagic);
    OptimizerSnapshot snap;
    snap.step = r.u64();
    const std::uint32_t arrays = r.u32();
    const auto views = parameter_views(ck.params);
    if (arrays != views.size()) r.fail("optimizer block does not match the network");
    for (std::uint32_t a = 0; a < arrays; ++a) {
      const std::uint32_t len = r.u32();
      if (len != views[a].size()) r.fail("optimizer array length mismatch");
      std::vector<double> v(len);
      floats(v);
      snap.opt.velocity.push_back(std::move(v));
    }
    if (!r.at_end()) r.fail("trailing bytes after optimizer block");
    ck.optimizer = std::move(snap);
  }
  return ck;
}

inline void save_checkpoint(const NetworkParams& net, const std::filesystem::path& path,
                            const std::optional<OptimizerSnapshot>& opt = std::nullopt) {
  io::write_file_atomic(path, encode_checkpoint(net, opt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

/// Rounds every parameter to binary32, i.e. what a save/load round trip yields.
inline NetworkParams quantize_f32(NetworkParams net) {
  for (auto v : parameter_views(net))
    for (double& x : v) x = static_cast<float>(x);
  for (auto& l : net.layers)
    if (l.bn) {
      for (double& x : l.bn->running_mean) x = static_cast<float>(x);
      for (double& x : l.bn->running_var) x = static_cast<float>(x);
    }
  return net;
}

}  // namespace despeckle
