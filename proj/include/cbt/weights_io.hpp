/* Copyright 2026 The CBT Runtime Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// EENW weight files, little-endian:
//   "EENW" | u32 version=1 | u32 len + ModelConfig JSON | u32 tensor count |
//   per tensor: u16 name len, name, u8 ndim, u32 dims[ndim], f32 payload.
// Tensors are named stage{s}.block{b}.weight|bias and exit{n}.weight|bias
// with 1-based indices.

#include <cstdint>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cbt/binary_io.hpp"
#include "cbt/error.hpp"
#include "cbt/model.hpp"
#include "json.hpp"

namespace cbt {

inline constexpr char kEenwMagic[4] = {'E', 'E', 'N', 'W'};
inline constexpr std::uint32_t kEenwVersion = 1;

namespace detail {

struct NamedTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> payload;
};

inline std::string block_name(std::size_t s, std::size_t b) {
  return "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
}
inline std::string exit_name(std::size_t n) {
  return "exit" + std::to_string(n + 1);
}

inline void put_tensor(ByteWriter& w, const std::string& name,
                       const std::vector<std::uint32_t>& dims,
                       std::span<const float> payload) {
  w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.put_string(name);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) w.put<std::uint32_t>(d);
  w.put_floats(payload);
}

inline void put_conv(ByteWriter& w, const std::string& prefix,
                     const ConvParams& p) {
  const auto o = static_cast<std::uint32_t>(p.out_channels);
  const auto i = static_cast<std::uint32_t>(p.in_channels);
  const auto k = static_cast<std::uint32_t>(p.kernel);
  put_tensor(w, prefix + ".weight", {o, i, k, k}, p.weights);
  put_tensor(w, prefix + ".bias", {o}, p.bias);
}

inline ConvParams take_conv(std::map<std::string, NamedTensor>& tensors,
                            const std::string& prefix, std::size_t out,
                            std::size_t in, std::size_t k) {
  auto take = [&](const std::string& name,
                  const std::vector<std::uint32_t>& want) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw FormatError("EENW: missing tensor " + name);
    }
    if (it->second.dims != want) {
      std::string got;
      for (auto d : it->second.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
      std::string exp;
      for (auto d : want) exp += (exp.empty() ? "" : "x") + std::to_string(d);
      throw FormatError("EENW: tensor " + name + " has shape " + got +
                        ", config implies " + exp);
    }
    auto payload = std::move(it->second.payload);
    tensors.erase(it);
    return payload;
  };
  const auto o = static_cast<std::uint32_t>(out);
  const auto i = static_cast<std::uint32_t>(in);
  const auto kk = static_cast<std::uint32_t>(k);
  ConvParams p;
  p.out_channels = out;
  p.in_channels = in;
  p.kernel = k;
  p.weights = take(prefix + ".weight", {o, i, kk, kk});
  p.bias = take(prefix + ".bias", {o});
  return p;
}

}  // namespace detail

inline Bytes save_weights(const MultiExitNet& net) {
  net.validate();
  ByteWriter w;
  w.put_string(std::string_view(kEenwMagic, 4));
  w.put<std::uint32_t>(kEenwVersion);
  const std::string config = to_json(net.config).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(config.size()));
  w.put_string(config);
  w.put<std::uint32_t>(
      static_cast<std::uint32_t>(2 * (net.config.num_exits *
                                      (net.config.blocks_per_stage + 1))));
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    for (std::size_t b = 0; b < net.stages[s].size(); ++b) {
      detail::put_conv(w, detail::block_name(s, b), net.stages[s][b]);
    }
  }
  for (std::size_t n = 0; n < net.exits.size(); ++n) {
    detail::put_conv(w, detail::exit_name(n), net.exits[n]);
  }
  return w.take();
}

inline MultiExitNet load_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "EENW");
  const auto magic = r.get_string(4, "magic");
  if (magic != std::string_view(kEenwMagic, 4)) {
    throw FormatError("EENW: bad magic \"" + magic + "\"");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kEenwVersion) {
    throw FormatError("EENW: unsupported version " + std::to_string(version));
  }
  const auto config_len = r.get<std::uint32_t>("config length");
  const auto config_text = r.get_string(config_len, "config");

  MultiExitNet net;
  try {
    net.config = model_config_from_json(nlohmann::json::parse(config_text));
    net.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("EENW: bad config JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("EENW: invalid config: ") + e.what());
  }

  std::map<std::string, detail::NamedTensor> tensors;
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    auto name = r.get_string(name_len, "tensor name");
    const auto ndim = r.get<std::uint8_t>("ndim of " + name);
    detail::NamedTensor nt;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      nt.dims.push_back(r.get<std::uint32_t>("dims of " + name));
      numel *= nt.dims.back();
    }
    nt.payload = r.get_floats(numel, "payload of " + name);
    if (!tensors.emplace(name, std::move(nt)).second) {
      throw FormatError("EENW: duplicate tensor " + name);
    }
  }
  if (r.remaining() != 0) {
    throw FormatError("EENW: " + std::to_string(r.remaining()) +
                      " trailing bytes");
  }

  const auto& c = net.config;
  net.stages.resize(c.num_exits);
  for (std::size_t s = 0; s < c.num_exits; ++s) {
    for (std::size_t b = 0; b < c.blocks_per_stage; ++b) {
      const std::size_t in = (s == 0 && b == 0) ? c.input_channels : c.trunk_width;
      net.stages[s].push_back(detail::take_conv(tensors, detail::block_name(s, b),
                                                c.trunk_width, in, c.kernel_size));
    }
  }
  for (std::size_t n = 0; n < c.num_exits; ++n) {
    net.exits.push_back(detail::take_conv(tensors, detail::exit_name(n),
                                          c.num_classes, c.trunk_width, 1));
  }
  if (!tensors.empty()) {
    throw FormatError("EENW: unexpected tensor " + tensors.begin()->first);
  }
  auto check_finite = [](const ConvParams& p, const std::string& prefix) {
    for (float v : p.weights) {
      if (!std::isfinite(v)) {
        throw FormatError("EENW: non-finite value in " + prefix + ".weight");
      }
    }
    for (float v : p.bias) {
      if (!std::isfinite(v)) {
        throw FormatError("EENW: non-finite value in " + prefix + ".bias");
      }
    }
  };
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    for (std::size_t b = 0; b < net.stages[s].size(); ++b) {
      check_finite(net.stages[s][b], detail::block_name(s, b));
    }
  }
  for (std::size_t n = 0; n < net.exits.size(); ++n) {
    check_finite(net.exits[n], detail::exit_name(n));
  }
  net.validate();
  return net;
}

}  // namespace cbt
