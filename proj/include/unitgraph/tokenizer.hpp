#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "unitgraph/capture.hpp"
#include "unitgraph/error.hpp"

namespace unitgraph {

using unit_t = std::uint32_t;

inline constexpr std::array<int, 5> supported_widths = {2, 4, 6, 8, 10};

inline bool is_supported_width(int bits) {
  return std::find(supported_widths.begin(), supported_widths.end(), bits) != supported_widths.end();
}

inline void require_width(int bits) {
  if (!is_supported_width(bits))
    fail(errc::unsupported_width, std::to_string(bits) + "-bit units are not supported (use 2, 4, 6, 8 or 10)");
}

struct UnitSequence {
  int bit_width = 8;
  std::vector<unit_t> header_units;
  std::vector<unit_t> payload_units;

  friend bool operator==(const UnitSequence&, const UnitSequence&) = default;
};

// Reads the byte stream MSB-first and emits consecutive non-overlapping
// `bits`-wide chunks. A trailing remainder shorter than `bits` is dropped.
inline std::vector<unit_t> tokenize(std::span<const std::uint8_t> data, int bits) {
  require_width(bits);
  std::vector<unit_t> out;
  out.reserve(data.size() * 8 / static_cast<std::size_t>(bits));
  std::uint32_t acc = 0;
  int have = 0;
  const std::uint32_t mask = (1u << bits) - 1;
  for (std::uint8_t b : data) {
    acc = (acc << 8) | b;
    have += 8;
    while (have >= bits) {
      have -= bits;
      out.push_back((acc >> have) & mask);
    }
    acc &= (1u << have) - 1;
  }
  return out;
}

inline UnitSequence tokenize_packet_view(const PacketRecord& pkt, int bits) {
  UnitSequence seq;
  seq.bit_width = bits;
  seq.header_units = tokenize(pkt.header_bytes, bits);
  seq.payload_units = tokenize(pkt.payload_bytes, bits);
  if (seq.header_units.empty())
    fail(errc::degenerate_segment, "header yields no " + std::to_string(bits) + "-bit units");
  if (seq.payload_units.empty())
    fail(errc::degenerate_segment, "payload yields no " + std::to_string(bits) + "-bit units");
  return seq;
}

inline std::map<int, UnitSequence> tokenize_packet(const PacketRecord& pkt, std::span<const int> views) {
  if (views.empty()) fail(errc::invalid_config, "at least one view is required");
  std::map<int, UnitSequence> out;
  for (int bits : views) out.emplace(bits, tokenize_packet_view(pkt, bits));
  return out;
}

}  // namespace unitgraph
