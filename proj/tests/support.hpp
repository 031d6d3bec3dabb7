#pragma once

// Byte-level fixture builders written independently of the library encoders.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace fixture {

using bytes = std::vector<std::uint8_t>;

inline void le32(bytes& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void be32(bytes& b, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void le16(bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void be16(bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

struct Record {
  std::uint32_t ts_sec;
  std::uint32_t ts_usec;
  bytes frame;
};

// Classic pcap: magic a1b2c3d4 written in the chosen byte order, v2.4,
// snaplen 65535, link type `network`.
inline bytes pcap_file(const std::vector<Record>& records, bool big_endian, std::uint32_t network = 1) {
  bytes b;
  auto w32 = [&](std::uint32_t v) { big_endian ? be32(b, v) : le32(b, v); };
  auto w16 = [&](std::uint16_t v) { big_endian ? be16(b, v) : le16(b, v); };
  w32(0xa1b2c3d4);
  w16(2);
  w16(4);
  w32(0);
  w32(0);
  w32(65535);
  w32(network);
  for (const auto& r : records) {
    w32(r.ts_sec);
    w32(r.ts_usec);
    w32(static_cast<std::uint32_t>(r.frame.size()));
    w32(static_cast<std::uint32_t>(r.frame.size()));
    b.insert(b.end(), r.frame.begin(), r.frame.end());
  }
  return b;
}

struct Addr {
  std::uint8_t ip[4];
  std::uint16_t port;
};

// Ethernet + IPv4 (no options) + TCP (20-byte header) or UDP. The
// checksum field is left zero; the parser does not verify it.
inline bytes frame(bool tcp, Addr src, Addr dst, const bytes& payload, std::uint16_t ip_id = 0x1234) {
  bytes f = {0x10, 0x20, 0x30, 0x40, 0x50, 0x60, 0x70, 0x80, 0x90, 0xa0, 0xb0, 0xc0, 0x08, 0x00};
  const std::uint16_t l4 = tcp ? 20 : 8;
  const auto total = static_cast<std::uint16_t>(20 + l4 + payload.size());
  f.push_back(0x45);
  f.push_back(0x00);
  be16(f, total);
  be16(f, ip_id);
  be16(f, 0x4000);
  f.push_back(64);
  f.push_back(tcp ? 6 : 17);
  be16(f, 0);
  f.insert(f.end(), src.ip, src.ip + 4);
  f.insert(f.end(), dst.ip, dst.ip + 4);
  be16(f, src.port);
  be16(f, dst.port);
  if (tcp) {
    be32(f, 0x01020304);
    be32(f, 0x05060708);
    f.push_back(0x50);
    f.push_back(0x18);
    be16(f, 0x0200);
    be16(f, 0);
    be16(f, 0);
  } else {
    be16(f, static_cast<std::uint16_t>(8 + payload.size()));
    be16(f, 0);
  }
  f.insert(f.end(), payload.begin(), payload.end());
  return f;
}

inline bytes text(const std::string& s) { return bytes(s.begin(), s.end()); }

}  // namespace fixture
