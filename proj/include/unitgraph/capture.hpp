#pragma once

// Packet capture ingestion: classic pcap I/O, frame anonymization,
// bidirectional flow assembly and the JSON-lines flow store.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include <json.hpp>

#include "unitgraph/error.hpp"

namespace unitgraph {

using bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t max_flow_packets = 15;
inline constexpr std::size_t max_raw_flow_length = 10000;

struct RawCapturePacket {
  std::int64_t timestamp_us = 0;
  bytes link_bytes;
  std::uint32_t orig_len = 0;

  friend bool operator==(const RawCapturePacket&, const RawCapturePacket&) = default;
};

enum class Direction { forward, backward };

struct PacketRecord {
  bytes header_bytes;
  bytes payload_bytes;
  Direction direction = Direction::forward;
  std::int64_t timestamp_us = 0;

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

struct TrafficFlow {
  std::string flow_key;
  std::vector<PacketRecord> packets;
  int label = 0;

  friend bool operator==(const TrafficFlow&, const TrafficFlow&) = default;
};

// ---------------------------------------------------------------------------
// byte helpers

namespace detail {

inline std::uint16_t be16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

inline std::uint32_t load32(const std::uint8_t* p, bool swapped) {
  std::uint32_t le = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                     (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  if (!swapped) return le;
  return ((le & 0xffu) << 24) | ((le & 0xff00u) << 8) | ((le >> 8) & 0xff00u) | (le >> 24);
}

inline std::uint16_t load16(const std::uint8_t* p, bool swapped) {
  return swapped ? static_cast<std::uint16_t>((p[0] << 8) | p[1])
                 : static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void store32(bytes& out, std::uint32_t v, bool big_endian) {
  if (big_endian) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  } else {
    for (int s = 0; s <= 24; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  }
}

inline void store16(bytes& out, std::uint16_t v, bool big_endian) {
  if (big_endian) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  } else {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
}

}  // namespace detail

inline std::string to_hex(const bytes& data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

inline bytes from_hex(std::string_view text) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    fail(errc::schema_violation, "invalid hex digit in \"" + std::string(text) + "\"");
  };
  if (text.size() % 2 != 0) fail(errc::schema_violation, "odd-length hex string");
  bytes out;
  out.reserve(text.size() / 2);
  for (std::size_t i = 0; i < text.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>((nibble(text[i]) << 4) | nibble(text[i + 1])));
  return out;
}

// ---------------------------------------------------------------------------
// classic pcap

inline constexpr std::uint32_t pcap_magic = 0xa1b2c3d4;
inline constexpr std::uint32_t pcap_magic_swapped = 0xd4c3b2a1;
inline constexpr std::uint32_t linktype_ethernet = 1;

inline std::vector<RawCapturePacket> parse_pcap_bytes(const bytes& data) {
  if (data.size() < 4) fail(errc::truncated, "capture shorter than the magic number");
  const std::uint32_t magic = detail::load32(data.data(), false);
  bool swapped = false;
  if (magic == pcap_magic) {
    swapped = false;
  } else if (magic == pcap_magic_swapped) {
    swapped = true;
  } else {
    std::ostringstream os;
    os << "unknown pcap magic 0x" << std::hex << magic;
    fail(errc::bad_magic, os.str());
  }
  if (data.size() < 24) fail(errc::truncated, "global header shorter than 24 bytes");
  const std::uint32_t network = detail::load32(data.data() + 20, swapped);
  if (network != linktype_ethernet)
    fail(errc::unsupported_link_type, "link type " + std::to_string(network) + " is not Ethernet");

  std::vector<RawCapturePacket> out;
  std::size_t pos = 24;
  while (pos < data.size()) {
    if (data.size() - pos < 16)
      fail(errc::truncated, "record header at offset " + std::to_string(pos) + " is cut short");
    const std::uint8_t* rec = data.data() + pos;
    const std::uint32_t ts_sec = detail::load32(rec, swapped);
    const std::uint32_t ts_usec = detail::load32(rec + 4, swapped);
    const std::uint32_t incl_len = detail::load32(rec + 8, swapped);
    const std::uint32_t orig_len = detail::load32(rec + 12, swapped);
    pos += 16;
    if (data.size() - pos < incl_len)
      fail(errc::truncated, "record body at offset " + std::to_string(pos) + " declares " +
                                std::to_string(incl_len) + " bytes, " +
                                std::to_string(data.size() - pos) + " remain");
    RawCapturePacket pkt;
    pkt.timestamp_us = static_cast<std::int64_t>(ts_sec) * 1000000 + ts_usec;
    pkt.link_bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(pos),
                          data.begin() + static_cast<std::ptrdiff_t>(pos + incl_len));
    pkt.orig_len = orig_len;
    out.push_back(std::move(pkt));
    pos += incl_len;
  }
  return out;
}

inline bytes read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  return bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::vector<RawCapturePacket> parse_pcap(const std::filesystem::path& path) {
  return parse_pcap_bytes(read_file_bytes(path));
}

// Serializes packets as a classic pcap; `big_endian` selects the byte order
// of every header field (the magic then reads 0xd4c3b2a1 on little-endian hosts).
inline bytes encode_pcap(const std::vector<RawCapturePacket>& packets, bool big_endian = false,
                         std::uint32_t snaplen = 65535) {
  bytes out;
  detail::store32(out, pcap_magic, big_endian);
  detail::store16(out, 2, big_endian);
  detail::store16(out, 4, big_endian);
  detail::store32(out, 0, big_endian);
  detail::store32(out, 0, big_endian);
  detail::store32(out, snaplen, big_endian);
  detail::store32(out, linktype_ethernet, big_endian);
  for (const auto& p : packets) {
    detail::store32(out, static_cast<std::uint32_t>(p.timestamp_us / 1000000), big_endian);
    detail::store32(out, static_cast<std::uint32_t>(p.timestamp_us % 1000000), big_endian);
    detail::store32(out, static_cast<std::uint32_t>(p.link_bytes.size()), big_endian);
    detail::store32(out, p.orig_len, big_endian);
    out.insert(out.end(), p.link_bytes.begin(), p.link_bytes.end());
  }
  return out;
}

inline void write_pcap(const std::filesystem::path& path, const std::vector<RawCapturePacket>& packets,
                       bool big_endian = false) {
  auto data = encode_pcap(packets, big_endian);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
}

// ---------------------------------------------------------------------------
// frame parsing and anonymization

struct Endpoint {
  std::array<std::uint8_t, 4> addr{};
  std::uint16_t port = 0;

  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

struct FiveTuple {
  std::uint8_t protocol = 0;
  Endpoint src;
  Endpoint dst;
};

enum class SkipReason { not_ipv4, ipv6, not_tcp_udp, fragment, empty_payload };

struct ParsedFrame {
  FiveTuple tuple;
  bytes header_bytes;
  bytes payload_bytes;
};

// Parses an Ethernet/IPv4/{TCP,UDP} frame and strips the Ethernet header,
// the IPv4 addresses and the transport ports. Empty payloads are reported
// as parsed; `anonymize` turns them into a skip.
inline std::variant<ParsedFrame, SkipReason> parse_frame(const bytes& frame) {
  constexpr std::size_t eth_len = 14;
  if (frame.size() < eth_len) fail(errc::malformed_header, "frame shorter than an Ethernet header");
  const std::uint16_t ethertype = detail::be16(frame.data() + 12);
  if (ethertype == 0x86dd) return SkipReason::ipv6;
  if (ethertype != 0x0800) return SkipReason::not_ipv4;

  const std::uint8_t* ip = frame.data() + eth_len;
  const std::size_t avail = frame.size() - eth_len;
  if (avail < 20) fail(errc::malformed_header, "IPv4 header cut short");
  if ((ip[0] >> 4) != 4) fail(errc::malformed_header, "ethertype IPv4 but version nibble is not 4");
  const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
  const std::size_t total_len = detail::be16(ip + 2);
  if (ihl < 20 || ihl > avail) fail(errc::malformed_header, "IPv4 header length out of range");
  if (total_len < ihl || total_len > avail)
    fail(errc::malformed_header, "IPv4 total length inconsistent with frame size");
  const std::uint16_t frag = detail::be16(ip + 6);
  if ((frag & 0x1fff) != 0) return SkipReason::fragment;

  ParsedFrame out;
  out.tuple.protocol = ip[9];
  std::copy(ip + 12, ip + 16, out.tuple.src.addr.begin());
  std::copy(ip + 16, ip + 20, out.tuple.dst.addr.begin());

  const std::uint8_t* seg = ip + ihl;
  const std::size_t seg_len = total_len - ihl;
  std::size_t thl = 0;
  if (out.tuple.protocol == 6) {
    if (seg_len < 20) fail(errc::malformed_header, "TCP header cut short");
    thl = static_cast<std::size_t>(seg[12] >> 4) * 4;
    if (thl < 20 || thl > seg_len) fail(errc::malformed_header, "TCP data offset out of range");
  } else if (out.tuple.protocol == 17) {
    if (seg_len < 8) fail(errc::malformed_header, "UDP header cut short");
    const std::size_t udp_len = detail::be16(seg + 4);
    if (udp_len < 8 || udp_len > seg_len) fail(errc::malformed_header, "UDP length out of range");
    thl = 8;
  } else {
    return SkipReason::not_tcp_udp;
  }
  out.tuple.src.port = detail::be16(seg);
  out.tuple.dst.port = detail::be16(seg + 2);

  std::size_t payload_end = seg_len;
  if (out.tuple.protocol == 17) payload_end = detail::be16(seg + 4);

  out.header_bytes.reserve(ihl - 8 + thl - 4);
  out.header_bytes.insert(out.header_bytes.end(), ip, ip + 12);
  out.header_bytes.insert(out.header_bytes.end(), ip + 20, ip + ihl);
  out.header_bytes.insert(out.header_bytes.end(), seg + 4, seg + thl);
  out.payload_bytes.assign(seg + thl, seg + payload_end);
  return out;
}

struct AnonymizedPacket {
  bytes header_bytes;
  bytes payload_bytes;
};

inline std::variant<AnonymizedPacket, SkipReason> anonymize(const bytes& link_frame) {
  auto parsed = parse_frame(link_frame);
  if (auto* skip = std::get_if<SkipReason>(&parsed)) return *skip;
  auto& frame = std::get<ParsedFrame>(parsed);
  if (frame.payload_bytes.empty()) return SkipReason::empty_payload;
  return AnonymizedPacket{std::move(frame.header_bytes), std::move(frame.payload_bytes)};
}

// ---------------------------------------------------------------------------
// flow assembly

struct IngestReport {
  std::size_t frames = 0;
  std::size_t skipped_ipv6 = 0;
  std::size_t skipped_not_ipv4 = 0;
  std::size_t skipped_not_tcp_udp = 0;
  std::size_t skipped_fragments = 0;
  std::size_t malformed = 0;
  std::size_t empty_payload_packets = 0;
  std::size_t dropped_long_flows = 0;
  std::size_t flows_emitted = 0;

  IngestReport& operator+=(const IngestReport& o) {
    frames += o.frames;
    skipped_ipv6 += o.skipped_ipv6;
    skipped_not_ipv4 += o.skipped_not_ipv4;
    skipped_not_tcp_udp += o.skipped_not_tcp_udp;
    skipped_fragments += o.skipped_fragments;
    malformed += o.malformed;
    empty_payload_packets += o.empty_payload_packets;
    dropped_long_flows += o.dropped_long_flows;
    flows_emitted += o.flows_emitted;
    return *this;
  }
};

namespace detail {

inline std::string endpoint_string(const Endpoint& e) {
  std::ostringstream os;
  os << int(e.addr[0]) << '.' << int(e.addr[1]) << '.' << int(e.addr[2]) << '.' << int(e.addr[3]) << ':'
     << e.port;
  return os.str();
}

}  // namespace detail

// Groups packets by bidirectional 5-tuple and applies, in order: the raw
// length filter, optional time blocking, the empty-payload drop and the
// 15-packet cap. The raw length filter counts every parsed packet of the
// 5-tuple, including payload-less ones. Forward is the direction of the
// first packet seen on the 5-tuple.
inline std::vector<TrafficFlow> assemble_flows(const std::vector<RawCapturePacket>& packets, int label,
                                               std::optional<std::int64_t> block_seconds,
                                               IngestReport* report = nullptr) {
  using Key = std::tuple<std::uint8_t, Endpoint, Endpoint>;
  struct Entry {
    std::int64_t ts;
    Direction dir;
    bytes header;
    bytes payload;
  };
  struct RawFlow {
    Key key;
    Endpoint first_src;
    std::vector<Entry> entries;
  };

  IngestReport local;
  std::map<Key, std::size_t> index;
  std::vector<RawFlow> raw;

  for (const auto& pkt : packets) {
    ++local.frames;
    std::variant<ParsedFrame, SkipReason> parsed;
    try {
      parsed = parse_frame(pkt.link_bytes);
    } catch (const error&) {
      ++local.malformed;
      continue;
    }
    if (auto* skip = std::get_if<SkipReason>(&parsed)) {
      switch (*skip) {
        case SkipReason::ipv6: ++local.skipped_ipv6; break;
        case SkipReason::not_ipv4: ++local.skipped_not_ipv4; break;
        case SkipReason::not_tcp_udp: ++local.skipped_not_tcp_udp; break;
        case SkipReason::fragment: ++local.skipped_fragments; break;
        case SkipReason::empty_payload: break;
      }
      continue;
    }
    auto& frame = std::get<ParsedFrame>(parsed);
    const auto& t = frame.tuple;
    Key key = t.src <= t.dst ? Key{t.protocol, t.src, t.dst} : Key{t.protocol, t.dst, t.src};
    auto [it, inserted] = index.try_emplace(key, raw.size());
    if (inserted) raw.push_back(RawFlow{key, t.src, {}});
    auto& flow = raw[it->second];
    const Direction dir = (t.src == flow.first_src) ? Direction::forward : Direction::backward;
    flow.entries.push_back(Entry{pkt.timestamp_us, dir, std::move(frame.header_bytes),
                                 std::move(frame.payload_bytes)});
  }

  std::vector<TrafficFlow> out;
  for (auto& flow : raw) {
    if (flow.entries.size() > max_raw_flow_length) {
      ++local.dropped_long_flows;
      continue;
    }
    const auto& [proto, a, b] = flow.key;
    const std::string base_key = std::to_string(proto) + ":" + detail::endpoint_string(a) + "-" +
                                 detail::endpoint_string(b);

    // block index -> packets, in time order
    std::map<std::int64_t, std::vector<Entry*>> blocks;
    const std::int64_t t0 = flow.entries.front().ts;
    for (auto& e : flow.entries) {
      std::int64_t block = 0;
      if (block_seconds && *block_seconds > 0) block = (e.ts - t0) / (*block_seconds * 1000000);
      blocks[block].push_back(&e);
    }
    for (auto& [block, entries] : blocks) {
      TrafficFlow tf;
      tf.label = label;
      tf.flow_key = block_seconds ? base_key + "/" + std::to_string(block) : base_key;
      for (auto* e : entries) {
        if (e->payload.empty()) {
          ++local.empty_payload_packets;
          continue;
        }
        if (tf.packets.size() >= max_flow_packets) continue;
        tf.packets.push_back(PacketRecord{e->header, e->payload, e->dir, e->ts});
      }
      if (tf.packets.empty()) continue;
      out.push_back(std::move(tf));
    }
  }
  local.flows_emitted = out.size();
  if (report) *report += local;
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines flow store

inline nlohmann::ordered_json flow_to_json(const TrafficFlow& flow) {
  nlohmann::ordered_json j;
  j["label"] = flow.label;
  j["flow_key"] = flow.flow_key;
  auto packets = nlohmann::ordered_json::array();
  for (const auto& p : flow.packets) {
    nlohmann::ordered_json pj;
    pj["ts_us"] = p.timestamp_us;
    pj["dir"] = p.direction == Direction::forward ? "fwd" : "bwd";
    pj["header_hex"] = to_hex(p.header_bytes);
    pj["payload_hex"] = to_hex(p.payload_bytes);
    packets.push_back(std::move(pj));
  }
  j["packets"] = std::move(packets);
  return j;
}

inline TrafficFlow flow_from_json(const nlohmann::json& j) {
  auto require = [&](const nlohmann::json& obj, const char* field) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(field))
      fail(errc::schema_violation, std::string("missing field \"") + field + "\"");
    return obj.at(field);
  };
  TrafficFlow flow;
  const auto& label = require(j, "label");
  if (!label.is_number_integer() || label.get<long long>() < 0)
    fail(errc::schema_violation, "label must be a non-negative integer");
  flow.label = label.get<int>();
  const auto& key = require(j, "flow_key");
  if (!key.is_string()) fail(errc::schema_violation, "flow_key must be a string");
  flow.flow_key = key.get<std::string>();
  const auto& packets = require(j, "packets");
  if (!packets.is_array()) fail(errc::schema_violation, "packets must be an array");
  if (packets.empty() || packets.size() > max_flow_packets)
    fail(errc::schema_violation, "a flow holds between 1 and 15 packets");
  for (const auto& pj : packets) {
    PacketRecord p;
    const auto& ts = require(pj, "ts_us");
    if (!ts.is_number_integer()) fail(errc::schema_violation, "ts_us must be an integer");
    p.timestamp_us = ts.get<std::int64_t>();
    const auto& dir = require(pj, "dir");
    if (dir == "fwd") {
      p.direction = Direction::forward;
    } else if (dir == "bwd") {
      p.direction = Direction::backward;
    } else {
      fail(errc::schema_violation, "dir must be \"fwd\" or \"bwd\"");
    }
    const auto& hh = require(pj, "header_hex");
    const auto& ph = require(pj, "payload_hex");
    if (!hh.is_string() || !ph.is_string()) fail(errc::schema_violation, "hex fields must be strings");
    p.header_bytes = from_hex(hh.get<std::string>());
    p.payload_bytes = from_hex(ph.get<std::string>());
    if (p.header_bytes.empty() || p.payload_bytes.empty())
      fail(errc::schema_violation, "header and payload must be non-empty");
    flow.packets.push_back(std::move(p));
  }
  return flow;
}

inline void write_flow_store(const std::vector<TrafficFlow>& flows, std::ostream& out) {
  for (const auto& f : flows) out << flow_to_json(f).dump() << '\n';
}

inline void write_flow_store(const std::vector<TrafficFlow>& flows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io_error, "cannot write " + path.string());
  write_flow_store(flows, out);
}

inline std::vector<TrafficFlow> read_flow_store(std::istream& in) {
  std::vector<TrafficFlow> flows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(errc::schema_violation, "line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      flows.push_back(flow_from_json(j));
    } catch (const error& e) {
      fail(errc::schema_violation, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return flows;
}

inline std::vector<TrafficFlow> read_flow_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  return read_flow_store(in);
}

// ---------------------------------------------------------------------------
// label sidecar

// Maps capture file names to class indices. Rows are `file,class`; a class
// column that parses as an integer is used verbatim, otherwise class names
// are indexed in sorted order. A first row whose class column reads "label"
// or "class" is treated as a header.
struct LabelMap {
  std::map<std::string, int> by_file;
  std::vector<std::string> class_names;
};

inline LabelMap read_label_map(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) fail(errc::schema_violation, "label row without a comma: " + line);
    std::string file = line.substr(0, comma), cls = line.substr(comma + 1);
    if (first && (cls == "label" || cls == "class")) {
      first = false;
      continue;
    }
    first = false;
    rows.emplace_back(file, cls);
  }
  auto is_int = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  LabelMap map;
  const bool numeric = std::all_of(rows.begin(), rows.end(), [&](auto& r) { return is_int(r.second); });
  if (numeric) {
    for (auto& [file, cls] : rows) map.by_file[file] = std::stoi(cls);
    return map;
  }
  std::vector<std::string> names;
  for (auto& r : rows) names.push_back(r.second);
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  for (auto& [file, cls] : rows)
    map.by_file[file] = static_cast<int>(std::lower_bound(names.begin(), names.end(), cls) - names.begin());
  map.class_names = std::move(names);
  return map;
}

inline LabelMap read_label_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  return read_label_map(in);
}

// ---------------------------------------------------------------------------
// frame construction (fixtures and synthetic traffic)

struct FrameSpec {
  std::uint8_t protocol = 6;
  Endpoint src;
  Endpoint dst;
  bytes ip_options;          // multiple of 4 bytes
  bytes transport_options;   // TCP only, multiple of 4 bytes
  bytes payload;
  std::uint16_t ip_id = 0;
  std::uint8_t ttl = 64;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint8_t tcp_flags = 0x18;
  std::uint16_t window = 0xffff;
};

inline std::uint16_t ipv4_checksum(const std::uint8_t* hdr, std::size_t len) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < len; i += 2) sum += detail::be16(hdr + i);
  while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

inline bytes build_frame(const FrameSpec& spec) {
  bytes f = {0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66, 0x77, 0x88, 0x99, 0xaa, 0xbb, 0x08, 0x00};
  const std::size_t ihl = 20 + spec.ip_options.size();
  const std::size_t thl = spec.protocol == 6 ? 20 + spec.transport_options.size() : 8;
  const std::size_t total = ihl + thl + spec.payload.size();
  const std::size_t ip_at = f.size();
  f.push_back(static_cast<std::uint8_t>(0x40 | (ihl / 4)));
  f.push_back(0);
  detail::store16(f, static_cast<std::uint16_t>(total), true);
  detail::store16(f, spec.ip_id, true);
  detail::store16(f, 0x4000, true);
  f.push_back(spec.ttl);
  f.push_back(spec.protocol);
  detail::store16(f, 0, true);
  f.insert(f.end(), spec.src.addr.begin(), spec.src.addr.end());
  f.insert(f.end(), spec.dst.addr.begin(), spec.dst.addr.end());
  f.insert(f.end(), spec.ip_options.begin(), spec.ip_options.end());
  const std::uint16_t csum = ipv4_checksum(f.data() + ip_at, ihl);
  f[ip_at + 10] = static_cast<std::uint8_t>(csum >> 8);
  f[ip_at + 11] = static_cast<std::uint8_t>(csum);

  detail::store16(f, spec.src.port, true);
  detail::store16(f, spec.dst.port, true);
  if (spec.protocol == 6) {
    detail::store32(f, spec.seq, true);
    detail::store32(f, spec.ack, true);
    f.push_back(static_cast<std::uint8_t>((thl / 4) << 4));
    f.push_back(spec.tcp_flags);
    detail::store16(f, spec.window, true);
    detail::store16(f, 0, true);
    detail::store16(f, 0, true);
    f.insert(f.end(), spec.transport_options.begin(), spec.transport_options.end());
  } else {
    detail::store16(f, static_cast<std::uint16_t>(8 + spec.payload.size()), true);
    detail::store16(f, 0, true);
  }
  f.insert(f.end(), spec.payload.begin(), spec.payload.end());
  return f;
}

}  // namespace unitgraph
