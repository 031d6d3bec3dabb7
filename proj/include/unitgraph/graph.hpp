#pragma once

// PMI co-occurrence graphs over traffic-unit sequences, typed by the
// header/payload position of their endpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unitgraph/capture.hpp"
#include "unitgraph/error.hpp"
#include "unitgraph/tokenizer.hpp"

namespace unitgraph {

struct PmiConfig {
  int window_size = 5;
};

inline void validate(const PmiConfig& cfg) {
  if (cfg.window_size < 2) fail(errc::invalid_config, "PMI window size must be at least 2");
}

// Sliding-window occurrence counts. A sequence shorter than the window
// counts as one window spanning the whole sequence.
struct WindowStats {
  long windows = 0;
  std::unordered_map<unit_t, long> single;
  std::unordered_map<std::uint64_t, long> pair;  // key: (min << 32) | max

  static std::uint64_t pair_key(unit_t u, unit_t v) {
    if (u > v) std::swap(u, v);
    return (static_cast<std::uint64_t>(u) << 32) | v;
  }

  long count(unit_t u) const {
    auto it = single.find(u);
    return it == single.end() ? 0 : it->second;
  }

  long count(unit_t u, unit_t v) const {
    auto it = pair.find(pair_key(u, v));
    return it == pair.end() ? 0 : it->second;
  }

  // PMI(u,v) > 0  <=>  #W(u,v) * #W > #W(u) * #W(v), evaluated exactly.
  bool positive(unit_t u, unit_t v) const {
    const long joint = count(u, v);
    if (joint == 0) return false;
    return joint * windows > count(u) * count(v);
  }
};

inline WindowStats count_windows(std::span<const unit_t> seq, int window) {
  if (seq.empty()) fail(errc::empty_sequence, "cannot count windows over an empty sequence");
  WindowStats st;
  const std::size_t w = static_cast<std::size_t>(window);
  const std::size_t n = seq.size();
  st.windows = n >= w ? static_cast<long>(n - w + 1) : 1;
  const std::size_t span_len = std::min(w, n);
  std::vector<unit_t> distinct;
  distinct.reserve(span_len);
  for (long s = 0; s < st.windows; ++s) {
    distinct.assign(seq.begin() + s, seq.begin() + s + static_cast<long>(span_len));
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    for (std::size_t i = 0; i < distinct.size(); ++i) {
      ++st.single[distinct[i]];
      for (std::size_t j = i + 1; j < distinct.size(); ++j) ++st.pair[WindowStats::pair_key(distinct[i], distinct[j])];
    }
  }
  return st;
}

// Natural-log PMI from sliding-window co-occurrence; -inf when the two
// units never share a window.
inline double pmi(std::span<const unit_t> seq, unit_t u, unit_t v, const PmiConfig& cfg = {}) {
  validate(cfg);
  const auto st = count_windows(seq, cfg.window_size);
  const double total = static_cast<double>(st.windows);
  const long joint = st.count(u, v);
  if (joint == 0) return -std::numeric_limits<double>::infinity();
  const double p_uv = static_cast<double>(joint) / total;
  const double p_u = static_cast<double>(st.count(u)) / total;
  const double p_v = static_cast<double>(st.count(v)) / total;
  return std::log(p_uv / (p_u * p_v));
}

using UnitPair = std::pair<unit_t, unit_t>;

// Unordered value pairs with strictly positive PMI, stored once as (lo, hi)
// in ascending order; the relation they describe is symmetric.
inline std::vector<UnitPair> build_segment_edges(std::span<const unit_t> seq, const PmiConfig& cfg = {}) {
  validate(cfg);
  const auto st = count_windows(seq, cfg.window_size);
  std::vector<UnitPair> out;
  for (const auto& [key, joint] : st.pair) {
    const auto u = static_cast<unit_t>(key >> 32);
    const auto v = static_cast<unit_t>(key & 0xffffffffu);
    if (st.positive(u, v)) out.emplace_back(u, v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

enum class Segment : std::uint8_t { header, payload };
enum class EdgeType : std::uint8_t { hh, pp, hp };

inline constexpr std::array<EdgeType, 3> edge_types = {EdgeType::hh, EdgeType::pp, EdgeType::hp};

inline const char* to_string(EdgeType t) {
  switch (t) {
    case EdgeType::hh: return "hh";
    case EdgeType::pp: return "pp";
    case EdgeType::hp: return "hp";
  }
  return "?";
}

struct UnitNode {
  Segment segment = Segment::header;
  unit_t value = 0;

  friend bool operator==(const UnitNode&, const UnitNode&) = default;
};

using NodeIndex = std::uint32_t;
using EdgeList = std::vector<std::pair<NodeIndex, NodeIndex>>;  // (lo, hi), sorted, undirected

struct HeteroTrafficGraph {
  int bit_width = 8;
  std::vector<UnitNode> nodes;
  EdgeList edges_hh;
  EdgeList edges_pp;
  EdgeList edges_hp;

  std::size_t num_nodes() const { return nodes.size(); }

  const EdgeList& edges(EdgeType t) const {
    switch (t) {
      case EdgeType::hh: return edges_hh;
      case EdgeType::pp: return edges_pp;
      default: return edges_hp;
    }
  }
  EdgeList& edges(EdgeType t) {
    return const_cast<EdgeList&>(std::as_const(*this).edges(t));
  }

  std::size_t num_edges() const { return edges_hh.size() + edges_pp.size() + edges_hp.size(); }

  friend bool operator==(const HeteroTrafficGraph&, const HeteroTrafficGraph&) = default;
};

// Checks every structural invariant; returns an empty string when valid.
inline std::string check_invariants(const HeteroTrafficGraph& g) {
  const unit_t limit = 1u << g.bit_width;
  std::vector<UnitNode> seen = g.nodes;
  auto node_less = [](const UnitNode& a, const UnitNode& b) {
    return std::pair(a.segment, a.value) < std::pair(b.segment, b.value);
  };
  std::sort(seen.begin(), seen.end(), node_less);
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) return "duplicate node";
  for (const auto& n : g.nodes)
    if (n.value >= limit) return "node value out of range";
  for (EdgeType t : edge_types) {
    const auto& edges = g.edges(t);
    if (!std::is_sorted(edges.begin(), edges.end())) return std::string("unsorted ") + to_string(t) + " edges";
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end())
      return std::string("duplicate ") + to_string(t) + " edge";
    for (auto [a, b] : edges) {
      if (a >= b) return "edge not stored as (lo, hi) or self-loop";
      if (b >= g.nodes.size()) return "edge endpoint out of range";
      const auto sa = g.nodes[a].segment, sb = g.nodes[b].segment;
      if (t == EdgeType::hh && (sa != Segment::header || sb != Segment::header)) return "hh edge leaves the header";
      if (t == EdgeType::pp && (sa != Segment::payload || sb != Segment::payload)) return "pp edge leaves the payload";
      if (t == EdgeType::hp && sa == sb) return "hp edge within one segment";
    }
  }
  return {};
}

namespace detail {

inline std::vector<unit_t> distinct_sorted(const std::vector<unit_t>& v) {
  std::vector<unit_t> out = v;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace detail

// Header nodes (ascending value) precede payload nodes (ascending value).
// hh and pp edges come from per-segment PMI; hp edges from PMI over the
// whole sequence, kept only when one endpoint value occurs in the header
// and the other in the payload.
inline HeteroTrafficGraph build_hetero_graph(const UnitSequence& units, const PmiConfig& cfg = {}) {
  validate(cfg);
  if (units.header_units.empty() || units.payload_units.empty())
    fail(errc::degenerate_segment, "both header and payload need at least one unit");

  HeteroTrafficGraph g;
  g.bit_width = units.bit_width;
  const auto header_values = detail::distinct_sorted(units.header_units);
  const auto payload_values = detail::distinct_sorted(units.payload_units);
  std::unordered_map<unit_t, NodeIndex> header_index, payload_index;
  for (auto v : header_values) {
    header_index[v] = static_cast<NodeIndex>(g.nodes.size());
    g.nodes.push_back({Segment::header, v});
  }
  for (auto v : payload_values) {
    payload_index[v] = static_cast<NodeIndex>(g.nodes.size());
    g.nodes.push_back({Segment::payload, v});
  }

  for (auto [u, v] : build_segment_edges(units.header_units, cfg))
    g.edges_hh.emplace_back(header_index.at(u), header_index.at(v));
  for (auto [u, v] : build_segment_edges(units.payload_units, cfg))
    g.edges_pp.emplace_back(payload_index.at(u), payload_index.at(v));

  std::vector<unit_t> full = units.header_units;
  full.insert(full.end(), units.payload_units.begin(), units.payload_units.end());
  for (auto [u, v] : build_segment_edges(full, cfg)) {
    auto hu = header_index.find(u), pv = payload_index.find(v);
    if (hu != header_index.end() && pv != payload_index.end()) g.edges_hp.emplace_back(hu->second, pv->second);
    auto hv = header_index.find(v), pu = payload_index.find(u);
    if (hv != header_index.end() && pu != payload_index.end()) g.edges_hp.emplace_back(hv->second, pu->second);
  }
  std::sort(g.edges_hh.begin(), g.edges_hh.end());
  std::sort(g.edges_pp.begin(), g.edges_pp.end());
  std::sort(g.edges_hp.begin(), g.edges_hp.end());
  return g;
}

inline std::map<int, HeteroTrafficGraph> build_views(const PacketRecord& pkt, std::span<const int> views,
                                                     const PmiConfig& cfg = {}) {
  std::map<int, HeteroTrafficGraph> out;
  for (auto& [bits, seq] : tokenize_packet(pkt, views)) out.emplace(bits, build_hetero_graph(seq, cfg));
  return out;
}

// Graphviz rendering; node labels read "h:<value>" / "p:<value>" and each
// edge carries its type as both a `type` attribute and a color.
inline std::string to_dot(const HeteroTrafficGraph& g, const std::string& name = "unitgraph") {
  std::ostringstream os;
  os << "graph \"" << name << "\" {\n";
  os << "  // " << g.bit_width << "-bit units\n";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    const bool hdr = n.segment == Segment::header;
    os << "  n" << i << " [label=\"" << (hdr ? "h:" : "p:") << n.value << "\", segment=\""
       << (hdr ? "header" : "payload") << "\", shape=" << (hdr ? "box" : "ellipse") << "];\n";
  }
  auto emit = [&](EdgeType t, const char* color) {
    for (auto [a, b] : g.edges(t))
      os << "  n" << a << " -- n" << b << " [type=\"" << to_string(t) << "\", color=" << color << "];\n";
  };
  emit(EdgeType::hh, "blue");
  emit(EdgeType::pp, "red");
  emit(EdgeType::hp, "darkgreen");
  os << "}\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Graph cache: little-endian binary, versioned.
//
//   magic "UGRAPHS\0", u32 version (1), u32 window, u32 #views, i32 views[]
//   u64 #flows, then per flow: i32 label, u32 #packets, and per packet and
//   view (in header order): i32 bits, u32 #nodes, nodes as (u8 segment,
//   u32 value), then for hh/pp/hp: u32 #edges, edges as (u32, u32).

struct GraphCache {
  int window_size = 5;
  std::vector<int> views;
  struct Flow {
    int label = 0;
    std::vector<std::vector<HeteroTrafficGraph>> packets;  // [packet][view]
  };
  std::vector<Flow> flows;
};

inline constexpr std::uint32_t graph_cache_version = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) fail(errc::truncated, "graph cache ends early");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace detail

inline GraphCache build_graph_cache(const std::vector<TrafficFlow>& flows, std::span<const int> views,
                                    const PmiConfig& cfg) {
  GraphCache cache;
  cache.window_size = cfg.window_size;
  cache.views.assign(views.begin(), views.end());
  for (const auto& f : flows) {
    GraphCache::Flow cf;
    cf.label = f.label;
    for (const auto& p : f.packets) {
      auto built = build_views(p, views, cfg);
      std::vector<HeteroTrafficGraph> per_view;
      for (int bits : views) per_view.push_back(built.at(bits));
      cf.packets.push_back(std::move(per_view));
    }
    cache.flows.push_back(std::move(cf));
  }
  return cache;
}

inline void write_graph_cache(const GraphCache& cache, std::ostream& out) {
  out.write("UGRAPHS", 8);
  detail::put<std::uint32_t>(out, graph_cache_version);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.window_size));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.views.size()));
  for (int v : cache.views) detail::put<std::int32_t>(out, v);
  detail::put<std::uint64_t>(out, cache.flows.size());
  for (const auto& f : cache.flows) {
    detail::put<std::int32_t>(out, f.label);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.packets.size()));
    for (const auto& views : f.packets) {
      for (const auto& g : views) {
        detail::put<std::int32_t>(out, g.bit_width);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.nodes.size()));
        for (const auto& n : g.nodes) {
          detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(n.segment));
          detail::put<std::uint32_t>(out, n.value);
        }
        for (EdgeType t : edge_types) {
          detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.edges(t).size()));
          for (auto [a, b] : g.edges(t)) {
            detail::put<std::uint32_t>(out, a);
            detail::put<std::uint32_t>(out, b);
          }
        }
      }
    }
  }
}

inline GraphCache read_graph_cache(std::istream& in) {
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::string(magic, 7) != "UGRAPHS") fail(errc::bad_magic, "not a graph cache");
  if (detail::get<std::uint32_t>(in) != graph_cache_version) fail(errc::schema_violation, "unknown graph cache version");
  GraphCache cache;
  cache.window_size = static_cast<int>(detail::get<std::uint32_t>(in));
  const auto nviews = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < nviews; ++i) cache.views.push_back(detail::get<std::int32_t>(in));
  const auto nflows = detail::get<std::uint64_t>(in);
  for (std::uint64_t f = 0; f < nflows; ++f) {
    GraphCache::Flow cf;
    cf.label = detail::get<std::int32_t>(in);
    const auto npackets = detail::get<std::uint32_t>(in);
    for (std::uint32_t p = 0; p < npackets; ++p) {
      std::vector<HeteroTrafficGraph> views;
      for (std::uint32_t v = 0; v < nviews; ++v) {
        HeteroTrafficGraph g;
        g.bit_width = detail::get<std::int32_t>(in);
        const auto nnodes = detail::get<std::uint32_t>(in);
        for (std::uint32_t i = 0; i < nnodes; ++i) {
          UnitNode n;
          n.segment = static_cast<Segment>(detail::get<std::uint8_t>(in));
          n.value = detail::get<std::uint32_t>(in);
          g.nodes.push_back(n);
        }
        for (EdgeType t : edge_types) {
          const auto ne = detail::get<std::uint32_t>(in);
          for (std::uint32_t i = 0; i < ne; ++i) {
            const auto a = detail::get<std::uint32_t>(in);
            const auto b = detail::get<std::uint32_t>(in);
            g.edges(t).emplace_back(a, b);
          }
        }
        if (auto why = check_invariants(g); !why.empty()) fail(errc::schema_violation, "graph cache: " + why);
        views.push_back(std::move(g));
      }
      cf.packets.push_back(std::move(views));
    }
    cache.flows.push_back(std::move(cf));
  }
  return cache;
}

inline void write_graph_cache(const GraphCache& cache, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io_error, "cannot write " + path.string());
  write_graph_cache(cache, out);
}

inline GraphCache read_graph_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  return read_graph_cache(in);
}

}  // namespace unitgraph
