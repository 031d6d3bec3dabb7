#pragma once

// Labeled synthetic traffic with class signal in byte co-occurrence, and the
// ablation sweep harness.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unitgraph/capture.hpp"
#include "unitgraph/error.hpp"
#include "unitgraph/trainer.hpp"

namespace unitgraph {

// A class is a pair of motif pools. Segments are filled by concatenating
// motifs drawn uniformly from the pool, then each byte is replaced by a
// uniform random byte with probability noise_rate.
struct ClassRecipe {
  std::string name;
  std::vector<bytes> option_motifs;   // TCP option bytes
  std::vector<bytes> payload_motifs;  // application payload bytes
  double noise_rate = 0.0;

  bool operator==(const ClassRecipe&) const = default;
};

struct SynthSpec {
  int num_classes = 3;
  int flows_per_class = 100;
  int min_packets = 5;
  int max_packets = 10;
  int min_segment_bytes = 12;  // option length; rounded up to a multiple of 4
  int max_segment_bytes = 20;
  // Payload opens with a copy of the outer header (an encapsulated inner
  // header), so header-like bytes border the motifs in both segments.
  bool tunnel_header = true;
  std::vector<ClassRecipe> recipes;  // empty: default_recipes(num_classes)
};

namespace detail {

inline std::uint8_t swap_nibbles(std::uint8_t b) { return static_cast<std::uint8_t>((b << 4) | (b >> 4)); }

inline std::vector<bytes> swapped(const std::vector<bytes>& motifs) {
  std::vector<bytes> out = motifs;
  for (auto& m : out)
    for (auto& b : m) b = swap_nibbles(b);
  return out;
}

// Motifs whose bytes take the high nibble from `hi` and the low from `lo`.
inline std::vector<bytes> motif_pool(std::mt19937_64& rng, const std::vector<std::uint8_t>& hi,
                                     const std::vector<std::uint8_t>& lo, int count, int length) {
  std::uniform_int_distribution<std::size_t> pick_hi(0, hi.size() - 1), pick_lo(0, lo.size() - 1);
  std::set<bytes> seen;
  std::vector<bytes> out;
  while (static_cast<int>(out.size()) < count) {
    bytes m;
    for (int i = 0; i < length; ++i) m.push_back(static_cast<std::uint8_t>((hi[pick_hi(rng)] << 4) | lo[pick_lo(rng)]));
    if (seen.insert(m).second) out.push_back(std::move(m));
  }
  return out;
}

}  // namespace detail

// Classes 0 and 1 place the same nibble pairs in opposite segments: 0 puts
// motifs over {1-4}x{9-c} in the options and their nibble swaps in the
// payload, 1 the reverse. Class 2 uses the unswapped motifs in both
// segments. Further classes draw both pools over the full byte range.
inline std::vector<ClassRecipe> default_recipes(int num_classes) {
  std::mt19937_64 rng(0x7261667431ULL);
  const std::vector<std::uint8_t> even{1, 2, 3, 4}, odd{9, 10, 11, 12};
  const auto base = detail::motif_pool(rng, even, odd, 8, 3);
  const auto flipped = detail::swapped(base);
  std::vector<ClassRecipe> out;
  for (int c = 0; c < num_classes; ++c) {
    ClassRecipe r;
    r.name = "class" + std::to_string(c);
    if (c == 0) {
      r.option_motifs = base;
      r.payload_motifs = flipped;
    } else if (c == 1) {
      r.option_motifs = flipped;
      r.payload_motifs = base;
    } else if (c == 2) {
      r.option_motifs = base;
      r.payload_motifs = base;
    } else {
      std::vector<std::uint8_t> all(16);
      std::iota(all.begin(), all.end(), std::uint8_t{0});
      r.option_motifs = detail::motif_pool(rng, all, all, 8, 3);
      r.payload_motifs = detail::motif_pool(rng, all, all, 8, 3);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ClassRecipe> resolved_recipes(const SynthSpec& spec) {
  return spec.recipes.empty() ? default_recipes(spec.num_classes) : spec.recipes;
}

inline void validate(const SynthSpec& spec) {
  if (spec.num_classes < 1) fail(errc::invalid_config, "num_classes must be >= 1");
  if (spec.flows_per_class < 1) fail(errc::invalid_config, "flows_per_class must be >= 1");
  if (spec.min_packets < 1 || spec.max_packets < spec.min_packets ||
      spec.max_packets > static_cast<int>(max_flow_packets))
    fail(errc::invalid_config, "packet range must satisfy 1 <= min <= max <= 15");
  if (spec.min_segment_bytes < 1 || spec.max_segment_bytes < spec.min_segment_bytes || spec.max_segment_bytes > 40)
    fail(errc::invalid_config, "segment range must satisfy 1 <= min <= max <= 40");
  const auto recipes = resolved_recipes(spec);
  if (static_cast<int>(recipes.size()) != spec.num_classes)
    fail(errc::invalid_config, "need one recipe per class");
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    const auto& r = recipes[i];
    if (!(r.noise_rate >= 0.0 && r.noise_rate < 1.0)) fail(errc::invalid_config, "noise_rate must lie in [0, 1)");
    auto nonempty = [](const std::vector<bytes>& pool) {
      return !pool.empty() && std::all_of(pool.begin(), pool.end(), [](const bytes& m) { return !m.empty(); });
    };
    if (!nonempty(r.option_motifs) || !nonempty(r.payload_motifs))
      fail(errc::invalid_config, "recipe " + r.name + " has an empty motif pool or motif");
    for (std::size_t j = 0; j < i; ++j)
      if (recipes[j].option_motifs == r.option_motifs && recipes[j].payload_motifs == r.payload_motifs)
        fail(errc::invalid_config, "recipes " + recipes[j].name + " and " + r.name + " are identical");
  }
}

namespace detail {

inline bytes fill_segment(std::mt19937_64& rng, const std::vector<bytes>& motifs, std::size_t length, double noise) {
  std::uniform_int_distribution<std::size_t> pick(0, motifs.size() - 1);
  std::uniform_int_distribution<int> any_byte(0, 255);
  std::bernoulli_distribution flip(noise);
  bytes out;
  while (out.size() < length) {
    const auto& m = motifs[pick(rng)];
    out.insert(out.end(), m.begin(), m.end());
  }
  out.resize(length);
  if (noise > 0.0)
    for (auto& b : out)
      if (flip(rng)) b = static_cast<std::uint8_t>(any_byte(rng));
  return out;
}

// Anonymized header length without options: IPv4 bytes 0..11 plus TCP
// bytes 4..19.
inline constexpr std::size_t bare_header_bytes = 28;

}  // namespace detail

struct SynthFlowFrames {
  int label = 0;
  std::vector<RawCapturePacket> frames;
};

// Ethernet frames of every flow, grouped per flow in class-major order.
// Each flow uses its own derived random stream and a unique address pair.
inline std::vector<SynthFlowFrames> generate_frames(const SynthSpec& spec, std::uint64_t seed) {
  validate(spec);
  const auto recipes = resolved_recipes(spec);
  std::vector<SynthFlowFrames> out;
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto& recipe = recipes[static_cast<std::size_t>(c)];
    for (int f = 0; f < spec.flows_per_class; ++f) {
      std::seed_seq ss{seed, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(f)};
      std::mt19937_64 rng(ss);
      const int serial = c * spec.flows_per_class + f;
      FrameSpec base;
      base.src = Endpoint{{10, static_cast<std::uint8_t>(c), static_cast<std::uint8_t>(f >> 8),
                           static_cast<std::uint8_t>(f & 0xff)},
                          static_cast<std::uint16_t>(1024 + (rng() % 60000))};
      base.dst = Endpoint{{172, 16, static_cast<std::uint8_t>(serial >> 8), static_cast<std::uint8_t>(serial & 0xff)},
                          static_cast<std::uint16_t>(443)};
      base.window = static_cast<std::uint16_t>(rng());
      std::uint32_t seq_fwd = static_cast<std::uint32_t>(rng()), seq_bwd = static_cast<std::uint32_t>(rng());
      std::uniform_int_distribution<int> n_packets(spec.min_packets, spec.max_packets);
      std::uniform_int_distribution<int> seg_len(spec.min_segment_bytes, spec.max_segment_bytes);
      std::bernoulli_distribution backward(0.4);

      SynthFlowFrames flow;
      flow.label = c;
      std::int64_t ts = 1'700'000'000'000'000 + static_cast<std::int64_t>(rng() % 1'000'000);
      const int count = n_packets(rng);
      for (int p = 0; p < count; ++p) {
        FrameSpec fs = base;
        const bool back = p > 0 && backward(rng);
        if (back) std::swap(fs.src, fs.dst);
        fs.ip_id = static_cast<std::uint16_t>(rng());
        fs.seq = back ? seq_bwd : seq_fwd;
        fs.ack = back ? seq_fwd : seq_bwd;
        const auto len = static_cast<std::size_t>((seg_len(rng) + 3) / 4 * 4);
        fs.transport_options = detail::fill_segment(rng, recipe.option_motifs, len, recipe.noise_rate);
        bytes body = detail::fill_segment(rng, recipe.payload_motifs, len, recipe.noise_rate);
        if (spec.tunnel_header) {
          // The inner copy must match the final outer header, whose length
          // fields depend on the payload size: size the placeholder first.
          fs.payload.assign(detail::bare_header_bytes + body.size(), 0);
          auto outer = std::get<AnonymizedPacket>(anonymize(build_frame(fs)));
          bytes payload(outer.header_bytes.begin(), outer.header_bytes.begin() + detail::bare_header_bytes);
          payload.insert(payload.end(), body.begin(), body.end());
          fs.payload = std::move(payload);
        } else {
          fs.payload = std::move(body);
        }
        (back ? seq_bwd : seq_fwd) += static_cast<std::uint32_t>(fs.payload.size());
        bytes frame = build_frame(fs);
        const auto orig = static_cast<std::uint32_t>(frame.size());
        flow.frames.push_back(RawCapturePacket{ts, std::move(frame), orig});
        ts += 1000 + static_cast<std::int64_t>(rng() % 200'000);
      }
      out.push_back(std::move(flow));
    }
  }
  return out;
}

// Flows go through the same assembly path as captured traffic.
inline std::vector<TrafficFlow> generate(const SynthSpec& spec, std::uint64_t seed) {
  std::vector<TrafficFlow> out;
  for (const auto& f : generate_frames(spec, seed)) {
    auto flows = assemble_flows(f.frames, f.label, std::nullopt);
    for (auto& fl : flows) out.push_back(std::move(fl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// spec files (JSON)

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  try {
    s.num_classes = j.value("num_classes", s.num_classes);
    s.flows_per_class = j.value("flows_per_class", s.flows_per_class);
    s.min_packets = j.value("min_packets", s.min_packets);
    s.max_packets = j.value("max_packets", s.max_packets);
    s.min_segment_bytes = j.value("min_segment_bytes", s.min_segment_bytes);
    s.max_segment_bytes = j.value("max_segment_bytes", s.max_segment_bytes);
    s.tunnel_header = j.value("tunnel_header", s.tunnel_header);
    if (j.contains("recipes")) {
      for (const auto& r : j.at("recipes")) {
        ClassRecipe cr;
        cr.name = r.value("name", "class" + std::to_string(s.recipes.size()));
        for (const auto& m : r.at("option_motifs")) cr.option_motifs.push_back(from_hex(m.get<std::string>()));
        for (const auto& m : r.at("payload_motifs")) cr.payload_motifs.push_back(from_hex(m.get<std::string>()));
        cr.noise_rate = r.value("noise_rate", 0.0);
        s.recipes.push_back(std::move(cr));
      }
      if (!j.contains("num_classes")) s.num_classes = static_cast<int>(s.recipes.size());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid_config, std::string("synth spec: ") + e.what());
  }
  validate(s);
  return s;
}

inline nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["num_classes"] = s.num_classes;
  j["flows_per_class"] = s.flows_per_class;
  j["min_packets"] = s.min_packets;
  j["max_packets"] = s.max_packets;
  j["min_segment_bytes"] = s.min_segment_bytes;
  j["max_segment_bytes"] = s.max_segment_bytes;
  j["tunnel_header"] = s.tunnel_header;
  nlohmann::ordered_json recipes = nlohmann::ordered_json::array();
  for (const auto& r : resolved_recipes(s)) {
    nlohmann::ordered_json jr;
    jr["name"] = r.name;
    jr["option_motifs"] = nlohmann::ordered_json::array();
    for (const auto& m : r.option_motifs) jr["option_motifs"].push_back(to_hex(m));
    jr["payload_motifs"] = nlohmann::ordered_json::array();
    for (const auto& m : r.payload_motifs) jr["payload_motifs"].push_back(to_hex(m));
    jr["noise_rate"] = r.noise_rate;
    recipes.push_back(std::move(jr));
  }
  j["recipes"] = std::move(recipes);
  return j;
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid_config, path.string() + ": " + e.what());
  }
  return synth_spec_from_json(j);
}

// ---------------------------------------------------------------------------
// ablation sweeps

enum class SweepAxis { views, pairs, hetero, alpha, beta, variants };

inline SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "views") return SweepAxis::views;
  if (name == "pairs") return SweepAxis::pairs;
  if (name == "hetero") return SweepAxis::hetero;
  if (name == "alpha") return SweepAxis::alpha;
  if (name == "beta") return SweepAxis::beta;
  if (name == "variants") return SweepAxis::variants;
  fail(errc::invalid_config, "unknown sweep axis " + name);
}

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::views: return "views";
    case SweepAxis::pairs: return "pairs";
    case SweepAxis::hetero: return "hetero";
    case SweepAxis::alpha: return "alpha";
    case SweepAxis::beta: return "beta";
    case SweepAxis::variants: return "variants";
  }
  return "?";
}

struct SweepPoint {
  std::string label;
  TrainConfig config;
};

// views: each width alone; pairs: every unordered pair of widths; hetero:
// typed vs merged edges; alpha/beta: the given weights; variants: the full
// model and its one-component removals.
inline std::vector<SweepPoint> sweep_points(const TrainConfig& base, SweepAxis axis,
                                            const std::vector<double>& weights = {0.0, 0.25, 0.5, 0.75, 1.0}) {
  std::vector<SweepPoint> out;
  auto with = [&](std::string label, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    out.push_back({std::move(label), std::move(c)});
  };
  switch (axis) {
    case SweepAxis::views:
      for (int w : supported_widths) with(std::to_string(w) + "-bit", [&](TrainConfig& c) { c.views = {w}; });
      break;
    case SweepAxis::pairs:
      for (std::size_t i = 0; i < supported_widths.size(); ++i)
        for (std::size_t j = i + 1; j < supported_widths.size(); ++j) {
          const int a = supported_widths[i], b = supported_widths[j];
          with(std::to_string(a) + "+" + std::to_string(b), [&](TrainConfig& c) { c.views = {a, b}; });
        }
      break;
    case SweepAxis::hetero:
      with("hetero", [](TrainConfig& c) { c.homogeneous = false; });
      with("homogeneous", [](TrainConfig& c) { c.homogeneous = true; });
      break;
    case SweepAxis::alpha:
      for (double w : weights) {
        std::ostringstream os;
        os << "alpha=" << w;
        with(os.str(), [&](TrainConfig& c) { c.alpha = w; });
      }
      break;
    case SweepAxis::beta:
      for (double w : weights) {
        std::ostringstream os;
        os << "beta=" << w;
        with(os.str(), [&](TrainConfig& c) { c.beta = w; });
      }
      break;
    case SweepAxis::variants:
      with("full", [](TrainConfig&) {});
      with("w/o 4-bit view", [](TrainConfig& c) { c.views = {8}; });
      with("w/o 8-bit view", [](TrainConfig& c) { c.views = {4}; });
      with("w/o hetero", [](TrainConfig& c) { c.homogeneous = true; });
      with("w/o packet CL", [](TrainConfig& c) { c.alpha = 0.0; });
      with("w/o flow CL", [](TrainConfig& c) { c.beta = 0.0; });
      break;
  }
  return out;
}

struct SweepRow {
  std::string axis;
  std::string point;
  std::string views;
  Metrics metrics;  // at the best epoch by held-out flow macro-F1
  int best_epoch = -1;
  double seconds = 0.0;
};

inline std::vector<SweepRow> ablation_sweep(const TrainConfig& base, SweepAxis axis, const Split& split,
                                            const std::vector<double>& weights = {0.0, 0.25, 0.5, 0.75, 1.0},
                                            const std::function<void(const SweepRow&)>& on_row = {}) {
  validate(base);
  std::vector<SweepRow> rows;
  for (const auto& point : sweep_points(base, axis, weights)) {
    const TrainResult r = train(split.train, split.test, point.config);
    SweepRow row{to_string(axis), point.label, format_views(point.config.views), r.report.best, r.report.best_epoch,
                 r.report.seconds};
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::ordered_json to_json(const SweepRow& r) {
  nlohmann::ordered_json j;
  j["axis"] = r.axis;
  j["point"] = r.point;
  j["views"] = r.views;
  j["flow_ac"] = r.metrics.flow.accuracy;
  j["flow_f1"] = r.metrics.flow.macro_f1;
  j["packet_ac"] = r.metrics.packet.accuracy;
  j["packet_f1"] = r.metrics.packet.macro_f1;
  j["best_epoch"] = r.best_epoch;
  j["seconds"] = r.seconds;
  return j;
}

inline nlohmann::ordered_json sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) j.push_back(to_json(r));
  return j;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "axis,point,views,flow_ac,flow_f1,packet_ac,packet_f1,best_epoch,seconds\n";
  os.precision(6);
  os << std::fixed;
  for (const auto& r : rows)
    os << r.axis << ",\"" << r.point << "\",\"" << r.views << "\"," << r.metrics.flow.accuracy << ','
       << r.metrics.flow.macro_f1 << ',' << r.metrics.packet.accuracy << ',' << r.metrics.packet.macro_f1 << ','
       << r.best_epoch << ',' << r.seconds << '\n';
  return os.str();
}

}  // namespace unitgraph
