#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "unitgraph/synth.hpp"

using namespace unitgraph;

namespace {

constexpr std::size_t bare_header = 28;  // IPv4 0..11 + TCP 4..19

using Histogram = std::array<double, 256>;

// Option bytes and payload body bytes of every flow of one class.
Histogram class_histogram(const std::vector<TrafficFlow>& flows, int label, bool tunnel) {
  Histogram h{};
  for (const auto& f : flows) {
    if (f.label != label) continue;
    for (const auto& p : f.packets) {
      for (std::size_t i = bare_header; i < p.header_bytes.size(); ++i) h[p.header_bytes[i]] += 1;
      for (std::size_t i = tunnel ? bare_header : 0; i < p.payload_bytes.size(); ++i) h[p.payload_bytes[i]] += 1;
    }
  }
  return h;
}

// Two-sample chi-square statistic and its degrees of freedom.
std::pair<double, int> chi_square(const Histogram& a, const Histogram& b) {
  double na = 0, nb = 0;
  for (int i = 0; i < 256; ++i) {
    na += a[i];
    nb += b[i];
  }
  const double ka = std::sqrt(nb / na), kb = std::sqrt(na / nb);
  double stat = 0;
  int bins = 0;
  for (int i = 0; i < 256; ++i) {
    if (a[i] + b[i] == 0) continue;
    ++bins;
    const double d = ka * a[i] - kb * b[i];
    stat += d * d / (a[i] + b[i]);
  }
  return {stat, bins - 1};
}

// Upper 0.1% point of chi-square with k degrees of freedom (Wilson-Hilferty).
double chi_square_critical(int k) {
  const double z = 3.090232;
  const double c = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - c + z * std::sqrt(c), 3.0);
}

ClassRecipe recipe(const std::string& name, std::uint8_t base) {
  ClassRecipe r;
  r.name = name;
  for (int m = 0; m < 4; ++m) {
    r.option_motifs.push_back({static_cast<std::uint8_t>(base + m), static_cast<std::uint8_t>(base + m + 4)});
    r.payload_motifs.push_back(
        {static_cast<std::uint8_t>(base + 8 + m), static_cast<std::uint8_t>(base + 12 - m), static_cast<std::uint8_t>(base + m)});
  }
  return r;
}

}  // namespace

TEST(Generate, OneClassOneFlowOnePacket) {
  SynthSpec s;
  s.num_classes = 1;
  s.flows_per_class = 1;
  s.min_packets = s.max_packets = 1;
  auto flows = generate(s, 7);
  ASSERT_EQ(flows.size(), 1u);
  ASSERT_EQ(flows[0].packets.size(), 1u);
  const auto& p = flows[0].packets[0];
  EXPECT_FALSE(p.payload_bytes.empty());
  EXPECT_EQ((p.header_bytes.size() - bare_header) % 4, 0u);
  EXPECT_EQ(flows[0].label, 0);
  std::ostringstream out;
  write_flow_store(flows, out);
  std::istringstream in(out.str());
  EXPECT_EQ(read_flow_store(in), flows);
}

TEST(Generate, Deterministic) {
  SynthSpec s;
  s.flows_per_class = 5;
  EXPECT_EQ(generate(s, 3), generate(s, 3));
  EXPECT_NE(generate(s, 3), generate(s, 4));
}

TEST(Generate, IngestInvariants) {
  SynthSpec s;
  s.num_classes = 5;
  s.flows_per_class = 20;
  s.min_packets = 1;
  s.max_packets = 15;
  s.min_segment_bytes = 1;
  s.max_segment_bytes = 40;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto flows = generate(s, seed);
    EXPECT_EQ(flows.size(), 100u);
    std::set<std::string> keys;
    std::map<int, int> per_class;
    for (const auto& f : flows) {
      EXPECT_TRUE(keys.insert(f.flow_key).second) << f.flow_key;
      ++per_class[f.label];
      ASSERT_GE(f.packets.size(), 1u);
      ASSERT_LE(f.packets.size(), max_flow_packets);
      for (const auto& p : f.packets) {
        EXPECT_FALSE(p.payload_bytes.empty());
        EXPECT_GE(p.header_bytes.size(), bare_header);
        EXPECT_LE(p.header_bytes.size(), bare_header + 40);
        EXPECT_EQ(p.header_bytes.size() % 4, 0u);
      }
      EXPECT_EQ(flow_from_json(flow_to_json(f)), f);
    }
    for (int c = 0; c < 5; ++c) EXPECT_EQ(per_class[c], 20);
  }
}

TEST(Generate, FramesReassembleIntoFlows) {
  SynthSpec s;
  s.flows_per_class = 4;
  const auto frames = generate_frames(s, 9);
  std::vector<TrafficFlow> rebuilt;
  for (const auto& f : frames) {
    auto parsed = parse_pcap_bytes(encode_pcap(f.frames, f.label % 2 == 1));
    IngestReport report;
    auto flows = assemble_flows(parsed, f.label, std::nullopt, &report);
    ASSERT_EQ(flows.size(), 1u);
    EXPECT_EQ(report.empty_payload_packets, 0u);
    rebuilt.push_back(flows[0]);
  }
  EXPECT_EQ(rebuilt, generate(s, 9));
}

TEST(Generate, SeedsShareClassStatistics) {
  SynthSpec s;
  s.flows_per_class = 60;
  const auto a = generate(s, 100), b = generate(s, 200);
  EXPECT_NE(a, b);
  for (int c = 0; c < 3; ++c) {
    auto [stat, dof] = chi_square(class_histogram(a, c, true), class_histogram(b, c, true));
    ASSERT_GT(dof, 0);
    EXPECT_LT(stat, chi_square_critical(dof)) << "class " << c << " dof " << dof;
  }
  // distinct classes are far apart on the same statistic
  auto [between, dof] = chi_square(class_histogram(a, 0, true), class_histogram(a, 2, true));
  EXPECT_GT(between, chi_square_critical(dof));
}

TEST(Generate, DisjointVocabulariesAreCountSeparable) {
  SynthSpec s;
  s.num_classes = 3;
  s.flows_per_class = 30;
  s.tunnel_header = false;
  s.recipes = {recipe("a", 0x10), recipe("b", 0x40), recipe("c", 0x70)};
  const auto flows = generate(s, 5);

  // Unigram counts from the even-indexed flows, scored on the odd ones.
  std::array<Histogram, 3> train{};
  for (std::size_t i = 0; i < flows.size(); i += 2) {
    const auto h = class_histogram({flows[i]}, flows[i].label, false);
    for (int b = 0; b < 256; ++b) train[static_cast<std::size_t>(flows[i].label)][b] += h[b];
  }
  int correct = 0, total = 0;
  for (std::size_t i = 1; i < flows.size(); i += 2) {
    const auto h = class_histogram({flows[i]}, flows[i].label, false);
    int best = -1;
    double best_score = -1;
    for (int c = 0; c < 3; ++c) {
      double score = 0, mass = 0;
      for (int b = 0; b < 256; ++b) mass += train[c][b];
      for (int b = 0; b < 256; ++b) score += h[b] * train[c][b] / mass;
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    correct += best == flows[i].label;
    ++total;
  }
  EXPECT_EQ(correct, total);
}

TEST(Spec, ValidationAndJson) {
  SynthSpec s;
  EXPECT_NO_THROW(validate(s));
  auto bad = s;
  bad.recipes = default_recipes(3);
  bad.recipes[1] = bad.recipes[0];
  EXPECT_THROW(validate(bad), error);
  bad = s;
  bad.recipes = default_recipes(3);
  bad.recipes[0].noise_rate = 1.0;
  EXPECT_THROW(validate(bad), error);
  bad = s;
  bad.max_packets = 16;
  EXPECT_THROW(validate(bad), error);

  auto custom = s;
  custom.recipes = {recipe("a", 0x10), recipe("b", 0x40), recipe("c", 0x70)};
  custom.recipes[2].noise_rate = 0.25;
  const auto back = synth_spec_from_json(to_json(custom));
  EXPECT_EQ(back.recipes, custom.recipes);
  EXPECT_EQ(back.flows_per_class, custom.flows_per_class);
  EXPECT_EQ(generate(back, 1), generate(custom, 1));
}

TEST(Sweep, PointCounts) {
  TrainConfig base;
  EXPECT_EQ(sweep_points(base, SweepAxis::views).size(), 5u);
  EXPECT_EQ(sweep_points(base, SweepAxis::pairs).size(), 10u);
  EXPECT_EQ(sweep_points(base, SweepAxis::hetero).size(), 2u);
  EXPECT_EQ(sweep_points(base, SweepAxis::alpha).size(), 5u);
  EXPECT_EQ(sweep_points(base, SweepAxis::variants).size(), 6u);
  std::set<std::vector<int>> pairs;
  for (const auto& p : sweep_points(base, SweepAxis::pairs)) {
    ASSERT_EQ(p.config.views.size(), 2u);
    pairs.insert(p.config.views);
  }
  EXPECT_EQ(pairs.size(), 10u);
  EXPECT_EQ(parse_sweep_axis("hetero"), SweepAxis::hetero);
  EXPECT_THROW(parse_sweep_axis("depth"), error);
}

TEST(Sweep, HeteroTableHasEveryMetric) {
  SynthSpec s;
  s.flows_per_class = 5;
  s.min_packets = 2;
  s.max_packets = 3;
  auto split = stratified_split(generate(s, 2), 0.2, 1);
  TrainConfig base;
  base.embed_dim = 4;
  base.hidden_dim = 6;
  base.num_layers = 1;
  base.epochs = 1;
  base.batch_size = 6;
  int seen = 0;
  auto rows = ablation_sweep(base, SweepAxis::hetero, split, {}, [&](const SweepRow&) { ++seen; });
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(seen, 2);
  EXPECT_EQ(rows[0].point, "hetero");
  EXPECT_EQ(rows[1].point, "homogeneous");
  const auto j = sweep_json(rows);
  for (const auto& r : j)
    for (const char* key : {"flow_ac", "flow_f1", "packet_ac", "packet_f1"}) {
      ASSERT_TRUE(r.contains(key));
      EXPECT_TRUE(std::isfinite(r[key].get<double>()));
    }
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}
