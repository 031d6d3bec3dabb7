#include <gtest/gtest.h>

#include <set>

#include "model_fixtures.hpp"
#include "unitgraph/objectives.hpp"
#include "unitgraph/synth.hpp"

using namespace unitgraph;
using fixture::embed_one;

namespace {

HeteroTrafficGraph single_node(int bits, unit_t v) {
  HeteroTrafficGraph g;
  g.bit_width = bits;
  g.nodes = {{Segment::header, v}};
  return g;
}

// Direct recomputation of the graph encoder for an edgeless graph.
Matrix isolated_reference(const TrafficModel& m, int bits, unit_t value) {
  const auto& cfg = m.config();
  Matrix h = m.params().at(TrafficModel::view_prefix(bits) + ".embedding").value().row(value);
  for (int l = 1; l <= cfg.num_layers; ++l) {
    Matrix z = Matrix::Zero(1, cfg.hidden_dim);
    for (EdgeType t : edge_types) {
      const auto base = TrafficModel::layer_prefix(bits, l, t);
      const Matrix& w = m.params().at(base + ".weight").value();
      z += h * w.topRows(h.cols()) + m.params().at(base + ".bias").value();
    }
    h = z.cwiseMax(0.0);
  }
  return h;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Hgnn, PermutationInvariance) {
  TrafficModel model(fixture::small_config(), 11);
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int gi = 0; gi < 20; ++gi) {
    const int bits = gi % 2 ? 8 : 4;
    auto g = fixture::random_graph(rng, bits);
    const Matrix base = embed_one(model, g);
    for (int k = 0; k < 20; ++k) {
      auto pg = fixture::permute(g, fixture::random_permutation(g.num_nodes(), rng));
      worst = std::max(worst, (embed_one(model, pg) - base).cwiseAbs().maxCoeff());
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Hgnn, EdgeTypeIsolation) {
  std::mt19937_64 rng(21);
  for (EdgeType t : edge_types) {
    TrafficModel model(fixture::small_config(), 5);
    fixture::zero_type(model, t);
    int with_edges = 0;
    for (int gi = 0; gi < 20; ++gi) {
      auto g = fixture::random_graph(rng, 4);
      with_edges += !g.edges(t).empty();
      const Matrix diff = embed_one(model, g) - embed_one(model, fixture::strip(g, t));
      EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-12) << to_string(t);
    }
    EXPECT_GT(with_edges, 0) << to_string(t);
  }
}

TEST(Hgnn, EdgeTypesMatterWhenWeightsLive) {
  TrafficModel model(fixture::small_config(), 5);
  std::mt19937_64 rng(22);
  auto g = fixture::random_graph(rng, 4);
  ASSERT_FALSE(g.edges_hp.empty());
  EXPECT_GT((embed_one(model, g) - embed_one(model, fixture::strip(g, EdgeType::hp))).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Hgnn, SingleNodeUsesSelfPathsOnly) {
  TrafficModel model(fixture::small_config(), 3);
  for (unit_t v : {0u, 7u, 15u}) {
    const Matrix got = embed_one(model, single_node(4, v));
    EXPECT_LE((got - isolated_reference(model, 4, v)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Hgnn, ReadoutIsMeanOfNodeStates) {
  TrafficModel model(fixture::small_config(), 4);
  std::mt19937_64 rng(5);
  std::vector<HeteroTrafficGraph> gs{fixture::random_graph(rng, 8), fixture::random_graph(rng, 8)};
  auto batch = make_graph_batch(gs);
  const Matrix states = model.hgnn_node_states(batch, {}).value();
  const Matrix pooled = model.encode_graphs(batch, {}).value();
  for (std::size_t k = 0; k < 2; ++k) {
    const auto lo = batch.graph_offsets[k], hi = batch.graph_offsets[k + 1];
    Matrix mean = Matrix::Zero(1, states.cols());
    for (auto r = lo; r < hi; ++r) mean += states.row(r);
    mean /= static_cast<double>(hi - lo);
    EXPECT_LE((pooled.row(static_cast<Index>(k)) - mean).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Hgnn, BatchingMatchesSingleGraphs) {
  TrafficModel model(fixture::small_config(), 4);
  std::mt19937_64 rng(6);
  std::vector<HeteroTrafficGraph> gs;
  for (int i = 0; i < 5; ++i) gs.push_back(fixture::random_graph(rng, 4));
  const Matrix pooled = model.encode_graphs(make_graph_batch(gs), {}).value();
  for (std::size_t i = 0; i < gs.size(); ++i)
    EXPECT_LE((pooled.row(static_cast<Index>(i)) - embed_one(model, gs[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Hgnn, HomogeneousGivesEqualTypeGradients) {
  auto cfg = fixture::small_config({4});
  cfg.homogeneous = true;
  TrafficModel model(cfg, 8);
  std::mt19937_64 rng(9);
  std::vector<HeteroTrafficGraph> gs{fixture::random_graph(rng, 4), fixture::random_graph(rng, 4)};
  sum(model.encode_graphs(make_graph_batch(gs), {})).backward();
  for (int l = 1; l <= cfg.num_layers; ++l) {
    const auto& hh = model.params().at(TrafficModel::layer_prefix(4, l, EdgeType::hh) + ".weight").grad();
    const auto& pp = model.params().at(TrafficModel::layer_prefix(4, l, EdgeType::pp) + ".weight").grad();
    const auto& hp = model.params().at(TrafficModel::layer_prefix(4, l, EdgeType::hp) + ".weight").grad();
    EXPECT_GT(hh.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(hh, pp);
    EXPECT_EQ(hh, hp);
  }
}

TEST(Hgnn, HomogeneousIgnoresEdgeTypeLabels) {
  auto cfg = fixture::small_config({4});
  cfg.homogeneous = true;
  TrafficModel model(cfg, 8);
  std::mt19937_64 rng(10);
  auto g = fixture::random_graph(rng, 4);
  // Moving every edge under one type keeps the merged neighborhoods.
  auto relabeled = g;
  for (EdgeType t : {EdgeType::hh, EdgeType::pp}) {
    auto& e = relabeled.edges(t);
    relabeled.edges_hp.insert(relabeled.edges_hp.end(), e.begin(), e.end());
    e.clear();
  }
  std::sort(relabeled.edges_hp.begin(), relabeled.edges_hp.end());
  EXPECT_LE((embed_one(model, g) - embed_one(model, relabeled)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lstm, SinglePacketIsOneStepFromZero) {
  auto cfg = fixture::small_config({8});
  TrafficModel model(cfg, 13);
  Matrix x = Matrix::Random(1, cfg.hidden_dim);
  const Matrix got = model.encode_flows(8, Tensor(x), {{0}}, {}).value();
  const Matrix& w = model.params().at("view8.lstm.weight").value();
  const Matrix& b = model.params().at("view8.lstm.bias").value();
  const Index hd = cfg.hidden_dim;
  Matrix in(1, 2 * hd);
  in << x, Matrix::Zero(1, hd);
  const Matrix gates = in * w + b;
  for (Index j = 0; j < hd; ++j) {
    const double c = sigm(gates(0, j)) * std::tanh(gates(0, 2 * hd + j));
    EXPECT_NEAR(got(0, j), sigm(gates(0, 3 * hd + j)) * std::tanh(c), 1e-12);
  }
}

TEST(Lstm, ForgetBiasStartsAtOne) {
  auto cfg = fixture::small_config({4});
  TrafficModel model(cfg, 13);
  const Matrix& b = model.params().at("view4.lstm.bias").value();
  const double bound = 1.0 / std::sqrt(2.0 * cfg.hidden_dim);
  for (Index j = 0; j < cfg.hidden_dim; ++j) {
    EXPECT_GE(b(0, cfg.hidden_dim + j), 1.0 - bound);
    EXPECT_LE(std::abs(b(0, j)), bound);
  }
}

TEST(Lstm, OrderSensitive) {
  auto cfg = fixture::small_config({8});
  TrafficModel model(cfg, 15);
  Matrix x = Matrix::Random(3, cfg.hidden_dim);
  const Matrix fwd = model.encode_flows(8, Tensor(x), {{0, 1, 2}}, {}).value();
  const Matrix rev = model.encode_flows(8, Tensor(x), {{2, 1, 0}}, {}).value();
  EXPECT_GT((fwd - rev).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Lstm, RaggedBatchMatchesSingleFlows) {
  auto cfg = fixture::small_config({8});
  TrafficModel model(cfg, 15);
  Matrix x = Matrix::Random(6, cfg.hidden_dim);
  const FlowLayout layout{{0, 1, 2, 3}, {4}, {5, 2}};
  const Matrix all = model.encode_flows(8, Tensor(x), layout, {}).value();
  for (std::size_t f = 0; f < layout.size(); ++f) {
    const Matrix one = model.encode_flows(8, Tensor(x), {layout[f]}, {}).value();
    EXPECT_LE((all.row(static_cast<Index>(f)) - one).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Lstm, ZeroWeightsGiveZeroState) {
  auto cfg = fixture::small_config({8});
  TrafficModel model(cfg, 16);
  model.params().at("view8.lstm.weight").mutable_value().setZero();
  model.params().at("view8.lstm.bias").mutable_value().setZero();
  Matrix x = Matrix::Random(4, cfg.hidden_dim) * 10.0;
  const Matrix f = model.encode_flows(8, Tensor(x), {{0, 1}, {2, 3}}, {}).value();
  EXPECT_EQ(f, Matrix::Zero(2, cfg.hidden_dim));
}

TEST(Lstm, EmptyFlowRejected) {
  TrafficModel model(fixture::small_config({8}), 1);
  try {
    model.encode_flows(8, Tensor(Matrix::Zero(1, 10)), {{}}, {});
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::empty_flow);
  }
}

TEST(Heads, ShapeAndUnsharedNames) {
  auto cfg = fixture::small_config({4, 8}, 5);
  TrafficModel model(cfg, 17);
  std::vector<Tensor> in{Tensor(Matrix::Random(3, cfg.hidden_dim)), Tensor(Matrix::Random(3, cfg.hidden_dim))};
  EXPECT_EQ(model.flow_logits(in).shape(), (std::vector<Index>{3, 5}));
  EXPECT_EQ(model.packet_logits(in).shape(), (std::vector<Index>{3, 5}));
  std::set<std::string> flow, packet;
  for (const auto& n : model.params().names()) {
    if (n.starts_with("flow_head.")) flow.insert(n.substr(10));
    if (n.starts_with("packet_head.")) packet.insert(n.substr(12));
  }
  EXPECT_EQ(flow.size(), 4u);
  EXPECT_EQ(flow, packet);  // same layout, distinct tensors
  EXPECT_NE(model.params().at("flow_head.fc1.weight").value(), model.params().at("packet_head.fc1.weight").value());
  const auto names = model.params().names();
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
}

TEST(Heads, DoublingInputChangesLogits) {
  auto cfg = fixture::small_config({4, 8}, 3);
  TrafficModel model(cfg, 18);
  Matrix a = Matrix::Random(2, cfg.hidden_dim), b = Matrix::Random(2, cfg.hidden_dim);
  const Matrix one = model.flow_logits({Tensor(a), Tensor(b)}).value();
  const Matrix two = model.flow_logits({Tensor(2 * a), Tensor(2 * b)}).value();
  EXPECT_GT((one - two).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Model, ParameterShapes) {
  ModelConfig cfg;  // defaults: 64 / 128 / 4 layers / views 4, 8
  TrafficModel model(cfg, 1);
  EXPECT_EQ(model.params().at("view4.embedding").shape(), (std::vector<Index>{16, 64}));
  EXPECT_EQ(model.params().at("view8.embedding").shape(), (std::vector<Index>{256, 64}));
  EXPECT_EQ(model.params().at("view8.hgnn.layer1.hp.weight").shape(), (std::vector<Index>{128, 128}));
  EXPECT_EQ(model.params().at("view8.hgnn.layer4.hh.weight").shape(), (std::vector<Index>{256, 128}));
  EXPECT_EQ(model.params().at("flow_head.fc1.weight").shape(), (std::vector<Index>{256, 128}));
  EXPECT_EQ(model.params().size(), 2u * (1 + 4 * 3 * 2 + 2) + 8u);
}

TEST(Model, EveryParameterReceivesGradient) {
  SynthSpec spec;
  spec.flows_per_class = 2;
  auto flows = generate(spec, 3);
  auto cfg = fixture::small_config({4, 8}, 3);
  cfg.num_layers = 2;
  TrafficModel model(cfg, 19);

  std::vector<std::vector<HeteroTrafficGraph>> per_view(2);
  FlowLayout layout;
  std::vector<int> flow_labels, packet_labels;
  for (const auto& f : flows) {
    const int y = f.label;
    flow_labels.push_back(y);
    layout.emplace_back();
    for (const auto& p : f.packets) {
      auto g = build_views(p, std::vector<int>{4, 8});
      layout.back().push_back(static_cast<std::uint32_t>(per_view[0].size()));
      per_view[0].push_back(g.at(4));
      per_view[1].push_back(g.at(8));
      packet_labels.push_back(y);
    }
  }
  std::vector<Tensor> packets, flow_emb;
  for (std::size_t v = 0; v < 2; ++v) {
    packets.push_back(model.encode_graphs(make_graph_batch(per_view[v]), {}));
    flow_emb.push_back(model.encode_flows(cfg.views[v], packets.back(), layout, {}));
  }
  auto losses = classification_losses(model.flow_logits(flow_emb), model.packet_logits(packets), flow_labels,
                                      packet_labels, 0.0);
  add(losses.flow, losses.packet).backward();
  for (const auto& p : model.params().all()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    EXPECT_GT(p.tensor.grad().cwiseAbs().maxCoeff(), 0.0) << p.name;
  }
}

TEST(Model, ConfigValidation) {
  auto cfg = fixture::small_config();
  cfg.views = {5};
  EXPECT_THROW(TrafficModel(cfg, 1), error);
  cfg = fixture::small_config();
  cfg.num_layers = 0;
  EXPECT_THROW(TrafficModel(cfg, 1), error);
}
