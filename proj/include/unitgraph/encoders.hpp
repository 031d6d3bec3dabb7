#pragma once

// Heterogeneous traffic-graph encoder, recurrent flow encoder and the two
// classification heads.
//
// Layer l of the graph encoder, for every edge type r in {hh, pp, hp}:
//
//   m_r(v)  = mean of h(l-1)_u over the r-neighbors u of v   (0 if none)
//   z_r(v)  = W_r [h(l-1)_v ; m_r(v)] + b_r
//   h(l)_v  = relu(sum_r z_r(v))
//
// W_r is stored as one (2*in x out) matrix per type and layer; its top
// half multiplies the node's own state and its bottom half the neighbor
// mean. Packet embeddings are the mean of the last layer's node states.

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unitgraph/error.hpp"
#include "unitgraph/graph.hpp"
#include "unitgraph/parameters.hpp"
#include "unitgraph/tensor.hpp"

namespace unitgraph {

struct ModelConfig {
  std::vector<int> views{4, 8};
  int embed_dim = 64;
  int hidden_dim = 128;
  int num_layers = 4;
  int num_classes = 2;
  double gnn_dropout = 0.0;
  double lstm_dropout = 0.0;
  // Collapses the three edge types into one: neighbor means run over the
  // union of all edges and every layer uses the average of its three
  // per-type weight groups, so those groups always receive equal gradients.
  bool homogeneous = false;
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.views.empty()) fail(errc::invalid_config, "at least one view is required");
  for (int v : cfg.views) require_width(v);
  if (cfg.num_layers < 1) fail(errc::invalid_config, "num_layers must be >= 1");
  if (cfg.embed_dim <= 0 || cfg.hidden_dim <= 0) fail(errc::invalid_config, "dimensions must be positive");
  if (cfg.num_classes < 1) fail(errc::invalid_config, "num_classes must be >= 1");
}

// Forward-pass mode: dropout is active only when training.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

// Disjoint union of several graphs of one view, laid out for batched
// message passing.
struct GraphBatch {
  int bit_width = 8;
  std::vector<std::uint32_t> features;
  std::array<std::shared_ptr<const Adjacency>, 3> typed;
  std::shared_ptr<const Adjacency> merged;
  std::vector<std::uint32_t> graph_offsets{0};

  std::size_t num_graphs() const { return graph_offsets.size() - 1; }
  std::size_t num_nodes() const { return features.size(); }
};

inline GraphBatch make_graph_batch(std::span<const HeteroTrafficGraph* const> graphs) {
  if (graphs.empty()) fail(errc::degenerate_batch, "graph batch is empty");
  GraphBatch b;
  b.bit_width = graphs.front()->bit_width;
  std::size_t total = 0;
  for (const auto* g : graphs) {
    if (g->bit_width != b.bit_width) fail(errc::invalid_config, "graph batch mixes unit widths");
    if (g->num_nodes() == 0) fail(errc::degenerate_segment, "graph without nodes");
    total += g->num_nodes();
  }
  std::array<std::vector<std::vector<std::uint32_t>>, 3> nbrs;
  for (auto& n : nbrs) n.resize(total);
  std::uint32_t base = 0;
  for (const auto* g : graphs) {
    for (const auto& node : g->nodes) b.features.push_back(node.value);
    for (std::size_t t = 0; t < 3; ++t) {
      for (auto [x, y] : g->edges(edge_types[t])) {
        nbrs[t][base + x].push_back(base + y);
        nbrs[t][base + y].push_back(base + x);
      }
    }
    base += static_cast<std::uint32_t>(g->num_nodes());
    b.graph_offsets.push_back(base);
  }
  auto pack = [&](auto&& rows_of) {
    auto adj = std::make_shared<Adjacency>();
    adj->offsets.reserve(total + 1);
    for (std::size_t v = 0; v < total; ++v) {
      auto row = rows_of(v);
      std::sort(row.begin(), row.end());
      adj->indices.insert(adj->indices.end(), row.begin(), row.end());
      adj->offsets.push_back(static_cast<std::uint32_t>(adj->indices.size()));
    }
    return std::shared_ptr<const Adjacency>(std::move(adj));
  };
  for (std::size_t t = 0; t < 3; ++t) b.typed[t] = pack([&](std::size_t v) { return nbrs[t][v]; });
  b.merged = pack([&](std::size_t v) {
    std::vector<std::uint32_t> all;
    for (std::size_t t = 0; t < 3; ++t) all.insert(all.end(), nbrs[t][v].begin(), nbrs[t][v].end());
    return all;
  });
  return b;
}

inline GraphBatch make_graph_batch(const std::vector<HeteroTrafficGraph>& graphs) {
  std::vector<const HeteroTrafficGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_graph_batch(ptrs);
}

// Packet row indices of each flow, in packet order.
using FlowLayout = std::vector<std::vector<std::uint32_t>>;

class TrafficModel {
 public:
  TrafficModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    validate(cfg_);
    std::mt19937_64 rng(seed);
    const Index e = cfg_.embed_dim, h = cfg_.hidden_dim;
    for (int bits : cfg_.views) {
      const std::string v = view_prefix(bits);
      params_.add(v + ".embedding", uniform_init(Index(1) << bits, e, e, rng));
      for (int l = 1; l <= cfg_.num_layers; ++l) {
        const Index in = l == 1 ? e : h;
        for (EdgeType t : edge_types) {
          const std::string base = layer_prefix(bits, l, t);
          params_.add(base + ".weight", uniform_init(2 * in, h, 2 * in, rng));
          params_.add(base + ".bias", uniform_init(1, h, 2 * in, rng));
        }
      }
      params_.add(v + ".lstm.weight", uniform_init(2 * h, 4 * h, 2 * h, rng));
      Matrix bias = uniform_init(1, 4 * h, 2 * h, rng);
      bias.middleCols(h, h).array() += 1.0;  // forget gate
      params_.add(v + ".lstm.bias", std::move(bias));
    }
    const Index joined = h * static_cast<Index>(cfg_.views.size());
    for (const char* head : {"flow_head", "packet_head"}) {
      const std::string p = head;
      params_.add(p + ".fc1.weight", uniform_init(joined, h, joined, rng));
      params_.add(p + ".fc1.bias", uniform_init(1, h, joined, rng));
      params_.add(p + ".fc2.weight", uniform_init(h, cfg_.num_classes, h, rng));
      params_.add(p + ".fc2.bias", uniform_init(1, cfg_.num_classes, h, rng));
    }
  }

  TrafficModel(ModelConfig cfg, const ParameterStore& trained) : TrafficModel(std::move(cfg), 0) {
    params_.assign(trained);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  static std::string view_prefix(int bits) { return "view" + std::to_string(bits); }
  static std::string layer_prefix(int bits, int layer, EdgeType t) {
    return view_prefix(bits) + ".hgnn.layer" + std::to_string(layer) + "." + to_string(t);
  }

  // Final-layer node states for every node of the batch.
  Tensor hgnn_node_states(const GraphBatch& batch, const ForwardContext& ctx) const {
    const int bits = batch.bit_width;
    Tensor h = gather_rows(params_.at(view_prefix(bits) + ".embedding"), batch.features);
    for (int l = 1; l <= cfg_.num_layers; ++l) {
      const Index in = h.cols();
      std::array<Tensor, 3> w, b;
      for (std::size_t t = 0; t < 3; ++t) {
        w[t] = params_.at(layer_prefix(bits, l, edge_types[t]) + ".weight");
        b[t] = params_.at(layer_prefix(bits, l, edge_types[t]) + ".bias");
      }
      Tensor z;
      if (cfg_.homogeneous) {
        Tensor wm = scale(add(add(w[0], w[1]), w[2]), 1.0 / 3.0);
        Tensor bm = scale(add(add(b[0], b[1]), b[2]), 1.0 / 3.0);
        z = matmul(h, slice_rows(wm, 0, in));
        if (!batch.merged->indices.empty())
          z = add(z, matmul(neighbor_mean(h, batch.merged), slice_rows(wm, in, in)));
        z = add(z, bm);
      } else {
        Tensor self_w = add(add(slice_rows(w[0], 0, in), slice_rows(w[1], 0, in)), slice_rows(w[2], 0, in));
        z = matmul(h, self_w);
        for (std::size_t t = 0; t < 3; ++t) {
          // an edge type absent from the whole batch contributes exactly zero
          if (batch.typed[t]->indices.empty()) continue;
          z = add(z, matmul(neighbor_mean(h, batch.typed[t]), slice_rows(w[t], in, in)));
        }
        z = add(z, add(add(b[0], b[1]), b[2]));
      }
      h = relu(z);
      if (l < cfg_.num_layers && ctx.training) h = dropout(h, cfg_.gnn_dropout, *ctx.rng);
    }
    return h;
  }

  // One packet embedding (row) per graph in the batch.
  Tensor encode_graphs(const GraphBatch& batch, const ForwardContext& ctx) const {
    return segment_mean(hgnn_node_states(batch, ctx), batch.graph_offsets);
  }

  // LSTM over each flow's packet rows; returns the last hidden state of
  // every flow. `packets` has one row per packet embedding.
  Tensor encode_flows(int bits, const Tensor& packets, const FlowLayout& layout, const ForwardContext& ctx) const {
    if (layout.empty()) fail(errc::degenerate_batch, "no flows to encode");
    std::size_t steps = 0;
    for (const auto& f : layout) {
      if (f.empty()) fail(errc::empty_flow, "flow without packets");
      steps = std::max(steps, f.size());
    }
    const Tensor& w = params_.at(view_prefix(bits) + ".lstm.weight");
    const Tensor& bias = params_.at(view_prefix(bits) + ".lstm.bias");
    const Index hd = cfg_.hidden_dim;
    const Index flows = static_cast<Index>(layout.size());
    Tensor h = Tensor::zeros(flows, hd);
    Tensor c = Tensor::zeros(flows, hd);
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<std::uint32_t> rows;
      std::vector<bool> active;
      for (const auto& f : layout) {
        active.push_back(t < f.size());
        rows.push_back(t < f.size() ? f[t] : f.front());
      }
      Tensor x = gather_rows(packets, std::move(rows));
      if (ctx.training) x = dropout(x, cfg_.lstm_dropout, *ctx.rng);
      Tensor gates = add(matmul(concat_cols({x, h}), w), bias);
      Tensor in_gate = sigmoid(slice_cols(gates, 0, hd));
      Tensor forget_gate = sigmoid(slice_cols(gates, hd, hd));
      Tensor cell_in = tanh(slice_cols(gates, 2 * hd, hd));
      Tensor out_gate = sigmoid(slice_cols(gates, 3 * hd, hd));
      Tensor c_next = add(hadamard(forget_gate, c), hadamard(in_gate, cell_in));
      Tensor h_next = hadamard(out_gate, tanh(c_next));
      c = select_rows(active, c_next, c);
      h = select_rows(active, h_next, h);
    }
    if (ctx.training) h = dropout(h, cfg_.lstm_dropout, *ctx.rng);
    return h;
  }

  Tensor flow_logits(const std::vector<Tensor>& per_view) const { return head("flow_head", per_view); }
  Tensor packet_logits(const std::vector<Tensor>& per_view) const { return head("packet_head", per_view); }

 private:
  Tensor head(const std::string& name, const std::vector<Tensor>& per_view) const {
    if (per_view.size() != cfg_.views.size()) fail(errc::shape_mismatch, name + " needs one input per view");
    Tensor x = per_view.size() == 1 ? per_view.front() : concat_cols(per_view);
    Tensor hidden = relu(add(matmul(x, params_.at(name + ".fc1.weight")), params_.at(name + ".fc1.bias")));
    return add(matmul(hidden, params_.at(name + ".fc2.weight")), params_.at(name + ".fc2.bias"));
  }

  ModelConfig cfg_;
  ParameterStore params_;
};

}  // namespace unitgraph
