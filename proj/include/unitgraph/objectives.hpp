#pragma once

// Supervised contrastive loss, graph and flow augmentations, and the
// classification losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "unitgraph/encoders.hpp"
#include "unitgraph/error.hpp"
#include "unitgraph/graph.hpp"
#include "unitgraph/tensor.hpp"

namespace unitgraph {

struct AugmentConfig {
  double restart_prob = 0.8;
  double walk_target_fraction = 0.5;
  double max_walk_steps_factor = 4.0;  // walk budget = factor * |V|
  double flip_prob = 0.3;
  double packet_drop_prob = 0.6;
  double temperature = 0.07;
  bool stop_anchor_gradient = false;
};

inline void validate(const AugmentConfig& cfg) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(errc::invalid_config, std::string(name) + " must lie in [0, 1]");
  };
  prob(cfg.restart_prob, "restart_prob");
  prob(cfg.walk_target_fraction, "walk_target_fraction");
  prob(cfg.flip_prob, "flip_prob");
  prob(cfg.packet_drop_prob, "packet_drop_prob");
  if (!(cfg.temperature > 0.0)) fail(errc::invalid_config, "temperature must be positive");
  if (!(cfg.max_walk_steps_factor > 0.0)) fail(errc::invalid_config, "max_walk_steps_factor must be positive");
}

struct ContrastiveBatch {
  Tensor z;
  std::vector<int> labels;
  std::vector<bool> anchor_mask;
};

// L = sum_i -1/|M(i)| sum_{m in M(i)} log( exp(z_i.z_m/t) / sum_{k != i} exp(z_i.z_k/t) )
// over L2-normalized rows; rows without a same-label partner contribute 0.
inline Tensor scl_loss(const Tensor& z, const std::vector<int>& labels, double temperature) {
  const Index n = z.rows();
  if (n < 2) fail(errc::degenerate_batch, "contrastive batch needs at least two rows");
  if (static_cast<Index>(labels.size()) != n) fail(errc::shape_mismatch, "one label per contrastive row");
  Tensor unit = l2_normalize_rows(z);
  Tensor sim = scale(matmul(unit, transpose(unit)), 1.0 / temperature);
  Matrix others = Matrix::Ones(n, n);
  others.diagonal().setZero();
  Matrix weights = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    Index positives = 0;
    for (Index m = 0; m < n; ++m)
      if (m != i && labels[static_cast<std::size_t>(m)] == labels[static_cast<std::size_t>(i)]) ++positives;
    if (positives == 0) continue;
    for (Index m = 0; m < n; ++m)
      if (m != i && labels[static_cast<std::size_t>(m)] == labels[static_cast<std::size_t>(i)])
        weights(i, m) = -1.0 / static_cast<double>(positives);
  }
  return weighted_sum(masked_log_softmax_rows(sim, std::move(others)), std::move(weights));
}

inline Tensor scl_loss(const ContrastiveBatch& batch, double temperature) {
  return scl_loss(batch.z, batch.labels, temperature);
}

// ---------------------------------------------------------------------------
// graph augmentations

// Induced subgraph on the node subset `keep` (ascending original indices).
inline HeteroTrafficGraph induced_subgraph(const HeteroTrafficGraph& g, const std::vector<NodeIndex>& keep) {
  HeteroTrafficGraph out;
  out.bit_width = g.bit_width;
  std::vector<std::int64_t> remap(g.num_nodes(), -1);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    remap[keep[i]] = static_cast<std::int64_t>(i);
    out.nodes.push_back(g.nodes[keep[i]]);
  }
  for (EdgeType t : edge_types) {
    for (auto [a, b] : g.edges(t)) {
      if (remap[a] < 0 || remap[b] < 0) continue;
      out.edges(t).emplace_back(static_cast<NodeIndex>(remap[a]), static_cast<NodeIndex>(remap[b]));
    }
  }
  return out;
}

struct WalkSample {
  HeteroTrafficGraph graph;
  NodeIndex start = 0;               // in original numbering
  std::vector<NodeIndex> kept;       // original indices of the output nodes
};

// Random walk with restart from a uniformly chosen start node over the
// union of all edge types. Stops once ceil(fraction * |V|) distinct nodes
// (at least one) are visited or the step budget is spent.
template <typename Rng>
WalkSample random_walk_sample(const HeteroTrafficGraph& g, const AugmentConfig& cfg, Rng& rng) {
  const std::size_t n = g.num_nodes();
  if (n == 0) fail(errc::degenerate_segment, "random walk on an empty graph");
  std::vector<std::vector<NodeIndex>> nbrs(n);
  for (EdgeType t : edge_types)
    for (auto [a, b] : g.edges(t)) {
      nbrs[a].push_back(b);
      nbrs[b].push_back(a);
    }
  for (auto& row : nbrs) std::sort(row.begin(), row.end());

  std::uniform_int_distribution<std::size_t> pick_start(0, n - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const auto start = static_cast<NodeIndex>(pick_start(rng));
  const std::size_t target =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.walk_target_fraction * static_cast<double>(n))));
  const auto budget = static_cast<std::size_t>(cfg.max_walk_steps_factor * static_cast<double>(n));

  std::vector<bool> visited(n, false);
  visited[start] = true;
  std::size_t count = 1;
  NodeIndex at = start;
  for (std::size_t step = 0; step < budget && count < target; ++step) {
    if (coin(rng) < cfg.restart_prob || nbrs[at].empty()) {
      at = start;
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, nbrs[at].size() - 1);
    at = nbrs[at][pick(rng)];
    if (!visited[at]) {
      visited[at] = true;
      ++count;
    }
  }
  WalkSample s;
  s.start = start;
  for (std::size_t i = 0; i < n; ++i)
    if (visited[i]) s.kept.push_back(static_cast<NodeIndex>(i));
  s.graph = induced_subgraph(g, s.kept);
  return s;
}

template <typename Rng>
HeteroTrafficGraph augment_random_walk(const HeteroTrafficGraph& g, const AugmentConfig& cfg, Rng& rng) {
  return random_walk_sample(g, cfg, rng).graph;
}

// Each node is picked with probability flip_prob and its value replaced by
// its N-bit complement. Structure is untouched.
template <typename Rng>
HeteroTrafficGraph augment_feature_flip(const HeteroTrafficGraph& g, const AugmentConfig& cfg, Rng& rng) {
  HeteroTrafficGraph out = g;
  const unit_t all_ones = (1u << g.bit_width) - 1;
  std::bernoulli_distribution flip(cfg.flip_prob);
  for (auto& node : out.nodes)
    if (flip(rng)) node.value = all_ones - node.value;
  return out;
}

// Packet keep-mask for flow augmentation: each packet is dropped with
// probability p_drop; a flow that loses every packet keeps one chosen
// uniformly at random.
template <typename Rng>
std::vector<bool> sample_keep_mask(std::size_t length, double p_drop, Rng& rng) {
  if (length == 0) fail(errc::empty_flow, "cannot augment an empty flow");
  std::bernoulli_distribution drop(p_drop);
  std::vector<bool> keep(length);
  bool any = false;
  for (std::size_t i = 0; i < length; ++i) {
    keep[i] = !drop(rng);
    any = any || keep[i];
  }
  if (!any) {
    std::uniform_int_distribution<std::size_t> pick(0, length - 1);
    keep[pick(rng)] = true;
  }
  return keep;
}

// ---------------------------------------------------------------------------
// contrastive tasks

inline Tensor anchor_rows(const Tensor& anchors, const AugmentConfig& cfg) {
  return cfg.stop_anchor_gradient ? detach(anchors) : anchors;
}

inline std::vector<int> twice(const std::vector<int>& labels) {
  std::vector<int> out = labels;
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

// Sum over views of scl(walk-augmented ∪ anchors) + scl(flip-augmented ∪
// anchors). `graphs[v][i]` is packet i's graph in view slot v and
// `anchors[v]` holds the unaugmented packet embeddings of that view.
template <typename Rng>
Tensor packet_contrastive_loss(const TrafficModel& model, const std::vector<Tensor>& anchors,
                               const std::vector<std::vector<const HeteroTrafficGraph*>>& graphs,
                               const std::vector<int>& labels, const AugmentConfig& cfg, Rng& rng,
                               const ForwardContext& ctx) {
  if (labels.size() < 2) fail(errc::degenerate_batch, "packet contrastive loss needs at least two packets");
  Tensor total;
  for (std::size_t v = 0; v < graphs.size(); ++v) {
    std::vector<HeteroTrafficGraph> walked, flipped;
    walked.reserve(graphs[v].size());
    flipped.reserve(graphs[v].size());
    for (const auto* g : graphs[v]) walked.push_back(augment_random_walk(*g, cfg, rng));
    for (const auto* g : graphs[v]) flipped.push_back(augment_feature_flip(*g, cfg, rng));
    const Tensor anchor = anchor_rows(anchors[v], cfg);
    Tensor walk_emb = model.encode_graphs(make_graph_batch(walked), ctx);
    Tensor flip_emb = model.encode_graphs(make_graph_batch(flipped), ctx);
    Tensor term = add(scl_loss(concat_rows({walk_emb, anchor}), twice(labels), cfg.temperature),
                      scl_loss(concat_rows({flip_emb, anchor}), twice(labels), cfg.temperature));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

// Sum over views of scl(packet-dropped flows ∪ anchor flows). Dropped
// packets enter the recurrence as zero vectors.
template <typename Rng>
Tensor flow_contrastive_loss(const TrafficModel& model, const std::vector<Tensor>& packet_embeddings,
                             const FlowLayout& layout, const std::vector<Tensor>& flow_anchors,
                             const std::vector<int>& flow_labels, const AugmentConfig& cfg, Rng& rng,
                             const ForwardContext& ctx) {
  if (flow_labels.size() < 2) fail(errc::degenerate_batch, "flow contrastive loss needs at least two flows");
  const auto& views = model.config().views;
  Tensor total;
  for (std::size_t v = 0; v < views.size(); ++v) {
    std::vector<double> factors(static_cast<std::size_t>(packet_embeddings[v].rows()), 1.0);
    for (const auto& flow : layout) {
      auto keep = sample_keep_mask(flow.size(), cfg.packet_drop_prob, rng);
      for (std::size_t i = 0; i < flow.size(); ++i) factors[flow[i]] = keep[i] ? 1.0 : 0.0;
    }
    Tensor dropped = scale_rows(packet_embeddings[v], factors);
    Tensor augmented = model.encode_flows(views[v], dropped, layout, ctx);
    Tensor term = scl_loss(concat_rows({augmented, anchor_rows(flow_anchors[v], cfg)}), twice(flow_labels),
                           cfg.temperature);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

// ---------------------------------------------------------------------------
// classification

// Mean cross entropy against label-smoothed targets
// q = (1 - eps) * onehot(y) + eps / C.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double label_smoothing = 0.0) {
  const Index n = logits.rows(), c = logits.cols();
  if (static_cast<Index>(labels.size()) != n) fail(errc::shape_mismatch, "one label per logit row");
  Matrix target = Matrix::Constant(n, c, label_smoothing / static_cast<double>(c));
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) fail(errc::shape_mismatch, "label " + std::to_string(y) + " outside the logit range");
    target(i, y) += 1.0 - label_smoothing;
  }
  return weighted_sum(log_softmax_rows(logits), -target / static_cast<double>(n));
}

struct ClassificationLosses {
  Tensor flow;
  Tensor packet;
};

inline ClassificationLosses classification_losses(const Tensor& flow_logits, const Tensor& packet_logits,
                                                  const std::vector<int>& flow_labels,
                                                  const std::vector<int>& packet_labels, double label_smoothing) {
  return {cross_entropy(flow_logits, flow_labels, label_smoothing),
          cross_entropy(packet_logits, packet_labels, label_smoothing)};
}

}  // namespace unitgraph
