#pragma once

// Multi-task training loop, evaluation metrics and checkpoint directories.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unitgraph/capture.hpp"
#include "unitgraph/encoders.hpp"
#include "unitgraph/error.hpp"
#include "unitgraph/graph.hpp"
#include "unitgraph/objectives.hpp"
#include "unitgraph/parameters.hpp"

namespace unitgraph {

// Defaults follow the ISCX-VPN column of the published hyperparameter table.
struct TrainConfig {
  int batch_size = 16;
  int gradient_accumulation = 1;
  int epochs = 20;
  double lr_max = 1e-2;
  double lr_min = 1e-4;
  double warmup_fraction = 0.1;
  double label_smoothing = 0.0;
  double gnn_dropout = 0.0;
  double lstm_dropout = 0.0;
  double alpha = 1.0;  // packet-level contrastive weight
  double beta = 0.5;   // flow-level contrastive weight
  std::uint64_t seed = 7;
  std::vector<int> views{4, 8};
  int pmi_window = 5;

  int embed_dim = 64;
  int hidden_dim = 128;
  int num_layers = 4;
  int num_classes = 0;  // 0: one more than the largest label seen
  bool homogeneous = false;

  double restart_prob = 0.8;
  double walk_target_fraction = 0.5;
  double flip_prob = 0.3;
  double packet_drop_prob = 0.6;
  double temperature = 0.07;
  bool stop_anchor_gradient = false;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  double test_fraction = 0.1;
};

template <typename Config, typename Visitor>
void visit_fields(Config& c, Visitor&& v) {
  v("batch_size", c.batch_size);
  v("gradient_accumulation", c.gradient_accumulation);
  v("epochs", c.epochs);
  v("lr_max", c.lr_max);
  v("lr_min", c.lr_min);
  v("warmup_fraction", c.warmup_fraction);
  v("label_smoothing", c.label_smoothing);
  v("gnn_dropout", c.gnn_dropout);
  v("lstm_dropout", c.lstm_dropout);
  v("alpha", c.alpha);
  v("beta", c.beta);
  v("seed", c.seed);
  v("views", c.views);
  v("pmi_window", c.pmi_window);
  v("embed_dim", c.embed_dim);
  v("hidden_dim", c.hidden_dim);
  v("num_layers", c.num_layers);
  v("num_classes", c.num_classes);
  v("homogeneous", c.homogeneous);
  v("restart_prob", c.restart_prob);
  v("walk_target_fraction", c.walk_target_fraction);
  v("flip_prob", c.flip_prob);
  v("packet_drop_prob", c.packet_drop_prob);
  v("temperature", c.temperature);
  v("stop_anchor_gradient", c.stop_anchor_gradient);
  v("adam_beta1", c.adam_beta1);
  v("adam_beta2", c.adam_beta2);
  v("adam_eps", c.adam_eps);
  v("test_fraction", c.test_fraction);
}

inline std::vector<int> parse_views(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      fail(errc::invalid_config, "bad view list \"" + text + "\"");
    }
  }
  return out;
}

inline std::string format_views(const std::vector<int>& views) {
  std::string out;
  for (std::size_t i = 0; i < views.size(); ++i) out += (i ? "," : "") + std::to_string(views[i]);
  return out;
}

// Sets one field from its textual form; unknown keys are an error.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(cfg, [&](const char* name, auto& field) {
    if (key != name) return;
    found = true;
    using T = std::decay_t<decltype(field)>;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (value == "true" || value == "1") {
          field = true;
        } else if (value == "false" || value == "0") {
          field = false;
        } else {
          fail(errc::invalid_config, key + " expects true/false");
        }
      } else if constexpr (std::is_same_v<T, int>) {
        field = std::stoi(value);
      } else if constexpr (std::is_same_v<T, std::uint64_t>) {
        field = std::stoull(value);
      } else if constexpr (std::is_same_v<T, double>) {
        field = std::stod(value);
      } else {
        field = parse_views(value);
      }
    } catch (const std::invalid_argument&) {
      fail(errc::invalid_config, "cannot parse " + key + " = " + value);
    } catch (const std::out_of_range&) {
      fail(errc::invalid_config, key + " = " + value + " is out of range");
    }
  });
  if (!found) fail(errc::invalid_config, "unknown config key " + key);
}

// Flat `key = value` lines; `#` starts a comment. Quotes around values and
// TOML-style list brackets for `views` are accepted.
inline void apply_config_text(TrainConfig& cfg, std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r\"'[]";
      s.erase(0, s.find_first_not_of(ws));
      s.erase(s.find_last_not_of(ws) + 1);
      return s;
    };
    if (trim(line).empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(errc::invalid_config, "expected key = value, got \"" + line + "\"");
    std::string value = trim(line.substr(eq + 1));
    value.erase(std::remove(value.begin(), value.end(), ' '), value.end());
    set_config_value(cfg, trim(line.substr(0, eq)), value);
  }
}

inline TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  apply_config_text(base, in);
  return base;
}

inline nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  visit_fields(cfg, [&](const char* name, const auto& field) { j[name] = field; });
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  visit_fields(cfg, [&](const char* name, auto& field) {
    if (j.contains(name)) field = j.at(name).get<std::decay_t<decltype(field)>>();
  });
  return cfg;
}

inline void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) fail(errc::invalid_config, "batch_size must be >= 1");
  if (cfg.gradient_accumulation < 1) fail(errc::invalid_config, "gradient_accumulation must be >= 1");
  if (cfg.epochs < 1) fail(errc::invalid_config, "epochs must be >= 1");
  if (!(cfg.lr_min > 0.0 && cfg.lr_max >= cfg.lr_min)) fail(errc::invalid_config, "need lr_max >= lr_min > 0");
  if (!(cfg.warmup_fraction >= 0.0 && cfg.warmup_fraction < 1.0))
    fail(errc::invalid_config, "warmup_fraction must lie in [0, 1)");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) fail(errc::invalid_config, "alpha must lie in [0, 1]");
  if (!(cfg.beta >= 0.0 && cfg.beta <= 1.0)) fail(errc::invalid_config, "beta must lie in [0, 1]");
  if (!(cfg.label_smoothing >= 0.0 && cfg.label_smoothing < 1.0))
    fail(errc::invalid_config, "label_smoothing must lie in [0, 1)");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
    fail(errc::invalid_config, "test_fraction must lie in (0, 1)");
  validate(PmiConfig{cfg.pmi_window});
}

inline ModelConfig model_config(const TrainConfig& cfg, int num_classes) {
  ModelConfig m;
  m.views = cfg.views;
  m.embed_dim = cfg.embed_dim;
  m.hidden_dim = cfg.hidden_dim;
  m.num_layers = cfg.num_layers;
  m.num_classes = num_classes;
  m.gnn_dropout = cfg.gnn_dropout;
  m.lstm_dropout = cfg.lstm_dropout;
  m.homogeneous = cfg.homogeneous;
  return m;
}

inline AugmentConfig augment_config(const TrainConfig& cfg) {
  AugmentConfig a;
  a.restart_prob = cfg.restart_prob;
  a.walk_target_fraction = cfg.walk_target_fraction;
  a.flip_prob = cfg.flip_prob;
  a.packet_drop_prob = cfg.packet_drop_prob;
  a.temperature = cfg.temperature;
  a.stop_anchor_gradient = cfg.stop_anchor_gradient;
  return a;
}

// ---------------------------------------------------------------------------
// data split and schedule

struct Split {
  std::vector<TrafficFlow> train;
  std::vector<TrafficFlow> test;
};

// Per-class split at flow granularity: round(test_fraction * n) flows of
// each class (at least one) go to the test side, chosen by a seeded
// shuffle. Both sides keep the input order.
inline Split stratified_split(const std::vector<TrafficFlow>& flows, double test_fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < flows.size(); ++i) by_class[flows[i].label].push_back(i);
  std::vector<bool> is_test(flows.size(), false);
  std::mt19937_64 rng(seed);
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2)
      fail(errc::class_too_small, "class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                                      " flow(s); a split needs at least 2");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = true;
  }
  Split s;
  for (std::size_t i = 0; i < flows.size(); ++i) (is_test[i] ? s.test : s.train).push_back(flows[i]);
  return s;
}

// Linear warmup from 0 to lr_max over the first warmup_fraction * total
// steps, then cosine decay reaching lr_min at the final step.
inline double lr_at(long step, long total_steps, const TrainConfig& cfg) {
  if (total_steps <= 1) return cfg.lr_max;
  const double warm = cfg.warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warm) return cfg.lr_max * s / warm;
  const double span = static_cast<double>(total_steps - 1) - warm;
  if (span <= 0.0) return cfg.lr_max;
  const double progress = std::clamp((s - warm) / span, 0.0, 1.0);
  return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the gradients currently held by `params`,
  // scaled by `grad_scale`.
  void step(ParameterStore& params, double lr, double grad_scale = 1.0) {
    auto& all = params.all();
    if (m_.empty()) {
      for (auto& p : all) {
        m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
        v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < all.size(); ++i) {
      Tensor& p = all[i].tensor;
      if (!p.has_grad()) continue;
      const Matrix g = p.grad() * grad_scale;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
      p.mutable_value().array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------
// metrics

struct ClassMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Macro F1 averages per-class F1 over the classes present in `truth`;
// a class that is predicted but absent from `truth` is not averaged.
inline ClassMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) fail(errc::shape_mismatch, "truth/prediction length mismatch");
  ClassMetrics m;
  if (truth.empty()) return m;
  std::map<int, long> tp, fp, fn;
  long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++correct;
      ++tp[truth[i]];
    } else {
      ++fn[truth[i]];
      ++fp[predicted[i]];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  std::vector<int> classes = truth;
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  double f1_sum = 0.0;
  for (int c : classes) {
    const double t = static_cast<double>(tp[c]);
    const double denom = 2.0 * t + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * t / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(classes.size());
  return m;
}

struct Metrics {
  ClassMetrics flow;
  ClassMetrics packet;
};

inline nlohmann::ordered_json to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["flow_ac"] = m.flow.accuracy;
  j["flow_f1"] = m.flow.macro_f1;
  j["packet_ac"] = m.packet.accuracy;
  j["packet_f1"] = m.packet.macro_f1;
  return j;
}

// ---------------------------------------------------------------------------
// prepared data

struct PreparedFlow {
  const TrafficFlow* source = nullptr;
  int label = 0;
  std::vector<std::vector<HeteroTrafficGraph>> graphs;  // [packet][view slot]
};

struct PreparedData {
  std::vector<PreparedFlow> flows;
  std::size_t dropped_packets = 0;  // a segment too short for some view
  std::size_t dropped_flows = 0;
};

// Builds every view graph of every packet. Packets with a segment too short
// to yield a unit at some view are removed; flows left empty are removed.
inline PreparedData prepare_flows(const std::vector<TrafficFlow>& flows, const std::vector<int>& views,
                                  const PmiConfig& pmi) {
  PreparedData out;
  for (const auto& f : flows) {
    PreparedFlow pf;
    pf.source = &f;
    pf.label = f.label;
    for (const auto& p : f.packets) {
      std::map<int, HeteroTrafficGraph> built;
      try {
        built = build_views(p, views, pmi);
      } catch (const error& e) {
        if (e.code() != errc::degenerate_segment) throw;
        ++out.dropped_packets;
        continue;
      }
      std::vector<HeteroTrafficGraph> per_view;
      for (int bits : views) per_view.push_back(std::move(built.at(bits)));
      pf.graphs.push_back(std::move(per_view));
    }
    if (pf.graphs.empty()) {
      ++out.dropped_flows;
      continue;
    }
    out.flows.push_back(std::move(pf));
  }
  return out;
}

struct BatchForward {
  std::vector<Tensor> packet_embeddings;  // per view slot, one row per packet
  std::vector<Tensor> flow_embeddings;    // per view slot, one row per flow
  Tensor flow_logits;
  Tensor packet_logits;
  FlowLayout layout;
  std::vector<int> flow_labels;
  std::vector<int> packet_labels;
  std::vector<std::vector<const HeteroTrafficGraph*>> graphs;  // [view slot][packet]
};

inline BatchForward forward_batch(const TrafficModel& model, const std::vector<const PreparedFlow*>& batch,
                                  const ForwardContext& ctx) {
  BatchForward out;
  const std::size_t nviews = model.config().views.size();
  out.graphs.resize(nviews);
  std::uint32_t row = 0;
  for (const auto* f : batch) {
    out.flow_labels.push_back(f->label);
    std::vector<std::uint32_t> rows;
    for (const auto& per_view : f->graphs) {
      for (std::size_t v = 0; v < nviews; ++v) out.graphs[v].push_back(&per_view[v]);
      out.packet_labels.push_back(f->label);
      rows.push_back(row++);
    }
    out.layout.push_back(std::move(rows));
  }
  for (std::size_t v = 0; v < nviews; ++v) {
    out.packet_embeddings.push_back(model.encode_graphs(make_graph_batch(out.graphs[v]), ctx));
    out.flow_embeddings.push_back(
        model.encode_flows(model.config().views[v], out.packet_embeddings[v], out.layout, ctx));
  }
  out.flow_logits = model.flow_logits(out.flow_embeddings);
  out.packet_logits = model.packet_logits(out.packet_embeddings);
  return out;
}

struct StepLosses {
  Tensor total;
  double packet_cls = 0.0;
  double flow_cls = 0.0;
  double packet_cl = 0.0;  // 0 when alpha == 0 (not evaluated)
  double flow_cl = 0.0;    // 0 when beta == 0 (not evaluated)
};

// L = L_PCLS + L_FCLS + alpha * L_PCL + beta * L_FCL on one micro-batch.
// A contrastive term needs at least two rows and is skipped otherwise.
template <typename Rng>
StepLosses multitask_loss(const TrafficModel& model, const std::vector<const PreparedFlow*>& batch,
                          const TrainConfig& cfg, Rng& rng, bool training) {
  ForwardContext ctx{training, &rng};
  BatchForward fw = forward_batch(model, batch, ctx);
  const AugmentConfig aug = augment_config(cfg);
  auto cls = classification_losses(fw.flow_logits, fw.packet_logits, fw.flow_labels, fw.packet_labels,
                                   cfg.label_smoothing);
  StepLosses out;
  out.packet_cls = cls.packet.item();
  out.flow_cls = cls.flow.item();
  out.total = add(cls.packet, cls.flow);
  if (cfg.alpha > 0.0 && fw.packet_labels.size() >= 2) {
    Tensor pcl = packet_contrastive_loss(model, fw.packet_embeddings, fw.graphs, fw.packet_labels, aug, rng, ctx);
    out.packet_cl = pcl.item();
    out.total = add(out.total, scale(pcl, cfg.alpha));
  }
  if (cfg.beta > 0.0 && fw.flow_labels.size() >= 2) {
    Tensor fcl = flow_contrastive_loss(model, fw.packet_embeddings, fw.layout, fw.flow_embeddings, fw.flow_labels,
                                       aug, rng, ctx);
    out.flow_cl = fcl.item();
    out.total = add(out.total, scale(fcl, cfg.beta));
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

struct Predictions {
  std::vector<int> flow_truth, flow_pred, packet_truth, packet_pred;
};

inline std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out;
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    logits.row(r).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

inline Predictions predict(const TrafficModel& model, const std::vector<PreparedFlow>& flows,
                           std::size_t batch_size = 32) {
  Predictions p;
  std::mt19937_64 unused(0);
  ForwardContext ctx{false, &unused};
  for (std::size_t at = 0; at < flows.size(); at += batch_size) {
    std::vector<const PreparedFlow*> batch;
    for (std::size_t i = at; i < std::min(flows.size(), at + batch_size); ++i) batch.push_back(&flows[i]);
    BatchForward fw = forward_batch(model, batch, ctx);
    auto fp = argmax_rows(fw.flow_logits.value());
    auto pp = argmax_rows(fw.packet_logits.value());
    p.flow_truth.insert(p.flow_truth.end(), fw.flow_labels.begin(), fw.flow_labels.end());
    p.flow_pred.insert(p.flow_pred.end(), fp.begin(), fp.end());
    p.packet_truth.insert(p.packet_truth.end(), fw.packet_labels.begin(), fw.packet_labels.end());
    p.packet_pred.insert(p.packet_pred.end(), pp.begin(), pp.end());
  }
  return p;
}

inline Metrics evaluate(const TrafficModel& model, const std::vector<PreparedFlow>& flows) {
  if (flows.empty()) return {};
  auto p = predict(model, flows);
  return {classification_metrics(p.flow_truth, p.flow_pred), classification_metrics(p.packet_truth, p.packet_pred)};
}

// ---------------------------------------------------------------------------
// training

struct EpochRecord {
  int epoch = 0;
  double packet_cls = 0.0;
  double flow_cls = 0.0;
  double packet_cl = 0.0;
  double flow_cl = 0.0;
  double total = 0.0;
  Metrics test;
  double seconds = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss_pcls"] = r.packet_cls;
  j["loss_fcls"] = r.flow_cls;
  j["loss_pcl"] = r.packet_cl;
  j["loss_fcl"] = r.flow_cl;
  j["loss_total"] = r.total;
  j["test"] = to_json(r.test);
  j["seconds"] = r.seconds;
  return j;
}

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  Metrics best;
  Metrics last;
  double seconds = 0.0;
};

struct TrainResult {
  ModelConfig model;
  ParameterStore best;
  ParameterStore last;
  TrainReport report;
};

inline int infer_num_classes(const TrainConfig& cfg, const std::vector<TrafficFlow>& flows) {
  if (cfg.num_classes > 0) return cfg.num_classes;
  int top = 0;
  for (const auto& f : flows) top = std::max(top, f.label);
  return top + 1;
}

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::filesystem::path dump_dir;  // where a non-finite batch is written, if set
};

inline TrainResult train(const std::vector<TrafficFlow>& train_flows, const std::vector<TrafficFlow>& test_flows,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  const auto t_start = std::chrono::steady_clock::now();
  std::vector<TrafficFlow> all = train_flows;
  all.insert(all.end(), test_flows.begin(), test_flows.end());
  const int num_classes = infer_num_classes(cfg, all);
  {
    std::map<int, int> per_class;
    for (const auto& f : train_flows) ++per_class[f.label];
    if (per_class.size() < 2) fail(errc::class_too_small, "training needs at least two classes");
  }

  const PmiConfig pmi{cfg.pmi_window};
  const PreparedData train_data = prepare_flows(train_flows, cfg.views, pmi);
  const PreparedData test_data = prepare_flows(test_flows, cfg.views, pmi);

  TrainResult result;
  result.model = model_config(cfg, num_classes);
  TrafficModel model(result.model, cfg.seed);
  Adam adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::seed_seq stream_seed{cfg.seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(stream_seed);

  const std::size_t n = train_data.flows.size();
  const long micro_per_epoch = static_cast<long>((n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                                 static_cast<std::size_t>(cfg.batch_size));
  const long steps_per_epoch = (micro_per_epoch + cfg.gradient_accumulation - 1) / cfg.gradient_accumulation;
  const long total_steps = steps_per_epoch * cfg.epochs;
  long step = 0;

  std::vector<std::size_t> order(n);
  double best_f1 = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    long micro = 0;
    int pending = 0;
    model.params().zero_grad();
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const PreparedFlow*> batch;
      for (std::size_t i = at; i < std::min(n, at + static_cast<std::size_t>(cfg.batch_size)); ++i)
        batch.push_back(&train_data.flows[order[i]]);
      StepLosses losses = multitask_loss(model, batch, cfg, rng, true);
      const double total = losses.total.item();
      if (!std::isfinite(total)) {
        std::string keys;
        std::vector<TrafficFlow> dump;
        for (const auto* f : batch) {
          keys += " " + f->source->flow_key;
          dump.push_back(*f->source);
        }
        if (!hooks.dump_dir.empty()) {
          std::filesystem::create_directories(hooks.dump_dir);
          write_flow_store(dump, hooks.dump_dir / "nonfinite_batch.jsonl");
        }
        std::ostringstream os;
        os << "epoch " << epoch << " micro-batch " << micro << ": pcls=" << losses.packet_cls
           << " fcls=" << losses.flow_cls << " pcl=" << losses.packet_cl << " fcl=" << losses.flow_cl
           << " flows:" << keys;
        fail(errc::non_finite_loss, os.str());
      }
      losses.total.backward();
      rec.packet_cls += losses.packet_cls;
      rec.flow_cls += losses.flow_cls;
      rec.packet_cl += losses.packet_cl;
      rec.flow_cl += losses.flow_cl;
      rec.total += total;
      ++micro;
      ++pending;
      const bool last = at + static_cast<std::size_t>(cfg.batch_size) >= n;
      if (pending == cfg.gradient_accumulation || last) {
        adam.step(model.params(), lr_at(step, total_steps, cfg), 1.0 / pending);
        model.params().zero_grad();
        ++step;
        pending = 0;
      }
    }
    if (micro > 0) {
      const double m = static_cast<double>(micro);
      rec.packet_cls /= m;
      rec.flow_cls /= m;
      rec.packet_cl /= m;
      rec.flow_cl /= m;
      rec.total /= m;
    }
    rec.test = evaluate(model, test_data.flows);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
    if (rec.test.flow.macro_f1 > best_f1) {
      best_f1 = rec.test.flow.macro_f1;
      result.report.best_epoch = epoch;
      result.report.best = rec.test;
      result.best = model.params().clone();
    }
    result.report.last = rec.test;
    result.report.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  result.last = model.params().clone();
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint directories: params.bin + config.json

struct Checkpoint {
  TrainConfig train;
  ModelConfig model;
  ParameterStore params;
};

inline void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, const ModelConfig& model,
                            const ParameterStore& params) {
  std::filesystem::create_directories(dir);
  save_parameters(params, dir / "params.bin");
  nlohmann::ordered_json j;
  j["format"] = "unitgraph-checkpoint";
  j["version"] = checkpoint_version;
  j["num_classes"] = model.num_classes;
  j["train_config"] = to_json(cfg);
  std::ofstream out(dir / "config.json");
  if (!out) fail(errc::io_error, "cannot write " + (dir / "config.json").string());
  out << j.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) fail(errc::io_error, "cannot open " + (dir / "config.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(errc::schema_violation, std::string("config.json: ") + e.what());
  }
  Checkpoint ck;
  ck.train = config_from_json(j.at("train_config"));
  ck.model = model_config(ck.train, j.at("num_classes").get<int>());
  ck.params = load_parameters(dir / "params.bin");
  return ck;
}

inline Metrics evaluate_checkpoint(const Checkpoint& ck, const std::vector<TrafficFlow>& flows) {
  TrafficModel model(ck.model, ck.params);
  const auto data = prepare_flows(flows, ck.train.views, PmiConfig{ck.train.pmi_window});
  return evaluate(model, data.flows);
}

}  // namespace unitgraph
