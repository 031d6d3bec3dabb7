// unitgraph command-line driver. Library errors exit with status 2 and a
// one-line message on stderr; usage errors exit with CLI11's status.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "unitgraph/unitgraph.hpp"

namespace fs = std::filesystem;
using namespace unitgraph;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(errc::io_error, "cannot write " + path.string());
  out << text;
}

nlohmann::ordered_json to_json(const IngestReport& r) {
  return {{"frames", r.frames},
          {"skipped_ipv6", r.skipped_ipv6},
          {"skipped_not_ipv4", r.skipped_not_ipv4},
          {"skipped_not_tcp_udp", r.skipped_not_tcp_udp},
          {"skipped_fragments", r.skipped_fragments},
          {"malformed", r.malformed},
          {"empty_payload_packets", r.empty_payload_packets},
          {"dropped_long_flows", r.dropped_long_flows},
          {"flows_emitted", r.flows_emitted}};
}

// Every TrainConfig field becomes --<field-name> (underscores as dashes);
// values are applied after the config file so flags win.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "flat key=value config file");
    TrainConfig probe;
    visit_fields(probe, [&](const char* name, auto&) {
      std::string flag = name;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd->add_option("--" + flag, values[name], std::string("override ") + name);
    });
  }

  TrainConfig resolve() const {
    TrainConfig cfg = file.empty() ? TrainConfig{} : load_config_file(file);
    for (const auto& [key, value] : values)
      if (!value.empty()) set_config_value(cfg, key, value);
    validate(cfg);
    return cfg;
  }
};

void print_progress(const EpochRecord& r) {
  std::cerr << "epoch " << r.epoch << "  loss " << r.total << "  flow F1 " << r.test.flow.macro_f1 << "  packet F1 "
            << r.test.packet.macro_f1 << "  (" << r.seconds << " s)\n";
}

Split load_split(const std::string& flows, const std::string& test_flows, const TrainConfig& cfg) {
  if (!test_flows.empty()) return Split{read_flow_store(flows), read_flow_store(test_flows)};
  return stratified_split(read_flow_store(flows), cfg.test_fraction, cfg.seed);
}

// ---------------------------------------------------------------------------

void cmd_ingest(const std::string& dir, const std::string& labels, std::optional<std::int64_t> block,
                const std::string& out) {
  const LabelMap map = read_label_map(labels);
  std::vector<TrafficFlow> flows;
  IngestReport total;
  for (const auto& [file, label] : map.by_file) {
    const fs::path path = fs::path(dir) / file;
    IngestReport rep;
    auto got = assemble_flows(parse_pcap(path), label, block, &rep);
    std::cerr << file << ": " << got.size() << " flows\n";
    flows.insert(flows.end(), std::make_move_iterator(got.begin()), std::make_move_iterator(got.end()));
    total += rep;
  }
  write_flow_store(flows, out);
  std::cout << to_json(total).dump() << '\n';
}

void cmd_build(const std::string& flows_path, const std::string& views, int window, const std::string& out) {
  const auto flows = read_flow_store(flows_path);
  const auto v = parse_views(views);
  write_graph_cache(build_graph_cache(flows, v, PmiConfig{window}), out);
  std::cerr << flows.size() << " flows, views " << format_views(v) << " -> " << out << '\n';
}

struct InspectArgs {
  std::string flows;
  std::string views = "4,8";
  int window = 5;
  bool units = false;
  std::vector<int> graph;  // flow, packet, view
  bool dot = false;
};

void cmd_inspect(const InspectArgs& a) {
  const auto flows = read_flow_store(a.flows);
  if (a.units) {
    const auto views = parse_views(a.views);
    for (std::size_t f = 0; f < flows.size(); ++f)
      for (std::size_t p = 0; p < flows[f].packets.size(); ++p)
        for (const auto& [bits, seq] : tokenize_packet(flows[f].packets[p], views)) {
          std::cout << "# flow " << f << " packet " << p << " view " << bits << '\n';
          for (const auto* part : {&seq.header_units, &seq.payload_units}) {
            for (std::size_t i = 0; i < part->size(); ++i) std::cout << (i ? " " : "") << (*part)[i];
            std::cout << '\n';
          }
        }
    return;
  }
  const auto f = static_cast<std::size_t>(a.graph.at(0)), p = static_cast<std::size_t>(a.graph.at(1));
  if (f >= flows.size() || p >= flows[f].packets.size())
    fail(errc::invalid_config, "no packet " + std::to_string(p) + " in flow " + std::to_string(f));
  const int view = a.graph.at(2);
  const int one[] = {view};
  const auto g = build_views(flows[f].packets[p], one, PmiConfig{a.window}).at(view);
  if (a.dot) {
    std::cout << to_dot(g, "flow" + std::to_string(f) + "_pkt" + std::to_string(p) + "_u" + std::to_string(view));
  } else {
    std::cout << "nodes " << g.num_nodes();
    for (EdgeType t : edge_types) std::cout << "  " << to_string(t) << " " << g.edges(t).size();
    std::cout << '\n';
  }
}

struct SynthArgs {
  std::optional<int> classes, flows_per_class;
  std::string out, spec, pcap_out;
  std::uint64_t seed = 7;
};

void cmd_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : load_synth_spec(a.spec);
  if (a.classes) spec.num_classes = *a.classes;
  if (a.flows_per_class) spec.flows_per_class = *a.flows_per_class;
  validate(spec);
  const auto flows = generate(spec, a.seed);
  write_flow_store(flows, a.out);
  std::cerr << flows.size() << " flows -> " << a.out << '\n';
  if (a.pcap_out.empty()) return;

  // One capture per flow plus a label sheet, so `ingest` can rebuild the store.
  fs::create_directories(a.pcap_out);
  std::string sheet = "file,class\n";
  int index = 0;
  for (const auto& f : generate_frames(spec, a.seed)) {
    char name[32];
    std::snprintf(name, sizeof name, "flow%05d.pcap", index++);
    write_pcap(fs::path(a.pcap_out) / name, f.frames);
    sheet += std::string(name) + "," + std::to_string(f.label) + "\n";
  }
  write_text(fs::path(a.pcap_out) / "labels.csv", sheet);
}

void cmd_train(const std::string& flows, const std::string& test_flows, const ConfigFlags& flags, const fs::path& out,
               const std::string& dump_dir) {
  const TrainConfig cfg = flags.resolve();
  const Split split = load_split(flows, test_flows, cfg);
  std::cerr << split.train.size() << " train / " << split.test.size() << " test flows\n";

  fs::create_directories(out);
  std::ofstream report(out / "report.jsonl");
  if (!report) fail(errc::io_error, "cannot write " + (out / "report.jsonl").string());
  TrainHooks hooks;
  hooks.dump_dir = dump_dir.empty() ? out : fs::path(dump_dir);
  hooks.on_epoch = [&](const EpochRecord& r) {
    report << to_json(r).dump() << '\n' << std::flush;
    print_progress(r);
  };
  const TrainResult r = train(split.train, split.test, cfg, hooks);
  save_checkpoint(out / "best", cfg, r.model, r.best);
  save_checkpoint(out / "final", cfg, r.model, r.last);

  nlohmann::ordered_json summary;
  summary["best_epoch"] = r.report.best_epoch;
  summary["best"] = to_json(r.report.best);
  summary["final"] = to_json(r.report.last);
  summary["seconds"] = r.report.seconds;
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
}

void cmd_eval(const std::string& ckpt, const std::string& flows, const std::string& json_out) {
  const Metrics m = evaluate_checkpoint(load_checkpoint(ckpt), read_flow_store(flows));
  const auto j = to_json(m);
  if (!json_out.empty()) write_text(json_out, j.dump(2) + "\n");
  std::cout << j.dump() << '\n';
}

struct SweepArgs {
  std::string flows, test_flows, axis = "variants", json_out, csv_out;
  std::vector<double> weights = {0.0, 0.25, 0.5, 0.75, 1.0};
};

void cmd_sweep(const SweepArgs& a, const ConfigFlags& flags) {
  const TrainConfig base = flags.resolve();
  const Split split = load_split(a.flows, a.test_flows, base);
  const auto rows = ablation_sweep(base, parse_sweep_axis(a.axis), split, a.weights, [](const SweepRow& r) {
    std::cerr << r.point << ": flow F1 " << r.metrics.flow.macro_f1 << "  packet F1 " << r.metrics.packet.macro_f1
              << "  (" << r.seconds << " s)\n";
  });
  if (!a.json_out.empty()) write_text(a.json_out, sweep_json(rows).dump(2) + "\n");
  if (!a.csv_out.empty()) write_text(a.csv_out, sweep_csv(rows));
  std::cout << sweep_csv(rows);
}

}  // namespace

int main(int argc, char** argv) {
  keep_freed_memory();
  CLI::App app{"unitgraph: multi-view traffic-unit graphs for encrypted traffic classification"};
  app.require_subcommand(1);

  std::string pcap_dir, labels, out;
  std::optional<std::int64_t> block_seconds;
  auto* ingest = app.add_subcommand("ingest", "pcap captures -> flow store");
  ingest->add_option("--pcap-dir", pcap_dir, "directory holding the captures")->required();
  ingest->add_option("--labels", labels, "file,class sheet")->required();
  ingest->add_option("--block-seconds", block_seconds, "split flows into time blocks of this length");
  ingest->add_option("--out", out, "flow store (JSON lines)")->required();

  std::string flows, views = "4,8";
  int window = 5;
  auto* build = app.add_subcommand("build", "flow store -> graph cache");
  build->add_option("--flows", flows)->required();
  build->add_option("--views", views, "comma-separated unit widths")->capture_default_str();
  build->add_option("--window", window, "PMI window")->capture_default_str();
  build->add_option("--out", out)->required();

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "print unit sequences or one packet graph");
  inspect->add_option("--flows", ia.flows)->required();
  inspect->add_option("--views", ia.views, "widths for --units")->capture_default_str();
  inspect->add_option("--window", ia.window)->capture_default_str();
  auto* units_flag = inspect->add_flag("--units", ia.units, "unit sequences as integers");
  auto* graph_opt =
      inspect->add_option("--graph", ia.graph, "FLOW PACKET VIEW")->expected(3)->excludes(units_flag);
  inspect->add_flag("--dot", ia.dot, "Graphviz output for --graph")->needs(graph_opt);
  units_flag->excludes(graph_opt);
  inspect->require_option(1, 4);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a labeled synthetic flow store");
  synth->add_option("--classes", sa.classes);
  synth->add_option("--flows-per-class", sa.flows_per_class);
  synth->add_option("--out", sa.out)->required();
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--spec", sa.spec, "JSON spec with custom recipes");
  synth->add_option("--pcap-out", sa.pcap_out, "also write per-flow captures and labels.csv here");

  std::string test_flows, dump_dir;
  ConfigFlags train_flags;
  auto* trainc = app.add_subcommand("train", "train and write best/ and final/ checkpoints");
  trainc->add_option("--flows", flows)->required();
  trainc->add_option("--test-flows", test_flows, "held-out store; default is a stratified split");
  trainc->add_option("--out", out)->required();
  trainc->add_option("--dump-dir", dump_dir, "where a non-finite batch is written (default: --out)");
  train_flags.attach(trainc);

  std::string ckpt, json_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--flows", flows)->required();
  eval->add_option("--json", json_out, "also write the metrics here");

  SweepArgs sw;
  ConfigFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "ablation sweep over one axis");
  sweep->add_option("--flows", sw.flows)->required();
  sweep->add_option("--test-flows", sw.test_flows);
  sweep->add_option("--axis", sw.axis, "views | pairs | hetero | alpha | beta | variants")->capture_default_str();
  sweep->add_option("--weights", sw.weights, "alpha/beta values")->delimiter(',');
  sweep->add_option("--json", sw.json_out);
  sweep->add_option("--csv", sw.csv_out);
  sweep_flags.attach(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) cmd_ingest(pcap_dir, labels, block_seconds, out);
    if (*build) cmd_build(flows, views, window, out);
    if (*inspect) cmd_inspect(ia);
    if (*synth) cmd_synth(sa);
    if (*trainc) cmd_train(flows, test_flows, train_flags, out, dump_dir);
    if (*eval) cmd_eval(ckpt, flows, json_out);
    if (*sweep) cmd_sweep(sw, sweep_flags);
  } catch (const error& e) {
    std::cerr << "unitgraph: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unitgraph: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
