#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "support.hpp"
#include "unitgraph/capture.hpp"
#include "unitgraph/synth.hpp"

using namespace unitgraph;

namespace {

const fixture::Addr kClient{{10, 0, 0, 1}, 40000};
const fixture::Addr kServer{{192, 168, 1, 9}, 443};

template <typename Fn>
errc error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return errc::io_error;
}

RawCapturePacket raw(std::int64_t ts_us, bytes frame) {
  const auto n = static_cast<std::uint32_t>(frame.size());
  return RawCapturePacket{ts_us, std::move(frame), n};
}

}  // namespace

TEST(Pcap, EmptyCaptureYieldsNoPackets) {
  for (bool be : {false, true}) {
    auto file = fixture::pcap_file({}, be);
    ASSERT_EQ(file.size(), 24u);
    EXPECT_TRUE(parse_pcap_bytes(file).empty());
  }
}

TEST(Pcap, ThreeFramesRoundTripExactly) {
  std::vector<fixture::Record> recs = {
      {100, 1, fixture::frame(true, kClient, kServer, fixture::text("one"))},
      {100, 500000, fixture::frame(true, kServer, kClient, fixture::text("two!"))},
      {101, 7, fixture::frame(false, kClient, kServer, fixture::text("three"))},
  };
  auto pkts = parse_pcap_bytes(fixture::pcap_file(recs, false));
  ASSERT_EQ(pkts.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(pkts[i].link_bytes, recs[i].frame);
    EXPECT_EQ(pkts[i].orig_len, recs[i].frame.size());
    EXPECT_EQ(pkts[i].timestamp_us, std::int64_t(recs[i].ts_sec) * 1000000 + recs[i].ts_usec);
  }
}

TEST(Pcap, SwappedByteOrderMatchesNativeTwin) {
  std::vector<fixture::Record> recs = {{5, 6, fixture::frame(true, kClient, kServer, fixture::text("abcd"))}};
  auto le = fixture::pcap_file(recs, false);
  auto be = fixture::pcap_file(recs, true);
  ASSERT_EQ(be[0], 0xa1);  // big-endian magic bytes read as d4c3b2a1 little-endian
  auto a = parse_pcap_bytes(le);
  auto b = parse_pcap_bytes(be);
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(a[0].link_bytes, b[0].link_bytes);
  EXPECT_EQ(a[0].timestamp_us, b[0].timestamp_us);
  EXPECT_EQ(a[0].orig_len, b[0].orig_len);
}

TEST(Pcap, Errors) {
  EXPECT_EQ(error_code_of([] { parse_pcap_bytes({0x00, 0x01, 0x02, 0x03, 0, 0, 0, 0}); }), errc::bad_magic);
  EXPECT_EQ(error_code_of([] { parse_pcap_bytes({0xd4, 0xc3}); }), errc::truncated);
  auto header_only = fixture::pcap_file({}, false);
  header_only.resize(20);
  EXPECT_EQ(error_code_of([&] { parse_pcap_bytes(header_only); }), errc::truncated);
  EXPECT_EQ(error_code_of([] { parse_pcap_bytes(fixture::pcap_file({}, false, 101)); }),
            errc::unsupported_link_type);

  auto file = fixture::pcap_file({{1, 0, fixture::frame(true, kClient, kServer, fixture::text("xyz"))}}, false);
  auto cut_body = file;
  cut_body.pop_back();
  EXPECT_EQ(error_code_of([&] { parse_pcap_bytes(cut_body); }), errc::truncated);
  auto cut_header = bytes(file.begin(), file.begin() + 24 + 10);
  EXPECT_EQ(error_code_of([&] { parse_pcap_bytes(cut_header); }), errc::truncated);
}

TEST(Pcap, FileRoundTripThroughEncoder) {
  std::vector<RawCapturePacket> pkts = {raw(1'000'000, fixture::frame(true, kClient, kServer, fixture::text("hi"))),
                                        raw(2'500'000, fixture::frame(false, kServer, kClient, fixture::text("yo")))};
  auto dir = std::filesystem::temp_directory_path() / "unitgraph_test_pcap";
  std::filesystem::create_directories(dir);
  for (bool be : {false, true}) {
    write_pcap(dir / "x.pcap", pkts, be);
    auto back = parse_pcap(dir / "x.pcap");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(back[i].link_bytes, pkts[i].link_bytes);
      EXPECT_EQ(back[i].timestamp_us, pkts[i].timestamp_us);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Anonymize, UdpMinimal) {
  auto f = fixture::frame(false, kClient, kServer, {1, 2, 3, 4});
  auto out = std::get<AnonymizedPacket>(anonymize(f));
  EXPECT_EQ(out.header_bytes.size(), 20u - 8u + 8u - 4u);
  EXPECT_EQ(out.payload_bytes, (bytes{1, 2, 3, 4}));
}

TEST(Anonymize, TcpDeletesAddressesAndPorts) {
  auto f = fixture::frame(true, kClient, kServer, fixture::text("abcd"));
  auto out = std::get<AnonymizedPacket>(anonymize(f));
  ASSERT_EQ(out.header_bytes.size(), 28u);
  EXPECT_EQ(out.payload_bytes, fixture::text("abcd"));
  EXPECT_EQ(f.size() - 14 - 8 - 4, out.header_bytes.size() + out.payload_bytes.size());
  // Offset bookkeeping: output = ip[0:12] ++ tcp[4:20].
  const std::size_t ip = 14, tcp = 34;
  bytes expected(f.begin() + ip, f.begin() + ip + 12);
  expected.insert(expected.end(), f.begin() + tcp + 4, f.begin() + tcp + 20);
  EXPECT_EQ(out.header_bytes, expected);
}

TEST(Anonymize, IpOptionsKeptBetweenFields) {
  FrameSpec spec;
  spec.src = Endpoint{{1, 2, 3, 4}, 1000};
  spec.dst = Endpoint{{5, 6, 7, 8}, 2000};
  spec.ip_options = {0xaa, 0xbb, 0xcc, 0xdd};
  spec.transport_options = {1, 1, 1, 1};
  spec.payload = {9};
  auto f = build_frame(spec);
  auto out = std::get<AnonymizedPacket>(anonymize(f));
  EXPECT_EQ(out.header_bytes.size(), f.size() - 14 - 8 - 4 - 1);
  EXPECT_EQ(out.header_bytes[12], 0xaa);
  EXPECT_EQ(out.header_bytes[15], 0xdd);
}

TEST(Anonymize, SkipsAndErrors) {
  auto empty = fixture::frame(true, kClient, kServer, {});
  EXPECT_EQ(std::get<SkipReason>(anonymize(empty)), SkipReason::empty_payload);

  auto v6 = fixture::frame(true, kClient, kServer, fixture::text("x"));
  v6[12] = 0x86;
  v6[13] = 0xdd;
  EXPECT_EQ(std::get<SkipReason>(anonymize(v6)), SkipReason::ipv6);

  auto icmp = fixture::frame(true, kClient, kServer, fixture::text("x"));
  icmp[14 + 9] = 1;
  EXPECT_EQ(std::get<SkipReason>(anonymize(icmp)), SkipReason::not_tcp_udp);

  auto frag = fixture::frame(true, kClient, kServer, fixture::text("x"));
  frag[14 + 6] = 0x20;
  frag[14 + 7] = 0x10;
  EXPECT_EQ(std::get<SkipReason>(anonymize(frag)), SkipReason::fragment);

  auto bad_len = fixture::frame(true, kClient, kServer, fixture::text("x"));
  bad_len[14 + 2] = 0x0f;
  EXPECT_EQ(error_code_of([&] { anonymize(bad_len); }), errc::malformed_header);

  auto bad_ihl = fixture::frame(true, kClient, kServer, fixture::text("x"));
  bad_ihl[14] = 0x43;
  EXPECT_EQ(error_code_of([&] { anonymize(bad_ihl); }), errc::malformed_header);

  auto bad_off = fixture::frame(true, kClient, kServer, fixture::text("x"));
  bad_off[34 + 12] = 0xf0;
  EXPECT_EQ(error_code_of([&] { anonymize(bad_off); }), errc::malformed_header);
}

TEST(Assemble, EmptyInput) { EXPECT_TRUE(assemble_flows({}, 0, std::nullopt).empty()); }

TEST(Assemble, CapsAtFifteenPackets) {
  std::vector<RawCapturePacket> pkts;
  for (int i = 0; i < 20; ++i)
    pkts.push_back(raw(i * 1000, fixture::frame(true, i % 2 ? kServer : kClient, i % 2 ? kClient : kServer,
                                                fixture::text("p" + std::to_string(i)))));
  auto flows = assemble_flows(pkts, 3, std::nullopt);
  ASSERT_EQ(flows.size(), 1u);
  ASSERT_EQ(flows[0].packets.size(), 15u);
  EXPECT_EQ(flows[0].label, 3);
  for (int i = 0; i < 15; ++i) {
    EXPECT_EQ(flows[0].packets[i].payload_bytes, fixture::text("p" + std::to_string(i)));
    EXPECT_EQ(flows[0].packets[i].direction, i % 2 ? Direction::backward : Direction::forward);
  }
}

TEST(Assemble, SixtySecondBlocks) {
  std::vector<RawCapturePacket> pkts;
  for (std::int64_t t : {0, 30, 61})
    pkts.push_back(raw(t * 1'000'000, fixture::frame(true, kClient, kServer, fixture::text("t" + std::to_string(t)))));
  auto flows = assemble_flows(pkts, 0, 60);
  ASSERT_EQ(flows.size(), 2u);
  ASSERT_EQ(flows[0].packets.size(), 2u);
  ASSERT_EQ(flows[1].packets.size(), 1u);
  EXPECT_EQ(flows[1].packets[0].payload_bytes, fixture::text("t61"));
  EXPECT_NE(flows[0].flow_key, flows[1].flow_key);
  EXPECT_EQ(assemble_flows(pkts, 0, std::nullopt).size(), 1u);
}

TEST(Assemble, EmptyPayloadPacketsDropped) {
  std::vector<RawCapturePacket> pkts = {
      raw(0, fixture::frame(true, kClient, kServer, {})),
      raw(1, fixture::frame(true, kServer, kClient, fixture::text("data"))),
      raw(2, fixture::frame(true, kClient, kServer, {})),
  };
  IngestReport rep;
  auto flows = assemble_flows(pkts, 0, std::nullopt, &rep);
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_EQ(flows[0].packets.size(), 1u);
  EXPECT_EQ(rep.empty_payload_packets, 2u);
  // Forward is fixed by the first packet on the 5-tuple, even if dropped.
  EXPECT_EQ(flows[0].packets[0].direction, Direction::backward);

  std::vector<RawCapturePacket> only_empty = {raw(0, fixture::frame(true, kClient, kServer, {}))};
  EXPECT_TRUE(assemble_flows(only_empty, 0, std::nullopt).empty());
}

TEST(Assemble, LongRawFlowsDropped) {
  std::vector<RawCapturePacket> pkts;
  const auto frame = fixture::frame(false, kClient, kServer, fixture::text("u"));
  for (int i = 0; i < 10001; ++i) pkts.push_back(raw(i, frame));
  const fixture::Addr other{{10, 0, 0, 2}, 5353};
  for (int i = 0; i < 10000; ++i) pkts.push_back(raw(20000 + i, fixture::frame(false, other, kServer, fixture::text("v"))));
  IngestReport rep;
  auto flows = assemble_flows(pkts, 1, std::nullopt, &rep);
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_EQ(flows[0].packets.size(), 15u);
  EXPECT_EQ(flows[0].packets[0].payload_bytes, fixture::text("v"));
  EXPECT_EQ(rep.dropped_long_flows, 1u);
}

TEST(Assemble, MixedTrafficCountedInReport) {
  auto v6 = fixture::frame(true, kClient, kServer, fixture::text("x"));
  v6[12] = 0x86;
  v6[13] = 0xdd;
  auto broken = fixture::frame(true, kClient, kServer, fixture::text("x"));
  broken[14 + 2] = 0xff;
  std::vector<RawCapturePacket> pkts = {raw(0, v6), raw(1, broken),
                                        raw(2, fixture::frame(true, kClient, kServer, fixture::text("ok")))};
  IngestReport rep;
  auto flows = assemble_flows(pkts, 0, std::nullopt, &rep);
  EXPECT_EQ(flows.size(), 1u);
  EXPECT_EQ(rep.frames, 3u);
  EXPECT_EQ(rep.skipped_ipv6, 1u);
  EXPECT_EQ(rep.malformed, 1u);
}

TEST(Assemble, DeterministicAndBidirectional) {
  std::vector<RawCapturePacket> pkts;
  const fixture::Addr c2{{10, 0, 0, 7}, 41000};
  for (int i = 0; i < 6; ++i) {
    const auto& a = i % 3 == 0 ? kClient : (i % 3 == 1 ? kServer : c2);
    const auto& b = i % 3 == 0 ? kServer : (i % 3 == 1 ? kClient : kServer);
    pkts.push_back(raw(i, fixture::frame(true, a, b, fixture::text(std::to_string(i)))));
  }
  auto a = assemble_flows(pkts, 0, std::nullopt);
  auto b = assemble_flows(pkts, 0, std::nullopt);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].packets.size(), 4u);
  EXPECT_EQ(a[1].packets.size(), 2u);
}

TEST(FlowStore, EmptyRoundTrip) {
  std::stringstream ss;
  write_flow_store({}, ss);
  EXPECT_TRUE(ss.str().empty());
  EXPECT_TRUE(read_flow_store(ss).empty());
}

TEST(FlowStore, GeneratedRoundTripIsIdentity) {
  SynthSpec spec;
  spec.flows_per_class = 5;
  auto flows = generate(spec, 11);
  std::stringstream ss;
  write_flow_store(flows, ss);
  const std::string first = ss.str();
  auto back = read_flow_store(ss);
  EXPECT_EQ(back, flows);
  std::stringstream again;
  write_flow_store(back, again);
  EXPECT_EQ(again.str(), first);
  EXPECT_EQ(first.substr(0, 10), "{\"label\":0");
}

TEST(FlowStore, SchemaViolations) {
  auto bad = [](const std::string& line) {
    std::stringstream ss(line);
    return error_code_of([&] { read_flow_store(ss); });
  };
  const std::string good_pkt = R"({"ts_us":1,"dir":"fwd","header_hex":"00","payload_hex":"01"})";
  EXPECT_EQ(bad(R"({"label":0,"flow_key":"k","packets":[{"ts_us":1,"dir":"fwd","header_hex":"00","payload_hex":"zz"}]})"),
            errc::schema_violation);
  EXPECT_EQ(bad(R"({"flow_key":"k","packets":[)" + good_pkt + "]}"), errc::schema_violation);
  EXPECT_EQ(bad(R"({"label":0,"flow_key":"k","packets":[]})"), errc::schema_violation);
  EXPECT_EQ(bad(R"({"label":0,"flow_key":"k","packets":[{"ts_us":1,"dir":"up","header_hex":"00","payload_hex":"01"}]})"),
            errc::schema_violation);
  EXPECT_EQ(bad("not json"), errc::schema_violation);
  std::stringstream ok(R"({"label":2,"flow_key":"k","packets":[)" + good_pkt + "]}\n\n");
  auto flows = read_flow_store(ok);
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_EQ(flows[0].label, 2);
}

TEST(LabelMap, NamedAndNumeric) {
  std::stringstream named("file,class\nb.pcap,voip\na.pcap,chat\nc.pcap,voip\n");
  auto m = read_label_map(named);
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"chat", "voip"}));
  EXPECT_EQ(m.by_file.at("a.pcap"), 0);
  EXPECT_EQ(m.by_file.at("b.pcap"), 1);
  std::stringstream numeric("x.pcap,4\ny.pcap,0\n");
  auto n = read_label_map(numeric);
  EXPECT_EQ(n.by_file.at("x.pcap"), 4);
  EXPECT_TRUE(n.class_names.empty());
}

TEST(Hex, RoundTripAndRejects) {
  std::mt19937 rng(3);
  for (int i = 0; i < 50; ++i) {
    bytes b(rng() % 40);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(from_hex(to_hex(b)), b);
  }
  EXPECT_EQ(from_hex("ABcd"), (bytes{0xab, 0xcd}));
  EXPECT_EQ(error_code_of([] { from_hex("abc"); }), errc::schema_violation);
}
