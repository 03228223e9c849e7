#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "freeup/ingest.hpp"
#include "freeup/spectral.hpp"
#include "support.hpp"

using namespace freeup;
using freeup::testing::TempDir;

TEST_SUITE("ingest") {

TEST_CASE("packet_to_image normalizes, pads and truncates") {
  std::vector<std::uint8_t> full(1024, 255);
  auto img = packet_to_image(full, 32, 32);
  REQUIRE(img.size() == 1024);
  CHECK(std::all_of(img.begin(), img.end(), [](float v) { return v == 1.0f; }));

  auto empty = packet_to_image({}, 32, 32);
  CHECK(std::all_of(empty.begin(), empty.end(), [](float v) { return v == 0.0f; }));

  std::vector<std::uint8_t> longer(1030);
  for (std::size_t i = 0; i < longer.size(); ++i) longer[i] = static_cast<std::uint8_t>(i * 7);
  auto a = packet_to_image(longer, 32, 32);
  longer.resize(1024);
  CHECK(a == packet_to_image(longer, 32, 32));

  std::vector<std::uint8_t> three{0, 51, 255};
  auto small = packet_to_image(three, 2, 2);
  CHECK(small[0] == 0.0f);
  CHECK(small[1] == doctest::Approx(0.2));
  CHECK(small[2] == 1.0f);
  CHECK(small[3] == 0.0f);

  CHECK_THROWS_AS(packet_to_image(three, 0, 2), ShapeError);
}

TEST_CASE("flow_to_sample pads and truncates the packet list") {
  const Shape3 shape{8, 4, 4};
  RawFlow flow{"f", {}, Label::normal};
  for (int k = 0; k < 3; ++k) flow.packets.push_back(std::vector<std::uint8_t>(16, static_cast<std::uint8_t>(k + 1)));
  auto s = flow_to_sample(flow, shape);
  CHECK(s.label() == Label::normal);
  CHECK(s.source_id() == "f");
  for (int p = 0; p < 8; ++p) {
    const float want = p < 3 ? (p + 1) / 255.0f : 0.0f;
    for (float v : s.data().plane(p)) CHECK(v == want);
  }

  RawFlow ten{"g", {}, Label::anomalous};
  for (int k = 0; k < 10; ++k) ten.packets.push_back(std::vector<std::uint8_t>(16, static_cast<std::uint8_t>(k)));
  auto t = flow_to_sample(ten, shape);
  CHECK(t.data().at(7, 0, 0) == 7 / 255.0f);
  auto again = flow_to_sample(ten, shape);
  CHECK(again.data().data == t.data().data);

  RawFlow none{"h", {}, Label::unknown};
  auto z = flow_to_sample(none, shape);
  CHECK(std::all_of(z.data().data.begin(), z.data().data.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("TrafficSample enforces range") {
  Array3<float> bad(Shape3{1, 2, 2}, 0.5f);
  bad.data[1] = 1.5f;
  CHECK_THROWS_AS(TrafficSample(bad, Label::normal, "x"), DataError);
  CHECK_THROWS_AS(TrafficSample(Array3<float>(Shape3{0, 2, 2}), Label::normal, "x"), ShapeError);
}

TEST_CASE("build_split examples and invariants") {
  std::vector<Label> labels(20, Label::normal);
  labels.insert(labels.end(), 10, Label::anomalous);
  auto s = build_split(labels, 10, 3);
  CHECK(s.train.size() == 10);
  CHECK(s.test.size() == 20);
  for (auto i : s.train) CHECK(labels[i] == Label::normal);
  std::size_t test_anom = std::count_if(s.test.begin(), s.test.end(), [&](auto i) { return labels[i] == Label::anomalous; });
  CHECK(test_anom == 10);

  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(labels.size());
  std::iota(want.begin(), want.end(), 0);
  CHECK(all == want);
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));

  auto same = build_split(labels, 10, 3);
  CHECK(same.train == s.train);
  auto other = build_split(labels, 10, 4);
  CHECK(other.train != s.train);

  auto zero = build_split(labels, 0, 3);
  CHECK(zero.train.empty());
  CHECK(zero.test.size() == labels.size());

  CHECK_THROWS_AS(build_split(labels, 21, 3), InsufficientNormalsError);
}

TEST_CASE("sample files round-trip bit-identically") {
  TempDir dir("ingest_rt");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Array3<float> a(Shape3{3, 4, 5});
  for (auto& v : a.data) v = u(rng);
  write_sample_file(dir.path() / "s.f32", a);
  CHECK(std::filesystem::file_size(dir.path() / "s.f32") == a.size() * 4);
  auto b = read_sample_file(dir.path() / "s.f32", a.shape);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * 4) == 0);
  CHECK_THROWS_AS(read_sample_file(dir.path() / "s.f32", Shape3{3, 4, 4}), ShapeError);
}

TEST_CASE("corpus and manifest round-trip") {
  TempDir dir("ingest_corpus");
  SynthSpec spec;
  spec.shape = {2, 16, 16};
  Corpus c = synth_corpus(6, 3, 11, spec);
  auto m = write_corpus(c, dir.path());
  auto counts = m.counts();
  CHECK(counts.normal == 6);
  CHECK(counts.anomalous == 3);

  auto read = read_manifest(dir.path());
  CHECK(read.shape == spec.shape);
  CHECK(read.records.size() == 9);
  validate_manifest(read);
  Corpus back = load_corpus(read);
  REQUIRE(back.samples.size() == c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(back.samples[i].data().data == c.samples[i].data().data);
    CHECK(back.samples[i].label() == c.samples[i].label());
    CHECK(back.samples[i].source_id() == c.samples[i].source_id());
  }

  std::filesystem::remove(dir.path() / read.records[0].path);
  CHECK_THROWS_AS(validate_manifest(read), DataError);
  CHECK_THROWS_AS(read_manifest(dir.path() / "nope"), DataError);
}

TEST_CASE("synth_corpus contract") {
  SynthSpec spec;
  spec.shape = {2, 16, 16};
  auto a = synth_corpus(5, 0, 1, spec);
  CHECK(a.samples.size() == 5);
  for (const auto& s : a.samples) CHECK(s.label() == Label::normal);

  auto x = synth_corpus(4, 4, 9, spec);
  auto y = synth_corpus(4, 4, 9, spec);
  for (std::size_t i = 0; i < x.samples.size(); ++i) {
    CHECK(std::memcmp(x.samples[i].data().data.data(), y.samples[i].data().data.data(),
                      x.samples[i].data().size() * 4) == 0);
  }
  auto z = synth_corpus(4, 4, 10, spec);
  CHECK(z.samples[0].data().data != x.samples[0].data().data);

  spec.anomaly_patch = 40;
  CHECK_THROWS_AS(synth_corpus(1, 1, 0, spec), DataError);
}

TEST_CASE("synthetic normals carry high-frequency energy") {
  // Power in the outer radial bins stays far above the floor: the texture
  // is not a smooth image.
  auto c = synth_corpus(32, 0, 7, SynthSpec{});
  std::vector<Volume> vols;
  for (const auto& s : c.samples) vols.push_back(s.to_volume());
  auto prof = spectral::power_spectrum_profile(vols, 8);
  const double dc_band = prof.mean_log_power[0];
  for (std::size_t b = 1; b < prof.mean_log_power.size(); ++b) {
    CHECK(prof.mean_log_power[b] > std::log10(spectral::kLogPowerFloor) + 6.0);
    CHECK(prof.mean_log_power[b] > dc_band - 6.0);
  }
}

TEST_CASE("take_planes") {
  SynthSpec spec;
  spec.shape = {4, 8, 8};
  spec.anomaly_patch = 4;
  auto c = synth_corpus(2, 1, 3, spec);
  auto t = take_planes(c, 2);
  CHECK(t.shape == Shape3{2, 8, 8});
  CHECK(t.samples[2].label() == Label::anomalous);
  for (int p = 0; p < 2; ++p) {
    auto a = c.samples[1].data().plane(p);
    auto b = t.samples[1].data().plane(p);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  CHECK_THROWS_AS(take_planes(c, 5), ShapeError);
}

TEST_CASE("hex and directory readers") {
  TempDir dir("ingest_raw");
  {
    std::ofstream f(dir.path() / "pk.tsv");
    f << "# comment\n\nflowA\tnormal\t00ff10\nflowB\tanomalous\tabcd\nflowA\tnormal\t01\n";
  }
  auto flows = read_hex_packets(dir.path() / "pk.tsv");
  REQUIRE(flows.size() == 2);
  CHECK(flows[0].flow_id == "flowA");
  CHECK(flows[0].packets.size() == 2);
  CHECK(flows[0].packets[0] == std::vector<std::uint8_t>{0x00, 0xff, 0x10});
  CHECK(flows[1].label == Label::anomalous);

  {
    std::ofstream f(dir.path() / "bad.tsv");
    f << "x\tnormal\t0g\n";
  }
  CHECK_THROWS_AS(read_hex_packets(dir.path() / "bad.tsv"), DataError);

  std::filesystem::create_directories(dir.path() / "flows" / "f1");
  {
    std::ofstream(dir.path() / "flows" / "f1" / "b.bin", std::ios::binary) << "BB";
    std::ofstream(dir.path() / "flows" / "f1" / "a.bin", std::ios::binary) << "A";
  }
  auto d = read_flow_directory(dir.path() / "flows", Label::normal);
  REQUIRE(d.size() == 1);
  REQUIRE(d[0].packets.size() == 2);
  CHECK(d[0].packets[0] == std::vector<std::uint8_t>{'A'});
  CHECK(d[0].packets[1] == std::vector<std::uint8_t>{'B', 'B'});
}

}  // TEST_SUITE
