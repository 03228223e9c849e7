#include "freeup/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace freeup {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Label label) {
  switch (label) {
    case Label::normal: return "normal";
    case Label::anomalous: return "anomalous";
    case Label::unknown: return "unknown";
  }
  return "unknown";
}

Label parse_label(std::string_view text) {
  if (text == "normal") return Label::normal;
  if (text == "anomalous") return Label::anomalous;
  if (text == "unknown") return Label::unknown;
  throw DataError("invalid label '" + std::string(text) + "' (expected normal|anomalous|unknown)");
}

TrafficSample::TrafficSample(Array3<float> data, Label label, std::string source_id)
    : data_(std::move(data)), label_(label), source_id_(std::move(source_id)) {
  if (data_.shape.planes < 1 || data_.shape.rows < 1 || data_.shape.cols < 1 ||
      data_.data.size() != data_.shape.size()) {
    throw ShapeError("invalid sample shape " + to_string(data_.shape));
  }
  for (float v : data_.data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DataError("sample '" + source_id_ + "' has a value outside [0,1]");
    }
  }
}

Volume TrafficSample::to_volume() const {
  Volume v(data_.shape);
  std::copy(data_.data.begin(), data_.data.end(), v.data.begin());
  return v;
}

std::vector<float> packet_to_image(std::span<const std::uint8_t> packet, int rows, int cols) {
  if (rows < 1 || cols < 1) throw ShapeError("packet_to_image: rows and cols must be >= 1");
  std::vector<float> img(static_cast<std::size_t>(rows) * cols, 0.0f);
  const std::size_t n = std::min(img.size(), packet.size());
  for (std::size_t i = 0; i < n; ++i) img[i] = static_cast<float>(packet[i]) / 255.0f;
  return img;
}

TrafficSample flow_to_sample(const RawFlow& flow, const Shape3& shape) {
  if (shape.planes < 1) throw ShapeError("flow_to_sample: P must be >= 1");
  Array3<float> data(shape);
  const std::size_t used = std::min<std::size_t>(flow.packets.size(), shape.planes);
  for (std::size_t p = 0; p < used; ++p) {
    auto img = packet_to_image(flow.packets[p], shape.rows, shape.cols);
    std::copy(img.begin(), img.end(), data.plane(static_cast<int>(p)).begin());
  }
  return TrafficSample(std::move(data), flow.label, flow.flow_id);
}

LabelCounts DatasetManifest::counts() const {
  LabelCounts c;
  for (const auto& r : records) {
    switch (r.label) {
      case Label::normal: ++c.normal; break;
      case Label::anomalous: ++c.anomalous; break;
      case Label::unknown: ++c.unknown; break;
    }
  }
  return c;
}

std::vector<Label> DatasetManifest::labels() const {
  std::vector<Label> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

std::vector<Label> Corpus::labels() const {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label());
  return out;
}

void write_sample_file(const fs::path& path, const Array3<float>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data.data()),
              static_cast<std::streamsize>(data.data.size() * sizeof(float)));
  } else {
    for (float v : data.data) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                            static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

Array3<float> read_sample_file(const fs::path& path, const Shape3& shape) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw DataError("cannot stat sample file " + path.string());
  if (bytes != shape.size() * sizeof(float)) {
    throw ShapeError("sample file " + path.string() + " has " + std::to_string(bytes) +
                     " bytes, expected shape " + to_string(shape));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read on " + path.string());
  Array3<float> out(shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const unsigned char* b = raw.data() + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    out.data[i] = std::bit_cast<float>(bits);
  }
  return out;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  const auto counts = manifest.counts();
  json j;
  j["schema_version"] = manifest.schema_version;
  j["P"] = manifest.shape.planes;
  j["H"] = manifest.shape.rows;
  j["W"] = manifest.shape.cols;
  j["counts"] = {{"normal", counts.normal}, {"anomalous", counts.anomalous}, {"unknown", counts.unknown}};
  json recs = json::array();
  for (const auto& r : manifest.records) {
    recs.push_back({{"path", r.path}, {"label", to_string(r.label)}, {"source_id", r.source_id}});
  }
  j["records"] = std::move(recs);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
  fs::path file = fs::is_directory(path) ? path / kManifestFileName : path;
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  DatasetManifest m;
  try {
    json j = json::parse(in);
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != DatasetManifest::kSchemaVersion) {
      throw DataError("unsupported manifest schema_version " + std::to_string(m.schema_version));
    }
    m.shape = {j.at("P").get<int>(), j.at("H").get<int>(), j.at("W").get<int>()};
    if (m.shape.planes < 1 || m.shape.rows < 1 || m.shape.cols < 1) {
      throw ShapeError("manifest declares invalid shape " + to_string(m.shape));
    }
    for (const auto& r : j.at("records")) {
      m.records.push_back({r.at("path").get<std::string>(), parse_label(r.at("label").get<std::string>()),
                           r.at("source_id").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + file.string() + ": " + e.what());
  }
  m.root = file.parent_path();
  return m;
}

void validate_manifest(const DatasetManifest& manifest) {
  const auto expected = manifest.shape.size() * sizeof(float);
  for (const auto& r : manifest.records) {
    const fs::path p = manifest.root / r.path;
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw DataError("manifest references missing file " + p.string());
    if (fs::file_size(p, ec) != expected) {
      throw ShapeError("sample file " + p.string() + " does not match shape " + to_string(manifest.shape));
    }
  }
}

Corpus load_corpus(const DatasetManifest& manifest) {
  Corpus c;
  c.shape = manifest.shape;
  c.samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    c.samples.emplace_back(read_sample_file(manifest.root / r.path, manifest.shape), r.label, r.source_id);
  }
  return c;
}

DatasetManifest write_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "samples");
  DatasetManifest m;
  m.shape = corpus.shape;
  m.root = dir;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    if (!(s.shape() == corpus.shape)) throw ShapeError("corpus sample shape mismatch at index " + std::to_string(i));
    std::ostringstream name;
    name << "samples/" << std::setw(6) << std::setfill('0') << i << ".f32";
    write_sample_file(dir / name.str(), s.data());
    m.records.push_back({name.str(), s.label(), s.source_id()});
  }
  write_manifest(m, dir / kManifestFileName);
  return m;
}

DatasetSplit build_split(std::span<const Label> labels, std::size_t train_size, std::uint64_t seed) {
  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Label::normal) normals.push_back(i);
  }
  if (normals.size() < train_size) {
    throw InsufficientNormalsError("split needs " + std::to_string(train_size) + " normal samples, data set has " +
                                   std::to_string(normals.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(normals.begin(), normals.end(), rng);
  normals.resize(train_size);
  std::sort(normals.begin(), normals.end());

  DatasetSplit split;
  split.train = normals;
  std::size_t t = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (t < normals.size() && normals[t] == i) {
      ++t;
      continue;
    }
    split.test.push_back(i);
  }
  return split;
}

DatasetSplit build_split(const DatasetManifest& manifest, std::size_t train_size, std::uint64_t seed) {
  const auto labels = manifest.labels();
  return build_split(labels, train_size, seed);
}

std::vector<TrafficSample> select(const Corpus& corpus, std::span<const std::size_t> indices) {
  std::vector<TrafficSample> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(corpus.samples.at(i));
  return out;
}

Corpus take_planes(const Corpus& corpus, int planes) {
  if (planes < 1 || planes > corpus.shape.planes) {
    throw ShapeError("cannot take " + std::to_string(planes) + " planes from samples of shape " +
                     to_string(corpus.shape));
  }
  Corpus out;
  out.shape = Shape3{planes, corpus.shape.rows, corpus.shape.cols};
  out.samples.reserve(corpus.samples.size());
  for (const auto& s : corpus.samples) {
    const auto& src = s.data().data;
    Array3<float> data(out.shape, std::vector<float>(src.begin(), src.begin() + out.shape.size()));
    out.samples.emplace_back(std::move(data), s.label(), s.source_id());
  }
  return out;
}

namespace {

struct Blob {
  double cy, cx, sigma, amplitude;
};

std::vector<Blob> draw_blobs(std::mt19937_64& rng, int rows, int cols, int count, double amp_lo, double amp_hi) {
  std::uniform_real_distribution<double> ry(0.0, rows - 1), rx(0.0, cols - 1);
  std::uniform_real_distribution<double> rs(std::max(2.0, rows / 8.0), std::max(3.0, rows / 4.0));
  std::uniform_real_distribution<double> ra(amp_lo, amp_hi);
  std::vector<Blob> blobs;
  for (int i = 0; i < count; ++i) blobs.push_back({ry(rng), rx(rng), rs(rng), ra(rng)});
  return blobs;
}

void add_blobs(std::span<double> plane, int rows, int cols, const std::vector<Blob>& blobs) {
  for (const auto& b : blobs) {
    for (int h = 0; h < rows; ++h)
      for (int w = 0; w < cols; ++w) {
        const double d2 = (h - b.cy) * (h - b.cy) + (w - b.cx) * (w - b.cx);
        plane[static_cast<std::size_t>(h) * cols + w] += b.amplitude * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
      }
  }
}

}  // namespace

Corpus synth_corpus(std::size_t n_normal, std::size_t n_anomalous, std::uint64_t seed, const SynthSpec& spec) {
  const Shape3 shape = spec.shape;
  if (shape.planes < 1 || shape.rows < 1 || shape.cols < 1) throw ShapeError("synth: invalid shape");
  if (spec.n_classes < 1) throw DataError("synth: n_classes must be >= 1");
  if (spec.texture_period < 1) throw DataError("synth: texture_period must be >= 1");
  if (spec.anomaly_patch < 1 || spec.anomaly_patch > std::min(shape.rows, shape.cols)) {
    throw DataError("synth: anomaly_patch must lie in [1, min(H, W)]");
  }
  const int period = spec.texture_period;
  std::bernoulli_distribution coin(0.5);
  auto draw_tile = [&](std::mt19937_64& rng) {
    std::vector<double> tile(static_cast<std::size_t>(period) * period);
    for (auto& t : tile) t = coin(rng) ? spec.texture_amplitude : -spec.texture_amplitude;
    return tile;
  };

  // Corpus-level structure depends only on the seed.
  std::mt19937_64 base_rng(seed);
  std::vector<std::vector<double>> templates(spec.n_classes, std::vector<double>(shape.size(), spec.base_level));
  for (auto& tmpl : templates) {
    for (int p = 0; p < shape.planes; ++p) {
      auto plane = std::span<double>(tmpl).subspan(p * shape.plane_size(), shape.plane_size());
      add_blobs(plane, shape.rows, shape.cols, draw_blobs(base_rng, shape.rows, shape.cols, 3, 0.1, 0.25));
    }
  }
  std::vector<std::vector<double>> tiles;  // one per plane
  for (int p = 0; p < shape.planes; ++p) tiles.push_back(draw_tile(base_rng));

  Corpus corpus;
  corpus.shape = shape;
  const std::size_t total = n_normal + n_anomalous;
  corpus.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const bool anomalous = i >= n_normal;
    std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(i), anomalous ? 1u : 0u};
    std::mt19937_64 rng(sseq);
    std::uniform_int_distribution<int> pick_class(0, spec.n_classes - 1);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    std::bernoulli_distribution perturb(spec.anomaly_fraction);
    std::uniform_int_distribution<int> pick_row(0, shape.rows - spec.anomaly_patch);
    std::uniform_int_distribution<int> pick_col(0, shape.cols - spec.anomaly_patch);

    const int cls = pick_class(rng);
    std::vector<double> values = templates[cls];
    for (int p = 0; p < shape.planes; ++p) {
      const std::vector<double>* tile = &tiles[p];
      std::vector<double> foreign;
      int r0 = 0, c0 = 0, side = 0;
      if (anomalous && perturb(rng)) {
        foreign = draw_tile(rng);
        r0 = pick_row(rng);
        c0 = pick_col(rng);
        side = spec.anomaly_patch;
      }
      for (int h = 0; h < shape.rows; ++h) {
        for (int w = 0; w < shape.cols; ++w) {
          const bool inside = h >= r0 && h < r0 + side && w >= c0 && w < c0 + side;
          const auto& t = inside ? foreign : *tile;
          values[(static_cast<std::size_t>(p) * shape.rows + h) * shape.cols + w] +=
              t[static_cast<std::size_t>(h % period) * period + w % period];
        }
      }
    }
    if (anomalous && spec.template_shift > 0.0) {
      for (int p = 0; p < shape.planes; ++p) {
        auto plane = std::span<double>(values).subspan(p * shape.plane_size(), shape.plane_size());
        add_blobs(plane, shape.rows, shape.cols,
                  draw_blobs(rng, shape.rows, shape.cols, 1, spec.template_shift, spec.template_shift));
      }
    }
    Array3<float> data(shape);
    for (std::size_t k = 0; k < values.size(); ++k) {
      data.data[k] = static_cast<float>(std::clamp(values[k] + noise(rng), 0.0, 1.0));
    }
    std::string id = (anomalous ? "synth-a-" : "synth-n-") + std::to_string(anomalous ? i - n_normal : i);
    corpus.samples.emplace_back(std::move(data), anomalous ? Label::anomalous : Label::normal, std::move(id));
  }
  return corpus;
}

std::vector<RawFlow> read_flow_directory(const fs::path& dir, Label label) {
  if (!fs::is_directory(dir)) throw DataError("flow directory " + dir.string() + " does not exist");
  std::vector<fs::path> flow_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) flow_dirs.push_back(e.path());
  }
  std::sort(flow_dirs.begin(), flow_dirs.end());
  std::vector<RawFlow> flows;
  for (const auto& fd : flow_dirs) {
    std::vector<fs::path> packet_files;
    for (const auto& e : fs::directory_iterator(fd)) {
      if (e.is_regular_file()) packet_files.push_back(e.path());
    }
    std::sort(packet_files.begin(), packet_files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    RawFlow flow{fd.filename().string(), {}, label};
    for (const auto& pf : packet_files) {
      std::ifstream in(pf, std::ios::binary);
      if (!in) throw DataError("cannot read packet file " + pf.string());
      flow.packets.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    flows.push_back(std::move(flow));
  }
  return flows;
}

namespace {

std::vector<std::uint8_t> decode_hex(std::string_view hex, const std::string& where) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw DataError("invalid hex digit in " + where);
  };
  if (hex.size() % 2 != 0) throw DataError("odd-length hex string in " + where);
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
  }
  return out;
}

}  // namespace

std::vector<RawFlow> read_hex_packets(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<RawFlow> flows;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    const std::string where = file.string() + ":" + std::to_string(lineno);
    if (t2 == std::string::npos) throw DataError("expected flow_id<TAB>label<TAB>hex at " + where);
    std::string id = line.substr(0, t1);
    const Label label = parse_label(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    auto bytes = decode_hex(std::string_view(line).substr(t2 + 1), where);
    auto [it, inserted] = index.try_emplace(id, flows.size());
    if (inserted) flows.push_back(RawFlow{id, {}, label});
    RawFlow& flow = flows[it->second];
    if (flow.label != label) throw DataError("flow '" + id + "' has conflicting labels at " + where);
    flow.packets.push_back(std::move(bytes));
  }
  return flows;
}

}  // namespace freeup
