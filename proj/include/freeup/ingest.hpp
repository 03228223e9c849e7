#pragma once

// Flow-to-image conversion, on-disk sample/manifest format and zero-positive
// train/test splitting.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "freeup/tensor.hpp"

namespace freeup {

/// Raised for malformed or inconsistent data sets (bad manifest, missing files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Label { normal, anomalous, unknown };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

struct RawFlow {
  std::string flow_id;
  std::vector<std::vector<std::uint8_t>> packets;
  Label label = Label::unknown;
};

/// A P x H x W traffic image with values in [0,1].
class TrafficSample {
 public:
  TrafficSample() = default;
  /// Validates shape and the [0,1] range; throws ShapeError / DataError.
  TrafficSample(Array3<float> data, Label label, std::string source_id);

  const Array3<float>& data() const { return data_; }
  const Shape3& shape() const { return data_.shape; }
  Label label() const { return label_; }
  const std::string& source_id() const { return source_id_; }

  Volume to_volume() const;

 private:
  Array3<float> data_;
  Label label_ = Label::unknown;
  std::string source_id_;
};

inline constexpr Shape3 kDefaultSampleShape{8, 32, 32};

/// First rows*cols bytes laid out row-major and scaled by 1/255; zero-padded
/// or truncated at the tail.
std::vector<float> packet_to_image(std::span<const std::uint8_t> packet, int rows, int cols);

/// First P packets in arrival order, one plane each; missing packets are zero planes.
TrafficSample flow_to_sample(const RawFlow& flow, const Shape3& shape);

// --- on-disk format -------------------------------------------------------

struct ManifestRecord {
  std::string path;  // relative to the manifest directory
  Label label = Label::unknown;
  std::string source_id;
};

struct LabelCounts {
  std::size_t normal = 0;
  std::size_t anomalous = 0;
  std::size_t unknown = 0;
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  Shape3 shape = kDefaultSampleShape;
  int schema_version = kSchemaVersion;
  std::vector<ManifestRecord> records;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  LabelCounts counts() const;
  std::vector<Label> labels() const;
};

inline constexpr const char* kManifestFileName = "manifest.json";

/// Little-endian float32, row-major, no header.
void write_sample_file(const std::filesystem::path& path, const Array3<float>& data);
Array3<float> read_sample_file(const std::filesystem::path& path, const Shape3& shape);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
/// Parses `path` (a manifest file or a directory containing manifest.json).
DatasetManifest read_manifest(const std::filesystem::path& path);
/// Checks that every record exists and has the declared size.
void validate_manifest(const DatasetManifest& manifest);

/// A data set held in memory.
struct Corpus {
  Shape3 shape = kDefaultSampleShape;
  std::vector<TrafficSample> samples;

  std::vector<Label> labels() const;
};

Corpus load_corpus(const DatasetManifest& manifest);
/// Writes samples/NNNNNN.f32 files plus manifest.json under `dir`.
DatasetManifest write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// --- splitting ---------------------------------------------------------------

class InsufficientNormalsError : public DataError {
 public:
  using DataError::DataError;
};

/// Indices into the source data set.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Draws exactly `train_size` normal samples with a seeded generator; the
/// test set is everything else in source order.
DatasetSplit build_split(std::span<const Label> labels, std::size_t train_size, std::uint64_t seed);
DatasetSplit build_split(const DatasetManifest& manifest, std::size_t train_size, std::uint64_t seed);

std::vector<TrafficSample> select(const Corpus& corpus, std::span<const std::size_t> indices);

/// The first `planes` packet planes of every sample; throws ShapeError when
/// the corpus has fewer.
Corpus take_planes(const Corpus& corpus, int planes);

// --- synthetic corpus --------------------------------------------------------

/// Parameters of the synthetic traffic-image generator.
///
/// Normal sample = class template (smooth Gaussian blobs over a base level) +
/// a per-plane periodic +/-texture_amplitude tile + Gaussian noise, clipped to
/// [0,1]. In an anomaly each plane, with probability `anomaly_fraction`, has
/// its tile replaced by a freshly drawn one inside a random
/// anomaly_patch x anomaly_patch square; with `template_shift` > 0 an extra
/// blob of that amplitude is added as well.
struct SynthSpec {
  Shape3 shape = kDefaultSampleShape;
  int n_classes = 4;
  double base_level = 0.3;
  double texture_amplitude = 0.15;
  int texture_period = 4;
  double noise_std = 0.02;
  double anomaly_fraction = 0.5;
  int anomaly_patch = 8;
  double template_shift = 0.0;
};

Corpus synth_corpus(std::size_t n_normal, std::size_t n_anomalous, std::uint64_t seed,
                    const SynthSpec& spec = {});

// --- raw flow sources ------------------------------------------------------

/// `dir` holds one sub-directory per flow; each file inside is one packet, and
/// packets are ordered by file name.
std::vector<RawFlow> read_flow_directory(const std::filesystem::path& dir, Label label);

/// One packet per line: `flow_id<TAB>label<TAB>hex`. Packets of a flow keep
/// line order; flows keep first-appearance order. Blank lines and lines
/// starting with '#' are skipped.
std::vector<RawFlow> read_hex_packets(const std::filesystem::path& file);

}  // namespace freeup
