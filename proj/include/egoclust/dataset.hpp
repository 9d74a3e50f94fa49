#pragma once

#include "egoclust/image.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace egoclust {

struct Frame {
  Image image;
  std::int64_t index = 0;
  std::optional<int> event;
  std::string file;  // relative file name when loaded from / saved to disk
};

/// Ordered frames from one capture. Labeled sequences carry an event label on
/// every frame and labels form contiguous runs in time.
struct ImageSequence {
  std::vector<Frame> frames;
  std::string source_id;
  bool labeled = false;

  std::size_t size() const { return frames.size(); }
  std::vector<int> labels() const;
  std::vector<Image> images() const;

  /// Throws on non-increasing indices, partial labels, or non-contiguous events.
  void validate() const;
};

struct SyntheticSpec {
  std::size_t num_events = 5;
  std::size_t min_frames = 40;
  std::size_t max_frames = 40;
  std::size_t image_size = 64;
  // Within-event variation: translation (jitter * size / 8 px), brightness
  // (+-0.1 * jitter) and pixel noise (sigma 0.05 * jitter).
  double jitter = 0.2;
  // Contrast of each event's pattern around mid-gray; 0 makes all events gray.
  double separation = 1.0;
  // Minimum RGB distance between the mean colors of any two full-contrast
  // event patterns; patterns are redrawn until it holds.
  double min_color_gap = 0.0;

  void validate() const;

  /// 5 events x 40 frames, 64x64, strong separation, mild jitter, color gap 0.12.
  static SyntheticSpec well_separated();
};

ImageSequence generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

inline constexpr const char* kManifestName = "manifest.jsonl";

/// Loads frames from a directory. With a manifest (explicit path or
/// `manifest.jsonl` inside the directory) frames and labels come from it;
/// otherwise every .png/.ppm whose stem is an integer is loaded unlabeled.
ImageSequence load_directory(const std::filesystem::path& dir,
                             const std::optional<std::filesystem::path>& manifest = std::nullopt);

/// Writes zero-padded PNG frames plus manifest.jsonl into `dir`.
void save_directory(const ImageSequence& seq, const std::filesystem::path& dir);

struct SplitResult {
  std::uint64_t seed = 0;
  double ratio = 0.8;
  // Positions in the concatenation of the input sequences.
  std::vector<std::size_t> pretrain;
  std::vector<std::size_t> probe_train;
  std::vector<std::size_t> probe_test;
};

/// Pretrain set: every frame (labels unused). Probe splits: labeled frames
/// only, stratified per event label so each class lands in both splits.
SplitResult split(const std::vector<ImageSequence>& sequences, double ratio, std::uint64_t seed);

void write_split(const SplitResult& split, const std::filesystem::path& path);
SplitResult read_split(const std::filesystem::path& path);

}  // namespace egoclust
