#include "egoclust/dataset.hpp"

#include "egoclust/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace egoclust {

namespace {

using ordered_json = nlohmann::ordered_json;

struct EventPattern {
  std::array<std::array<double, 3>, 4> quadrant{};
  std::array<double, 3> texture_color{};
  double freq_x = 1.0;
  double freq_y = 1.0;
  double phase = 0.0;
  double blob_x = 0.0;
  double blob_y = 0.0;
  double blob_r = 0.0;
  std::array<double, 3> blob_color{};
};

EventPattern draw_pattern(std::mt19937_64& rng, double size) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  EventPattern p;
  for (auto& q : p.quadrant)
    for (auto& c : q) c = u01(rng);
  for (auto& c : p.texture_color) c = u01(rng);
  p.freq_x = static_cast<double>(std::uniform_int_distribution<int>(1, 4)(rng));
  p.freq_y = static_cast<double>(std::uniform_int_distribution<int>(0, 4)(rng));
  p.phase = u01(rng) * 2.0 * std::numbers::pi;
  p.blob_x = (0.2 + 0.6 * u01(rng)) * size;
  p.blob_y = (0.2 + 0.6 * u01(rng)) * size;
  p.blob_r = (0.1 + 0.15 * u01(rng)) * size;
  for (auto& c : p.blob_color) c = u01(rng);
  return p;
}

double pattern_value(const EventPattern& p, double u, double v, std::size_t c, double size) {
  const double half = size / 2.0;
  const std::size_t q = (v < half ? 0 : 2) + (u < half ? 0 : 1);
  const double dx = u - p.blob_x;
  const double dy = v - p.blob_y;
  if (dx * dx + dy * dy <= p.blob_r * p.blob_r) return p.blob_color[c];
  const double wave = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * (p.freq_x * u + p.freq_y * v) / size + p.phase);
  return 0.7 * p.quadrant[q][c] + 0.3 * wave * p.texture_color[c];
}

// Mean color of the full-contrast pattern, so the drawn patterns do not
// depend on the separation knob.
std::array<double, 3> mean_color(const EventPattern& p, double size) {
  std::array<double, 3> m{};
  const auto n = static_cast<std::size_t>(size);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) m[c] += pattern_value(p, double(x), double(y), c, size);
    m[c] /= double(n * n);
  }
  return m;
}

std::string frame_file_name(std::int64_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".png";
  return os.str();
}

bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".ppm";
}

}  // namespace

std::vector<int> ImageSequence::labels() const {
  std::vector<int> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    if (!f.event) throw Error("sequence '" + source_id + "' has an unlabeled frame " + std::to_string(f.index));
    out.push_back(*f.event);
  }
  return out;
}

std::vector<Image> ImageSequence::images() const {
  std::vector<Image> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.image);
  return out;
}

void ImageSequence::validate() const {
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].index <= frames[i - 1].index) {
      throw Error("sequence '" + source_id + "': frame indices must be strictly increasing (at " +
                  std::to_string(frames[i].index) + ")");
    }
  }
  if (!labeled) return;
  std::set<int> closed;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].event) {
      throw Error("sequence '" + source_id + "': labeled sequence has no label on frame " +
                  std::to_string(frames[i].index));
    }
    if (i > 0 && *frames[i].event != *frames[i - 1].event) {
      closed.insert(*frames[i - 1].event);
      if (closed.count(*frames[i].event)) {
        throw Error("sequence '" + source_id + "': event " + std::to_string(*frames[i].event) +
                    " is not temporally contiguous");
      }
    }
  }
}

void SyntheticSpec::validate() const {
  if (num_events < 1) throw Error("synthetic spec: need at least one event");
  if (min_frames < 1 || min_frames > max_frames) throw Error("synthetic spec: frame range must satisfy 1 <= min <= max");
  if (image_size < 2) throw Error("synthetic spec: image size must be at least 2");
  if (jitter < 0.0 || jitter > 1.0) throw Error("synthetic spec: jitter must lie in [0,1]");
  if (separation < 0.0 || separation > 1.0) throw Error("synthetic spec: separation must lie in [0,1]");
  if (min_color_gap < 0.0) throw Error("synthetic spec: min_color_gap must be non-negative");
}

SyntheticSpec SyntheticSpec::well_separated() {
  SyntheticSpec spec;
  spec.num_events = 5;
  spec.min_frames = 40;
  spec.max_frames = 40;
  spec.image_size = 64;
  spec.jitter = 0.2;
  spec.separation = 1.0;
  spec.min_color_gap = 0.12;
  return spec;
}

ImageSequence generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  // Separate streams so event patterns do not depend on frame counts or jitter.
  std::seed_seq event_seq{seed, std::uint64_t{1}};
  std::seed_seq frame_seq{seed, std::uint64_t{2}};
  std::mt19937_64 event_rng(event_seq);
  std::mt19937_64 frame_rng(frame_seq);
  const auto size = static_cast<double>(spec.image_size);

  std::vector<EventPattern> patterns;
  std::vector<std::size_t> counts;
  std::vector<std::array<double, 3>> colors;
  for (std::size_t e = 0; e < spec.num_events; ++e) {
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw Error("synthetic spec: could not satisfy min_color_gap; lower it or use fewer events");
      auto p = draw_pattern(event_rng, size);
      const auto col = mean_color(p, size);
      const bool ok = std::all_of(colors.begin(), colors.end(), [&](const auto& o) {
        return std::hypot(col[0] - o[0], col[1] - o[1], col[2] - o[2]) >= spec.min_color_gap;
      });
      if (!ok) continue;
      patterns.push_back(p);
      colors.push_back(col);
      break;
    }
    counts.push_back(std::uniform_int_distribution<std::size_t>(spec.min_frames, spec.max_frames)(event_rng));
  }

  ImageSequence seq;
  seq.source_id = "synthetic-" + std::to_string(seed);
  seq.labeled = true;
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::int64_t index = 0;
  const double shift = spec.jitter * size / 8.0;
  for (std::size_t e = 0; e < spec.num_events; ++e) {
    for (std::size_t f = 0; f < counts[e]; ++f) {
      const double dx = sym(frame_rng) * shift;
      const double dy = sym(frame_rng) * shift;
      const double brightness = sym(frame_rng) * 0.1 * spec.jitter;
      Image img(spec.image_size, spec.image_size);
      for (std::size_t c = 0; c < Image::kChannels; ++c) {
        for (std::size_t y = 0; y < spec.image_size; ++y) {
          for (std::size_t x = 0; x < spec.image_size; ++x) {
            const double base = pattern_value(patterns[e], static_cast<double>(x) + dx, static_cast<double>(y) + dy, c, size);
            const double noise = gauss(frame_rng) * 0.05 * spec.jitter;
            img.at(c, y, x) = static_cast<float>(0.5 + spec.separation * (base - 0.5) + brightness + noise);
          }
        }
      }
      clamp01(img);
      Frame frame;
      frame.image = std::move(img);
      frame.index = index;
      frame.event = static_cast<int>(e);
      frame.file = frame_file_name(index);
      seq.frames.push_back(std::move(frame));
      ++index;
    }
  }
  return seq;
}

ImageSequence load_directory(const std::filesystem::path& dir, const std::optional<std::filesystem::path>& manifest) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(dir.string() + ": not a directory");
  ImageSequence seq;
  seq.source_id = dir.filename().string();
  std::optional<fs::path> manifest_path = manifest;
  if (!manifest_path && fs::exists(dir / kManifestName)) manifest_path = dir / kManifestName;

  if (manifest_path) {
    std::ifstream in(*manifest_path);
    if (!in) throw Error(manifest_path->string() + ": cannot open manifest");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::string where = manifest_path->string() + ":" + std::to_string(line_no);
      Frame frame;
      try {
        const auto obj = nlohmann::json::parse(line);
        frame.file = obj.at("file").get<std::string>();
        frame.index = obj.at("index").get<std::int64_t>();
        if (obj.contains("event") && !obj.at("event").is_null()) frame.event = obj.at("event").get<int>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(where + ": malformed manifest line (" + e.what() + ")");
      }
      seq.frames.push_back(std::move(frame));
    }
  } else {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
      const auto stem = entry.path().stem().string();
      if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](unsigned char ch) { return std::isdigit(ch); })) {
        throw Error(entry.path().string() + ": file name is not a zero-padded frame index");
      }
      Frame frame;
      frame.file = entry.path().filename().string();
      frame.index = std::stoll(stem);
      seq.frames.push_back(std::move(frame));
    }
  }
  if (seq.frames.empty()) throw Error(dir.string() + ": no frames");

  std::sort(seq.frames.begin(), seq.frames.end(), [](const Frame& a, const Frame& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    if (seq.frames[i].index == seq.frames[i - 1].index) {
      throw Error(dir.string() + ": duplicate frame index " + std::to_string(seq.frames[i].index) + " (" +
                  seq.frames[i - 1].file + ", " + seq.frames[i].file + ")");
    }
  }
  const auto labeled = std::count_if(seq.frames.begin(), seq.frames.end(), [](const Frame& f) { return f.event.has_value(); });
  if (labeled != 0 && static_cast<std::size_t>(labeled) != seq.frames.size()) {
    for (const auto& f : seq.frames) {
      if (!f.event) throw Error(dir.string() + ": label gap at " + f.file + " (partially labeled manifest)");
    }
  }
  seq.labeled = labeled != 0;
  for (auto& f : seq.frames) {
    try {
      f.image = read_image(dir / f.file);
    } catch (const Error& e) {
      throw Error(std::string("unreadable frame: ") + e.what());
    }
  }
  seq.validate();
  return seq;
}

void save_directory(const ImageSequence& seq, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir / kManifestName);
  if (!manifest) throw Error((dir / kManifestName).string() + ": cannot open for writing");
  for (const auto& f : seq.frames) {
    const std::string file = frame_file_name(f.index);
    write_png(f.image, dir / file);
    ordered_json line;
    line["file"] = file;
    line["index"] = f.index;
    line["event"] = f.event ? ordered_json(*f.event) : ordered_json(nullptr);
    manifest << line.dump() << '\n';
  }
  if (!manifest) throw Error((dir / kManifestName).string() + ": write failed");
}

SplitResult split(const std::vector<ImageSequence>& sequences, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must lie in (0,1)");
  SplitResult result;
  result.seed = seed;
  result.ratio = ratio;
  std::map<int, std::vector<std::size_t>> by_class;
  std::size_t flat = 0;
  for (const auto& seq : sequences) {
    for (const auto& f : seq.frames) {
      result.pretrain.push_back(flat);
      if (f.event) by_class[*f.event].push_back(flat);
      ++flat;
    }
  }
  if (by_class.empty()) throw Error("split: no labeled frames for probe splits");
  std::mt19937_64 rng(seed);
  for (auto& [label, members] : by_class) {
    if (members.size() < 2) {
      throw Error("split: event " + std::to_string(label) + " has fewer than 2 frames and cannot be stratified");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = members.size();
    auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    result.probe_train.insert(result.probe_train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    result.probe_test.insert(result.probe_test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(result.probe_train.begin(), result.probe_train.end());
  std::sort(result.probe_test.begin(), result.probe_test.end());
  return result;
}

void write_split(const SplitResult& s, const std::filesystem::path& path) {
  ordered_json j;
  j["seed"] = s.seed;
  j["ratio"] = s.ratio;
  j["probe_train"] = s.probe_train;
  j["probe_test"] = s.probe_test;
  std::ofstream out(path);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

SplitResult read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(path.string() + ": cannot open split descriptor");
  SplitResult s;
  try {
    const auto j = nlohmann::json::parse(in);
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ratio = j.at("ratio").get<double>();
    s.probe_train = j.at("probe_train").get<std::vector<std::size_t>>();
    s.probe_test = j.at("probe_test").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": malformed split descriptor (" + e.what() + ")");
  }
  return s;
}

}  // namespace egoclust
