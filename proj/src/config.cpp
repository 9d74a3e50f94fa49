#include "egoclust/config.hpp"

#include <toml.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

// Seeds (uint64) are read through the size_t overload.
static_assert(std::is_same_v<std::uint64_t, std::size_t>);

namespace egoclust {

Branch parse_branch(std::string_view name) {
  if (name == "joint") return Branch::Joint;
  if (name == "mae") return Branch::Mae;
  if (name == "contrastive-masked") return Branch::ContrastiveMasked;
  if (name == "contrastive-unmasked") return Branch::ContrastiveUnmasked;
  throw Error("unknown branch '" + std::string(name) +
              "' (expected joint, mae, contrastive-masked or contrastive-unmasked)");
}

std::string branch_name(Branch branch) {
  switch (branch) {
    case Branch::Joint: return "joint";
    case Branch::Mae: return "mae";
    case Branch::ContrastiveMasked: return "contrastive-masked";
    case Branch::ContrastiveUnmasked: return "contrastive-unmasked";
  }
  return "joint";
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  augment.validate();
  data.synthetic.validate();
  cluster.validate();
  probe.optimizer.validate();
  if (!(data.probe_ratio > 0.0 && data.probe_ratio < 1.0)) throw Error("config: data.probe_ratio must lie in (0,1)");
  if (augment.output_size != model.encoder.image_size) {
    throw Error("config: augment.output_size must equal model.image_size");
  }
}

void RunConfig::apply_branch(Branch b) {
  branch = b;
  switch (b) {
    case Branch::Joint:
      break;
    case Branch::Mae:
      train.alpha = 1.0;
      break;
    case Branch::ContrastiveMasked:
      train.alpha = 0.0;
      break;
    case Branch::ContrastiveUnmasked:
      train.alpha = 0.0;
      model.encoder.mask_ratio = 0.0;
      train.batch_size = 16;
      break;
  }
}

namespace {

// Reads typed keys from one table and remembers which keys were consumed so
// leftovers can be reported.
class SectionReader {
 public:
  SectionReader(const toml::table* table, std::string name, std::string source)
      : table_(table), name_(std::move(name)), source_(std::move(source)) {}

  template <typename Out>
  void read(const char* key, Out& out) {
    used_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    assign(key, *node, out);
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, value] : *table_) {
      if (!used_.count(std::string(key.str()))) fail(key.str(), "unknown key");
    }
  }

 private:
  [[noreturn]] void fail(std::string_view key, const std::string& what) const {
    throw Error(source_ + ": [" + name_ + "] " + std::string(key) + ": " + what);
  }

  void assign(std::string_view key, const toml::node& node, double& out) const {
    if (auto v = node.value<double>(); v && (node.is_floating_point() || node.is_integer())) {
      out = *v;
      return;
    }
    fail(key, "expected a number");
  }
  void assign(std::string_view key, const toml::node& node, std::size_t& out) const {
    const auto v = node.as_integer();
    if (!v || v->get() < 0) fail(key, "expected a non-negative integer");
    out = static_cast<std::size_t>(v->get());
  }
  void assign(std::string_view key, const toml::node& node, bool& out) const {
    const auto v = node.as_boolean();
    if (!v) fail(key, "expected true or false");
    out = v->get();
  }
  void assign(std::string_view key, const toml::node& node, std::string& out) const {
    const auto v = node.as_string();
    if (!v) fail(key, "expected a string");
    out = v->get();
  }
  template <std::size_t N>
  void assign(std::string_view key, const toml::node& node, std::array<double, N>& out) const {
    const auto* arr = node.as_array();
    if (!arr || arr->size() != N) fail(key, "expected an array of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      const auto v = (*arr)[i].value<double>();
      if (!v) fail(key, "expected an array of " + std::to_string(N) + " numbers");
      out[i] = *v;
    }
  }

  const toml::table* table_;
  std::string name_;
  std::string source_;
  std::set<std::string> used_;
};

}  // namespace

RunConfig parse_config(std::string_view toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw Error(msg.str());
  }
  static const std::set<std::string> sections{"model", "train", "augment", "data", "cluster", "probe"};
  for (const auto& [key, value] : root) {
    if (!sections.count(std::string(key.str()))) throw Error(source + ": unknown section [" + std::string(key.str()) + "]");
    if (!value.is_table()) throw Error(source + ": " + std::string(key.str()) + " must be a table");
  }

  RunConfig c;
  {
    SectionReader s(root["model"].as_table(), "model", source);
    auto& e = c.model.encoder;
    s.read("image_size", e.image_size);
    s.read("patch_size", e.patch_size);
    s.read("embed_dim", e.embed_dim);
    s.read("depth", e.depth);
    s.read("heads", e.heads);
    s.read("mlp_ratio", e.mlp_ratio);
    s.read("mask_ratio", e.mask_ratio);
    s.read("decoder_dim", c.model.decoder.dim);
    s.read("decoder_depth", c.model.decoder.depth);
    s.read("decoder_heads", c.model.decoder.heads);
    s.read("decoder_mlp_ratio", c.model.decoder.mlp_ratio);
    s.read("proj_channels", c.model.proj_channels);
    s.finish();
  }
  {
    SectionReader s(root["train"].as_table(), "train", source);
    auto& t = c.train;
    std::string branch = branch_name(c.branch);
    s.read("branch", branch);
    c.branch = parse_branch(branch);
    s.read("alpha", t.alpha);
    s.read("beta", t.beta);
    s.read("tau", t.tau);
    s.read("lr", t.base_lr);
    s.read("lr_decay", t.lr_decay);
    s.read("decay_period", t.decay_period);
    s.read("batch_size", t.batch_size);
    s.read("epochs", t.epochs);
    s.read("seed", t.seed);
    s.read("weight_decay", t.weight_decay);
    s.read("adam_beta1", t.adam_beta1);
    s.read("adam_beta2", t.adam_beta2);
    s.read("adam_eps", t.adam_eps);
    s.read("patience", t.patience);
    s.read("min_improvement", t.min_improvement);
    s.read("checkpoint_every", t.checkpoint_every);
    s.finish();
  }
  {
    SectionReader s(root["augment"].as_table(), "augment", source);
    auto& a = c.augment;
    a.output_size = c.model.encoder.image_size;
    s.read("crop_scale", a.crop_scale);
    s.read("crop_ratio", a.crop_ratio);
    s.read("flip_p", a.flip_p);
    s.read("jitter", a.jitter);
    s.read("jitter_p", a.jitter_p);
    s.read("grayscale_p", a.grayscale_p);
    s.read("blur_sigma", a.blur_sigma);
    s.read("blur_p", a.blur_p);
    s.read("output_size", a.output_size);
    s.finish();
  }
  {
    SectionReader s(root["data"].as_table(), "data", source);
    auto& d = c.data;
    s.read("num_events", d.synthetic.num_events);
    s.read("min_frames", d.synthetic.min_frames);
    s.read("max_frames", d.synthetic.max_frames);
    s.read("image_size", d.synthetic.image_size);
    s.read("jitter", d.synthetic.jitter);
    s.read("separation", d.synthetic.separation);
    s.read("min_color_gap", d.synthetic.min_color_gap);
    s.read("generate_seed", d.generate_seed);
    s.read("probe_ratio", d.probe_ratio);
    s.read("split_seed", d.split_seed);
    s.finish();
  }
  {
    SectionReader s(root["cluster"].as_table(), "cluster", source);
    auto& p = c.cluster;
    s.read("window", p.window);
    s.read("threshold", p.threshold);
    s.read("merge_threshold", p.merge_threshold);
    s.read("min_length", p.min_length);
    std::string scaling = scaling_name(p.scaling);
    s.read("scaling", scaling);
    p.scaling = parse_scaling(scaling);
    s.finish();
  }
  {
    SectionReader s(root["probe"].as_table(), "probe", source);
    auto& p = c.probe;
    s.read("lr", p.optimizer.lr);
    s.read("weight_decay", p.optimizer.weight_decay);
    s.read("batch_size", p.optimizer.batch_size);
    s.read("epochs", p.optimizer.epochs);
    s.read("seed", p.optimizer.seed);
    s.read("augment", p.augment);
    s.finish();
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

namespace {

// Shortest text that parses back to the same double, always with a '.' or
// exponent so TOML reads it as a float.
std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos &&
      s.find("nan") == std::string::npos) {
    s += ".0";
  }
  return s;
}

template <std::size_t N>
std::string numbers(const std::array<double, N>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < N; ++i) s += (i ? ", " : "") + number(v[i]);
  return s + "]";
}

std::string flag(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string to_toml(const RunConfig& c) {
  std::ostringstream o;
  const auto& e = c.model.encoder;
  o << "[model]\n"
    << "image_size = " << e.image_size << "\npatch_size = " << e.patch_size << "\nembed_dim = " << e.embed_dim
    << "\ndepth = " << e.depth << "\nheads = " << e.heads << "\nmlp_ratio = " << e.mlp_ratio
    << "\nmask_ratio = " << number(e.mask_ratio) << "\ndecoder_dim = " << c.model.decoder.dim
    << "\ndecoder_depth = " << c.model.decoder.depth << "\ndecoder_heads = " << c.model.decoder.heads
    << "\ndecoder_mlp_ratio = " << c.model.decoder.mlp_ratio << "\nproj_channels = " << c.model.proj_channels
    << "\n\n";
  const auto& t = c.train;
  o << "[train]\n"
    << "branch = \"" << branch_name(c.branch) << "\"\nalpha = " << number(t.alpha) << "\nbeta = " << number(t.beta)
    << "\ntau = " << number(t.tau) << "\nlr = " << number(t.base_lr) << "\nlr_decay = " << number(t.lr_decay)
    << "\ndecay_period = " << t.decay_period << "\nbatch_size = " << t.batch_size << "\nepochs = " << t.epochs
    << "\nseed = " << t.seed << "\nweight_decay = " << number(t.weight_decay)
    << "\nadam_beta1 = " << number(t.adam_beta1) << "\nadam_beta2 = " << number(t.adam_beta2)
    << "\nadam_eps = " << number(t.adam_eps) << "\npatience = " << t.patience
    << "\nmin_improvement = " << number(t.min_improvement) << "\ncheckpoint_every = " << t.checkpoint_every
    << "\n\n";
  const auto& a = c.augment;
  o << "[augment]\n"
    << "crop_scale = " << numbers(a.crop_scale) << "\ncrop_ratio = " << numbers(a.crop_ratio)
    << "\nflip_p = " << number(a.flip_p) << "\njitter = " << numbers(a.jitter) << "\njitter_p = " << number(a.jitter_p)
    << "\ngrayscale_p = " << number(a.grayscale_p) << "\nblur_sigma = " << numbers(a.blur_sigma)
    << "\nblur_p = " << number(a.blur_p) << "\noutput_size = " << a.output_size << "\n\n";
  const auto& d = c.data;
  o << "[data]\n"
    << "num_events = " << d.synthetic.num_events << "\nmin_frames = " << d.synthetic.min_frames
    << "\nmax_frames = " << d.synthetic.max_frames << "\nimage_size = " << d.synthetic.image_size
    << "\njitter = " << number(d.synthetic.jitter) << "\nseparation = " << number(d.synthetic.separation)
    << "\nmin_color_gap = " << number(d.synthetic.min_color_gap)
    << "\ngenerate_seed = " << d.generate_seed << "\nprobe_ratio = " << number(d.probe_ratio)
    << "\nsplit_seed = " << d.split_seed << "\n\n";
  const auto& p = c.cluster;
  o << "[cluster]\n"
    << "window = " << p.window << "\nthreshold = " << number(p.threshold)
    << "\nmerge_threshold = " << number(p.merge_threshold) << "\nmin_length = " << p.min_length
    << "\nscaling = \"" << scaling_name(p.scaling) << "\"\n\n";
  const auto& q = c.probe;
  o << "[probe]\n"
    << "lr = " << number(q.optimizer.lr) << "\nweight_decay = " << number(q.optimizer.weight_decay)
    << "\nbatch_size = " << q.optimizer.batch_size << "\nepochs = " << q.optimizer.epochs
    << "\nseed = " << q.optimizer.seed << "\naugment = " << flag(q.augment) << "\n";
  return o.str();
}

void write_frozen_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_toml(config);
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace egoclust
