#include "sqnt/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "sqnt/checkpoint.hpp"

namespace sqnt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field num(T ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<T>(k, v); },
          [m](const ExperimentConfig& c) { return fmt(static_cast<double>(c.*m)); }};
}

template <typename S, typename T>
Field sub_num(S ExperimentConfig::*s, T S::*m) {
  return {[s, m](ExperimentConfig& c, const std::string& k, const std::string& v) { (c.*s).*m = parse_number<T>(k, v); },
          [s, m](const ExperimentConfig& c) { return fmt(static_cast<double>((c.*s).*m)); }};
}

Field flag(bool ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
          [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

template <typename S>
Field sub_flag(S ExperimentConfig::*s, bool S::*m) {
  return {[s, m](ExperimentConfig& c, const std::string& k, const std::string& v) { (c.*s).*m = parse_bool(k, v); },
          [s, m](const ExperimentConfig& c) { return std::string((c.*s).*m ? "true" : "false"); }};
}

Field text(std::string ExperimentConfig::*m) {
  return {[m](ExperimentConfig& c, const std::string&, const std::string& v) { c.*m = v; },
          [m](const ExperimentConfig& c) { return c.*m; }};
}

// Seeds are shared by the generators and the trainer.
Field seed_field() {
  return {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.train.seed = parse_number<std::uint64_t>(k, v);
          },
          [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }};
}

Field data_seed_field() {
  return {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.image.seed = c.sbm.seed = parse_number<std::uint64_t>(k, v);
          },
          [](const ExperimentConfig& c) { return std::to_string(c.image.seed); }};
}

const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> f = {
      {"task", text(&C::task)},
      {"arch", text(&C::arch)},
      {"depth", num(&C::depth)},
      {"channels", num(&C::channels)},
      {"h", num(&C::h)},
      {"kernel_size", num(&C::kernel_size)},
      {"expansion", num(&C::expansion)},
      {"tv_enabled", flag(&C::tv_enabled)},
      {"tv_gamma_init", num(&C::tv_gamma_init)},
      {"tv_eps", num(&C::tv_eps)},
      {"graph_normalized", flag(&C::graph_normalized)},
      {"bits_w", sub_num(&C::train, &TrainConfig::bits_w)},
      {"bits_a", sub_num(&C::train, &TrainConfig::bits_a)},
      {"quantize", sub_flag(&C::train, &TrainConfig::quantize)},
      {"bits_start", {[](C& c, const std::string& k, const std::string& v) { c.train.schedule.start = parse_number<int>(k, v); },
                      [](const C& c) { return std::to_string(c.train.schedule.start); }}},
      {"bits_decrement", {[](C& c, const std::string& k, const std::string& v) { c.train.schedule.decrement = parse_number<int>(k, v); },
                          [](const C& c) { return std::to_string(c.train.schedule.decrement); }}},
      {"bits_period", {[](C& c, const std::string& k, const std::string& v) { c.train.schedule.period = parse_number<int>(k, v); },
                       [](const C& c) { return std::to_string(c.train.schedule.period); }}},
      {"epochs", sub_num(&C::train, &TrainConfig::epochs)},
      {"lr", sub_num(&C::train, &TrainConfig::lr)},
      {"momentum", sub_num(&C::train, &TrainConfig::momentum)},
      {"batch_size", sub_num(&C::train, &TrainConfig::batch_size)},
      {"seed", seed_field()},
      {"tv_lambda", sub_num(&C::train, &TrainConfig::tv_lambda)},
      {"val_fraction", sub_num(&C::train, &TrainConfig::val_fraction)},
      {"grad_clip", sub_num(&C::train, &TrainConfig::grad_clip)},
      {"project_steps", sub_flag(&C::train, &TrainConfig::project_steps)},
      {"flip_augment", sub_flag(&C::train, &TrainConfig::flip_augment)},
      {"data_kind", text(&C::data_kind)},
      {"data_path", text(&C::data_path)},
      {"edges_path", text(&C::edges_path)},
      {"data_seed", data_seed_field()},
      {"data_count", sub_num(&C::image, &ImageDataParams::count)},
      {"data_channels", sub_num(&C::image, &ImageDataParams::channels)},
      {"classes", {[](C& c, const std::string& k, const std::string& v) {
                     c.image.classes = c.sbm.blocks = parse_number<int>(k, v);
                   },
                   [](const C& c) { return std::to_string(c.image.classes); }}},
      {"image_size", sub_num(&C::image, &ImageDataParams::size)},
      {"noise", sub_num(&C::image, &ImageDataParams::noise)},
      {"sbm_nodes", sub_num(&C::sbm, &SbmParams::nodes)},
      {"sbm_p_in", sub_num(&C::sbm, &SbmParams::p_in)},
      {"sbm_p_out", sub_num(&C::sbm, &SbmParams::p_out)},
      {"sbm_features", sub_num(&C::sbm, &SbmParams::features)},
      {"feature_signal", sub_num(&C::sbm, &SbmParams::feature_signal)},
      {"feature_noise", sub_num(&C::sbm, &SbmParams::feature_noise)},
      {"train_per_class", sub_num(&C::sbm, &SbmParams::train_per_class)},
  };
  return f;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& f = fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
  // The schedule bottoms out at the narrower of the two final widths.
  train.schedule.target = std::max(2, std::min({train.bits_w, train.bits_a, train.schedule.start}));
}

void ExperimentConfig::parse(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(no) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (task != "image" && task != "graph") fail("task must be image or graph");
  static const std::vector<std::string> image_arch = {"plain_res", "sym_res", "plain_mobile", "sym_mobile"};
  static const std::vector<std::string> graph_arch = {"gcn_sym", "gcn_nonsym"};
  const auto& allowed = task == "image" ? image_arch : graph_arch;
  if (std::find(allowed.begin(), allowed.end(), arch) == allowed.end()) {
    fail("arch '" + arch + "' is not valid for task " + task);
  }
  if (depth < 1) fail("depth must be >= 1");
  if (channels < 1) fail("channels must be >= 1");
  if (!(h > 0.0)) fail("h must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (expansion < 1) fail("expansion must be >= 1");
  if (!(tv_gamma_init >= 0.0)) fail("tv_gamma_init must be >= 0");
  if (!(tv_eps > 0.0)) fail("tv_eps must be positive");
  if (tv_enabled && task == "graph") fail("TV activations apply to image tasks only");
  if (task == "image" && data_kind != "blobs" && data_kind != "textures") fail("image data_kind must be blobs or textures");
  if (task == "graph" && data_kind != "sbm") fail("graph data_kind must be sbm");
  if (task == "graph" && !data_path.empty() && edges_path.empty()) fail("graph data_path needs edges_path");
  try {
    train.validate();
    if (task == "image") image.validate();
    else sbm.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : fields()) k.push_back(name);
  return k;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  ExperimentConfig c;
  c.parse(read_file(path));
  return c;
}

std::vector<BlockSpec> build_specs(const ExperimentConfig& cfg, int input_channels, int classes) {
  cfg.validate();
  std::vector<BlockSpec> specs;
  const BlockKind kind = parse_block_kind(cfg.arch);
  BlockSpec open;
  open.kind = BlockKind::opening;
  open.channels_in = input_channels;
  open.channels_out = cfg.channels;
  open.kernel_size = cfg.task == "graph" ? 1 : cfg.kernel_size;
  open.quant_weights = open.quant_activations = false;
  specs.push_back(open);

  auto step = [&](int ch) {
    BlockSpec s;
    s.kind = kind;
    s.channels_in = s.channels_out = ch;
    s.kernel_size = cfg.task == "graph" ? 1 : cfg.kernel_size;
    s.h = cfg.h;
    s.expansion = cfg.expansion;
    if (cfg.tv_enabled) s.tv_gamma = cfg.tv_gamma_init;
    s.tv_eps = cfg.tv_eps;
    return s;
  };

  if (cfg.task == "graph") {
    for (int i = 0; i < cfg.depth; ++i) specs.push_back(step(cfg.channels));
  } else {
    const int first = (cfg.depth - 1) / 2;
    for (int i = 0; i < first; ++i) specs.push_back(step(cfg.channels));
    BlockSpec cc = step(cfg.channels);
    cc.kind = BlockKind::channel_change;
    cc.update = kind;
    cc.channels_out = 2 * cfg.channels;
    specs.push_back(cc);
    BlockSpec pool;
    pool.kind = BlockKind::avg_pool;
    specs.push_back(pool);
    for (int i = first + 1; i < cfg.depth; ++i) specs.push_back(step(2 * cfg.channels));
  }
  BlockSpec cls;
  cls.kind = BlockKind::classifier;
  cls.channels_in = specs.back().kind == BlockKind::avg_pool ? 2 * cfg.channels
                    : specs.back().channels_out;
  cls.channels_out = classes;
  cls.node_level = cfg.task == "graph";
  cls.quant_weights = cls.quant_activations = false;
  specs.push_back(cls);
  return specs;
}

}  // namespace sqnt
