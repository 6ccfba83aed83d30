#include "milseg/config.hpp"

#include "milseg/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace milseg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto s = trim(text);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto s = trim(text);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number<T>(key, item));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(values[i]);
    } else {
      s += std::to_string(values[i]);
    }
  }
  return s;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define MILSEG_STRING(name) \
  Field { #name, [](const RunConfig& c) { return c.name; }, [](RunConfig& c, const std::string& v) { c.name = trim(v); } }
#define MILSEG_INT(key, expr)                                                           \
  Field {                                                                               \
    key, [](const RunConfig& c) { return std::to_string(c.expr); },                     \
        [](RunConfig& c, const std::string& v) { c.expr = parse_number<decltype(c.expr)>(key, v); } \
  }
#define MILSEG_REAL(key, expr)                                                          \
  Field {                                                                               \
    key, [](const RunConfig& c) { return fmt(c.expr); },                                \
        [](RunConfig& c, const std::string& v) { c.expr = parse_number<double>(key, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      MILSEG_STRING(dataset),
      MILSEG_STRING(val_dataset),
      MILSEG_INT("class_count", class_count),
      MILSEG_INT("per_class", per_class),
      MILSEG_INT("image_size", image_size),
      MILSEG_INT("crop_size", crop_size),
      Field{"stem_channels", [](const RunConfig& c) { return join(c.stem_channels); },
            [](RunConfig& c, const std::string& v) { c.stem_channels = parse_list<Index>("stem_channels", v); }},
      Field{"head_channels", [](const RunConfig& c) { return join(c.head_channels); },
            [](RunConfig& c, const std::string& v) { c.head_channels = parse_list<Index>("head_channels", v); }},
      MILSEG_INT("pools", pools),
      MILSEG_INT("frozen_layers", frozen_layers),
      MILSEG_REAL("dropout_rate", dropout_rate),
      Field{"aggregation", [](const RunConfig& c) { return to_string(c.aggregator.variant); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.aggregator.variant = parse_aggregator(trim(v));
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            }},
      MILSEG_REAL("lse_r", aggregator.r),
      MILSEG_REAL("learning_rate", optimizer.learning_rate),
      MILSEG_REAL("momentum", optimizer.momentum),
      MILSEG_REAL("weight_decay", optimizer.weight_decay),
      MILSEG_REAL("decay_factor", optimizer.decay_factor),
      MILSEG_INT("decay_interval", optimizer.decay_interval),
      MILSEG_REAL("jitter_flip", jitter.flip_probability),
      MILSEG_REAL("jitter_rotation", jitter.max_rotation_deg),
      MILSEG_REAL("jitter_scale_min", jitter.scale_min),
      MILSEG_REAL("jitter_scale_max", jitter.scale_max),
      MILSEG_REAL("jitter_brightness", jitter.brightness),
      MILSEG_REAL("jitter_contrast_min", jitter.contrast_min),
      MILSEG_REAL("jitter_contrast_max", jitter.contrast_max),
      MILSEG_INT("batch_size", batch_size),
      MILSEG_INT("steps", steps),
      Field{"prior", [](const RunConfig& c) { return to_string(c.prior); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.prior = parse_prior(trim(v));
              } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
              }
            }},
      MILSEG_REAL("felzenszwalb_k", felzenszwalb_k),
      MILSEG_INT("felzenszwalb_min_size", felzenszwalb_min_size),
      Field{"threshold_grid", [](const RunConfig& c) { return join(c.threshold_grid); },
            [](RunConfig& c, const std::string& v) { c.threshold_grid = parse_list<double>("threshold_grid", v); }},
      MILSEG_INT("naive_proposals", naive_proposals),
      Field{"upsample", [](const RunConfig& c) { return std::string(c.upsample ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.upsample = parse_bool("upsample", v); }},
      MILSEG_INT("seed", seed),
      MILSEG_INT("threads", threads),
      MILSEG_STRING(out),
  };
  return table;
}

#undef MILSEG_STRING
#undef MILSEG_INT
#undef MILSEG_REAL

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& f : fields()) s += std::string(f.key) + " = " + f.get(cfg) + '\n';
  return s;
}

void RunConfig::validate() const {
  try {
    if (class_count < 2) throw ConfigError("class_count must be at least 2");
    if (per_class < 0) throw ConfigError("per_class must be nonnegative");
    if (image_size < 16) throw ConfigError("image_size must be at least 16");
    if (crop_size <= 0) throw ConfigError("crop_size must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (steps < 0) throw ConfigError("steps must be nonnegative");
    if (threads <= 0) throw ConfigError("threads must be positive");
    if (felzenszwalb_k <= 0 || felzenszwalb_min_size <= 0) throw ConfigError("felzenszwalb parameters must be positive");
    if (naive_proposals <= 0) throw ConfigError("naive_proposals must be positive");
    if (threshold_grid.empty()) throw ConfigError("threshold_grid must not be empty");
    ThresholdSet{threshold_grid}.validate();
    if (pools < 0 || pools > static_cast<Index>(stem_channels.size())) throw ConfigError("pools must lie in [0, stem layers]");
    if (frozen_layers < 0) throw ConfigError("frozen_layers must be nonnegative");
    aggregator.validate();
    optimizer.validate();
    jitter.validate();
    network_spec().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

NetworkSpec RunConfig::network_spec() const {
  NetworkSpec spec = NetworkSpec::standard(class_count, stem_channels, head_channels, pools);
  spec.dropout_rate = dropout_rate;
  spec.seed = seed;
  Index conv = 0;
  for (auto& l : spec.layers) {
    if (l.kind == LayerKind::Conv) l.frozen = conv++ < frozen_layers;
  }
  return spec;
}

InferenceOptions RunConfig::inference_options() const {
  InferenceOptions o;
  o.prior = prior;
  o.lse_r = aggregator.r > 0.0 ? aggregator.r : 5.0;
  o.felzenszwalb_k = felzenszwalb_k;
  o.felzenszwalb_min_size = felzenszwalb_min_size;
  o.upsample = upsample;
  return o;
}

}  // namespace milseg
