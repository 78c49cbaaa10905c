#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "scod/errors.hpp"
#include "scod/pipeline.hpp"

namespace scod {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, std::string v) {
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

struct Field {
  std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
  bool hashed = true;
};

template <typename T>
Field num(T TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = to_double(k, v);
            } else {
              c.*member = static_cast<T>(to_int(k, v));
            }
          },
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

template <typename T>
Field sub_num(std::function<T&(TrainConfig&)> ref) {
  return {[ref](TrainConfig& c, const std::string& k, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) {
              ref(c) = to_bool(k, v);
            } else if constexpr (std::is_floating_point_v<T>) {
              ref(c) = to_double(k, v);
            } else {
              ref(c) = static_cast<T>(to_int(k, v));
            }
          },
          [ref](const TrainConfig& c) {
            auto& value = ref(const_cast<TrainConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) {
              return std::string(value ? "true" : "false");
            } else if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(value);
            } else {
              return std::to_string(value);
            }
          }};
}

#define SCOD_FIELD(type, expr) sub_num<type>([](TrainConfig& c) -> type& { return expr; })

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("dataset.root", Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.dataset_root = v; },
                                         [](const TrainConfig& c) { return c.dataset_root.string(); }, false});
    t.emplace_back("dataset.train_split",
                   Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.train_split = v; },
                         [](const TrainConfig& c) { return c.train_split; }});
    t.emplace_back("dataset.val_split",
                   Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.val_split = v; },
                         [](const TrainConfig& c) { return c.val_split; }, false});
    t.emplace_back("train.input_size", num(&TrainConfig::input_size));
    t.emplace_back("train.batch_size", num(&TrainConfig::batch_size));
    t.emplace_back("train.epochs", num(&TrainConfig::epochs));
    t.emplace_back("train.iterations", num(&TrainConfig::iterations));
    t.emplace_back("train.momentum", num(&TrainConfig::momentum));
    t.emplace_back("train.weight_decay", num(&TrainConfig::weight_decay));
    t.emplace_back("train.max_lr", num(&TrainConfig::max_lr));
    t.emplace_back("train.seed", num(&TrainConfig::seed));
    t.emplace_back("train.hflip", SCOD_FIELD(bool, c.hflip));
    auto unhashed = [](Field f) {
      f.hashed = false;
      return f;
    };
    t.emplace_back("train.stop_after", unhashed(num(&TrainConfig::stop_after)));
    t.emplace_back("train.checkpoint_every", unhashed(num(&TrainConfig::checkpoint_every)));
    t.emplace_back("train.val_every", unhashed(num(&TrainConfig::val_every)));
    t.emplace_back("train.output_dir",
                   Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
                         [](const TrainConfig& c) { return c.output_dir.string(); }, false});

    t.emplace_back("loss.alpha", SCOD_FIELD(double, c.loss.alpha));
    t.emplace_back("loss.gamma", SCOD_FIELD(double, c.loss.gamma));
    t.emplace_back("loss.w_iv", SCOD_FIELD(double, c.loss.w_iv));
    t.emplace_back("loss.entropy_threshold", SCOD_FIELD(double, c.loss.entropy_threshold));
    t.emplace_back("loss.kernel_window", SCOD_FIELD(std::int64_t, c.loss.kernel_window));
    t.emplace_back("loss.sigma_s", SCOD_FIELD(double, c.loss.sigma_s));
    t.emplace_back("loss.sigma_c", SCOD_FIELD(double, c.loss.sigma_c));
    t.emplace_back("loss.top_channels", SCOD_FIELD(std::int64_t, c.loss.top_channels));
    t.emplace_back("loss.block_size", SCOD_FIELD(std::int64_t, c.loss.block_size));
    t.emplace_back("loss.boundary_fraction", SCOD_FIELD(double, c.loss.boundary_fraction));
    t.emplace_back("loss.fg_conf", SCOD_FIELD(double, c.loss.fg_conf));
    t.emplace_back("loss.bg_conf", SCOD_FIELD(double, c.loss.bg_conf));
    t.emplace_back("loss.w_ss_max", SCOD_FIELD(double, c.loss.w_ss_max));
    t.emplace_back("loss.w_ss_ramp_epochs", SCOD_FIELD(std::int64_t, c.loss.w_ss_ramp_epochs));
    t.emplace_back("loss.iv_start_epoch", SCOD_FIELD(std::int64_t, c.loss.iv_start_epoch));
    t.emplace_back("loss.beta",
                   Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                           const auto items = split_list(v);
                           if (items.size() != 4) throw ValidationError("config: 'loss.beta' expects 4 values");
                           for (std::size_t i = 0; i < 4; ++i) c.loss.beta[i] = to_double(k, items[i]);
                         },
                         [](const TrainConfig& c) {
                           std::string s;
                           for (std::size_t i = 0; i < 4; ++i) s += (i ? "," : "") + fmt_double(c.loss.beta[i]);
                           return s;
                         }});
    t.emplace_back("loss.pce", SCOD_FIELD(bool, c.loss.toggles.pce));
    t.emplace_back("loss.cv", SCOD_FIELD(bool, c.loss.toggles.cv));
    t.emplace_back("loss.iv", SCOD_FIELD(bool, c.loss.toggles.iv));
    t.emplace_back("loss.ca", SCOD_FIELD(bool, c.loss.toggles.ca));
    t.emplace_back("loss.ss", SCOD_FIELD(bool, c.loss.toggles.ss));
    t.emplace_back("loss.aux", SCOD_FIELD(bool, c.loss.toggles.aux));

    t.emplace_back("view.resize", SCOD_FIELD(bool, c.view.ops.resize));
    t.emplace_back("view.flip", SCOD_FIELD(bool, c.view.ops.flip));
    t.emplace_back("view.translate", SCOD_FIELD(bool, c.view.ops.translate));
    t.emplace_back("view.crop", SCOD_FIELD(bool, c.view.ops.crop));
    t.emplace_back("view.scales",
                   Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                           c.view.resize_scales.clear();
                           for (const auto& item : split_list(v)) c.view.resize_scales.push_back(to_double(k, item));
                         },
                         [](const TrainConfig& c) {
                           std::string s;
                           for (std::size_t i = 0; i < c.view.resize_scales.size(); ++i) {
                             s += (i ? "," : "") + fmt_double(c.view.resize_scales[i]);
                           }
                           return s;
                         }});
    t.emplace_back("view.flip_probability", SCOD_FIELD(double, c.view.flip_probability));
    t.emplace_back("view.max_translate_fraction", SCOD_FIELD(double, c.view.max_translate_fraction));
    t.emplace_back("view.crop_area_min", SCOD_FIELD(double, c.view.crop_area_min));
    t.emplace_back("view.crop_area_max", SCOD_FIELD(double, c.view.crop_area_max));

    t.emplace_back("net.depth", SCOD_FIELD(std::int64_t, c.net.depth));
    t.emplace_back("net.pretrained",
                   Field{[](TrainConfig& c, const std::string&, const std::string& v) { c.net.pretrained_path = v; },
                         [](const TrainConfig& c) { return c.net.pretrained_path.string(); }, false});
    t.emplace_back("net.decoder_channels", SCOD_FIELD(std::int64_t, c.net.decoder_channels));
    t.emplace_back("net.lce_dilations",
                   Field{[](TrainConfig& c, const std::string& k, const std::string& v) {
                           c.net.lce_dilations.clear();
                           for (const auto& item : split_list(v)) c.net.lce_dilations.push_back(to_int(k, item));
                         },
                         [](const TrainConfig& c) {
                           std::string s;
                           for (std::size_t i = 0; i < c.net.lce_dilations.size(); ++i) {
                             s += (i ? "," : "") + std::to_string(c.net.lce_dilations[i]);
                           }
                           return s;
                         }});
    t.emplace_back("net.use_age", SCOD_FIELD(bool, c.net.use_age));
    t.emplace_back("net.use_lcc", SCOD_FIELD(bool, c.net.use_lcc));
    t.emplace_back("net.use_lsr", SCOD_FIELD(bool, c.net.use_lsr));
    return t;
  }();
  return table;
}

#undef SCOD_FIELD

}  // namespace

void TrainConfig::validate() const {
  if (input_size < kMinImageSide) throw ValidationError("train.input_size must be at least 32");
  if (batch_size < 1) throw ValidationError("train.batch_size must be at least 1");
  if (epochs < 1) throw ValidationError("train.epochs must be at least 1");
  if (iterations < 0) throw ValidationError("train.iterations must be non-negative");
  if (!(max_lr > 0.0)) throw ValidationError("train.max_lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("train.weight_decay must be non-negative");
  if (stop_after < 0 || checkpoint_every < 0 || val_every < 0) {
    throw ValidationError("train.stop_after, checkpoint_every and val_every must be non-negative");
  }
  loss.validate();
  view.validate();
  net.validate();
  if (loss.toggles.cv &&
      static_cast<double>(input_size) * view.min_output_fraction() < static_cast<double>(kMinImageSide)) {
    throw ValidationError("train.input_size too small: transformed views would fall below 32 pixels");
  }
}

TrainConfig TrainConfig::parse(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const auto& [key, field] : fields()) by_key[key] = &field;

  TrainConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ValidationError("config: duplicate key '" + key + "'");
    it->second->set(config, key, value);
  }
  return config;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto config = parse(ss.str());
  // Relative dataset and output paths resolve against the config's directory.
  const auto base = path.parent_path();
  if (!config.dataset_root.empty() && config.dataset_root.is_relative()) config.dataset_root = base / config.dataset_root;
  if (config.output_dir.is_relative()) config.output_dir = base / config.output_dir;
  return config;
}

std::string TrainConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [key, field] : fields()) {
    if (!field.hashed) continue;
    for (unsigned char ch : key + "=" + field.get(*this) + "\n") {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace scod
