#include "fedn/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fedn {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate <= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay < 0");
  if (epochs <= 0) throw std::invalid_argument("TrainConfig: epochs <= 0");
  if (batch_windows <= 0) throw std::invalid_argument("TrainConfig: batch_windows <= 0");
  if (tau_pos <= 0.0 || tau_pos > 1.0)
    throw std::invalid_argument("TrainConfig: tau_pos must be in (0,1]");
  for (std::size_t i = 0; i < anchor_scales.size(); ++i) {
    if (anchor_scales[i] <= 0.0)
      throw std::invalid_argument("TrainConfig: anchor scales must be positive");
    if (i > 0 && anchor_scales[i] <= anchor_scales[i - 1])
      throw std::invalid_argument("TrainConfig: anchor scales must be increasing");
  }
}

void ExperimentConfig::validate() const {
  network.validate();
  data.validate();
  train.validate();
  pipeline.validate(network.f);
}

void ExperimentConfig::validate_for_training() const {
  validate();
  if (network.d != data.feature_dim)
    throw std::invalid_argument(
        "config: network.d (" + std::to_string(network.d) +
        ") must equal data.feature_dim (" + std::to_string(data.feature_dim) + ")");
  if (network.num_categories != data.num_categories)
    throw std::invalid_argument("config: network.classes must equal data.classes");
}

namespace {

struct FieldSetter {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("bad boolean '" + v + "'");
}

int parse_int(const std::string& v) {
  std::size_t pos = 0;
  const int r = std::stoi(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("bad integer '" + v + "'");
  return r;
}

std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  const unsigned long long r = std::stoull(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("bad integer '" + v + "'");
  return r;
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double r = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("bad number '" + v + "'");
  return r;
}

std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  return out;
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_double_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

#define INT_FIELD(key, expr)                                                        \
  {key,                                                                             \
   {[](ExperimentConfig& c, const std::string& v) { c.expr = parse_int(v); },       \
    [](const ExperimentConfig& c) { return std::to_string(c.expr); }}}
#define DBL_FIELD(key, expr)                                                        \
  {key,                                                                             \
   {[](ExperimentConfig& c, const std::string& v) { c.expr = parse_double(v); },    \
    [](const ExperimentConfig& c) { return fmt_double(c.expr); }}}
#define BOOL_FIELD(key, expr)                                                       \
  {key,                                                                             \
   {[](ExperimentConfig& c, const std::string& v) { c.expr = parse_bool(v); },      \
    [](const ExperimentConfig& c) { return c.expr ? std::string("true")             \
                                                  : std::string("false"); }}}

const std::map<std::string, FieldSetter>& field_table() {
  static const std::map<std::string, FieldSetter> table = {
      INT_FIELD("network.s", network.s),
      INT_FIELD("network.f", network.f),
      INT_FIELD("network.d", network.d),
      INT_FIELD("network.d1", network.d1),
      INT_FIELD("network.d2", network.d2),
      INT_FIELD("network.classes", network.num_categories),
      INT_FIELD("network.attention_heads", network.attention_heads),
      BOOL_FIELD("network.use_segment_attention", network.use_segment_attention),
      BOOL_FIELD("network.use_window_attention", network.use_window_attention),
      BOOL_FIELD("network.decoupled_head", network.decoupled_head),
      BOOL_FIELD("network.with_confidence_branch", network.with_confidence_branch),
      BOOL_FIELD("network.spotting_only", network.spotting_only),
      {"network.loss_variant",
       {[](ExperimentConfig& c, const std::string& v) {
          c.network.loss_variant = loss_variant_from_string(v);
        },
        [](const ExperimentConfig& c) { return to_string(c.network.loss_variant); }}},
      DBL_FIELD("network.alpha", network.alpha),
      DBL_FIELD("network.beta", network.beta),

      INT_FIELD("data.num_subjects", data.num_subjects),
      INT_FIELD("data.videos_per_subject", data.videos_per_subject),
      INT_FIELD("data.min_frames", data.min_frames),
      INT_FIELD("data.max_frames", data.max_frames),
      INT_FIELD("data.min_events", data.min_events),
      INT_FIELD("data.max_events", data.max_events),
      INT_FIELD("data.min_duration", data.min_duration),
      INT_FIELD("data.max_duration", data.max_duration),
      INT_FIELD("data.classes", data.num_categories),
      {"data.category_weights",
       {[](ExperimentConfig& c, const std::string& v) {
          c.data.category_weights = parse_double_list(v);
        },
        [](const ExperimentConfig& c) { return fmt_double_list(c.data.category_weights); }}},
      INT_FIELD("data.feature_dim", data.feature_dim),
      DBL_FIELD("data.snr", data.snr),
      {"data.seed",
       {[](ExperimentConfig& c, const std::string& v) { c.data.seed = parse_u64(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.data.seed); }}},

      DBL_FIELD("train.learning_rate", train.learning_rate),
      DBL_FIELD("train.weight_decay", train.weight_decay),
      INT_FIELD("train.epochs", train.epochs),
      INT_FIELD("train.batch_windows", train.batch_windows),
      {"train.seed",
       {[](ExperimentConfig& c, const std::string& v) { c.train.seed = parse_u64(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }}},
      DBL_FIELD("train.tau_pos", train.tau_pos),
      {"train.anchor_scales",
       {[](ExperimentConfig& c, const std::string& v) {
          const auto list = parse_double_list(v);
          if (list.size() != 5)
            throw std::invalid_argument("train.anchor_scales: need exactly 5 values");
          std::copy(list.begin(), list.end(), c.train.anchor_scales.begin());
        },
        [](const ExperimentConfig& c) {
          return fmt_double_list({c.train.anchor_scales.begin(), c.train.anchor_scales.end()});
        }}},

      INT_FIELD("pipeline.overlap", pipeline.overlap),
      DBL_FIELD("pipeline.confidence_threshold", pipeline.confidence_threshold),
      DBL_FIELD("pipeline.nms_threshold", pipeline.nms_threshold),
  };
  return table;
}

#undef INT_FIELD
#undef DBL_FIELD
#undef BOOL_FIELD

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto& table = field_table();
  const auto it = table.find(key);
  if (it == table.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(config, value);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  ExperimentConfig config;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                 ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full_key = section.empty() ? key : section + "." + key;
    try {
      apply_override(config, full_key + "=" + value);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

std::string config_to_ini(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, field] : field_table()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << field.get(config) << "\n";
  }
  return out.str();
}

nlohmann::json network_config_to_json(const NetworkConfig& c) {
  return nlohmann::json{{"s", c.s},
                        {"f", c.f},
                        {"d", c.d},
                        {"d1", c.d1},
                        {"d2", c.d2},
                        {"classes", c.num_categories},
                        {"attention_heads", c.attention_heads},
                        {"use_segment_attention", c.use_segment_attention},
                        {"use_window_attention", c.use_window_attention},
                        {"decoupled_head", c.decoupled_head},
                        {"with_confidence_branch", c.with_confidence_branch},
                        {"spotting_only", c.spotting_only},
                        {"loss_variant", to_string(c.loss_variant)},
                        {"alpha", c.alpha},
                        {"beta", c.beta}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.s = j.at("s").get<int>();
  c.f = j.at("f").get<int>();
  c.d = j.at("d").get<int>();
  c.d1 = j.at("d1").get<int>();
  c.d2 = j.at("d2").get<int>();
  c.num_categories = j.at("classes").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.use_segment_attention = j.at("use_segment_attention").get<bool>();
  c.use_window_attention = j.at("use_window_attention").get<bool>();
  c.decoupled_head = j.at("decoupled_head").get<bool>();
  c.with_confidence_branch = j.at("with_confidence_branch").get<bool>();
  c.spotting_only = j.at("spotting_only").get<bool>();
  c.loss_variant = loss_variant_from_string(j.at("loss_variant").get<std::string>());
  c.alpha = j.at("alpha").get<double>();
  c.beta = j.at("beta").get<double>();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& config) {
  nlohmann::json j;
  for (const auto& [key, field] : field_table()) j[key] = field.get(config);
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig config;
  for (const auto& [key, value] : j.items())
    apply_override(config, key + "=" + value.get<std::string>());
  return config;
}

}  // namespace fedn
