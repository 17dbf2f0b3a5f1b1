#include "feddis/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace feddis {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config '" + key + "': cannot parse '" + text + "'");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw std::invalid_argument("config '" + key + "': expected a boolean, got '" + text + "'");
}

std::string show(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field number(const std::string& key, T ExperimentConfig::*member) {
  return {key,
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return show(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member, key](ExperimentConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); }};
}

Field text(const std::string& key, std::string ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return c.*member; },
          [member](ExperimentConfig& c, const std::string& v) { c.*member = v; }};
}

Field flag(const std::string& key, std::function<bool&(ExperimentConfig&)> ref) {
  return {key, [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"; },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      text("name", &ExperimentConfig::name),
      text("dataset", &ExperimentConfig::dataset),
      text("data_format", &ExperimentConfig::data_format),
      text("partition", &ExperimentConfig::partition),
      text("partition_file", &ExperimentConfig::partition_file),
      number("clients", &ExperimentConfig::clients),
      number("history", &ExperimentConfig::history),
      number("horizon", &ExperimentConfig::horizon),
      number("train_fraction", &ExperimentConfig::train_fraction),
      number("validation_fraction", &ExperimentConfig::validation_fraction),
      number("test_fraction", &ExperimentConfig::test_fraction),
      number("rounds", &ExperimentConfig::rounds),
      number("local_epochs", &ExperimentConfig::local_epochs),
      number("lr", &ExperimentConfig::lr),
      number("critic_lr", &ExperimentConfig::critic_lr),
      number("batch_size", &ExperimentConfig::batch_size),
      number("hidden", &ExperimentConfig::hidden),
      number("embed", &ExperimentConfig::embed),
      number("layers", &ExperimentConfig::layers),
      number("personal_patterns", &ExperimentConfig::personal_patterns),
      number("global_patterns", &ExperimentConfig::global_patterns),
      number("alpha", &ExperimentConfig::alpha),
      number("lambda", &ExperimentConfig::lambda),
      {"personal_init", [](const ExperimentConfig& c) { return std::string(disentangle::bank_init_name(c.personal_init)); },
       [](ExperimentConfig& c, const std::string& v) { c.personal_init = disentangle::parse_bank_init(v); }},
      {"global_init", [](const ExperimentConfig& c) { return std::string(disentangle::bank_init_name(c.global_init)); },
       [](ExperimentConfig& c, const std::string& v) { c.global_init = disentangle::parse_bank_init(v); }},
      {"mode", [](const ExperimentConfig& c) { return std::string(protocol::mode_name(c.mode)); },
       [](ExperimentConfig& c, const std::string& v) { c.mode = protocol::parse_mode(v); }},
      number("top_k", &ExperimentConfig::top_k),
      number("tau", &ExperimentConfig::tau),
      number("epsilon", &ExperimentConfig::epsilon),
      flag("cps_include_self", [](ExperimentConfig& c) -> bool& { return c.cps_include_self; }),
      number("prox_mu", &ExperimentConfig::prox_mu),
      flag("no_cd", [](ExperimentConfig& c) -> bool& { return c.ablation.no_cd; }),
      flag("no_gp", [](ExperimentConfig& c) -> bool& { return c.ablation.no_gp; }),
      flag("no_wu", [](ExperimentConfig& c) -> bool& { return c.ablation.no_wu; }),
      flag("no_cps", [](ExperimentConfig& c) -> bool& { return c.ablation.no_cps; }),
      number("mape_threshold", &ExperimentConfig::mape_threshold),
      number("seed", &ExperimentConfig::seed),
      flag("checkpoints", [](ExperimentConfig& c) -> bool& { return c.checkpoints; }),
      number("synth_nodes_per_client", &ExperimentConfig::synth_nodes_per_client),
      number("synth_steps", &ExperimentConfig::synth_steps),
      number("synth_prototypes", &ExperimentConfig::synth_prototypes),
      number("synth_amplitude", &ExperimentConfig::synth_amplitude),
      number("synth_noise", &ExperimentConfig::synth_noise),
  };
  return all;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  return field(key).get(config);
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + o + "' is not key=value");
    set_config_value(config, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

std::string echo_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void validate_config(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid config: " + what);
  };
  require(c.clients >= 1, "clients must be >= 1");
  require(c.history >= 1 && c.horizon >= 1, "history and horizon must be >= 1");
  require(c.train_fraction > 0 && c.validation_fraction >= 0 && c.test_fraction >= 0, "split fractions");
  require(std::abs(c.train_fraction + c.validation_fraction + c.test_fraction - 1.0) < 1e-9,
          "split fractions must sum to 1");
  require(c.rounds >= 0, "rounds must be >= 0");
  require(c.local_epochs >= 0, "local_epochs must be >= 0");
  require(c.lr >= 0 && c.critic_lr >= 0, "learning rates must be >= 0");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.hidden >= 1 && c.embed >= 1 && c.layers >= 1, "model dimensions must be >= 1");
  require(c.personal_patterns >= 1 && c.global_patterns >= 1, "bank sizes must be >= 1");
  require(c.alpha >= 0 && c.alpha <= 1, "alpha must lie in [0, 1]");
  require(c.lambda >= 0, "lambda must be >= 0");
  require(c.top_k >= 1, "top_k must be >= 1");
  require(c.tau >= -1 && c.tau <= 1, "tau must lie in [-1, 1]");
  require(c.epsilon > 0, "epsilon must be > 0");
  require(c.prox_mu >= 0, "prox_mu must be >= 0");
  require(c.partition == "contiguous-blocks" || c.partition == "index-file", "partition strategy");
  require(c.partition != "index-file" || !c.partition_file.empty(), "index-file partition needs partition_file");
  require(c.data_format == "auto" || c.data_format == "matrix-binary" || c.data_format == "csv", "data_format");
  if (c.dataset == "synthetic") {
    require(c.synth_nodes_per_client >= 1 && c.synth_steps >= 1 && c.synth_prototypes >= 1,
            "synthetic dimensions must be >= 1");
  }
}

}  // namespace feddis
