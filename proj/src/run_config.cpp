#include "kgmd/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "kgmd/errors.hpp"

namespace kgmd {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected " + expected +
                    ")");
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  text = trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    bad_value(key, text, std::is_integral_v<T> ? "an unsigned integer" : "a number");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  bad_value(key, text, "true or false");
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(trim(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  for (auto item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}
std::string fmt(std::size_t x) { return std::to_string(x); }
std::string fmt(unsigned long long x) { return std::to_string(x); }
std::string fmt(bool x) { return x ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else {
      out += fmt(xs[i]);
    }
  }
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define KGMD_NUM(NAME, FIELD, T)                                                      \
  Key {                                                                               \
    NAME, [](RunConfig& c, auto k, auto v) { c.FIELD = parse_number<T>(k, v); },       \
        [](const RunConfig& c) { return fmt(static_cast<T>(c.FIELD)); }                \
  }
#define KGMD_BOOL(NAME, FIELD)                                                   \
  Key {                                                                          \
    NAME, [](RunConfig& c, auto k, auto v) { c.FIELD = parse_bool(k, v); },       \
        [](const RunConfig& c) { return fmt(static_cast<bool>(c.FIELD)); }        \
  }
#define KGMD_LIST(NAME, FIELD, T)                                                 \
  Key {                                                                           \
    NAME, [](RunConfig& c, auto k, auto v) { c.FIELD = parse_list<T>(k, v); },     \
        [](const RunConfig& c) { return fmt_list(c.FIELD); }                       \
  }

using U64 = unsigned long long;

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      KGMD_NUM("synth.seed", synth.seed, U64),
      KGMD_NUM("synth.num_users", synth.num_users, std::size_t),
      Key{"synth.domains",
          [](RunConfig& c, auto, auto v) {
            c.synth.domain_names.clear();
            for (auto name : split_list(v)) c.synth.domain_names.emplace_back(name);
          },
          [](const RunConfig& c) { return fmt_list(c.synth.domain_names); }},
      KGMD_LIST("synth.items", synth.items_per_domain, std::size_t),
      KGMD_LIST("synth.genres", synth.genres_per_domain, std::size_t),
      KGMD_NUM("synth.latent_dim", synth.latent_dim, std::size_t),
      KGMD_NUM("synth.temperature", synth.temperature, double),
      KGMD_LIST("synth.interactions_per_user", synth.interactions_per_user, double),
      KGMD_LIST("synth.zero_shot_fraction", synth.zero_shot_fraction, double),
      KGMD_NUM("synth.eval_fraction", synth.eval_fraction, double),
      KGMD_NUM("synth.kg_extra_relations", synth.kg_extra_relations, std::size_t),
      KGMD_NUM("synth.item_noise", synth.item_noise, double),

      KGMD_NUM("model.dim", model.dim, std::size_t),
      KGMD_BOOL("model.multi_domain", model.multi_domain),
      KGMD_BOOL("model.kge", model.kge),
      KGMD_BOOL("model.gnn", model.gnn),
      Key{"model.block", [](RunConfig& c, auto, auto v) { c.model.block = parse_interaction_block(trim(v)); },
          [](const RunConfig& c) { return to_string(c.model.block); }},
      KGMD_NUM("model.gnn_layers", model.gnn_layers, std::size_t),
      KGMD_NUM("model.gnn_neighbor_cap", model.gnn_neighbor_cap, std::size_t),
      KGMD_NUM("model.r_d_hidden", model.r_d_hidden, std::size_t),
      KGMD_NUM("model.mint_hidden", model.mint_hidden, std::size_t),
      KGMD_BOOL("model.kge_uses_block_output", model.kge_uses_block_output),
      KGMD_NUM("model.neighbor_seed", model.neighbor_seed, U64),

      KGMD_NUM("train.epochs", train.epochs, std::size_t),
      KGMD_NUM("train.batch_size", train.batch_size, std::size_t),
      KGMD_NUM("train.negatives", train.negatives, std::size_t),
      KGMD_NUM("train.rec_margin", train.rec_margin, double),
      KGMD_NUM("train.kge_margin", train.kge_margin, double),
      KGMD_NUM("train.learning_rate", train.learning_rate, double),
      Key{"train.optimizer", [](RunConfig& c, auto, auto v) { c.train.optimizer = parse_optimizer(trim(v)); },
          [](const RunConfig& c) { return to_string(c.train.optimizer); }},
      KGMD_NUM("train.beta1", train.beta1, double),
      KGMD_NUM("train.beta2", train.beta2, double),
      KGMD_NUM("train.epsilon", train.epsilon, double),
      KGMD_NUM("train.kg_ratio", train.kg_batches_per_rec_batch, std::size_t),
      KGMD_NUM("train.kge_weight", train.kge_weight, double),
      KGMD_BOOL("train.entity_renorm", train.entity_renorm),
      KGMD_NUM("train.grad_clip", train.grad_clip, double),
      KGMD_NUM("train.seed", train.seed, U64),

      KGMD_LIST("eval.ks", eval.ks, std::size_t),
      KGMD_BOOL("eval.zero_shot", eval.zero_shot),
  };
  return table;
}

#undef KGMD_NUM
#undef KGMD_BOOL
#undef KGMD_LIST

}  // namespace

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(config, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void parse_run_config(std::string_view text, RunConfig& config, std::string_view source) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    try {
      apply_setting(config, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  RunConfig config;
  parse_run_config(buf.str(), config, path.string());
  return config;
}

std::string resolved_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.emplace_back(k.name);
  return out;
}

}  // namespace kgmd
