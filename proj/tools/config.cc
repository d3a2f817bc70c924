#include "config.h"

#include <cctype>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <type_traits>

#include "posttrain/text_util.h"

namespace posttrain::cli {
namespace {

enum class Kind { kString, kCount, kFloat, kBool };

struct Key {
  std::string name;
  Kind kind;
  std::function<void(RunConfig&, const ConfigValue&)> set;
  std::function<std::string(RunConfig&)> show;
};

std::string show_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::kString:
      return "a quoted string";
    case Kind::kCount:
      return "a non-negative integer";
    case Kind::kFloat:
      return "a number";
    case Kind::kBool:
      return "true or false";
  }
  return "";
}

std::uint64_t as_count(const ConfigValue& v) { return static_cast<std::uint64_t>(std::get<std::int64_t>(v)); }

double as_float(const ConfigValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::get<double>(v);
}

template <typename Field>
Key string_key(std::string name, Field field) {
  return {std::move(name), Kind::kString,
          [field](RunConfig& c, const ConfigValue& v) { field(c) = std::get<std::string>(v); },
          [field](RunConfig& c) { return "\"" + field(c) + "\""; }};
}

template <typename Field>
Key count_key(std::string name, Field field) {
  return {std::move(name), Kind::kCount, [field](RunConfig& c, const ConfigValue& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(as_count(v));
          },
          [field](RunConfig& c) { return std::to_string(field(c)); }};
}

template <typename Field>
Key float_key(std::string name, Field field) {
  return {std::move(name), Kind::kFloat,
          [field](RunConfig& c, const ConfigValue& v) { field(c) = as_float(v); },
          [field](RunConfig& c) { return show_number(field(c)); }};
}

template <typename Field>
Key bool_key(std::string name, Field field) {
  return {std::move(name), Kind::kBool,
          [field](RunConfig& c, const ConfigValue& v) { field(c) = std::get<bool>(v); },
          [field](RunConfig& c) { return std::string(field(c) ? "true" : "false"); }};
}

Key model_key(const std::string& field, Kind kind, double (*get)(const ModelConfig&)) {
  return {"model." + field, kind,
          [field](RunConfig& c, const ConfigValue& v) { c.model_overrides[field] = as_float(v); },
          [get](RunConfig& c) { return show_number(get(c.model())); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(string_key("model.preset", [](RunConfig& c) -> auto& { return c.preset; }));
    k.push_back(model_key("num_layers", Kind::kCount,
                          [](const ModelConfig& m) { return double(m.num_layers); }));
    k.push_back(model_key("hidden_size", Kind::kCount,
                          [](const ModelConfig& m) { return double(m.hidden_size); }));
    k.push_back(model_key("num_heads", Kind::kCount,
                          [](const ModelConfig& m) { return double(m.num_heads); }));
    k.push_back(model_key("feedforward_size", Kind::kCount,
                          [](const ModelConfig& m) { return double(m.feedforward_size); }));
    k.push_back(model_key("max_positions", Kind::kCount,
                          [](const ModelConfig& m) { return double(m.max_positions); }));
    k.push_back(model_key("dropout_rate", Kind::kFloat,
                          [](const ModelConfig& m) { return m.dropout_rate; }));
    k.push_back(model_key("layer_norm_eps", Kind::kFloat,
                          [](const ModelConfig& m) { return m.layer_norm_eps; }));
    k.push_back({"model.tie_mlm_weights", Kind::kBool,
                 [](RunConfig& c, const ConfigValue& v) { c.tie_mlm_weights = std::get<bool>(v); },
                 [](RunConfig& c) {
                   return std::string(c.model().tie_mlm_weights ? "true" : "false");
                 }});

    k.push_back(string_key("data.vocab", [](RunConfig& c) -> auto& { return c.data.vocab; }));
    k.push_back(string_key("data.reviews", [](RunConfig& c) -> auto& { return c.data.reviews; }));
    k.push_back(string_key("data.dk_shard", [](RunConfig& c) -> auto& { return c.data.dk_shard; }));
    k.push_back(string_key("data.mrc", [](RunConfig& c) -> auto& { return c.data.mrc; }));
    k.push_back(string_key("data.train", [](RunConfig& c) -> auto& { return c.data.train; }));
    k.push_back(string_key("data.valid", [](RunConfig& c) -> auto& { return c.data.valid; }));
    k.push_back(string_key("data.test", [](RunConfig& c) -> auto& { return c.data.test; }));
    k.push_back(bool_key("data.line_per_document",
                         [](RunConfig& c) -> auto& { return c.line_per_document; }));

    k.push_back(count_key("vocab.size", [](RunConfig& c) -> auto& { return c.vocab_size; }));

    k.push_back(count_key("dk.max_len", [](RunConfig& c) -> auto& { return c.dk.max_len; }));
    k.push_back(count_key("dk.duplicate_factor",
                          [](RunConfig& c) -> auto& { return c.dk.duplicate_factor; }));
    k.push_back(count_key("dk.seed", [](RunConfig& c) -> auto& { return c.dk.seed; }));
    k.push_back(float_key("dk.cross_review_rate",
                          [](RunConfig& c) -> auto& { return c.dk.cross_review_rate; }));
    k.push_back(float_key("dk.select_rate",
                          [](RunConfig& c) -> auto& { return c.dk.masking.select_rate; }));
    k.push_back(float_key("dk.mask_share",
                          [](RunConfig& c) -> auto& { return c.dk.masking.mask_share; }));
    k.push_back(float_key("dk.random_share",
                          [](RunConfig& c) -> auto& { return c.dk.masking.random_share; }));

    k.push_back(count_key("posttrain.max_len",
                          [](RunConfig& c) -> auto& { return c.posttrain.max_len; }));
    k.push_back(count_key("posttrain.batch_per_knowledge",
                          [](RunConfig& c) -> auto& { return c.posttrain.batch_per_knowledge; }));
    k.push_back(count_key("posttrain.sub_batches",
                          [](RunConfig& c) -> auto& { return c.posttrain.sub_batches; }));
    k.push_back(float_key("posttrain.learning_rate",
                          [](RunConfig& c) -> auto& { return c.posttrain.learning_rate; }));
    k.push_back(count_key("posttrain.warmup_steps",
                          [](RunConfig& c) -> auto& { return c.posttrain.warmup_steps; }));
    k.push_back(count_key("posttrain.steps",
                          [](RunConfig& c) -> auto& { return c.posttrain.total_steps; }));
    k.push_back(count_key("posttrain.seed", [](RunConfig& c) -> auto& { return c.posttrain.seed; }));
    k.push_back(count_key("posttrain.checkpoint_every",
                          [](RunConfig& c) -> auto& { return c.posttrain.checkpoint_every; }));
    k.push_back(bool_key("posttrain.dropout",
                         [](RunConfig& c) -> auto& { return c.posttrain.dropout; }));

    k.push_back({"finetune.task", Kind::kString, [](RunConfig& c, const ConfigValue& v) {
                   const auto& s = std::get<std::string>(v);
                   const auto task = parse_task(s);
                   if (!task) throw ConfigError("unknown task '" + s + "'");
                   c.finetune.task = *task;
                 },
                 [](RunConfig& c) { return "\"" + std::string(to_string(c.finetune.task)) + "\""; }});
    k.push_back(count_key("finetune.epochs",
                          [](RunConfig& c) -> auto& { return c.finetune.max_epochs; }));
    k.push_back(float_key("finetune.learning_rate",
                          [](RunConfig& c) -> auto& { return c.finetune.learning_rate; }));
    k.push_back(count_key("finetune.batch_size",
                          [](RunConfig& c) -> auto& { return c.finetune.batch_size; }));
    k.push_back(count_key("finetune.max_len",
                          [](RunConfig& c) -> auto& { return c.finetune.max_len; }));
    k.push_back(count_key("finetune.seed", [](RunConfig& c) -> auto& { return c.finetune.seed; }));
    k.push_back(float_key("finetune.max_grad_norm",
                          [](RunConfig& c) -> auto& { return c.finetune.max_grad_norm; }));
    k.push_back(bool_key("finetune.dropout",
                         [](RunConfig& c) -> auto& { return c.finetune.dropout; }));

    k.push_back(string_key("run.out", [](RunConfig& c) -> auto& { return c.out; }));
    k.push_back(string_key("run.init", [](RunConfig& c) -> auto& { return c.init; }));
    k.push_back(count_key("run.runs", [](RunConfig& c) -> auto& { return c.runs; }));
    return k;
  }();
  return table;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Cuts a trailing '#' comment that is not inside a quoted string.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

}  // namespace

RunConfig::RunConfig() {
  posttrain.total_steps = 70000;
  posttrain.checkpoint_every = 10000;
}

ModelConfig RunConfig::model() const {
  auto m = ModelConfig::from_preset(preset);
  for (const auto& [field, v] : model_overrides) {
    const auto n = static_cast<std::size_t>(v);
    if (field == "num_layers") m.num_layers = n;
    else if (field == "hidden_size") m.hidden_size = n;
    else if (field == "num_heads") m.num_heads = n;
    else if (field == "feedforward_size") m.feedforward_size = n;
    else if (field == "max_positions") m.max_positions = n;
    else if (field == "dropout_rate") m.dropout_rate = v;
    else if (field == "layer_norm_eps") m.layer_norm_eps = v;
  }
  if (tie_mlm_weights) m.tie_mlm_weights = *tie_mlm_weights;
  return m;
}

ConfigValue parse_value(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw ConfigError("missing value");
  if (text.front() == '"') {
    if (text.size() < 2 || text.back() != '"') throw ConfigError("unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < text.size(); ++i) {
      char c = text[i];
      if (c == '"') throw ConfigError("stray quote in string");
      if (c == '\\') {
        if (i + 2 >= text.size()) throw ConfigError("dangling escape");
        c = text[++i];
        if (c == 'n') c = '\n';
        else if (c == 't') c = '\t';
        else if (c != '\\' && c != '"') throw ConfigError("unknown escape");
      }
      out.push_back(c);
    }
    return out;
  }
  if (text == "true") return true;
  if (text == "false") return false;

  std::int64_t i = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), i);
  if (ec == std::errc() && p == text.data() + text.size()) return i;
  double d = 0.0;
  auto [q, ec2] = std::from_chars(text.data(), text.data() + text.size(), d);
  if (ec2 == std::errc() && q == text.data() + text.size() && std::isfinite(d)) return d;
  throw ConfigError("cannot parse value '" + std::string(text) + "'");
}

void set_key(RunConfig& config, std::string_view key, const ConfigValue& value) {
  for (const auto& k : keys()) {
    if (k.name != key) continue;
    bool ok = false;
    switch (k.kind) {
      case Kind::kString:
        ok = std::holds_alternative<std::string>(value);
        break;
      case Kind::kCount:
        ok = std::holds_alternative<std::int64_t>(value) && std::get<std::int64_t>(value) >= 0;
        break;
      case Kind::kFloat:
        ok = std::holds_alternative<std::int64_t>(value) || std::holds_alternative<double>(value);
        break;
      case Kind::kBool:
        ok = std::holds_alternative<bool>(value);
        break;
    }
    if (!ok) {
      throw ConfigError("'" + std::string(key) + "' expects " + std::string(kind_name(k.kind)));
    }
    k.set(config, value);
    return;
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& config, std::string_view text) {
  const std::string content = text::normalize_newlines(text);
  std::string section;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start <= content.size()) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) nl = content.size();
    const auto line = trim(strip_comment(std::string_view(content).substr(start, nl - start)));
    start = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("bad section header");
        const auto name = trim(line.substr(1, line.size() - 2));
        if (!valid_name(name)) throw ConfigError("bad section name");
        section = name;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      const auto name = trim(line.substr(0, eq));
      if (!valid_name(name)) throw ConfigError("bad key '" + std::string(name) + "'");
      if (section.empty()) throw ConfigError("key '" + std::string(name) + "' outside a section");
      set_key(config, section + "." + std::string(name), parse_value(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::string& path) {
  try {
    apply_config_text(config, text::read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void apply_assignment(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected section.key=value, got '" + std::string(assignment) + "'");
  }
  const auto key = trim(assignment.substr(0, eq));
  auto raw = trim(assignment.substr(eq + 1));
  ConfigValue value;
  // Strings may be given bare on the command line.
  try {
    value = parse_value(raw);
  } catch (const ConfigError&) {
    value = std::string(raw);
  }
  for (const auto& k : keys()) {
    if (k.name == key && k.kind == Kind::kString && !std::holds_alternative<std::string>(value)) {
      value = std::string(raw);
    }
  }
  set_key(config, key, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

std::vector<std::pair<std::string, std::string>> config_defaults() {
  RunConfig d;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.show(d));
  return out;
}

}  // namespace posttrain::cli
