#include "cli.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "config.h"
#include "json.hpp"
#include "posttrain/checkpoint.h"
#include "posttrain/dk_shard.h"
#include "posttrain/error.h"
#include "posttrain/inference.h"
#include "posttrain/metrics.h"
#include "posttrain/text_util.h"
#include "posttrain/training.h"

namespace posttrain::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Logger = std::shared_ptr<spdlog::logger>;

// Command-line values. Each is applied only when given.
struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::size_t epochs = 0;
  std::string preset;
  std::string out;
  std::string init;
  std::string task;
  std::size_t runs = 0;
  std::string pred;
  std::string gold;
  std::string input;

  // The subcommand that was parsed.
  const CLI::App* cmd = nullptr;
  bool has(const std::string& name) const {
    const auto* o = cmd->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  }
};

std::optional<spdlog::level::level_enum> log_level() {
  const char* env = std::getenv("POSTTRAIN_LOG_LEVEL");
  if (env == nullptr || *env == '\0') return spdlog::level::info;
  const std::string v = env;
  if (v == "error") return spdlog::level::err;
  if (v == "info") return spdlog::level::info;
  if (v == "debug") return spdlog::level::debug;
  return std::nullopt;
}

std::string require_set(const std::string& path, const std::string& key) {
  if (path.empty()) throw ConfigError(key + " is not set");
  return path;
}

std::string require_input(const std::string& path, const std::string& key) {
  require_set(path, key);
  if (!fs::is_regular_file(path)) throw DataError(key + ": no such file: " + path);
  return path;
}

Vocabulary load_vocab(const std::string& path) {
  try {
    return Vocabulary::load(path);
  } catch (const InvalidArgument& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write file: " + path);
  f << content;
  if (!f) throw DataError("cannot write file: " + path);
}

TaskData load_task_data(Task task, const std::string& path) {
  TaskData d;
  switch (task) {
    case Task::kRrc:
      d.rrc = load_mrc(path).examples;
      break;
    case Task::kAe:
      d.ae = load_bio(path);
      break;
    case Task::kAsc:
      d.asc = load_asc(path).examples;
      break;
  }
  if (d.size(task) == 0) throw DataError(path + ": no usable examples");
  return d;
}

Task resolve_task(const RunConfig& config, const Flags& flags) {
  if (!flags.has("--task")) return config.finetune.task;
  const auto t = parse_task(flags.task);
  if (!t) throw ConfigError("unknown task '" + flags.task + "'");
  return *t;
}

RunConfig resolve(const Flags& flags) {
  RunConfig c;
  if (!flags.config.empty()) {
    if (!fs::is_regular_file(flags.config)) {
      throw DataError("--config: no such file: " + flags.config);
    }
    apply_config_file(c, flags.config);
  }
  for (const auto& s : flags.sets) apply_assignment(c, s);
  if (flags.has("--preset")) c.preset = flags.preset;
  if (flags.has("--out")) c.out = flags.out;
  if (flags.has("--init")) c.init = flags.init;
  if (flags.has("--steps")) c.posttrain.total_steps = flags.steps;
  if (flags.has("--epochs")) c.finetune.max_epochs = flags.epochs;
  if (flags.has("--runs")) c.runs = flags.runs;
  if (flags.has("--task")) c.finetune.task = resolve_task(c, flags);
  if (!c.init.empty()) require_input(c.init, "run.init");
  return c;
}

std::string output_path(const RunConfig& c, const Flags& flags, const std::string& fallback,
                        const std::string& key) {
  if (flags.has("--out")) return c.out;
  return require_set(fallback, key);
}

ModelConfig model_for(const RunConfig& c, const Vocabulary& vocab, std::size_t max_len) {
  ModelConfig m = c.model();
  m.vocab_size = vocab.size();
  m.validate();
  if (m.max_positions < max_len) {
    throw ConfigError("max_len " + std::to_string(max_len) + " exceeds model.max_positions " +
                      std::to_string(m.max_positions));
  }
  return m;
}

struct Model {
  ModelConfig config;
  ModelParameters<float> params;
  std::optional<AdamState<float>> adam;
  std::uint64_t step = 0;
};

// From --init when given, otherwise freshly initialized with `seed`.
Model initial_model(const RunConfig& c, const Vocabulary& vocab, std::size_t max_len,
                    std::uint64_t seed, const Logger& log) {
  Model m;
  if (c.init.empty()) {
    m.config = model_for(c, vocab, max_len);
    m.params = ModelParameters<float>::init(m.config, seed);
    log->debug("random init, preset {}, seed {}", m.config.preset, seed);
    return m;
  }
  auto ck = load_checkpoint<float>(c.init, vocab.digest());
  m.config = ck.meta.config;
  if (m.config.max_positions < max_len) {
    throw ConfigError("max_len " + std::to_string(max_len) + " exceeds checkpoint max_positions " +
                      std::to_string(m.config.max_positions));
  }
  m.params = std::move(ck.params);
  m.adam = std::move(ck.adam);
  m.step = ck.meta.step;
  log->info("loaded {} (step {})", c.init, m.step);
  return m;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int build_vocab_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  const RunConfig c = resolve(flags);
  std::vector<std::string> corpus;
  for (auto& r : load_reviews(require_input(c.data.reviews, "data.reviews"), c.line_per_document)) {
    corpus.push_back(std::move(r.text));
  }
  if (!c.data.mrc.empty()) {
    for (const auto& ex : load_mrc(require_input(c.data.mrc, "data.mrc")).examples) {
      corpus.push_back(ex.question);
      corpus.push_back(ex.context);
    }
  }
  if (corpus.empty()) throw DataError("empty corpus");
  const std::string path = output_path(c, flags, c.data.vocab, "data.vocab");
  const Vocabulary vocab = build_vocab(corpus, c.vocab_size);
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  vocab.save(path);
  log->info("wrote {} entries to {}", vocab.size(), path);
  out << json{{"size", vocab.size()}, {"digest", digest_to_hex(vocab.digest())}}.dump() << '\n';
  return kExitOk;
}

json dk_report_json(const DkReport& r) {
  return {{"examples", r.examples},         {"cross_review", r.cross_review},
          {"skipped_short", r.skipped_short}, {"token_splits", r.token_splits},
          {"excluded", r.excluded},         {"candidates", r.candidates},
          {"selected", r.selected},         {"replaced_mask", r.replaced_mask},
          {"replaced_random", r.replaced_random}, {"kept", r.kept}};
}

int prepare_dk_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  RunConfig c = resolve(flags);
  if (flags.has("--seed")) c.dk.seed = flags.seed;
  const auto reviews =
      load_reviews(require_input(c.data.reviews, "data.reviews"), c.line_per_document);
  const Vocabulary vocab = load_vocab(require_input(c.data.vocab, "data.vocab"));
  const std::string path = output_path(c, flags, c.data.dk_shard, "data.dk_shard");
  DkReport report;
  const auto examples = make_dk_examples(reviews, vocab, c.dk, &report);
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_dk_shard(path, examples, static_cast<std::uint32_t>(c.dk.seed));
  log->info("wrote {} examples to {}", examples.size(), path);
  out << dk_report_json(report).dump() << '\n';
  return kExitOk;
}

int posttrain_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  RunConfig c = resolve(flags);
  if (flags.has("--seed")) c.posttrain.seed = flags.seed;
  c.posttrain.validate();
  const std::size_t max_len = c.posttrain.max_len;
  const Vocabulary vocab = load_vocab(require_input(c.data.vocab, "data.vocab"));
  const auto mrc = load_mrc(require_input(c.data.mrc, "data.mrc"));

  std::vector<DkExample> dk;
  if (!c.data.dk_shard.empty()) {
    dk = read_dk_shard(require_input(c.data.dk_shard, "data.dk_shard")).examples;
    for (const auto& ex : dk) {
      if (ex.input.length() != max_len) {
        throw DataError(c.data.dk_shard + ": examples are packed to " +
                        std::to_string(ex.input.length()) + " tokens, posttrain.max_len is " +
                        std::to_string(max_len));
      }
    }
  } else {
    const auto reviews =
        load_reviews(require_input(c.data.reviews, "data.reviews"), c.line_per_document);
    DkOptions o = c.dk;
    o.max_len = max_len;
    dk = make_dk_examples(reviews, vocab, o);
  }
  if (dk.size() < c.posttrain.batch_per_knowledge) {
    throw DataError("DK stream has " + std::to_string(dk.size()) + " examples, fewer than one batch");
  }
  const auto features = featurize_mrc(vocab, mrc.examples, max_len);
  const auto answerable = std::count_if(features.begin(), features.end(),
                                        [](const MrcFeature& f) { return f.has_answer; });
  if (static_cast<std::size_t>(answerable) < c.posttrain.batch_per_knowledge) {
    throw DataError(c.data.mrc + ": " + std::to_string(answerable) +
                    " answerable features, fewer than one batch");
  }

  Model m = initial_model(c, vocab, max_len, c.posttrain.seed, log);
  TrainingState<float> state{std::move(m.params), std::move(m.adam), m.step};
  log->info("post-training {} steps from step {}: {} DK examples, {} MRC features", c.posttrain.total_steps,
            state.step, dk.size(), answerable);
  const std::uint64_t every = std::max<std::uint64_t>(1, c.posttrain.total_steps / 20);
  StepReport last;
  const std::string final_path = posttrain_run<float>(
      c.posttrain, m.config, vocab.digest(), state, dk, features, c.out,
      [&](const StepReport& r) {
        last = r;
        if (r.step % every == 0) {
          log->info("step {} l_dk {:.4f} l_mrc {:.4f}", r.step, r.l_dk, r.l_mrc);
        } else {
          log->debug("step {} l_dk {:.4f} l_mrc {:.4f}", r.step, r.l_dk, r.l_mrc);
        }
      });
  out << json{{"checkpoint", final_path}, {"step", state.step}, {"l_dk", last.l_dk},
              {"l_mrc", last.l_mrc}}
             .dump()
      << '\n';
  return kExitOk;
}

json epoch_json(const EpochReport& e) {
  json metrics = json::object();
  for (const auto& [k, v] : e.valid.metrics) metrics[k] = v;
  return {{"epoch", e.epoch}, {"steps", e.steps}, {"train_loss", e.train_loss}, {"valid", metrics}};
}

struct FineTuneInputs {
  RunConfig config;
  Vocabulary vocab;
  TaskData train;
  TaskData valid;
};

FineTuneInputs finetune_inputs(const Flags& flags) {
  FineTuneInputs in;
  in.config = resolve(flags);
  if (flags.has("--seed")) in.config.finetune.seed = flags.seed;
  in.config.finetune.validate();
  const Task task = in.config.finetune.task;
  const auto& d = in.config.data;
  // Check every input before reading any of them.
  require_input(d.vocab, "data.vocab");
  require_input(d.train, "data.train");
  require_input(d.valid, "data.valid");
  in.vocab = load_vocab(d.vocab);
  in.train = load_task_data(task, d.train);
  in.valid = load_task_data(task, d.valid);
  return in;
}

FineTuneResult<float> finetune_once(const FineTuneInputs& in, std::uint64_t seed,
                                    ModelConfig* model_config, const Logger& log,
                                    std::ofstream* epoch_log) {
  FineTuneConfig ft = in.config.finetune;
  ft.seed = seed;
  Model m = initial_model(in.config, in.vocab, ft.max_len, seed, log);
  *model_config = m.config;
  return finetune<float>(ft, m.config, in.vocab, std::move(m.params), in.train, in.valid,
                         [&](const EpochReport& e) {
                           log->info("epoch {} loss {:.4f} valid {} {:.2f}", e.epoch,
                                     e.train_loss, e.valid.primary_metric, e.valid.primary);
                           if (epoch_log != nullptr) *epoch_log << epoch_json(e).dump() << '\n';
                         });
}

int finetune_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  const FineTuneInputs in = finetune_inputs(flags);
  const auto& c = in.config;
  fs::create_directories(c.out);
  const fs::path log_path = fs::path(c.out) / "finetune_log.jsonl";
  std::ofstream epoch_log(log_path, std::ios::trunc);
  if (!epoch_log) throw DataError("cannot write file: " + log_path.string());
  ModelConfig model_config;
  const auto result = finetune_once(in, c.finetune.seed, &model_config, log, &epoch_log);

  CheckpointMeta meta;
  meta.config = model_config;
  meta.seed = c.finetune.seed;
  meta.vocab_digest = in.vocab.digest();
  meta.step = result.steps;
  const std::string path = (fs::path(c.out) / "best.ptck").string();
  save_checkpoint(path, meta, result.params);
  log->info("best epoch {} -> {}", result.best_epoch, path);
  out << result.best.to_json() << '\n';
  return kExitOk;
}

std::map<std::string, std::string> read_rrc_predictions(const std::string& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!j.is_object()) throw DataError(path + ": expected a JSON object of id -> answer");
  std::map<std::string, std::string> out;
  for (const auto& [id, v] : j.items()) {
    if (!v.is_string()) throw DataError(path + ": answer for '" + id + "' is not a string");
    out[id] = v.get<std::string>();
  }
  return out;
}

// One JSON object per non-blank line.
std::vector<json> read_json_lines(const std::string& path) {
  std::vector<json> rows;
  std::istringstream in(text::normalize_newlines(text::read_file(path)));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::split_whitespace(line).empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path + ": line " + std::to_string(n) + ": " + e.what());
    }
    if (!rows.back().is_object() || !rows.back().contains("id") || !rows.back()["id"].is_string()) {
      throw DataError(path + ": line " + std::to_string(n) + ": expected an object with an id");
    }
  }
  return rows;
}

EvalReport score_files(Task task, const std::string& pred, const std::string& gold) {
  switch (task) {
    case Task::kRrc: {
      const auto golds = gold_questions(load_mrc(gold).examples);
      return squad_eval(read_rrc_predictions(pred), golds);
    }
    case Task::kAe: {
      const auto examples = load_bio(gold);
      std::map<std::string, std::vector<ChunkSpan>> by_id;
      for (const auto& row : read_json_lines(pred)) {
        auto& chunks = by_id[row["id"].get<std::string>()];
        if (!row.contains("chunks") || !row["chunks"].is_array()) {
          throw DataError(pred + ": missing chunks for '" + row["id"].get<std::string>() + "'");
        }
        for (const auto& ch : row["chunks"]) {
          if (!ch.contains("start") || !ch.contains("end") || !ch["start"].is_number_unsigned() ||
              !ch["end"].is_number_unsigned()) {
            throw DataError(pred + ": chunk without start/end");
          }
          chunks.push_back({ch["start"].get<std::size_t>(), ch["end"].get<std::size_t>()});
        }
      }
      std::vector<std::vector<ChunkSpan>> predicted;
      for (const auto& ex : examples) {
        auto it = by_id.find(ex.id);
        predicted.push_back(it == by_id.end() ? std::vector<ChunkSpan>{} : it->second);
      }
      return chunk_report(chunk_f1(predicted, gold_chunks(examples)), examples.size());
    }
    case Task::kAsc: {
      const auto examples = load_asc(gold).examples;
      std::map<std::string, Polarity> by_id;
      for (const auto& row : read_json_lines(pred)) {
        const std::string id = row["id"].get<std::string>();
        const auto p = row.contains("polarity") && row["polarity"].is_string()
                           ? parse_polarity(row["polarity"].get<std::string>())
                           : std::nullopt;
        if (!p) throw DataError(pred + ": bad polarity for '" + id + "'");
        by_id[id] = *p;
      }
      std::vector<Polarity> predicted, golds;
      for (const auto& ex : examples) {
        auto it = by_id.find(ex.id);
        if (it == by_id.end()) throw DataError(pred + ": no prediction for '" + ex.id + "'");
        predicted.push_back(it->second);
        golds.push_back(ex.polarity);
      }
      return polarity_report(acc_macro_f1(predicted, golds), examples.size());
    }
  }
  throw InvalidArgument("unknown task");
}

int evaluate_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  const RunConfig c = resolve(flags);
  const Task task = c.finetune.task;
  if (flags.has("--pred")) {
    const auto pred = require_input(flags.pred, "--pred");
    const auto gold = require_input(flags.has("--gold") ? flags.gold : c.data.test, "--gold");
    out << score_files(task, pred, gold).to_json() << '\n';
    return kExitOk;
  }
  require_set(c.init, "--init");
  const auto gold = require_input(flags.has("--gold") ? flags.gold : c.data.test, "data.test");
  const Vocabulary vocab = load_vocab(require_input(c.data.vocab, "data.vocab"));
  const TaskData data = load_task_data(task, gold);
  const Model m = initial_model(c, vocab, c.finetune.max_len, 0, log);
  const auto report = evaluate_task(task, m.params, m.config, vocab, data, c.finetune.max_len);
  out << report.to_json() << '\n';
  return kExitOk;
}

std::string render_predictions(Task task, const ModelParameters<float>& params,
                               const ModelConfig& config, const Vocabulary& vocab,
                               const TaskData& data, const PredictOptions& o) {
  std::ostringstream s;
  switch (task) {
    case Task::kRrc: {
      json j = json::object();
      for (const auto& [id, text] : predict_rrc(params, config, vocab, data.rrc, o)) j[id] = text;
      s << j.dump(2) << '\n';
      break;
    }
    case Task::kAe: {
      const auto chunks = predict_ae(params, config, vocab, data.ae, o);
      for (std::size_t i = 0; i < data.ae.size(); ++i) {
        const auto& words = data.ae[i].words;
        json list = json::array();
        for (const auto& ch : chunks[i]) {
          std::string text;
          for (std::size_t w = ch.start; w <= ch.end; ++w) {
            if (!text.empty()) text += ' ';
            text += words[w];
          }
          list.push_back({{"start", ch.start}, {"end", ch.end}, {"text", text}});
        }
        s << json{{"id", data.ae[i].id}, {"chunks", list}}.dump() << '\n';
      }
      break;
    }
    case Task::kAsc: {
      const auto labels = predict_asc(params, config, vocab, data.asc, o);
      for (std::size_t i = 0; i < data.asc.size(); ++i) {
        s << json{{"id", data.asc[i].id}, {"polarity", std::string(to_string(labels[i]))}}.dump()
          << '\n';
      }
      break;
    }
  }
  return s.str();
}

int predict_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  const RunConfig c = resolve(flags);
  const Task task = c.finetune.task;
  require_set(c.init, "--init");
  const auto input = require_input(flags.has("--input") ? flags.input : c.data.test, "data.test");
  const Vocabulary vocab = load_vocab(require_input(c.data.vocab, "data.vocab"));
  const TaskData data = load_task_data(task, input);
  const Model m = initial_model(c, vocab, c.finetune.max_len, 0, log);
  PredictOptions o;
  o.max_len = c.finetune.max_len;
  o.batch_size = c.finetune.batch_size;
  const std::string text = render_predictions(task, m.params, m.config, vocab, data, o);
  if (flags.has("--out")) {
    write_text(c.out, text);
    log->info("wrote {} predictions to {}", data.size(task), c.out);
  } else {
    out << text;
  }
  return kExitOk;
}

int multi_seed_cmd(const Flags& flags, std::ostream& out, const Logger& log) {
  const FineTuneInputs in = finetune_inputs(flags);
  const auto& c = in.config;
  if (c.runs == 0) throw ConfigError("run.runs must be at least 1");
  const auto test = load_task_data(c.finetune.task, require_input(c.data.test, "data.test"));
  std::vector<EvalReport> reports;
  json runs = json::array();
  for (std::size_t i = 0; i < c.runs; ++i) {
    const std::uint64_t seed = c.finetune.seed + i;
    log->info("run {}/{} seed {}", i + 1, c.runs, seed);
    ModelConfig model_config;
    const auto result = finetune_once(in, seed, &model_config, log, nullptr);
    reports.push_back(evaluate_task(c.finetune.task, result.params, model_config, in.vocab, test,
                                    c.finetune.max_len));
    json metrics = json::object();
    for (const auto& [k, v] : reports.back().metrics) metrics[k] = v;
    runs.push_back({{"seed", seed}, {"best_epoch", result.best_epoch}, {"test", metrics}});
  }
  json summary = json::object();
  for (const auto& s : summarize_reports(reports)) {
    summary[s.name] = {{"mean", s.mean}, {"stdev", s.stdev}};
  }
  const json doc = {{"task", std::string(to_string(c.finetune.task))},
                    {"runs", runs},
                    {"summary", summary}};
  write_text((fs::path(c.out) / "multi_seed.json").string(), doc.dump(2) + "\n");
  out << json{{"runs", c.runs}, {"summary", summary}}.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument wiring
// ---------------------------------------------------------------------------

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Config file (sectioned key = value)");
  cmd->add_option("--set", f.sets, "Override a config key: section.key=value");
}

CLI::Option* add_seed(CLI::App* cmd, Flags& f, std::uint64_t dflt, const std::string& what) {
  f.seed = dflt;
  auto* o = cmd->add_option("--seed", f.seed, what)->capture_default_str();

  return o;
}

void add_task(CLI::App* cmd, Flags& f) {
  f.task = "rrc";
  cmd->add_option("--task", f.task, "Task")
      ->check(CLI::IsMember({"rrc", "ae", "asc"}))
      ->capture_default_str();
}

void add_preset(CLI::App* cmd, Flags& f) {
  f.preset = "tiny";
  cmd->add_option("--preset", f.preset, "Model size")
      ->check(CLI::IsMember({"tiny", "small", "base"}))
      ->capture_default_str();
}

void add_init(CLI::App* cmd, Flags& f, const std::string& what) {
  cmd->add_option("--init", f.init, what);
}

void add_out(CLI::App* cmd, Flags& f, const std::string& what, const std::string& dflt) {
  f.out = dflt;
  auto* o = cmd->add_option("--out", f.out, what);
  if (!dflt.empty()) o->capture_default_str();
}

void add_epochs(CLI::App* cmd, Flags& f) {
  f.epochs = FineTuneConfig{}.max_epochs;
  cmd->add_option("--epochs", f.epochs, "Maximum fine-tuning epochs")->capture_default_str();
}

std::string config_footer() {
  std::string s = "Config keys and built-in defaults (file < --set < flags):\n";
  for (const auto& [key, value] : config_defaults()) s += "  " + key + " = " + value + "\n";
  s += "Environment: POSTTRAIN_LOG_LEVEL = error | info | debug (info)\n";
  s += "Exit codes: 0 ok, 1 usage, 2 data or format, 3 non-finite loss\n";
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto level = log_level();
  if (!level) {
    err << "POSTTRAIN_LOG_LEVEL must be error, info or debug\n";
    return kExitUsage;
  }
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("posttrain", sink);
  log->set_level(*level);
  log->set_pattern("[%l] %v");

  CLI::App app{"Joint post-training and fine-tuning of a review-domain encoder", "posttrain"};
  app.require_subcommand(1);
  app.footer(config_footer());
  Flags f;
  using Handler = int (*)(const Flags&, std::ostream&, const Logger&);
  std::vector<std::pair<CLI::App*, Handler>> commands;

  auto* vocab = app.add_subcommand("build-vocab", "Build a subword vocabulary from data.reviews");
  add_common(vocab, f);
  add_out(vocab, f, "Vocabulary file (default data.vocab)", "");
  commands.emplace_back(vocab, &build_vocab_cmd);

  auto* dk = app.add_subcommand("prepare-dk", "Write a DK shard from data.reviews");
  add_common(dk, f);
  add_seed(dk, f, DkOptions{}.seed, "Masking and pairing seed");
  add_out(dk, f, "Shard file (default data.dk_shard)", "");
  commands.emplace_back(dk, &prepare_dk_cmd);

  auto* post = app.add_subcommand("posttrain", "Joint DK + MRC post-training");
  add_common(post, f);
  add_seed(post, f, 0, "Initialization and dropout seed");
  f.steps = RunConfig{}.posttrain.total_steps;
  post->add_option("--steps", f.steps, "Training steps")->capture_default_str();
  add_preset(post, f);
  add_out(post, f, "Output directory", RunConfig{}.out);
  add_init(post, f, "Checkpoint to resume from");
  commands.emplace_back(post, &posttrain_cmd);

  auto* ft = app.add_subcommand("finetune", "Fine-tune on an end task");
  add_common(ft, f);
  add_task(ft, f);
  add_seed(ft, f, 0, "Initialization, shuffling and dropout seed");
  add_epochs(ft, f);
  add_preset(ft, f);
  add_out(ft, f, "Output directory", RunConfig{}.out);
  add_init(ft, f, "Post-trained checkpoint (random init when absent)");
  commands.emplace_back(ft, &finetune_cmd);

  auto* ev = app.add_subcommand("evaluate", "Score predictions or a checkpoint");
  add_common(ev, f);
  add_task(ev, f);
  ev->add_option("--pred", f.pred, "Prediction file to score");
  ev->add_option("--gold", f.gold, "Gold file (default data.test)");
  add_init(ev, f, "Checkpoint to evaluate when --pred is absent");
  commands.emplace_back(ev, &evaluate_cmd);

  auto* pr = app.add_subcommand("predict", "Write task predictions");
  add_common(pr, f);
  add_task(pr, f);
  add_init(pr, f, "Fine-tuned checkpoint");
  pr->add_option("--input", f.input, "Input file (default data.test)");
  add_out(pr, f, "Prediction file (default stdout)", "");
  commands.emplace_back(pr, &predict_cmd);

  auto* ms = app.add_subcommand("multi-seed", "Fine-tune and test over several seeds");
  add_common(ms, f);
  add_task(ms, f);
  add_seed(ms, f, 0, "First seed");
  add_epochs(ms, f);
  add_preset(ms, f);
  f.runs = kDefaultSeedRuns;
  ms->add_option("--runs", f.runs, "Number of seeds")->capture_default_str();
  add_out(ms, f, "Output directory", RunConfig{}.out);
  add_init(ms, f, "Post-trained checkpoint (random init when absent)");
  commands.emplace_back(ms, &multi_seed_cmd);

  if (!args.empty() && !args[0].starts_with("-") &&
      app.get_subcommand_no_throw(args[0]) == nullptr) {
    err << "unknown command '" << args[0] << "'\n" << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (const auto& [cmd, handler] : commands) {
      if (!cmd->parsed()) continue;
      f.cmd = cmd;
      return handler(f, out, log);
    }
    return kExitUsage;
  } catch (const ConfigError& e) {
    log->error("{}", e.what());
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    log->error("{}", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    log->error("{}", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    log->error("{}", e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    log->error("{}", e.what());
    return kExitData;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace posttrain::cli
