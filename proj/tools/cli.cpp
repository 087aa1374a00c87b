#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "tppkit/checkpoint.hpp"
#include "tppkit/error.hpp"
#include "tppkit/evaluation.hpp"
#include "tppkit/numfmt.hpp"
#include "tppkit/parallel.hpp"
#include "tppkit/pgem.hpp"
#include "tppkit/rng.hpp"
#include "tppkit/training.hpp"

#ifndef TPPKIT_VERSION
#define TPPKIT_VERSION "0.0.0"
#endif

namespace tppkit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { kInt, kUint, kReal, kBool, kText };

struct OptionSpec {
  std::string key;  // config key; the flag is --key with '_' -> '-'
  Kind kind;
  json fallback;    // null: required
  std::string help;
};

std::string flag_of(const std::string& key) {
  std::string f = "--" + key;
  for (char& c : f)
    if (c == '_') c = '-';
  return f;
}

json parse_value(const OptionSpec& spec, const std::string& text, const std::string& origin) {
  try {
    switch (spec.kind) {
      case Kind::kInt:
        return parse_integer(text);
      case Kind::kUint: {
        const long long v = parse_integer(text);
        if (v < 0) throw DataError("must be >= 0");
        return static_cast<std::uint64_t>(v);
      }
      case Kind::kReal:
        return parse_double(text);
      case Kind::kBool:
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw DataError("expected true or false");
      case Kind::kText:
        return text;
    }
  } catch (const DataError& e) {
    throw UsageError(origin + ": " + e.what());
  }
  return nullptr;
}

json check_json(const OptionSpec& spec, const json& v, const std::string& origin) {
  const bool ok = (spec.kind == Kind::kInt && v.is_number_integer()) ||
                  (spec.kind == Kind::kUint && v.is_number_unsigned()) ||
                  (spec.kind == Kind::kReal && v.is_number()) ||
                  (spec.kind == Kind::kBool && v.is_boolean()) ||
                  (spec.kind == Kind::kText && v.is_string());
  if (!ok) throw UsageError(origin + ": wrong type for '" + spec.key + "'");
  return spec.kind == Kind::kReal ? json(v.get<double>()) : v;
}

// Resolved option values for one invocation.
class Settings {
 public:
  explicit Settings(json values) : values_(std::move(values)) {}

  const json& values() const { return values_; }
  long long integer(const std::string& key) const { return values_.at(key).get<long long>(); }
  int small(const std::string& key) const { return static_cast<int>(integer(key)); }
  std::uint64_t uint(const std::string& key) const { return values_.at(key).get<std::uint64_t>(); }
  double real(const std::string& key) const { return values_.at(key).get<double>(); }
  bool flag(const std::string& key) const { return values_.at(key).get<bool>(); }
  std::string text(const std::string& key) const { return values_.at(key).get<std::string>(); }

 private:
  json values_;
};

struct Context {
  std::string command;
  const Settings& settings;
  std::ostream& out;

  // Records the run before any computation starts.
  void manifest(const fs::path& path, const std::vector<std::string>& inputs,
                const std::vector<std::string>& outputs) const {
    const json doc{{"tool", "tppkit"},
                   {"version", TPPKIT_VERSION},
                   {"subcommand", command},
                   {"seed", settings.values().contains("seed") ? settings.values()["seed"] : json(nullptr)},
                   {"config", settings.values()},
                   {"inputs", inputs},
                   {"outputs", outputs}};
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write manifest '" + path.string() + "'");
    f << doc.dump(2) << '\n';
  }
};

struct Command {
  std::string name;
  std::string help;
  std::vector<OptionSpec> options;
  std::function<void(const Context&)> action;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw UsageError(message);
}

int threads_of(const Settings& s) {
  const long long n = s.integer("parallel");
  require(n >= 1, "--parallel must be >= 1");
  return static_cast<int>(n);
}

fs::path file_output(const Settings& s) {
  const fs::path out = s.text("out");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  return out;
}

fs::path manifest_beside(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

Checkpoint load_model_for(const Settings& s, const Dataset& data) {
  Checkpoint ck = load_checkpoint(s.text("ckpt"));
  if (ck.config.label_count != data.label_count)
    throw DataError("checkpoint '" + s.text("ckpt") + "' models M=" + std::to_string(ck.config.label_count) +
                    " labels but '" + s.text("data") + "' has M=" + std::to_string(data.label_count));
  return ck;
}

int fakes_for(const Settings& s, const ModelConfig& config) {
  const long long k = s.integer("fakes");
  require(k >= -1, "--fakes must be >= 0 (or -1 for the model's own count)");
  return k < 0 ? config.fake_count : static_cast<int>(k);
}

std::vector<double> parse_windows(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(parse_double(item));
    } catch (const DataError& e) {
      throw UsageError(std::string("--windows: ") + e.what());
    }
  }
  require(!out.empty(), "--windows needs at least one value");
  return out;
}

const json kRequired = nullptr;

std::vector<Command> commands() {
  std::vector<Command> list;

  list.push_back(
      {"gen-pgem",
       "Sample a PGEM and simulate event streams from it",
       {{"labels", Kind::kInt, 5, "number of labels M"},
        {"streams", Kind::kInt, 10, "number of streams"},
        {"horizon", Kind::kReal, 1000.0, "stream horizon T"},
        {"seed", Kind::kUint, 1, "seed"},
        {"max_parents", Kind::kInt, 2, "maximum parents per node"},
        {"windows", Kind::kText, "15,30,60", "comma-separated window choices"},
        {"rate_min", Kind::kReal, 0.001, "smallest table rate"},
        {"rate_max", Kind::kReal, 0.1, "largest table rate"},
        {"name", Kind::kText, "pgem", "dataset name"},
        {"parallel", Kind::kInt, 1, "worker threads"},
        {"out", Kind::kText, "pgem", "output directory"}},
       [](const Context& ctx) {
         const Settings& s = ctx.settings;
         const long long labels = s.integer("labels");
         const long long streams = s.integer("streams");
         const double horizon = s.real("horizon");
         require(labels >= 1, "--labels must be >= 1");
         require(streams >= 1, "--streams must be >= 1");
         require(horizon > 0.0 && std::isfinite(horizon), "--horizon must be positive");
         require(s.integer("max_parents") >= 0, "--max-parents must be >= 0");
         const int threads = threads_of(s);
         PgemSampleConfig sc;
         sc.max_parents = s.small("max_parents");
         sc.windows = parse_windows(s.text("windows"));
         sc.rate_min = s.real("rate_min");
         sc.rate_max = s.real("rate_max");

         const fs::path dir = s.text("out");
         fs::create_directories(dir);
         const fs::path spec_path = dir / "spec.json", csv = dir / "streams.csv";
         ctx.manifest(dir / "manifest.json", {},
                      {spec_path.string(), csv.string(), sidecar_path(csv).string()});

         Rng master(s.uint("seed"));
         const PgemSpec spec = sample_spec(static_cast<int>(labels), master.next(), sc);
         std::vector<std::uint64_t> seeds(static_cast<std::size_t>(streams));
         for (auto& v : seeds) v = master.next();
         Dataset d;
         d.name = s.text("name");
         d.label_count = spec.label_count;
         d.streams.resize(seeds.size());
         detail::parallel_for(seeds.size(), threads, [&](std::size_t i) {
           d.streams[i] = simulate(spec, horizon, seeds[i], "s" + std::to_string(i));
         });
         save_pgem(spec, spec_path);
         save_dataset(d, csv);
         ctx.out << "gen-pgem: " << streams << " streams, M=" << labels << ", " << d.event_count()
                 << " events -> " << csv.string() << '\n';
       }});

  list.push_back(
      {"split",
       "Split a dataset into train and test parts",
       {{"data", Kind::kText, kRequired, "input stream CSV"},
        {"fraction", Kind::kReal, 0.7, "train fraction"},
        {"mode", Kind::kText, "stream", "stream | time"},
        {"seed", Kind::kUint, 1, "seed for stream shuffling"},
        {"out", Kind::kText, "split", "output directory"}},
       [](const Context& ctx) {
         const Settings& s = ctx.settings;
         const std::string mode = s.text("mode");
         require(mode == "stream" || mode == "time", "--mode must be 'stream' or 'time'");
         const double f = s.real("fraction");
         require(f > 0.0 && f < 1.0, "--fraction must lie in (0, 1)");
         const fs::path dir = s.text("out");
         fs::create_directories(dir);
         const fs::path train_csv = dir / "train.csv", test_csv = dir / "test.csv";
         ctx.manifest(dir / "manifest.json", {s.text("data")}, {train_csv.string(), test_csv.string()});

         const Dataset d = load_dataset(s.text("data"));
         const auto [train, test] = mode == "stream" ? split_by_stream(d, f, s.uint("seed")) : split_by_time(d, f);
         save_dataset(train, train_csv);
         save_dataset(test, test_csv);
         ctx.out << "split: " << train.streams.size() << " train streams (" << train.event_count()
                 << " events), " << test.streams.size() << " test streams (" << test.event_count()
                 << " events) -> " << dir.string() << '\n';
       }});

  list.push_back(
      {"train",
       "Fit a model by regularized maximum likelihood",
       {{"data", Kind::kText, kRequired, "training stream CSV"},
        {"val", Kind::kText, "", "optional validation stream CSV"},
        {"fakes", Kind::kInt, 1, "fake epochs per gap K"},
        {"channels", Kind::kInt, 8, "channel width m"},
        {"embed", Kind::kInt, 16, "label embedding size"},
        {"memory", Kind::kInt, 3, "memory depth J"},
        {"hidden", Kind::kInt, 32, "intensity network width"},
        {"lambda_p", Kind::kReal, 1.0, "prediction loss weight"},
        {"lambda_w", Kind::kReal, 1e-4, "weight penalty"},
        {"normalize_time", Kind::kBool, true, "scale time features by the longest horizon"},
        {"bank_real_only", Kind::kBool, false, "snapshot the bank only after real events"},
        {"lr", Kind::kReal, 1e-3, "Adam learning rate"},
        {"beta1", Kind::kReal, 0.9, "Adam beta1"},
        {"beta2", Kind::kReal, 0.999, "Adam beta2"},
        {"eps", Kind::kReal, 1e-8, "Adam epsilon"},
        {"clip", Kind::kReal, 5.0, "gradient norm clip"},
        {"epochs", Kind::kInt, 50, "epochs"},
        {"batch", Kind::kInt, 1, "streams per step"},
        {"patience", Kind::kInt, 0, "early-stop patience (needs --val)"},
        {"seed", Kind::kUint, 1, "seed"},
        {"timing", Kind::kBool, false, "record wall time per epoch in the report"},
        {"parallel", Kind::kInt, 1, "worker threads"},
        {"out", Kind::kText, "model", "output directory"}},
       [](const Context& ctx) {
         const Settings& s = ctx.settings;
         ModelConfig mc;
         mc.fake_count = s.small("fakes");
         mc.channel_width = s.small("channels");
         mc.embed_dim = s.small("embed");
         mc.memory_depth = s.small("memory");
         mc.hidden_f1 = s.small("hidden");
         mc.lambda_p = s.real("lambda_p");
         mc.lambda_w = s.real("lambda_w");
         mc.normalize_time = s.flag("normalize_time");
         mc.bank_real_only = s.flag("bank_real_only");
         TrainConfig tc;
         tc.learning_rate = s.real("lr");
         tc.beta1 = s.real("beta1");
         tc.beta2 = s.real("beta2");
         tc.epsilon = s.real("eps");
         tc.clip_norm = s.real("clip");
         tc.epochs = s.small("epochs");
         tc.batch = s.small("batch");
         tc.patience = s.small("patience");
         tc.seed = s.uint("seed");
         tc.record_timing = s.flag("timing");
         tc.threads = threads_of(s);
         try {
           mc.label_count = 1;
           mc.validate();
           tc.validate();
         } catch (const DataError& e) {
           throw UsageError(e.what());
         }

         const fs::path dir = s.text("out");
         fs::create_directories(dir);
         const fs::path ckpt = dir / "model.ckpt", report = dir / "report.csv";
         std::vector<std::string> inputs{s.text("data")};
         if (!s.text("val").empty()) inputs.push_back(s.text("val"));
         ctx.manifest(dir / "manifest.json", inputs, {ckpt.string(), report.string()});

         const Dataset train_set = load_dataset(s.text("data"));
         std::optional<Dataset> val;
         if (!s.text("val").empty()) val = load_dataset(s.text("val"));
         mc.label_count = train_set.label_count;
         const TrainResult r = train(train_set, val ? &*val : nullptr, mc, tc);
         save_checkpoint({r.config, r.params, r.report.steps}, ckpt);
         write_report_csv(r.report, report);
         const EpochStats& last = r.report.epochs.back();
         ctx.out << "train: " << r.report.epochs.size() << " epochs, objective " << format_double(last.objective)
                 << ", train_ll " << format_double(last.train_ll) << " -> " << ckpt.string() << '\n';
       }});

  list.push_back({"eval",
                  "Score streams with a trained model",
                  {{"ckpt", Kind::kText, kRequired, "model checkpoint"},
                   {"data", Kind::kText, kRequired, "stream CSV"},
                   {"fakes", Kind::kInt, -1, "fake epochs per gap; -1 uses the model's"},
                   {"parallel", Kind::kInt, 1, "worker threads"},
                   {"out", Kind::kText, "test_ll.csv", "report CSV"}},
                  [](const Context& ctx) {
                    const Settings& s = ctx.settings;
                    const int threads = threads_of(s);
                    const fs::path out = file_output(s);
                    ctx.manifest(manifest_beside(out), {s.text("ckpt"), s.text("data")}, {out.string()});
                    const Dataset d = load_dataset(s.text("data"));
                    const Checkpoint ck = load_model_for(s, d);
                    const TestLLReport r = test_ll(ck.params, ck.config, d, fakes_for(s, ck.config), threads);
                    write_test_ll_csv(r, out);
                    ctx.out << "eval: " << r.streams.size() << " streams, total ll " << format_double(r.total)
                            << " -> " << out.string() << '\n';
                  }});

  list.push_back({"attn-graph",
                  "Extract the label influence graph from attention weights",
                  {{"ckpt", Kind::kText, kRequired, "model checkpoint"},
                   {"data", Kind::kText, kRequired, "stream CSV"},
                   {"threshold", Kind::kReal, 0.01, "edge threshold"},
                   {"parallel", Kind::kInt, 1, "worker threads"},
                   {"out", Kind::kText, "attention.dot", "Graphviz output; adjacency JSON goes beside it"}},
                  [](const Context& ctx) {
                    const Settings& s = ctx.settings;
                    const int threads = threads_of(s);
                    const fs::path out = file_output(s);
                    fs::path adjacency = out;
                    adjacency.replace_extension(".json");
                    require(adjacency != out, "--out must not end in .json");
                    ctx.manifest(manifest_beside(out), {s.text("ckpt"), s.text("data")},
                                 {out.string(), adjacency.string()});
                    const Dataset d = load_dataset(s.text("data"));
                    const Checkpoint ck = load_model_for(s, d);
                    const AttentionGraph g = attention_graph(ck.params, ck.config, d, s.real("threshold"), threads);
                    std::ofstream dot(out, std::ios::binary | std::ios::trunc);
                    if (!dot) throw DataError("cannot write '" + out.string() + "'");
                    dot << attention_dot(g);
                    std::ofstream js(adjacency, std::ios::binary | std::ios::trunc);
                    if (!js) throw DataError("cannot write '" + adjacency.string() + "'");
                    js << attention_json(g).dump(2) << '\n';
                    ctx.out << "attn-graph: " << g.edges.size() << " edges at threshold "
                            << format_double(g.threshold) << " -> " << out.string() << '\n';
                  }});

  list.push_back({"trace",
                  "Export per-label intensities along one stream",
                  {{"ckpt", Kind::kText, kRequired, "model checkpoint"},
                   {"data", Kind::kText, kRequired, "stream CSV"},
                   {"stream", Kind::kText, "", "stream id; default the first stream"},
                   {"fakes", Kind::kInt, -1, "fake epochs per gap; -1 uses the model's"},
                   {"out", Kind::kText, "trace.csv", "trace CSV"}},
                  [](const Context& ctx) {
                    const Settings& s = ctx.settings;
                    const fs::path out = file_output(s);
                    ctx.manifest(manifest_beside(out), {s.text("ckpt"), s.text("data")}, {out.string()});
                    const Dataset d = load_dataset(s.text("data"));
                    const Checkpoint ck = load_model_for(s, d);
                    const std::string id = s.text("stream");
                    const EventStream* chosen = id.empty() ? &d.streams.front() : nullptr;
                    for (const EventStream& e : d.streams)
                      if (!chosen && e.id == id) chosen = &e;
                    if (!chosen) throw DataError("no stream '" + id + "' in '" + s.text("data") + "'");
                    const IntensityTrace t = intensity_trace(ck.params, ck.config, *chosen, fakes_for(s, ck.config));
                    write_trace_csv(t, out);
                    ctx.out << "trace: stream " << chosen->id << ", " << t.points.size() << " points -> "
                            << out.string() << '\n';
                  }});
  return list;
}

json read_config_file(const std::string& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw UsageError("cannot parse config '" + path + "': " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config '" + path + "' must hold a JSON object");
  if (doc.contains("config") && doc.contains("subcommand")) {
    if (doc["subcommand"] != command)
      throw UsageError("manifest '" + path + "' records subcommand " + doc["subcommand"].dump() + ", not '" +
                       command + "'");
    return doc["config"];
  }
  return doc;
}

Settings resolve(const Command& cmd, const std::map<std::string, CLI::Option*>& flags,
                 const std::map<std::string, std::string>& raw, const std::string& config_path) {
  const json file = config_path.empty() ? json::object() : read_config_file(config_path, cmd.name);
  for (const auto& [key, value] : file.items()) {
    bool known = false;
    for (const OptionSpec& o : cmd.options) known = known || o.key == key;
    if (!known) throw UsageError("config '" + config_path + "': unknown key '" + key + "' for " + cmd.name);
  }
  json values = json::object();
  for (const OptionSpec& o : cmd.options) {
    if (flags.at(o.key)->count() > 0) {
      values[o.key] = parse_value(o, raw.at(o.key), flag_of(o.key));
    } else if (file.contains(o.key)) {
      values[o.key] = check_json(o, file[o.key], "config '" + config_path + "'");
    } else if (const char* env = std::getenv("TPPKIT_SEED"); o.key == "seed" && env && *env) {
      values[o.key] = parse_value(o, env, "TPPKIT_SEED");
    } else if (o.fallback.is_null()) {
      throw UsageError(cmd.name + ": " + flag_of(o.key) + " is required");
    } else {
      values[o.key] = o.fallback;
    }
  }
  return Settings(std::move(values));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tppkit: multi-channel neural event models for labeled event streams", "tppkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TPPKIT_VERSION);

  const std::vector<Command> cmds = commands();
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, std::map<std::string, CLI::Option*>> flags;
  std::map<std::string, std::string> config_paths;
  std::map<std::string, CLI::App*> subs;
  for (const Command& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    subs[c.name] = sub;
    sub->add_option("--config", config_paths[c.name], "JSON config or a manifest from an earlier run");
    for (const OptionSpec& o : c.options) {
      std::string help = o.help;
      if (!o.fallback.is_null()) help += " [" + (o.fallback.is_string() ? o.fallback.get<std::string>() : o.fallback.dump()) + "]";
      flags[c.name][o.key] = sub->add_option(flag_of(o.key), raw[c.name][o.key], help);
    }
  }

  std::vector<const char*> argv{"tppkit"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << "tppkit: " << e.what() << '\n';
    return kUsage;
  }

  for (const Command& c : cmds) {
    if (!subs[c.name]->parsed()) continue;
    try {
      const Settings settings = resolve(c, flags[c.name], raw[c.name], config_paths[c.name]);
      c.action(Context{c.name, settings, out});
      return kOk;
    } catch (const UsageError& e) {
      err << "tppkit " << c.name << ": " << e.what() << '\n';
      return kUsage;
    } catch (const NumericError& e) {
      err << "tppkit " << c.name << ": numerical failure: " << e.what() << '\n';
      return kNumeric;
    } catch (const std::exception& e) {
      err << "tppkit " << c.name << ": " << e.what() << '\n';
      return kUsage;
    }
  }
  return kUsage;
}

}  // namespace tppkit::cli
