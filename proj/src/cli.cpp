#include "htad/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <system_error>

#include "htad/pipeline.hpp"

namespace htad {

using nlohmann::json;

namespace {

struct Paths {
  std::string config, records, series, targets, grouping, checkpoint, out;
  std::optional<std::uint64_t> seed;
  std::string task;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing --") + what);
  if (!std::filesystem::exists(path)) throw ConfigError(std::string("--") + what + " not found: " + path);
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

void keep_types(std::vector<ClinicalRecord>& records, const std::vector<std::string>& types) {
  if (types.empty()) return;
  const std::set<std::string> keep(types.begin(), types.end());
  std::erase_if(records, [&](const ClinicalRecord& r) { return !keep.contains(r.type); });
}

std::map<std::string, Series> load_series(const std::string& dir, std::vector<std::string>& channels) {
  if (dir.empty()) return {};
  require_file(dir, "series");
  return read_series_dir(dir, &channels);
}

// Data for a checkpoint that already exists: same context types, same bins.
Dataset load_for_bundle(const ModelBundle& bundle, const Paths& p) {
  require_file(p.records, "records");
  require_file(p.targets, "targets");
  auto records = read_records(std::filesystem::path(p.records));
  const auto targets = read_targets(std::filesystem::path(p.targets));
  keep_types(records, bundle.model_config.context_types);
  // An empty binner means nothing was numeric at training time.
  ValueBinner binner = bundle.binner;
  if (!binner.edges().empty()) categorize_records(records, bundle.config.numeric_types, bundle.config.bins, binner);
  std::vector<std::string> channels;
  auto series = load_series(p.series, channels);
  if (!series.empty() && !bundle.series_channels.empty() && channels != bundle.series_channels) {
    throw DataError("series channels differ from the checkpoint");
  }
  if (bundle.series_channels.empty()) series.clear();
  return make_dataset(std::move(records), targets, std::move(series), std::move(channels),
                      bundle.model_config.context_types);
}

void check_task(const ModelBundle& bundle, const std::string& task) {
  if (!task.empty() && parse_task(task) != bundle.task()) {
    throw ConfigError("checkpoint was trained for task " + to_string(bundle.task()) + ", not " + task);
  }
}

void check_grouping(const ModelBundle& bundle, const std::string& grouping) {
  if (grouping.empty()) return;
  require_file(grouping, "grouping");
  const auto vocab = load_grouping(std::filesystem::path(grouping));
  bool same = vocab.diagnoses() == bundle.vocab.diagnoses() && vocab.groups() == bundle.vocab.groups();
  for (std::size_t i = 0; same && i < vocab.diagnoses().size(); ++i) {
    same = vocab.group(vocab.diagnoses()[i]) == bundle.vocab.group(vocab.diagnoses()[i]);
  }
  if (!same) throw DataError("vocabulary mismatch: grouping differs from the checkpoint");
}

int cmd_train(const Paths& p, std::ostream& out) {
  if (p.config.empty()) throw ConfigError("missing --config");
  RunConfig config = load_run_config(p.config);
  if (!p.task.empty()) {
    config.training.task = parse_task(p.task);
    // Re-derive the task's default mode unless the file sets one.
    std::ifstream in(p.config);
    if (!json::parse(in).contains("mode")) {
      config.training.mode = config.training.task == Task::rank ? TrainingMode::pretrain_unsup : TrainingMode::joint;
    }
  }
  if (p.seed) config.training.seed = *p.seed;
  config.validate();
  if (p.out.empty()) throw ConfigError("missing --out");
  require_file(p.records, "records");
  require_file(p.targets, "targets");
  require_file(p.grouping, "grouping");

  auto records = read_records(std::filesystem::path(p.records));
  const auto targets = read_targets(std::filesystem::path(p.targets));
  const auto vocab = load_grouping(std::filesystem::path(p.grouping));
  keep_types(records, config.context_types);
  ValueBinner binner;
  categorize_records(records, config.numeric_types, config.bins, binner);
  const auto types = config.context_types.empty() ? record_types(records) : config.context_types;
  std::vector<std::string> channels;
  auto series = config.use_series ? load_series(p.series, channels) : std::map<std::string, Series>{};
  const Dataset data = make_dataset(std::move(records), targets, std::move(series), std::move(channels), types);

  ModelBundle bundle = ModelBundle::create(config, data, vocab, binner);
  Trainer trainer(bundle, data);
  auto log = open_output(p.out + ".train.csv");
  log << "step,objective,loss,ms\n" << std::setprecision(10);
  double last = 0;
  trainer.run(
      [&](const TrainingStep& s) {
        log << s.step << ',' << (s.objective == Objective::supervised ? "sup" : "unsup") << ',' << s.loss << ','
            << s.ms << '\n';
        last = s.loss;
      },
      [&](std::size_t) { bundle.save(p.out); });
  bundle.save(p.out);
  out << "trained " << trainer.train_patient_count() << " patients, " << trainer.relation_count()
      << " metapath relations, last loss " << last << '\n';
  return kExitOk;
}

int cmd_eval(const Paths& p, std::ostream& out) {
  require_file(p.checkpoint, "checkpoint");
  ModelBundle bundle = ModelBundle::load(p.checkpoint);
  check_task(bundle, p.task);
  check_grouping(bundle, p.grouping);
  if (p.seed) bundle.config.training.seed = *p.seed;
  const Dataset data = load_for_bundle(bundle, p);
  const EvalResult result = evaluate(bundle, data);
  const std::string text = result.report.dump(2) + "\n";
  if (p.out.empty()) {
    out << text;
  } else {
    auto f = open_output(p.out);
    f << text;
  }
  return kExitOk;
}

int cmd_export(const Paths& p, std::ostream& out) {
  require_file(p.checkpoint, "checkpoint");
  if (p.out.empty()) throw ConfigError("missing --out");
  ModelBundle bundle = ModelBundle::load(p.checkpoint);
  check_task(bundle, p.task);
  check_grouping(bundle, p.grouping);
  const Dataset data = load_for_bundle(bundle, p);
  const auto traces = collect_traces(bundle, data);
  auto f = open_output(p.out);
  for (const auto& t : traces) f << trace_to_json(t).dump() << '\n';
  auto report = open_output(p.out + ".report.json");
  report << attention_report(traces).dump(2) << '\n';
  out << "exported " << traces.size() << " traces\n";
  return kExitOk;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  static const std::set<std::string> known = {
      "patients",        "test_patients",     "diagnoses",        "groups",         "max_diagnoses",
      "p_signal",        "background_rate",   "indicators",       "group_symptoms", "background_labs",
      "background_symptoms", "background_prescriptions", "lab_values", "frequency_skew", "series_steps",
      "series_channels", "series_noise",      "series_drift",     "series_group",   "seed"};
  for (const auto& [k, _] : j.items()) {
    if (!known.contains(k)) throw ConfigError("unknown synthetic field: " + k);
  }
  try {
    s.patients = j.value("patients", s.patients);
    s.test_patients = j.value("test_patients", s.test_patients);
    s.diagnoses = j.value("diagnoses", s.diagnoses);
    s.groups = j.value("groups", s.groups);
    s.max_diagnoses = j.value("max_diagnoses", s.max_diagnoses);
    s.p_signal = j.value("p_signal", s.p_signal);
    s.background_rate = j.value("background_rate", s.background_rate);
    s.indicators = j.value("indicators", s.indicators);
    s.group_symptoms = j.value("group_symptoms", s.group_symptoms);
    s.background_labs = j.value("background_labs", s.background_labs);
    s.background_symptoms = j.value("background_symptoms", s.background_symptoms);
    s.background_prescriptions = j.value("background_prescriptions", s.background_prescriptions);
    s.lab_values = j.value("lab_values", s.lab_values);
    s.frequency_skew = j.value("frequency_skew", s.frequency_skew);
    s.series_steps = j.value("series_steps", s.series_steps);
    s.series_channels = j.value("series_channels", s.series_channels);
    s.series_noise = j.value("series_noise", s.series_noise);
    s.series_drift = j.value("series_drift", s.series_drift);
    s.series_group = j.value("series_group", s.series_group);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  return s;
}

int cmd_generate(const Paths& p, std::ostream& out) {
  if (p.out.empty()) throw ConfigError("missing --out");
  SyntheticSpec spec;
  if (!p.config.empty()) {
    require_file(p.config, "config");
    std::ifstream in(p.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    spec = synthetic_spec_from_json(j);
  }
  if (p.seed) spec.seed = *p.seed;
  spec.validate();
  const SyntheticData d = generate_synthetic(spec);
  const std::filesystem::path dir(p.out);
  std::filesystem::create_directories(dir);
  {
    auto f = open_output(dir / "records.jsonl");
    write_records(f, d.records);
  }
  {
    auto f = open_output(dir / "train_targets.jsonl");
    write_targets(f, d.train_targets);
  }
  {
    auto f = open_output(dir / "test_targets.jsonl");
    write_targets(f, d.test_targets);
  }
  {
    auto f = open_output(dir / "grouping.jsonl");
    write_grouping(f, d.vocab);
  }
  if (!d.series.empty()) write_series_dir(dir / "series", d.series, d.series_channels);
  out << "wrote " << d.patients.size() << " patients to " << dir.string() << '\n';
  return kExitOk;
}

void add_data_flags(CLI::App* cmd, Paths& p) {
  cmd->add_option("--records", p.records, "Clinical records (JSON Lines)");
  cmd->add_option("--targets", p.targets, "Patient-diagnosis links (JSON Lines)");
  cmd->add_option("--series", p.series, "Directory of per-patient series CSV files");
  cmd->add_option("--grouping", p.grouping, "Diagnosis grouping (JSON Lines)");
  cmd->add_option("--seed", p.seed, "Random seed");
  cmd->add_option("--task", p.task, "phenotype or rank");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heterogeneous clinical network model with target-aware attention"};
  app.require_subcommand(1);
  Paths p;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_data_flags(train, p);
  train->add_option("--config", p.config, "Run config (JSON)");
  train->add_option("--out", p.out, "Checkpoint path; the log goes to <out>.train.csv");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on held-out targets");
  add_data_flags(eval, p);
  eval->add_option("--checkpoint", p.checkpoint, "Checkpoint path");
  eval->add_option("--out", p.out, "Metrics report path (default: stdout)");

  auto* exp = app.add_subcommand("export-attention", "Write attention traces and a summary report");
  add_data_flags(exp, p);
  exp->add_option("--checkpoint", p.checkpoint, "Checkpoint path");
  exp->add_option("--out", p.out, "Trace path (JSON Lines); the report goes to <out>.report.json");

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset with planted signals");
  gen->add_option("--config", p.config, "Synthetic generator settings (JSON)");
  gen->add_option("--out", p.out, "Output directory");
  gen->add_option("--seed", p.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(p, out);
    if (*eval) return cmd_eval(p, out);
    if (*exp) return cmd_export(p, out);
    return cmd_generate(p, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::system_error& e) {
    err << "cannot open input: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace htad
