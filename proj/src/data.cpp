#include "htad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace htad {

using nlohmann::json;

// ------------------------------------------------------- DiagnosisVocab

DiagnosisVocab::DiagnosisVocab(std::span<const std::pair<std::string, std::string>> mapping) {
  std::map<std::string, std::string> group_name_of;
  std::set<std::string> group_names;
  for (const auto& [diag, group] : mapping) {
    if (diag.empty() || group.empty()) throw DataError("grouping entry with an empty diagnosis or group");
    if (!group_name_of.emplace(diag, group).second) throw DataError("diagnosis mapped more than once: " + diag);
    group_names.insert(group);
  }
  groups_.assign(group_names.begin(), group_names.end());
  for (const auto& [diag, group] : group_name_of) {
    index_of_[diag] = diagnoses_.size();
    diagnoses_.push_back(diag);
    group_of_[diag] = static_cast<std::size_t>(
        std::lower_bound(groups_.begin(), groups_.end(), group) - groups_.begin());
  }
}

std::size_t DiagnosisVocab::group(const std::string& diagnosis) const {
  auto it = group_of_.find(diagnosis);
  if (it == group_of_.end()) throw DataError("diagnosis has no group: " + diagnosis);
  return it->second;
}

std::size_t DiagnosisVocab::diagnosis_index(const std::string& diagnosis) const {
  auto it = index_of_.find(diagnosis);
  if (it == index_of_.end()) throw DataError("diagnosis not in vocabulary: " + diagnosis);
  return it->second;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path.string());
  return in;
}

template <typename F>
void for_each_json_line(std::istream& in, F&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object()) throw DataError("line " + std::to_string(lineno) + ": expected a JSON object");
    try {
      fn(obj);
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::string required_string(const json& obj, const char* field) {
  auto it = obj.find(field);
  if (it == obj.end() || !it->is_string()) throw DataError(std::string("missing string field \"") + field + "\"");
  return it->get<std::string>();
}

}  // namespace

DiagnosisVocab load_grouping(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> mapping;
  for_each_json_line(in, [&](const json& obj) {
    mapping.emplace_back(required_string(obj, "diagnosis"), required_string(obj, "group"));
  });
  return DiagnosisVocab(mapping);
}

DiagnosisVocab load_grouping(const std::filesystem::path& path) {
  auto in = open_input(path);
  return load_grouping(in);
}

void write_grouping(std::ostream& out, const DiagnosisVocab& vocab) {
  for (const auto& d : vocab.diagnoses()) {
    out << json{{"diagnosis", d}, {"group", vocab.groups()[vocab.group(d)]}}.dump() << '\n';
  }
}

// ---------------------------------------------------------- ValueBinner

std::size_t ValueBinner::categorize(const std::string& item, double raw) const {
  auto it = edges_.find(item);
  if (it == edges_.end()) throw DataError("no bins fitted for item: " + item);
  const auto& e = it->second;
  return static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), raw) - e.begin());
}

std::size_t ValueBinner::bin_count(const std::string& item) const {
  auto it = edges_.find(item);
  if (it == edges_.end()) throw DataError("no bins fitted for item: " + item);
  return it->second.size() + 1;
}

ValueBinner fit_binner(const std::map<std::string, std::vector<double>>& values, std::size_t bins) {
  if (bins == 0) throw ConfigError("bin count must be positive");
  std::map<std::string, std::vector<double>> edges;
  for (const auto& [item, raw] : values) {
    if (raw.empty()) throw DataError("item has no observations: " + item);
    std::vector<double> sorted = raw;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    std::vector<double> cuts;
    for (std::size_t k = 1; k < bins; ++k) {
      const double c = sorted[(k * n) / bins];
      if (c > sorted.front() && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
    }
    edges.emplace(item, std::move(cuts));
  }
  return ValueBinner(std::move(edges));
}

std::size_t categorize(const ValueBinner& binner, const std::string& item, double raw) {
  return binner.categorize(item, raw);
}

namespace {

double parse_number(const std::string& s, const std::string& item) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || !std::isfinite(v)) throw DataError("non-numeric value \"" + s + "\" for item " + item);
  return v;
}

}  // namespace

void categorize_records(std::vector<ClinicalRecord>& records, const std::vector<std::string>& numeric_types,
                        std::size_t bins, ValueBinner& binner) {
  if (numeric_types.empty()) return;
  auto numeric = [&](const ClinicalRecord& r) {
    return std::find(numeric_types.begin(), numeric_types.end(), r.type) != numeric_types.end() && r.value;
  };
  if (binner.edges().empty()) {
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : records) {
      if (numeric(r)) values[r.item].push_back(parse_number(*r.value, r.item));
    }
    binner = fit_binner(values, bins);
  }
  // Items the binner never saw cannot map to a trained node; drop them.
  std::erase_if(records, [&](const ClinicalRecord& r) { return numeric(r) && !binner.contains(r.item); });
  for (auto& r : records) {
    if (!numeric(r)) continue;
    r.value = std::to_string(binner.categorize(r.item, parse_number(*r.value, r.item)));
  }
}

// ------------------------------------------------------------ synthetic

void SyntheticSpec::validate() const {
  if (patients < 1 || diagnoses < 1 || groups < 1 || max_diagnoses < 1) {
    throw ConfigError("synthetic counts must be >= 1");
  }
  if (groups > diagnoses) throw ConfigError("more groups than diagnoses");
  if (test_patients >= patients) throw ConfigError("test patients must be fewer than patients");
  if (!(p_signal > 0.5 && p_signal <= 1.0)) throw ConfigError("p_signal must lie in (0.5, 1]");
  if (!(background_rate >= 0.0 && background_rate <= 1.0)) throw ConfigError("background rate must lie in [0, 1]");
  if (!indicators.empty() && indicators.size() != diagnoses) {
    throw ConfigError("indicator list must have one entry per diagnosis");
  }
  for (std::size_t i = 0; i < diagnoses; ++i) {
    if (indicator_count(i) < 1) throw ConfigError("every diagnosis needs at least one indicative item");
  }
  if (lab_values < 1) throw ConfigError("lab values must be >= 1");
  if (series_channels > 0 && series_steps < 1) throw ConfigError("series steps must be >= 1");
  if (series_group >= groups) throw ConfigError("series group out of range");
}

std::size_t SyntheticSpec::indicator_count(std::size_t diagnosis) const {
  if (!indicators.empty()) return indicators.at(diagnosis);
  return diagnosis % 2 == 0 ? 1 : 3;
}

std::string synthetic_lab_item(std::size_t diagnosis, std::size_t k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "lab_d%02zu_%zu", diagnosis, k);
  return buf;
}

namespace {

std::string padded(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticData out;

  std::vector<std::string> diag_names;
  std::vector<std::string> group_names;
  std::vector<std::size_t> group_of(spec.diagnoses);
  for (std::size_t g = 0; g < spec.groups; ++g) group_names.push_back(padded("G", g, 2));
  std::vector<std::pair<std::string, std::string>> mapping;
  for (std::size_t d = 0; d < spec.diagnoses; ++d) {
    diag_names.push_back(padded("D", d, 3));
    group_of[d] = d * spec.groups / spec.diagnoses;
    mapping.emplace_back(diag_names[d], group_names[group_of[d]]);
  }
  out.vocab = DiagnosisVocab(mapping);
  for (std::size_t d = 0; d < spec.diagnoses; ++d) {
    auto& items = out.indicative_items[diag_names[d]];
    for (std::size_t k = 0; k < spec.indicator_count(d); ++k) items.push_back(synthetic_lab_item(d, k));
  }

  std::vector<double> weights(spec.diagnoses);
  for (std::size_t d = 0; d < spec.diagnoses; ++d) {
    weights[d] = std::pow(static_cast<double>(d + 1), -spec.frequency_skew);
  }

  std::bernoulli_distribution signal(spec.p_signal);
  std::bernoulli_distribution background(spec.background_rate);
  std::uniform_int_distribution<std::size_t> lab_value(0, spec.lab_values - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto bg_value = [&] { return "v" + std::to_string(lab_value(rng)); };

  for (std::size_t c = 0; c < spec.series_channels; ++c) out.series_channels.push_back("ch" + std::to_string(c));

  const std::size_t train_count = spec.patients - spec.test_patients;
  const int width = static_cast<int>(std::to_string(spec.patients).size());
  for (std::size_t p = 0; p < spec.patients; ++p) {
    const std::string pid = padded("P", p, width);
    out.patients.push_back(pid);

    const std::size_t max_k = std::min(spec.max_diagnoses, spec.diagnoses);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, max_k)(rng);
    std::vector<char> assigned(spec.diagnoses, 0);
    std::vector<double> w = weights;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t d = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
      assigned[d] = 1;
      w[d] = 0.0;
    }
    std::vector<char> group_present(spec.groups, 0);
    for (std::size_t d = 0; d < spec.diagnoses; ++d) {
      if (!assigned[d]) continue;
      group_present[group_of[d]] = 1;
      auto& targets = p < train_count ? out.train_targets : out.test_targets;
      targets.push_back(TargetLink{pid, diag_names[d]});
    }

    auto emit = [&](std::string item, const char* type, std::optional<std::string> value) {
      out.records.push_back(ClinicalRecord{pid, std::move(item), type, std::move(value)});
    };
    for (std::size_t d = 0; d < spec.diagnoses; ++d) {
      for (std::size_t i = 0; i < spec.indicator_count(d); ++i) {
        if (assigned[d]) {
          if (signal(rng)) {
            emit(synthetic_lab_item(d, i), "lab", std::string(kPositiveValue));
          } else {
            emit(synthetic_lab_item(d, i), "lab", bg_value());
          }
        } else if (background(rng)) {
          emit(synthetic_lab_item(d, i), "lab", bg_value());
        }
      }
    }
    if (spec.group_symptoms) {
      for (std::size_t g = 0; g < spec.groups; ++g) {
        const bool present = group_present[g] ? signal(rng) : background(rng);
        if (present) emit("sym_" + group_names[g], "symptom", std::nullopt);
      }
    }
    for (std::size_t j = 0; j < spec.background_labs; ++j) {
      if (background(rng)) emit(padded("lab_bg", j, 2), "lab", bg_value());
    }
    for (std::size_t j = 0; j < spec.background_symptoms; ++j) {
      if (background(rng)) emit(padded("sym_bg", j, 2), "symptom", std::nullopt);
    }
    for (std::size_t j = 0; j < spec.background_prescriptions; ++j) {
      if (background(rng)) emit(padded("rx_bg", j, 2), "prescription", std::nullopt);
    }

    if (spec.series_channels > 0) {
      Series s;
      s.steps = spec.series_steps;
      s.channels = spec.series_channels;
      s.values.resize(s.steps * s.channels);
      const bool drifting = group_present[spec.series_group];
      for (std::size_t t = 0; t < s.steps; ++t) {
        for (std::size_t c = 0; c < s.channels; ++c) {
          double v = spec.series_noise * noise(rng);
          if (c == 0 && drifting) v += spec.series_drift * static_cast<double>(t);
          s.values[t * s.channels + c] = v;
        }
      }
      out.series.emplace(pid, std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------- IO

std::vector<ClinicalRecord> read_records(std::istream& in) {
  std::vector<ClinicalRecord> out;
  for_each_json_line(in, [&](const json& obj) {
    ClinicalRecord r;
    r.patient = required_string(obj, "patient");
    r.item = required_string(obj, "item");
    r.type = required_string(obj, "type");
    auto it = obj.find("value");
    if (it != obj.end() && !it->is_null()) {
      if (!it->is_string()) throw DataError("field \"value\" must be a string or null");
      r.value = it->get<std::string>();
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<ClinicalRecord> read_records(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_records(in);
}

void write_records(std::ostream& out, std::span<const ClinicalRecord> records) {
  for (const auto& r : records) {
    json obj = {{"patient", r.patient}, {"item", r.item}, {"type", r.type}, {"value", nullptr}};
    if (r.value) obj["value"] = *r.value;
    out << obj.dump() << '\n';
  }
}

std::vector<TargetLink> read_targets(std::istream& in) {
  std::vector<TargetLink> out;
  for_each_json_line(in, [&](const json& obj) {
    out.push_back(TargetLink{required_string(obj, "patient"), required_string(obj, "diagnosis")});
  });
  return out;
}

std::vector<TargetLink> read_targets(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_targets(in);
}

void write_targets(std::ostream& out, std::span<const TargetLink> targets) {
  for (const auto& t : targets) out << json{{"patient", t.patient}, {"diagnosis", t.diagnosis}}.dump() << '\n';
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Series read_series_csv(std::istream& in, std::vector<std::string>* channels) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("series file is empty");
  const auto header = split_csv(line);
  if (header.empty()) throw DataError("series header has no channels");
  Series s;
  s.channels = header.size();
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != s.channels) throw DataError("series row width does not match the header");
    for (const auto& c : cells) s.values.push_back(parse_number(c, "series"));
    ++s.steps;
  }
  if (s.steps == 0) throw DataError("series file has no rows");
  if (channels) *channels = header;
  return s;
}

void write_series_csv(std::ostream& out, const Series& series, const std::vector<std::string>& channels) {
  for (std::size_t c = 0; c < channels.size(); ++c) out << (c ? "," : "") << channels[c];
  out << '\n';
  char buf[40];
  for (std::size_t t = 0; t < series.steps; ++t) {
    const auto row = series.step(t);
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

std::map<std::string, Series> read_series_dir(const std::filesystem::path& dir, std::vector<std::string>* channels) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::system_error(std::make_error_code(std::errc::no_such_file_or_directory),
                            "series directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, Series> out;
  std::vector<std::string> first_header;
  for (const auto& f : files) {
    auto in = open_input(f);
    std::vector<std::string> header;
    Series s;
    try {
      s = read_series_csv(in, &header);
    } catch (const DataError& e) {
      throw DataError(f.filename().string() + ": " + e.what());
    }
    if (first_header.empty()) {
      first_header = header;
    } else if (header != first_header) {
      throw DataError(f.filename().string() + ": channel names differ from other series files");
    }
    out.emplace(f.stem().string(), std::move(s));
  }
  if (channels) *channels = first_header;
  return out;
}

void write_series_dir(const std::filesystem::path& dir, const std::map<std::string, Series>& series,
                      const std::vector<std::string>& channels) {
  std::filesystem::create_directories(dir);
  for (const auto& [pid, s] : series) {
    std::ofstream out(dir / (pid + ".csv"));
    if (!out) throw std::system_error(errno, std::generic_category(), "cannot write series for " + pid);
    write_series_csv(out, s, channels);
  }
}

}  // namespace htad
