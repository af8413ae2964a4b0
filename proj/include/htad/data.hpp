#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "htad/hin.hpp"
#include "htad/model.hpp"

namespace htad {

// Diagnosis ids with their grouping; group ids are dense and follow the
// sorted group names.
class DiagnosisVocab {
 public:
  DiagnosisVocab() = default;
  // Throws DataError if a diagnosis is mapped more than once.
  explicit DiagnosisVocab(std::span<const std::pair<std::string, std::string>> mapping);

  const std::vector<std::string>& diagnoses() const { return diagnoses_; }
  const std::vector<std::string>& groups() const { return groups_; }
  std::size_t group_count() const { return groups_.size(); }
  bool contains(const std::string& diagnosis) const { return group_of_.contains(diagnosis); }
  // Throws DataError for a diagnosis with no group.
  std::size_t group(const std::string& diagnosis) const;
  std::size_t diagnosis_index(const std::string& diagnosis) const;

 private:
  std::vector<std::string> diagnoses_;
  std::vector<std::string> groups_;
  std::map<std::string, std::size_t> group_of_;
  std::map<std::string, std::size_t> index_of_;
};

DiagnosisVocab load_grouping(std::istream& in);
DiagnosisVocab load_grouping(const std::filesystem::path& path);
void write_grouping(std::ostream& out, const DiagnosisVocab& vocab);

// Per-item quantile cut points. Value v falls in bin = number of edges <= v,
// so bins cover the whole real line.
class ValueBinner {
 public:
  ValueBinner() = default;
  explicit ValueBinner(std::map<std::string, std::vector<double>> edges) : edges_(std::move(edges)) {}

  std::size_t categorize(const std::string& item, double raw) const;
  std::size_t bin_count(const std::string& item) const;
  bool contains(const std::string& item) const { return edges_.contains(item); }
  const std::map<std::string, std::vector<double>>& edges() const { return edges_; }

 private:
  std::map<std::string, std::vector<double>> edges_;
};

// B-quantile binning: for n sorted values the candidate edges are
// sorted[floor(k n / B)], k = 1..B-1, deduplicated and kept only if above the
// minimum. Throws DataError for an item with no observations.
ValueBinner fit_binner(const std::map<std::string, std::vector<double>>& values, std::size_t bins);
std::size_t categorize(const ValueBinner& binner, const std::string& item, double raw);

// Replaces raw numeric values of the given record types by their bin index,
// fitting the binner on those records when `binner` is empty. Numeric
// records whose item the binner does not know are removed.
void categorize_records(std::vector<ClinicalRecord>& records, const std::vector<std::string>& numeric_types,
                        std::size_t bins, ValueBinner& binner);

struct SyntheticSpec {
  std::size_t patients = 1200;
  std::size_t test_patients = 200;
  std::size_t diagnoses = 10;
  std::size_t groups = 4;
  std::size_t max_diagnoses = 3;  // each patient gets 1..max_diagnoses
  double p_signal = 0.9;
  double background_rate = 0.3;
  // Indicative lab items per diagnosis; empty means 1 for even-indexed
  // diagnoses and 3 for odd-indexed ones.
  std::vector<std::size_t> indicators;
  bool group_symptoms = true;  // one shared indicative symptom per group
  std::size_t background_labs = 30;
  std::size_t background_symptoms = 15;
  std::size_t background_prescriptions = 15;
  std::size_t lab_values = 4;  // background value categories per lab
  double frequency_skew = 0.0;  // diagnosis weight (i + 1)^-skew
  std::size_t series_steps = 8;
  std::size_t series_channels = 3;
  double series_noise = 0.5;
  double series_drift = 0.5;
  std::size_t series_group = 0;
  std::uint64_t seed = 7;

  void validate() const;
  std::size_t indicator_count(std::size_t diagnosis) const;
};

struct SyntheticData {
  std::vector<std::string> patients;
  std::vector<ClinicalRecord> records;
  std::map<std::string, Series> series;
  std::vector<std::string> series_channels;
  std::vector<TargetLink> train_targets;
  std::vector<TargetLink> test_targets;
  DiagnosisVocab vocab;
  // Indicative (type, item) pairs per diagnosis; the indicative node carries
  // the value kPositiveValue.
  std::map<std::string, std::vector<std::string>> indicative_items;
};

inline constexpr std::string_view kPositiveValue = "pos";

SyntheticData generate_synthetic(const SyntheticSpec& spec);
std::string synthetic_lab_item(std::size_t diagnosis, std::size_t k);

// ---------------------------------------------------------------- IO

std::vector<ClinicalRecord> read_records(std::istream& in);
std::vector<ClinicalRecord> read_records(const std::filesystem::path& path);
void write_records(std::ostream& out, std::span<const ClinicalRecord> records);

std::vector<TargetLink> read_targets(std::istream& in);
std::vector<TargetLink> read_targets(const std::filesystem::path& path);
void write_targets(std::ostream& out, std::span<const TargetLink> targets);

// One CSV per patient named <patient>.csv: a header of channel names, then
// one row per tick.
Series read_series_csv(std::istream& in, std::vector<std::string>* channels);
void write_series_csv(std::ostream& out, const Series& series, const std::vector<std::string>& channels);
std::map<std::string, Series> read_series_dir(const std::filesystem::path& dir, std::vector<std::string>* channels);
void write_series_dir(const std::filesystem::path& dir, const std::map<std::string, Series>& series,
                      const std::vector<std::string>& channels);

}  // namespace htad
