#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "htad/model.hpp"
#include "htad/numerics.hpp"

namespace htad {

enum class AucMode { micro, macro, weighted };

// Area under the ROC curve from pairwise comparisons, tied pairs getting half
// credit. Throws DataError when a group (or the pooled set in micro mode)
// lacks a positive or a negative.
double auc_roc(std::span<const std::vector<double>> scores, std::span<const std::vector<int>> labels, AucMode mode);
double auc_binary(std::span<const double> scores, std::span<const int> labels);

// The positives plus uniformly drawn distinct negatives from the vocabulary,
// shuffled, `size` items in total.
std::vector<std::string> build_ranking_candidates(std::span<const std::string> positives,
                                                  std::span<const std::string> vocabulary, Rng& rng,
                                                  std::size_t size = 100);

// Relevance flags ordered by descending score; ties keep candidate order.
std::vector<bool> rank_by_score(std::span<const double> scores, const std::vector<bool>& relevant);

// AP@K = sum over relevant ranks i <= K of precision@i, over min(K, #relevant).
double average_precision_at_k(const std::vector<bool>& ranked, std::size_t k);
double map_at_k(std::span<const std::vector<bool>> ranked_lists, std::size_t k);

double attention_entropy(std::span<const double> weights);

// Five-number summary with linear interpolation between order statistics.
struct Quantiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
Quantiles quantiles(std::vector<double> values);

// Per-diagnosis top nodes by mean alpha, per-type beta quantiles, and alpha
// entropy per (patient, diagnosis, type).
nlohmann::json attention_report(std::span<const AttentionTrace> traces, std::size_t top_nodes = 10);

nlohmann::json trace_to_json(const AttentionTrace& trace);

}  // namespace htad
