#include "htad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace htad {

using nlohmann::json;

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("score/label length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Mann-Whitney U with average ranks for ties.
  double pos = 0, neg = 0, rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw DataError("AUC labels must be 0 or 1");
      if (y == 1) {
        pos += 1;
        rank_sum += avg_rank;
      } else {
        neg += 1;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw DataError("AUC needs at least one positive and one negative");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double auc_roc(std::span<const std::vector<double>> scores, std::span<const std::vector<int>> labels, AucMode mode) {
  if (scores.size() != labels.size() || scores.empty()) throw DataError("AUC needs matching non-empty groups");
  if (mode == AucMode::micro) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t g = 0; g < scores.size(); ++g) {
      if (scores[g].size() != labels[g].size()) throw DataError("score/label length mismatch");
      s.insert(s.end(), scores[g].begin(), scores[g].end());
      y.insert(y.end(), labels[g].begin(), labels[g].end());
    }
    return auc_binary(s, y);
  }
  double total = 0, weight_sum = 0;
  for (std::size_t g = 0; g < scores.size(); ++g) {
    const double a = auc_binary(scores[g], labels[g]);
    const double w = mode == AucMode::macro ? 1.0 : static_cast<double>(std::count(labels[g].begin(), labels[g].end(), 1));
    total += w * a;
    weight_sum += w;
  }
  return total / weight_sum;
}

std::vector<std::string> build_ranking_candidates(std::span<const std::string> positives,
                                                  std::span<const std::string> vocabulary, Rng& rng,
                                                  std::size_t size) {
  if (vocabulary.size() < size) throw DataError("vocabulary smaller than the candidate list size");
  const std::set<std::string> pos(positives.begin(), positives.end());
  if (pos.size() >= size) throw DataError("too many positives for the candidate list size");
  std::vector<std::string> negatives;
  for (const auto& v : vocabulary) {
    if (!pos.contains(v)) negatives.push_back(v);
  }
  std::sort(negatives.begin(), negatives.end());
  negatives.erase(std::unique(negatives.begin(), negatives.end()), negatives.end());
  const std::size_t need = size - pos.size();
  if (negatives.size() < need) throw DataError("not enough distinct negatives in the vocabulary");
  // Partial Fisher-Yates: the first `need` slots become a uniform sample.
  for (std::size_t i = 0; i < need; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, negatives.size() - 1)(rng);
    std::swap(negatives[i], negatives[j]);
  }
  std::vector<std::string> out(pos.begin(), pos.end());
  out.insert(out.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(need));
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<bool> rank_by_score(std::span<const double> scores, const std::vector<bool>& relevant) {
  if (scores.size() != relevant.size()) throw DataError("score/relevance length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(relevant[i]);
  return out;
}

double average_precision_at_k(const std::vector<bool>& ranked, std::size_t k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (ranked.empty()) throw DataError("empty ranked list");
  const auto positives = static_cast<std::size_t>(std::count(ranked.begin(), ranked.end(), true));
  if (positives == 0) return 0.0;
  double hits = 0, sum = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    if (!ranked[i]) continue;
    hits += 1;
    sum += hits / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(k, positives));
}

double map_at_k(std::span<const std::vector<bool>> ranked_lists, std::size_t k) {
  if (ranked_lists.empty()) throw DataError("no ranked lists");
  double total = 0;
  for (const auto& l : ranked_lists) total += average_precision_at_k(l, k);
  return total / static_cast<double>(ranked_lists.size());
}

double attention_entropy(std::span<const double> weights) {
  double h = 0;
  for (double w : weights) {
    if (w > 0) h -= w * std::log(w);
  }
  return h;
}

Quantiles quantiles(std::vector<double> values) {
  if (values.empty()) throw DataError("quantiles of an empty set");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return Quantiles{values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

json trace_to_json(const AttentionTrace& trace) {
  json alpha = json::object();
  for (const auto& [type, weights] : trace.alpha) alpha[type] = weights;
  return json{{"patient", trace.patient}, {"diagnosis", trace.diagnosis}, {"beta", trace.beta}, {"alpha", alpha}};
}

json attention_report(std::span<const AttentionTrace> traces, std::size_t top_nodes) {
  // diagnosis -> node -> (sum of alpha, count)
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> node_weight;
  std::map<std::string, std::vector<double>> betas;
  json entropies = json::array();
  for (const auto& t : traces) {
    auto& per_diag = node_weight[t.diagnosis];
    json ent = json::object();
    for (const auto& [type, weights] : t.alpha) {
      std::vector<double> w;
      w.reserve(weights.size());
      for (const auto& [node, a] : weights) {
        auto& acc = per_diag[node];
        acc.first += a;
        acc.second += 1;
        w.push_back(a);
      }
      ent[type] = attention_entropy(w);
    }
    for (const auto& [type, b] : t.beta) betas[type].push_back(b);
    entropies.push_back(json{{"patient", t.patient}, {"diagnosis", t.diagnosis}, {"entropy", ent}});
  }

  json top = json::object();
  for (const auto& [diag, nodes] : node_weight) {
    std::vector<std::pair<std::string, double>> ranked;
    for (const auto& [node, acc] : nodes) ranked.emplace_back(node, acc.first / static_cast<double>(acc.second));
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > top_nodes) ranked.resize(top_nodes);
    json list = json::array();
    for (const auto& [node, w] : ranked) list.push_back(json{{"node", node}, {"mean_alpha", w}});
    top[diag] = list;
  }

  json beta_q = json::object();
  for (const auto& [type, values] : betas) {
    const Quantiles q = quantiles(values);
    beta_q[type] = json{{"min", q.min}, {"q1", q.q1}, {"median", q.median}, {"q3", q.q3}, {"max", q.max}};
  }
  return json{{"top_nodes", top}, {"beta_quantiles", beta_q}, {"alpha_entropy", entropies}};
}

}  // namespace htad
