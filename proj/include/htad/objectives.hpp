#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "htad/model.hpp"
#include "htad/numerics.hpp"

namespace htad {

// Two-layer MLP over f_{p,d}: a shared layer, then one output row per
// diagnosis group.
struct ClassificationHead {
  ParamId shared_w, shared_b;  // [hidden x F'], [hidden]
  ParamId out_w, out_b;        // [groups x hidden], [groups x 1]
  std::size_t groups = 0;
  Activation activation = Activation::tanh;

  static ClassificationHead create(ParameterStore& store, std::size_t input_width, std::size_t hidden,
                                   std::size_t groups, Rng& rng);
  static ClassificationHead bind(const ParameterStore& store);
};

// x_i = out_row_i . act(shared(f_i)) + out_b_i, one representation per group.
std::vector<Var> classification_forward(GradContext& ctx, std::span<const Var> reps, const ClassificationHead& head);

// Mean binary cross-entropy with the logistic sigmoid (log-sum-exp form).
Var classification_loss(GradContext& ctx, std::span<const Var> logits, std::span<const double> labels);

// max(0, -pos + neg + margin); subgradient zero at the kink.
Var hinge_loss(GradContext& ctx, Var pos_score, Var neg_score, double margin);

// Draws negatives from a fixed support with fixed weights, never returning an
// excluded item.
class NegativeSampler {
 public:
  NegativeSampler(std::vector<std::size_t> support, std::vector<double> weights);
  // Unigram degree distribution raised to `power` (0.75 by default).
  static NegativeSampler from_degrees(std::vector<std::size_t> support, std::span<const double> degrees,
                                      double power = 0.75);
  static NegativeSampler uniform(std::vector<std::size_t> support);

  std::size_t sample(Rng& rng, std::span<const std::size_t> exclude) const;
  std::vector<std::size_t> sample_many(Rng& rng, std::size_t k, std::span<const std::size_t> exclude) const;

  const std::vector<std::size_t>& support() const { return support_; }
  const std::vector<double>& probabilities() const { return probabilities_; }

 private:
  std::vector<std::size_t> support_;
  std::vector<double> probabilities_;
  mutable std::discrete_distribution<std::size_t> dist_;
};

// -[log s(h_i.h_j + b_r) + sum_neg log s(-h_i.h_j' - b_r)] over rows of the
// embedding matrix.
Var unsup_ns_loss(GradContext& ctx, ParamId embeddings, ParamId relation_bias, std::size_t relation,
                  std::size_t i, std::size_t j, std::span<const std::size_t> negatives);

// lambda * sum of squared entries of the given embedding rows.
Var l2_penalty(GradContext& ctx, ParamId embeddings, std::span<const std::size_t> rows, double lambda);

enum class Objective { unsupervised, supervised };

// Unsupervised with probability omega.
Objective joint_step_selector(double omega, Rng& rng);

enum class Task { phenotype, rank };
enum class TrainingMode { pretrain_unsup, joint };

Task parse_task(std::string_view s);
std::string to_string(Task t);
TrainingMode parse_training_mode(std::string_view s);
std::string to_string(TrainingMode m);

struct TrainingConfig {
  double omega = 0.5;
  double lambda = 1e-5;
  double epsilon = 1.0;
  std::size_t negatives = 5;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t pretrain_epochs = 5;
  std::size_t series_pretrain_epochs = 0;
  std::uint64_t seed = 1;
  TrainingMode mode = TrainingMode::joint;
  Task task = Task::phenotype;
  double clip_norm = 5.0;
  std::vector<std::string> metapaths = {"lab<-patient->diagnosis", "diagnosis<-patient->symptom",
                                        "lab<-patient->symptom"};

  void validate() const;
};

}  // namespace htad
