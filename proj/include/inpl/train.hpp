#pragma once

#include "inpl/dataset.hpp"
#include "inpl/invariance.hpp"
#include "inpl/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace inpl {

enum class ClusterInput { combined, features };  // H[0] or h0

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  Index hidden = 64;
  int depth = 2;
  int env_count = 3;
  double lambda = 1.0;
  double temperature = 0.5;
  bool anneal = false;
  double final_temperature = 0.1;
  int recluster_period = 1;
  int kmeans_iters = 20;
  ClusterInput cluster_input = ClusterInput::combined;
  std::uint64_t seed = 0;
  bool no_ipl_layer = false;
  bool no_variance = false;
  bool random_partition = false;
  /// 0 disables early stopping.
  int patience = 50;
  Architecture model = Architecture::inpl;
  DepthReadout readout = DepthReadout::expected;
  double alpha = 0.1;
  double theta = 0.5;

  /// Throws InputError naming the offending field.
  void validate() const;
  ModelOptions model_options() const;
  double temperature_at(int epoch) const;
};

struct EpochRecord {
  int epoch = 0;
  double objective = 0.0;
  double pooled_loss = 0.0;
  double mean_env_loss = 0.0;
  double variance = 0.0;
  double kl = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double temperature = 0.0;
  int environments = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::string checkpoint;

  bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
  /// Environments used by the last epoch (empty when no partition was used).
  EnvPartition partition;
};

/// Per epoch: forward pass with fresh Gumbel noise, (re)cluster the detached
/// embeddings into environments, variance-penalized objective (pooled loss
/// when the penalty is off), one Adam step on every weight. The best
/// validation checkpoint is restored at the end. Throws InputError for empty
/// train/val masks and NumericalError on a non-finite objective.
TrainResult train(const TrainConfig& config, const Dataset& dataset);
TrainResult train(const TrainConfig& config, const Dataset& dataset, const PreparedGraph& prepared);

struct AdamOptions {
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  long step = 0;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void optimizer_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
                    const AdamOptions& options);

enum class Metric { accuracy, binary_auc };

double accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const Index> mask);

/// Mann-Whitney statistic: probability a random positive outranks a random
/// negative, ties counted as one half (average ranks).
double binary_auc(std::span<const double> scores, std::span<const int> labels, std::span<const Index> mask);

/// Noise-free evaluation on `mask`. Throws InputError for an empty mask or
/// binary_auc with more than two classes.
double evaluate(const ModelParams& params, const PreparedGraph& g, std::span<const Index> mask, Metric metric);

enum class Binning { pattern, label, degree };

Binning parse_binning(const std::string& name);
std::string to_string(Binning b);

struct EnvBin {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
  Index count = 0;
  std::optional<double> accuracy;  // nullopt for empty bins
};

struct EnvReport {
  Binning kind = Binning::pattern;
  std::vector<double> edges;
  std::vector<EnvBin> bins;
  Index evaluated = 0;
};

/// Buckets the test nodes and reports per-bin accuracy.
///  pattern: node homophily bins {=0, (0,.2), [.2,.4), [.4,.6), [.6,.8), [.8,1), =1};
///           degree-0 nodes are excluded.
///  label:   one bin per class.
///  degree:  [e_i, e_{i+1}) with the last bin closed; `edges` empty means
///           quantile edges over the test degrees (`quantile_bins` bins).
EnvReport env_report(const ModelParams& params, const Dataset& dataset, const PreparedGraph& g, Binning binning,
                     std::span<const double> edges = {}, int quantile_bins = 4);

/// Assigns each node to a pattern bin index (0..6) or -1 when undefined.
int pattern_bin(std::optional<double> homophily);

enum class BiasCriterion { degree, pattern };

struct BiasSplit {
  Masks masks;
  Index train_size = 0;
};

/// Keeps only train nodes whose criterion value lies in the range
/// (degree: lo <= d <= hi; pattern: lo <= h < hi, hi >= 1 includes 1,
/// degree-0 nodes excluded). Val and test masks are unchanged. Throws
/// InputError when the filtered train mask is empty.
BiasSplit make_bias_split(const Dataset& dataset, BiasCriterion criterion, double lo, double hi);

/// Value at quantile q of `values` (nearest-rank on the sorted values).
double quantile(std::vector<double> values, double q);

}  // namespace inpl
