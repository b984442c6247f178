#pragma once

#include "inpl/autodiff.hpp"
#include "inpl/core.hpp"
#include "inpl/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace inpl {

struct EnvPartition {
  std::vector<int> assignment;  // per node, in [0, K)
  Matrix centroids;             // K x d
  int K = 0;
  /// Mean squared distance of each point to its assigned centroid.
  double objective = 0.0;
  /// Objective after each completed Lloyd iteration (non-increasing).
  std::vector<double> objective_trace;
  int iterations = 0;
};

/// Mean squared distance from each row of `points` to the centroid its
/// environment is assigned to.
double partition_objective(const Eigen::Ref<const Matrix>& points, const EnvPartition& partition);

/// k-means++ seeding followed by Lloyd iterations until the assignment is
/// stable or `max_iters` is reached. Empty clusters are refilled with the
/// point farthest from its centroid. Throws InputError unless 1 <= K <= n.
EnvPartition cluster_environments(const Eigen::Ref<const Matrix>& points, int K, int max_iters, std::uint64_t seed);

/// Seeded uniform assignment into K groups (the no-clustering ablation).
EnvPartition random_partition(const Eigen::Ref<const Matrix>& points, int K, std::uint64_t seed);

struct EnvLossVector {
  std::vector<ad::Tensor> losses;
  std::vector<int> env_ids;
  std::vector<Index> node_counts;

  std::size_t size() const { return losses.size(); }
};

/// Per-environment loss over (environment e) ∩ train_mask on one shared
/// forward pass. Environments without train nodes are omitted. Throws
/// InputError when no environment contains a train node.
EnvLossVector env_losses(ad::Tape& tape, const ForwardPass& pass, const PreparedGraph& g,
                         const EnvPartition& partition, std::span<const Index> train_mask,
                         std::span<const double> prior);

/// Runs the forward pass (noise from `rng`) and calls the overload above.
EnvLossVector env_losses(ad::Tape& tape, const BoundParams& p, const ModelParams& layout, const PreparedGraph& g,
                         const EnvPartition& partition, std::span<const Index> train_mask, double temperature,
                         std::span<const double> prior, Rng& rng);

struct RexTerms {
  ad::Tensor total;
  ad::Tensor mean;
  ad::Tensor variance;  // population variance
};

/// mean(L^e) + lambda * Var(L^e). Throws InputError for lambda < 0 or an
/// empty loss vector.
RexTerms rex_objective(std::span<const ad::Tensor> losses, double lambda);
inline RexTerms rex_objective(const EnvLossVector& losses, double lambda) { return rex_objective(losses.losses, lambda); }

/// One environment id per line.
void write_partition(const EnvPartition& partition, const std::filesystem::path& path);

}  // namespace inpl
