#include "inpl/invariance.hpp"

#include <fstream>
#include <limits>
#include <string>

namespace inpl {

namespace {

Matrix centroid_means(const Eigen::Ref<const Matrix>& points, const std::vector<int>& assignment, int K,
                      const Matrix& previous) {
  Matrix sums = Matrix::Zero(K, points.cols());
  std::vector<Index> counts(static_cast<std::size_t>(K), 0);
  for (Index i = 0; i < points.rows(); ++i) {
    sums.row(assignment[i]) += points.row(i);
    ++counts[static_cast<std::size_t>(assignment[i])];
  }
  for (int k = 0; k < K; ++k) {
    if (counts[static_cast<std::size_t>(k)] > 0)
      sums.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    else
      sums.row(k) = previous.row(k);
  }
  return sums;
}

int nearest(const Matrix& centroids, const Eigen::Ref<const Matrix>& points, Index i, double* best_dist) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < centroids.rows(); ++k) {
    const double dist = (points.row(i) - centroids.row(k)).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(k);
    }
  }
  if (best_dist) *best_dist = best_d;
  return best;
}

void check_k(Index n, int K) {
  if (K < 1) throw InputError("environment count must be >= 1 (got " + std::to_string(K) + ")");
  if (K > n)
    throw InputError("environment count " + std::to_string(K) + " exceeds point count " + std::to_string(n));
}

}  // namespace

double partition_objective(const Eigen::Ref<const Matrix>& points, const EnvPartition& partition) {
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i) total += (points.row(i) - partition.centroids.row(partition.assignment[i])).squaredNorm();
  return total / static_cast<double>(points.rows());
}

EnvPartition cluster_environments(const Eigen::Ref<const Matrix>& points, int K, int max_iters, std::uint64_t seed) {
  const Index n = points.rows();
  check_k(n, K);
  Rng rng(seed);

  // k-means++ seeding.
  Matrix centroids(K, points.cols());
  centroids.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int k = 1; k < K; ++k) {
    double total = 0.0;
    for (double v : d2) total += v;
    Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centroids.row(k) = points.row(pick);
    for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points.row(i) - centroids.row(k)).squaredNorm());
  }

  EnvPartition part;
  part.K = K;
  part.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int iter = 0; iter < std::max(max_iters, 1); ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const int k = nearest(centroids, points, i, &dist[i]);
      if (k != part.assignment[i]) {
        part.assignment[i] = k;
        changed = true;
      }
    }
    std::vector<Index> counts(static_cast<std::size_t>(K), 0);
    for (int a : part.assignment) ++counts[static_cast<std::size_t>(a)];
    for (int k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) continue;
      // Refill from the farthest point of a cluster that can spare one.
      Index far = -1;
      for (Index i = 0; i < n; ++i)
        if (counts[static_cast<std::size_t>(part.assignment[i])] > 1 && (far < 0 || dist[i] > dist[far])) far = i;
      --counts[static_cast<std::size_t>(part.assignment[far])];
      part.assignment[far] = k;
      dist[far] = 0.0;
      counts[static_cast<std::size_t>(k)] = 1;
      centroids.row(k) = points.row(far);
      changed = true;
    }
    centroids = centroid_means(points, part.assignment, K, centroids);
    part.centroids = centroids;
    part.objective_trace.push_back(partition_objective(points, part));
    part.iterations = iter + 1;
    if (!changed) break;
  }
  part.centroids = centroids;
  part.objective = part.objective_trace.back();
  return part;
}

EnvPartition random_partition(const Eigen::Ref<const Matrix>& points, int K, std::uint64_t seed) {
  const Index n = points.rows();
  check_k(n, K);
  Rng rng(seed);
  EnvPartition part;
  part.K = K;
  part.assignment.resize(static_cast<std::size_t>(n));
  for (auto& a : part.assignment) a = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
  part.centroids = centroid_means(points, part.assignment, K, Matrix::Zero(K, points.cols()));
  part.objective = partition_objective(points, part);
  part.objective_trace = {part.objective};
  return part;
}

EnvLossVector env_losses(ad::Tape& tape, const ForwardPass& pass, const PreparedGraph& g,
                         const EnvPartition& partition, std::span<const Index> train_mask,
                         std::span<const double> prior) {
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(partition.K));
  for (Index u : train_mask) {
    if (u < 0 || static_cast<std::size_t>(u) >= partition.assignment.size())
      throw InputError("train node " + std::to_string(u) + " has no environment assignment");
    members[static_cast<std::size_t>(partition.assignment[u])].push_back(u);
  }
  EnvLossVector out;
  for (int e = 0; e < partition.K; ++e) {
    const auto& nodes = members[static_cast<std::size_t>(e)];
    if (nodes.empty()) continue;
    out.losses.push_back(masked_loss(tape, pass, g, nodes, prior).total);
    out.env_ids.push_back(e);
    out.node_counts.push_back(static_cast<Index>(nodes.size()));
  }
  if (out.losses.empty()) throw InputError("no environment contains a training node");
  return out;
}

EnvLossVector env_losses(ad::Tape& tape, const BoundParams& p, const ModelParams& layout, const PreparedGraph& g,
                         const EnvPartition& partition, std::span<const Index> train_mask, double temperature,
                         std::span<const double> prior, Rng& rng) {
  if (!(temperature > 0.0)) throw InputError("Gumbel-Softmax temperature must be > 0");
  const auto [rows, cols] = noise_shape(layout);
  DepthSampling sampling = DepthSampling::deterministic();
  if (rows > 0) sampling = DepthSampling::gumbel(temperature, gumbel_noise(rows, cols, rng));
  const ForwardPass pass = forward(tape, p, layout, g, sampling);
  return env_losses(tape, pass, g, partition, train_mask, prior);
}

RexTerms rex_objective(std::span<const ad::Tensor> losses, double lambda) {
  if (!(lambda >= 0.0)) throw InputError("variance penalty weight must be >= 0");
  if (losses.empty()) throw InputError("rex_objective: no environment losses");
  const double inv = 1.0 / static_cast<double>(losses.size());
  ad::Tensor total = losses[0];
  for (std::size_t e = 1; e < losses.size(); ++e) total = ad::add(total, losses[e]);
  const ad::Tensor mean = ad::scale(total, inv);
  ad::Tensor squares;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    const ad::Tensor dev = ad::sub(losses[e], mean);
    const ad::Tensor sq = ad::hadamard(dev, dev);
    squares = e == 0 ? sq : ad::add(squares, sq);
  }
  const ad::Tensor variance = ad::scale(squares, inv);
  return {ad::add_scaled(mean, variance, 1.0, lambda), mean, variance};
}

void write_partition(const EnvPartition& partition, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write partition file " + path.string());
  for (int a : partition.assignment) out << a << '\n';
  if (!out) throw IoError("write failed for partition file " + path.string());
}

}  // namespace inpl
