#include "inpl/train.hpp"

#include "inpl/numfmt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace inpl {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw InputError("invalid config: " + what); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (hidden < 1) fail("hidden must be >= 1");
  if (depth < 1) fail("depth must be >= 1");
  if (env_count < 1) fail("env_count must be >= 1");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
  if (!(final_temperature > 0.0)) fail("final_temperature must be > 0");
  if (recluster_period < 1) fail("recluster_period must be >= 1");
  if (kmeans_iters < 1) fail("kmeans_iters must be >= 1");
  if (patience < 0) fail("patience must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(theta >= 0.0)) fail("theta must be >= 0");
}

ModelOptions TrainConfig::model_options() const {
  ModelOptions o;
  o.architecture = model;
  o.no_ipl_layer = no_ipl_layer;
  o.readout = readout;
  o.alpha = alpha;
  o.theta = theta;
  return o;
}

double TrainConfig::temperature_at(int epoch) const {
  if (!anneal || epochs < 2) return temperature;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return temperature + (final_temperature - temperature) * t;
}

void optimizer_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
                    const AdamOptions& options) {
  if (params.size() != grads.size())
    throw ShapeError("optimizer_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  if (state.first.empty()) {
    for (const Matrix* p : params) {
      state.first.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first.size() != params.size()) throw ShapeError("optimizer_step: state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.first[k].rows() != p.rows() ||
        state.first[k].cols() != p.cols())
      throw ShapeError("optimizer_step: gradient " + shape_str(g) + " for parameter " + shape_str(p));
    state.first[k] = options.beta1 * state.first[k] + (1.0 - options.beta1) * g;
    state.second[k] = options.beta2 * state.second[k] + (1.0 - options.beta2) * g.cwiseProduct(g);
    const auto m_hat = state.first[k].array() / c1;
    const auto v_hat = state.second[k].array() / c2;
    p.array() -= options.learning_rate * (m_hat / (v_hat.sqrt() + options.epsilon) + options.weight_decay * p.array());
  }
}

double accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const Index> mask) {
  if (mask.empty()) throw InputError("accuracy: empty mask");
  Index correct = 0;
  for (Index u : mask)
    if (predictions[static_cast<std::size_t>(u)] == labels[static_cast<std::size_t>(u)]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

double binary_auc(std::span<const double> scores, std::span<const int> labels, std::span<const Index> mask) {
  if (mask.empty()) throw InputError("binary_auc: empty mask");
  std::vector<Index> order(mask.begin(), mask.end());
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
  });
  double positive_rank_sum = 0.0;
  Index positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[static_cast<std::size_t>(order[j])] == scores[static_cast<std::size_t>(order[i])]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[static_cast<std::size_t>(order[k])] == 1) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    i = j;
  }
  const Index negatives = static_cast<Index>(order.size()) - positives;
  if (positives == 0 || negatives == 0) throw InputError("binary_auc: mask needs both positive and negative nodes");
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

double evaluate(const ModelParams& params, const PreparedGraph& g, std::span<const Index> mask, Metric metric) {
  if (mask.empty()) throw InputError("evaluate: empty mask");
  if (metric == Metric::binary_auc && g.classes != 2)
    throw InputError("binary_auc requires 2 classes (dataset has " + std::to_string(g.classes) + ")");
  const Prediction pred = predict(params, g);
  if (metric == Metric::accuracy) return accuracy(pred.labels, g.labels, mask);
  std::vector<double> scores(static_cast<std::size_t>(pred.logprobs.rows()));
  for (Index u = 0; u < pred.logprobs.rows(); ++u) scores[u] = std::exp(pred.logprobs(u, 1));
  return binary_auc(scores, g.labels, mask);
}

namespace {

void check_finite(const ForwardPass& pass, const ad::Tensor& objective, int epoch) {
  const std::pair<const char*, ad::Tensor> probes[] = {
      {"h0", pass.embeddings.h0},          {"H0", pass.stack.front()},  {"posterior_logits", pass.posterior_logits},
      {"h_final", pass.h_final},           {"logprobs", pass.logprobs}, {"objective", objective}};
  for (const auto& [name, t] : probes) {
    if (!t.valid()) continue;
    if (const auto bad = find_non_finite(t.value()); bad.found)
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ": first non-finite entry in " + name +
                           " at (" + std::to_string(bad.row) + ", " + std::to_string(bad.col) + ")");
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& dataset) {
  return train(config, dataset, prepare(dataset));
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const PreparedGraph& g) {
  config.validate();
  if (dataset.masks.train.empty()) throw InputError("train mask is empty");
  if (dataset.masks.val.empty()) throw InputError("validation mask is empty");
  const auto& train_mask = dataset.masks.train;
  const auto& val_mask = dataset.masks.val;

  ModelDims dims;
  dims.nodes = dataset.num_nodes();
  dims.input_dim = dataset.features.cols();
  dims.hidden = config.hidden;
  dims.classes = dataset.labels.classes;
  dims.depth = config.depth;

  Rng root(config.seed);
  ModelParams params = init_params(dims, config.model_options(), root.split(1).next_u64());
  Rng noise_rng = root.split(2);
  const std::uint64_t cluster_seed = root.split(3).next_u64();

  const std::vector<double> prior = uniform_prior(config.depth);
  const bool pooled = config.model == Architecture::mlp || config.no_variance || config.lambda == 0.0;
  const double lambda = config.no_variance ? 0.0 : config.lambda;
  const int K = std::min<int>(config.env_count, static_cast<int>(dims.nodes));

  AdamOptions adam;
  adam.learning_rate = config.learning_rate;
  adam.weight_decay = config.weight_decay;
  AdamState state;

  TrainResult result;
  ModelParams best = params;
  double best_val = -1.0;
  int since_best = 0;
  EnvPartition partition;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.temperature = config.temperature_at(epoch);

    ad::Tape tape;
    const BoundParams bound = bind_params(tape, params);
    const auto [noise_rows, noise_cols] = noise_shape(params);
    DepthSampling sampling = DepthSampling::deterministic();
    if (noise_rows > 0) sampling = DepthSampling::gumbel(rec.temperature, gumbel_noise(noise_rows, noise_cols, noise_rng));
    const ForwardPass pass = forward(tape, bound, params, g, sampling);
    const LossTerms pooled_terms = masked_loss(tape, pass, g, train_mask, prior);
    rec.pooled_loss = pooled_terms.total.scalar();
    rec.kl = pooled_terms.kl.scalar();
    check_finite(pass, pooled_terms.total, epoch);

    ad::Tensor objective;
    if (pooled) {
      objective = pooled_terms.total;
      rec.mean_env_loss = rec.pooled_loss;
      rec.environments = 1;
    } else {
      if (epoch % config.recluster_period == 0 || partition.assignment.empty()) {
        const Matrix& points = config.cluster_input == ClusterInput::combined ? pass.stack.front().value()
                                                                              : pass.embeddings.h0.value();
        const std::uint64_t seed = cluster_seed + static_cast<std::uint64_t>(epoch);
        partition = config.random_partition ? random_partition(points, K, seed)
                                            : cluster_environments(points, K, config.kmeans_iters, seed);
      }
      const EnvLossVector env = env_losses(tape, pass, g, partition, train_mask, prior);
      const RexTerms rex = rex_objective(env, lambda);
      objective = rex.total;
      rec.mean_env_loss = rex.mean.scalar();
      rec.variance = rex.variance.scalar();
      rec.environments = static_cast<int>(env.size());
    }
    check_finite(pass, objective, epoch);
    rec.objective = objective.scalar();

    tape.backward(objective);
    std::vector<Matrix> grads;
    for (const auto& leaf : bound.leaves()) grads.push_back(tape.grad(leaf));
    const auto slots = params.trainable();
    optimizer_step(slots, grads, state, adam);

    const Prediction pred = predict(params, g);
    rec.train_accuracy = accuracy(pred.labels, g.labels, train_mask);
    rec.val_accuracy = accuracy(pred.labels, g.labels, val_mask);
    result.history.records.push_back(rec);

    if (rec.val_accuracy > best_val) {
      best_val = rec.val_accuracy;
      best = params;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  result.history.best_val_accuracy = best_val;
  result.params = std::move(best);
  result.partition = std::move(partition);
  return result;
}

// ---------------------------------------------------------------------------
// Environment reports and biased splits

Binning parse_binning(const std::string& name) {
  if (name == "pattern") return Binning::pattern;
  if (name == "label") return Binning::label;
  if (name == "degree") return Binning::degree;
  throw InputError("unknown binning kind '" + name + "' (expected pattern, label or degree)");
}

std::string to_string(Binning b) {
  switch (b) {
    case Binning::pattern: return "pattern";
    case Binning::label: return "label";
    case Binning::degree: return "degree";
  }
  return "pattern";
}

int pattern_bin(std::optional<double> h) {
  if (!h) return -1;
  if (*h <= 0.0) return 0;
  if (*h >= 1.0) return 6;
  return 1 + std::min(4, static_cast<int>(std::floor(*h * 5.0)));
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InputError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  return values[static_cast<std::size_t>(std::llround(pos))];
}

EnvReport env_report(const ModelParams& params, const Dataset& dataset, const PreparedGraph& g, Binning binning,
                     std::span<const double> edges, int quantile_bins) {
  const auto& test = dataset.masks.test;
  if (test.empty()) throw InputError("env_report: test mask is empty");
  const Prediction pred = predict(params, g);
  EnvReport report;
  report.kind = binning;

  std::vector<int> bin_of(test.size(), -1);
  if (binning == Binning::pattern) {
    const auto hom = node_homophily(dataset.graph, dataset.labels);
    static const char* names[] = {"=0", "(0,0.2)", "[0.2,0.4)", "[0.4,0.6)", "[0.6,0.8)", "[0.8,1)", "=1"};
    static const double lower[] = {0.0, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    static const double upper[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0};
    report.edges = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    for (int b = 0; b < 7; ++b) report.bins.push_back({names[b], lower[b], upper[b], 0, std::nullopt});
    for (std::size_t i = 0; i < test.size(); ++i) bin_of[i] = pattern_bin(hom[static_cast<std::size_t>(test[i])]);
  } else if (binning == Binning::label) {
    for (int c = 0; c < dataset.labels.classes; ++c) {
      report.edges.push_back(c);
      report.bins.push_back({"class " + std::to_string(c), double(c), double(c), 0, std::nullopt});
    }
    for (std::size_t i = 0; i < test.size(); ++i) bin_of[i] = dataset.labels[test[i]];
  } else {
    std::vector<double> cuts(edges.begin(), edges.end());
    if (cuts.empty()) {
      if (quantile_bins < 1) throw InputError("env_report: quantile bin count must be >= 1");
      std::vector<double> test_degrees;
      for (Index u : test) test_degrees.push_back(static_cast<double>(dataset.graph.degree(u)));
      for (int b = 0; b <= quantile_bins; ++b)
        cuts.push_back(quantile(test_degrees, static_cast<double>(b) / quantile_bins));
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
      if (cuts.size() == 1) cuts.push_back(cuts.front());
    }
    if (cuts.size() < 2) throw InputError("env_report: degree binning needs at least two edges");
    for (std::size_t i = 1; i < cuts.size(); ++i)
      if (cuts[i] < cuts[i - 1]) throw InputError("env_report: degree edges must be ascending");
    report.edges = cuts;
    for (std::size_t b = 0; b + 1 < cuts.size(); ++b) {
      const bool last = b + 2 == cuts.size();
      const std::string name = "[" + format_double(cuts[b]) + "," + format_double(cuts[b + 1]) + (last ? "]" : ")");
      report.bins.push_back({name, cuts[b], cuts[b + 1], 0, std::nullopt});
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      const double d = static_cast<double>(dataset.graph.degree(test[i]));
      for (std::size_t b = 0; b + 1 < cuts.size(); ++b) {
        const bool last = b + 2 == cuts.size();
        if (d >= cuts[b] && (d < cuts[b + 1] || (last && d <= cuts[b + 1]))) {
          bin_of[i] = static_cast<int>(b);
          break;
        }
      }
    }
  }

  std::vector<Index> correct(report.bins.size(), 0);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (bin_of[i] < 0) continue;
    auto b = static_cast<std::size_t>(bin_of[i]);
    ++report.bins[b].count;
    ++report.evaluated;
    const auto u = static_cast<std::size_t>(test[i]);
    if (pred.labels[u] == g.labels[u]) ++correct[b];
  }
  for (std::size_t b = 0; b < report.bins.size(); ++b)
    if (report.bins[b].count > 0)
      report.bins[b].accuracy = static_cast<double>(correct[b]) / static_cast<double>(report.bins[b].count);
  return report;
}

BiasSplit make_bias_split(const Dataset& dataset, BiasCriterion criterion, double lo, double hi) {
  if (hi < lo) throw InputError("bias split: empty range [" + format_double(lo) + ", " + format_double(hi) + "]");
  BiasSplit split;
  split.masks = dataset.masks;
  split.masks.train.clear();
  std::vector<std::optional<double>> hom;
  if (criterion == BiasCriterion::pattern) hom = node_homophily(dataset.graph, dataset.labels);
  for (Index u : dataset.masks.train) {
    bool keep = false;
    if (criterion == BiasCriterion::degree) {
      const double d = static_cast<double>(dataset.graph.degree(u));
      keep = d >= lo && d <= hi;
    } else if (const auto h = hom[static_cast<std::size_t>(u)]) {
      keep = *h >= lo && (*h < hi || (hi >= 1.0 && *h <= hi));
    }
    if (keep) split.masks.train.push_back(u);
  }
  if (split.masks.train.empty()) {
    const std::string range = criterion == BiasCriterion::degree
                                  ? "degree range [" + format_double(lo) + ", " + format_double(hi) + "]"
                                  : "pattern range [" + format_double(lo) + ", " + format_double(hi) + ")";
    throw InputError("bias split: no train nodes in " + range);
  }
  split.train_size = static_cast<Index>(split.masks.train.size());
  return split;
}

}  // namespace inpl
