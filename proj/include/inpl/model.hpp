#pragma once

#include "inpl/autodiff.hpp"
#include "inpl/core.hpp"
#include "inpl/dataset.hpp"
#include "inpl/graph.hpp"
#include "inpl/random.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace inpl {

enum class Architecture { inpl, mlp };
enum class Activation { relu, identity };
/// How depth weights are formed when no Gumbel noise is drawn.
enum class DepthReadout { expected, argmax };

struct ModelDims {
  Index nodes = 0;
  Index input_dim = 0;
  Index hidden = 64;
  Index classes = 2;
  int depth = 2;

  bool operator==(const ModelDims&) const = default;
};

struct ModelOptions {
  Architecture architecture = Architecture::inpl;
  Activation activation = Activation::relu;
  /// H[L] skips the activation so the classifier sees a linear layer.
  bool linear_last_layer = true;
  /// Ablation: classify H[0] directly, no layer stack and no depth posterior.
  bool no_ipl_layer = false;
  DepthReadout readout = DepthReadout::expected;
  double alpha = 0.1;
  /// beta_l = ln(theta / l + 1) for l = 1..L.
  double theta = 0.5;

  bool operator==(const ModelOptions&) const = default;
};

/// Trainable weights plus the fixed per-layer mixing scalars. Matrices a
/// configuration does not use are left empty (0x0) and skipped by visit().
struct ModelParams {
  ModelDims dims;
  ModelOptions options;

  Matrix feat_embed;                 // input_dim x hidden
  std::array<Matrix, 2> adj_embed;   // nodes x hidden, hop 1 and hop 2
  Matrix mix;                        // 3 hidden x hidden
  std::vector<Matrix> layer_weights; // depth x (hidden x hidden)
  Matrix classifier;                 // hidden x classes
  Matrix posterior_hidden;           // 3 hidden x hidden
  Matrix posterior_hidden_bias;      // 1 x hidden
  Matrix posterior_out;              // hidden x (depth + 1)
  Matrix posterior_out_bias;         // 1 x (depth + 1)

  std::vector<double> alpha;
  std::vector<double> beta;

  /// Calls f(name, matrix) for every non-empty matrix in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::vector<Matrix*> trainable();
  std::vector<Matrix> values() const;
  std::vector<std::string> names() const;

  bool operator==(const ModelParams&) const = default;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto call = [&](const std::string& name, auto& m) {
      if (m.size() > 0) f(name, m);
    };
    call("feat_embed", self.feat_embed);
    call("adj_embed_1", self.adj_embed[0]);
    call("adj_embed_2", self.adj_embed[1]);
    call("mix", self.mix);
    for (std::size_t l = 0; l < self.layer_weights.size(); ++l)
      call("layer_weight_" + std::to_string(l + 1), self.layer_weights[l]);
    call("classifier", self.classifier);
    call("posterior_hidden", self.posterior_hidden);
    call("posterior_hidden_bias", self.posterior_hidden_bias);
    call("posterior_out", self.posterior_out);
    call("posterior_out_bias", self.posterior_out_bias);
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, fan_in = rows of the
/// weight matrix (biases use their layer's fan-in). Deterministic per seed.
ModelParams init_params(const ModelDims& dims, const ModelOptions& options, std::uint64_t seed);

/// Exact 1-hop and 2-hop adjacencies plus node data, computed once per dataset.
struct PreparedGraph {
  Graph hop1;
  Graph hop2;
  Matrix features;
  std::vector<int> labels;
  int classes = 2;
};

PreparedGraph prepare(const Dataset& dataset);

/// Tape leaves mirroring ModelParams.
struct BoundParams {
  ad::Tensor feat_embed;
  std::array<ad::Tensor, 2> adj_embed;
  ad::Tensor mix;
  std::vector<ad::Tensor> layer_weights;
  ad::Tensor classifier;
  ad::Tensor posterior_hidden;
  ad::Tensor posterior_hidden_bias;
  ad::Tensor posterior_out;
  ad::Tensor posterior_out_bias;

  /// Leaves in visit() order.
  std::vector<ad::Tensor> leaves() const;
};

/// Registers every matrix as a parameter leaf.
BoundParams bind_params(ad::Tape& tape, const ModelParams& params);
/// Wraps already-recorded leaves given in visit() order.
BoundParams bind_params(const ModelParams& layout, std::span<const ad::Tensor> leaves);
/// Registers every matrix as a constant (inference, no gradient).
BoundParams bind_constants(ad::Tape& tape, const ModelParams& params);

struct Embeddings {
  ad::Tensor h0;  // features
  ad::Tensor h1;  // 1-hop adjacency rows
  ad::Tensor h2;  // 2-hop adjacency rows
};

/// h0 = act(X W_x); h_k = act(A_k W_adj[k]).
Embeddings embed_inputs(ad::Tape& tape, const BoundParams& p, const ModelOptions& options, const PreparedGraph& g);

/// H[0] = act(concat(h0, h1, h2) W_e + h0 + h1 + h2);
/// H[l+1] = act(((1 - a_l) H[l] + a_l H[0]) ((1 - b_l) I + b_l W_l)).
std::vector<ad::Tensor> ipl_forward(const BoundParams& p, const ModelParams& layout, const Embeddings& e);

/// Logits over depths 0..L from a one-hidden-layer relu network.
ad::Tensor propagation_posterior(const BoundParams& p, const Embeddings& e);

/// Standard Gumbel(0, 1) draws.
Matrix gumbel_noise(Index rows, Index cols, Rng& rng);

/// softmax((log softmax(logits) + noise) / temperature), row-wise. The
/// noise is a constant on the tape. Throws InputError unless temperature > 0.
ad::Tensor gumbel_softmax(const ad::Tensor& logits, double temperature, const Matrix& noise);

/// Value-only version drawing fresh noise.
Matrix gumbel_softmax(const Matrix& logits, double temperature, Rng& rng);

/// Per-node convex combination sum_k w(u, k) H[k](u, :).
ad::Tensor adaptive_combine(std::span<const ad::Tensor> stack, const ad::Tensor& weights);

struct Classification {
  ad::Tensor logprobs;
  std::vector<int> predictions;
};

/// Row argmax with ties resolved to the lowest index.
std::vector<int> argmax_rows(const Matrix& scores);

Classification classify(const ad::Tensor& h_final, const ad::Tensor& classifier);

/// Mean over rows of KL(softmax(q_logits) || prior). Throws InputError
/// for a prior entry <= 0 and ShapeError for a length mismatch.
ad::Tensor kl_categorical(const ad::Tensor& q_logits, std::span<const double> prior);

std::vector<double> uniform_prior(int depth);

/// Depth weights for one forward pass: Gumbel-Softmax with the given noise,
/// or the noise-free readout of the posterior.
struct DepthSampling {
  double temperature = 0.5;
  std::optional<Matrix> noise;

  static DepthSampling gumbel(double temperature, Matrix noise) { return {temperature, std::move(noise)}; }
  static DepthSampling deterministic() { return {}; }
};

struct ForwardPass {
  Embeddings embeddings;
  std::vector<ad::Tensor> stack;
  ad::Tensor posterior_logits;  // invalid when there is no depth posterior
  ad::Tensor depth_weights;
  ad::Tensor h_final;
  ad::Tensor logprobs;
};

ForwardPass forward(ad::Tape& tape, const BoundParams& p, const ModelParams& layout, const PreparedGraph& g,
                    const DepthSampling& sampling);

struct LossTerms {
  ad::Tensor total;
  ad::Tensor nll;
  ad::Tensor kl;
};

/// NLL + KL restricted to `mask` on an existing forward pass.
LossTerms masked_loss(ad::Tape& tape, const ForwardPass& pass, const PreparedGraph& g, std::span<const Index> mask,
                      std::span<const double> prior);

/// Full pipeline: embed, layer stack, posterior, Gumbel-Softmax with noise
/// drawn from `rng`, combine, classify; returns nll + kl over `mask`.
LossTerms model_loss(ad::Tape& tape, const BoundParams& p, const ModelParams& layout, const PreparedGraph& g,
                     std::span<const Index> mask, double temperature, std::span<const double> prior, Rng& rng);

/// Noise shape consumed by one forward pass (rows x (L+1)), 0x0 when the
/// configuration has no depth posterior.
std::pair<Index, Index> noise_shape(const ModelParams& params);

struct Prediction {
  Matrix logprobs;
  std::vector<int> labels;
  Matrix feature_embedding;   // h0, detached
  Matrix combined_embedding;  // H[0] (h0 for the MLP), detached
};

/// Noise-free inference using options.readout.
Prediction predict(const ModelParams& params, const PreparedGraph& g);

/// Text key -> matrix map. Doubles are written in shortest round-trip form,
/// so load(save(p)) == p bit-for-bit.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace inpl
