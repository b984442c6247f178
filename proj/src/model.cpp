#include "inpl/model.hpp"

#include "inpl/numfmt.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace inpl {

using ad::Tape;
using ad::Tensor;

std::vector<Matrix*> ModelParams::trainable() {
  std::vector<Matrix*> out;
  visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<Matrix> ModelParams::values() const {
  std::vector<Matrix> out;
  visit([&](const std::string&, const Matrix& m) { out.push_back(m); });
  return out;
}

std::vector<std::string> ModelParams::names() const {
  std::vector<std::string> out;
  visit([&](const std::string& name, const Matrix&) { out.push_back(name); });
  return out;
}

namespace {

Matrix uniform_fan_in(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

bool has_posterior(const ModelOptions& o) { return o.architecture == Architecture::inpl && !o.no_ipl_layer; }

Tensor activate(const Tensor& t, Activation a) { return a == Activation::relu ? ad::relu(t) : t; }

}  // namespace

ModelParams init_params(const ModelDims& dims, const ModelOptions& options, std::uint64_t seed) {
  if (dims.nodes < 1 || dims.input_dim < 1 || dims.hidden < 1 || dims.classes < 1 || dims.depth < 1)
    throw InputError("model dimensions must all be >= 1");
  ModelParams p;
  p.dims = dims;
  p.options = options;
  Rng rng(seed);
  const Index d = dims.hidden;
  p.feat_embed = uniform_fan_in(dims.input_dim, d, dims.input_dim, rng);
  if (options.architecture == Architecture::inpl) {
    for (auto& a : p.adj_embed) a = uniform_fan_in(dims.nodes, d, dims.nodes, rng);
    p.mix = uniform_fan_in(3 * d, d, 3 * d, rng);
    if (!options.no_ipl_layer)
      for (int l = 0; l < dims.depth; ++l) p.layer_weights.push_back(uniform_fan_in(d, d, d, rng));
  }
  p.classifier = uniform_fan_in(d, dims.classes, d, rng);
  if (has_posterior(options)) {
    p.posterior_hidden = uniform_fan_in(3 * d, d, 3 * d, rng);
    p.posterior_hidden_bias = uniform_fan_in(1, d, 3 * d, rng);
    p.posterior_out = uniform_fan_in(d, dims.depth + 1, d, rng);
    p.posterior_out_bias = uniform_fan_in(1, dims.depth + 1, d, rng);
  }
  if (options.architecture == Architecture::inpl && !options.no_ipl_layer)
    for (int l = 1; l <= dims.depth; ++l) {
      p.alpha.push_back(options.alpha);
      p.beta.push_back(std::log(options.theta / l + 1.0));
    }
  return p;
}

PreparedGraph prepare(const Dataset& dataset) {
  PreparedGraph g;
  g.hop1 = dataset.graph;
  g.hop2 = exact_khop(dataset.graph, 2);
  g.features = dataset.features;
  g.labels = dataset.labels.labels;
  g.classes = dataset.labels.classes;
  return g;
}

std::vector<Tensor> BoundParams::leaves() const {
  std::vector<Tensor> out;
  auto add = [&](const Tensor& t) {
    if (t.valid()) out.push_back(t);
  };
  add(feat_embed);
  add(adj_embed[0]);
  add(adj_embed[1]);
  add(mix);
  for (const auto& w : layer_weights) add(w);
  add(classifier);
  add(posterior_hidden);
  add(posterior_hidden_bias);
  add(posterior_out);
  add(posterior_out_bias);
  return out;
}

BoundParams bind_params(const ModelParams& layout, std::span<const Tensor> leaves) {
  BoundParams b;
  std::size_t next = 0;
  auto take = [&](const Matrix& m, Tensor& slot) {
    if (m.size() == 0) return;
    if (next >= leaves.size()) throw ShapeError("bind_params: too few leaves for model layout");
    slot = leaves[next++];
    if (slot.rows() != m.rows() || slot.cols() != m.cols())
      throw ShapeError("bind_params: leaf " + shape_str(slot.value()) + " vs parameter " + shape_str(m));
  };
  take(layout.feat_embed, b.feat_embed);
  take(layout.adj_embed[0], b.adj_embed[0]);
  take(layout.adj_embed[1], b.adj_embed[1]);
  take(layout.mix, b.mix);
  b.layer_weights.resize(layout.layer_weights.size());
  for (std::size_t l = 0; l < layout.layer_weights.size(); ++l) take(layout.layer_weights[l], b.layer_weights[l]);
  take(layout.classifier, b.classifier);
  take(layout.posterior_hidden, b.posterior_hidden);
  take(layout.posterior_hidden_bias, b.posterior_hidden_bias);
  take(layout.posterior_out, b.posterior_out);
  take(layout.posterior_out_bias, b.posterior_out_bias);
  if (next != leaves.size()) throw ShapeError("bind_params: more leaves than model parameters");
  return b;
}

BoundParams bind_params(Tape& tape, const ModelParams& params) {
  std::vector<Tensor> leaves;
  params.visit([&](const std::string&, const Matrix& m) { leaves.push_back(tape.parameter(m)); });
  return bind_params(params, leaves);
}

BoundParams bind_constants(Tape& tape, const ModelParams& params) {
  std::vector<Tensor> leaves;
  params.visit([&](const std::string&, const Matrix& m) { leaves.push_back(tape.constant(m)); });
  return bind_params(params, leaves);
}

Embeddings embed_inputs(Tape& tape, const BoundParams& p, const ModelOptions& options, const PreparedGraph& g) {
  const Tensor x = tape.constant(g.features);
  Embeddings e;
  e.h0 = activate(ad::matmul(x, p.feat_embed), options.activation);
  if (options.architecture == Architecture::mlp) return e;
  e.h1 = activate(ad::spmm(g.hop1, p.adj_embed[0]), options.activation);
  e.h2 = activate(ad::spmm(g.hop2, p.adj_embed[1]), options.activation);
  return e;
}

std::vector<Tensor> ipl_forward(const BoundParams& p, const ModelParams& layout, const Embeddings& e) {
  const Activation act = layout.options.activation;
  const Tensor joined = ad::concat_cols({e.h0, e.h1, e.h2});
  const Tensor residual = ad::add(ad::add(e.h0, e.h1), e.h2);
  std::vector<Tensor> stack;
  stack.push_back(activate(ad::add(ad::matmul(joined, p.mix), residual), act));
  const std::size_t depth = p.layer_weights.size();
  for (std::size_t l = 0; l < depth; ++l) {
    const double a = layout.alpha[l];
    const double b = layout.beta[l];
    const Tensor mixed = ad::add_scaled(stack.back(), stack.front(), 1.0 - a, a);
    const Tensor mapped = ad::add_scaled(mixed, ad::matmul(mixed, p.layer_weights[l]), 1.0 - b, b);
    const bool last = l + 1 == depth;
    stack.push_back(last && layout.options.linear_last_layer ? mapped : activate(mapped, act));
  }
  return stack;
}

Tensor propagation_posterior(const BoundParams& p, const Embeddings& e) {
  const Tensor joined = ad::concat_cols({e.h0, e.h1, e.h2});
  const Tensor hidden = ad::relu(ad::add_row(ad::matmul(joined, p.posterior_hidden), p.posterior_hidden_bias));
  return ad::add_row(ad::matmul(hidden, p.posterior_out), p.posterior_out_bias);
}

Matrix gumbel_noise(Index rows, Index cols, Rng& rng) {
  Matrix g(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) g(i, j) = rng.gumbel();
  return g;
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, const Matrix& noise) {
  if (!(temperature > 0.0)) throw InputError("Gumbel-Softmax temperature must be > 0 (got " + format_double(temperature) + ")");
  if (noise.rows() != logits.rows() || noise.cols() != logits.cols())
    throw ShapeError("gumbel_softmax: noise " + shape_str(noise) + " vs logits " + shape_str(logits.value()));
  Tape& tape = *logits.tape();
  const Tensor log_q = ad::log_softmax_rows(logits);
  const double inv = 1.0 / temperature;
  const Tensor perturbed = ad::add_scaled(log_q, tape.constant(noise), inv, inv);
  return ad::softmax_rows(perturbed);
}

Matrix gumbel_softmax(const Matrix& logits, double temperature, Rng& rng) {
  Tape tape;
  const Matrix noise = gumbel_noise(logits.rows(), logits.cols(), rng);
  return gumbel_softmax(tape.constant(logits), temperature, noise).value();
}

Tensor adaptive_combine(std::span<const Tensor> stack, const Tensor& weights) {
  if (stack.empty()) throw ShapeError("adaptive_combine: empty layer stack");
  if (weights.cols() != static_cast<Index>(stack.size()))
    throw ShapeError("adaptive_combine: weights " + shape_str(weights.value()) + " for " + std::to_string(stack.size()) +
                     " layers");
  Tensor out = ad::row_scale(stack[0], ad::slice_cols(weights, 0, 1));
  for (std::size_t k = 1; k < stack.size(); ++k)
    out = ad::add(out, ad::row_scale(stack[k], ad::slice_cols(weights, static_cast<Index>(k), 1)));
  return out;
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index i = 0; i < scores.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

Classification classify(const Tensor& h_final, const Tensor& classifier) {
  Classification c;
  c.logprobs = ad::log_softmax_rows(ad::matmul(h_final, classifier));
  c.predictions = argmax_rows(c.logprobs.value());
  return c;
}

Tensor kl_categorical(const Tensor& q_logits, std::span<const double> prior) {
  if (static_cast<Index>(prior.size()) != q_logits.cols())
    throw ShapeError("kl_categorical: prior of length " + std::to_string(prior.size()) + " for logits " +
                     shape_str(q_logits.value()));
  Matrix log_prior(q_logits.rows(), q_logits.cols());
  for (std::size_t k = 0; k < prior.size(); ++k) {
    if (!(prior[k] > 0.0)) throw InputError("kl_categorical: prior entry " + std::to_string(k) + " is not positive");
    log_prior.col(static_cast<Index>(k)).setConstant(std::log(prior[k]));
  }
  Tape& tape = *q_logits.tape();
  const Tensor log_q = ad::log_softmax_rows(q_logits);
  const Tensor q = ad::exp(log_q);
  const Tensor ratio = ad::sub(log_q, tape.constant(log_prior));
  return ad::scale(ad::sum(ad::hadamard(q, ratio)), 1.0 / static_cast<double>(q_logits.rows()));
}

std::vector<double> uniform_prior(int depth) {
  return std::vector<double>(static_cast<std::size_t>(depth + 1), 1.0 / static_cast<double>(depth + 1));
}

std::pair<Index, Index> noise_shape(const ModelParams& params) {
  if (!has_posterior(params.options)) return {0, 0};
  return {params.dims.nodes, params.dims.depth + 1};
}

ForwardPass forward(Tape& tape, const BoundParams& p, const ModelParams& layout, const PreparedGraph& g,
                    const DepthSampling& sampling) {
  ForwardPass pass;
  pass.embeddings = embed_inputs(tape, p, layout.options, g);
  if (layout.options.architecture == Architecture::mlp) {
    pass.stack = {pass.embeddings.h0};
    pass.h_final = pass.embeddings.h0;
  } else {
    pass.stack = ipl_forward(p, layout, pass.embeddings);
    if (layout.options.no_ipl_layer) {
      pass.h_final = pass.stack.front();
    } else {
      pass.posterior_logits = propagation_posterior(p, pass.embeddings);
      if (sampling.noise) {
        pass.depth_weights = gumbel_softmax(pass.posterior_logits, sampling.temperature, *sampling.noise);
      } else if (layout.options.readout == DepthReadout::expected) {
        pass.depth_weights = ad::softmax_rows(pass.posterior_logits);
      } else {
        const auto picks = argmax_rows(pass.posterior_logits.value());
        Matrix one_hot = Matrix::Zero(pass.posterior_logits.rows(), pass.posterior_logits.cols());
        for (std::size_t u = 0; u < picks.size(); ++u) one_hot(static_cast<Index>(u), picks[u]) = 1.0;
        pass.depth_weights = tape.constant(std::move(one_hot));
      }
      pass.h_final = adaptive_combine(pass.stack, pass.depth_weights);
    }
  }
  pass.logprobs = classify(pass.h_final, p.classifier).logprobs;
  return pass;
}

LossTerms masked_loss(Tape& tape, const ForwardPass& pass, const PreparedGraph& g, std::span<const Index> mask,
                      std::span<const double> prior) {
  if (mask.empty()) throw InputError("model loss: empty mask");
  LossTerms terms;
  terms.nll = ad::nll(pass.logprobs, g.labels, mask);
  if (pass.posterior_logits.valid()) {
    terms.kl = kl_categorical(ad::gather_rows(pass.posterior_logits, mask), prior);
    terms.total = ad::add(terms.nll, terms.kl);
  } else {
    terms.kl = tape.constant(Matrix::Zero(1, 1));
    terms.total = terms.nll;
  }
  return terms;
}

LossTerms model_loss(Tape& tape, const BoundParams& p, const ModelParams& layout, const PreparedGraph& g,
                     std::span<const Index> mask, double temperature, std::span<const double> prior, Rng& rng) {
  if (mask.empty()) throw InputError("model loss: empty mask");
  if (!(temperature > 0.0)) throw InputError("Gumbel-Softmax temperature must be > 0");
  const auto [rows, cols] = noise_shape(layout);
  DepthSampling sampling = DepthSampling::deterministic();
  if (rows > 0) sampling = DepthSampling::gumbel(temperature, gumbel_noise(rows, cols, rng));
  const ForwardPass pass = forward(tape, p, layout, g, sampling);
  return masked_loss(tape, pass, g, mask, prior);
}

Prediction predict(const ModelParams& params, const PreparedGraph& g) {
  Tape tape;
  const BoundParams b = bind_constants(tape, params);
  const ForwardPass pass = forward(tape, b, params, g, DepthSampling::deterministic());
  Prediction out;
  out.logprobs = pass.logprobs.value();
  out.labels = argmax_rows(out.logprobs);
  out.feature_embedding = pass.embeddings.h0.value();
  out.combined_embedding = pass.stack.front().value();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

const char* to_string(Architecture a) { return a == Architecture::inpl ? "inpl" : "mlp"; }
const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }
const char* to_string(DepthReadout r) { return r == DepthReadout::expected ? "expected" : "argmax"; }

[[noreturn]] void bad_checkpoint(const std::filesystem::path& path, const std::string& what) {
  throw InputError("checkpoint " + path.string() + ": " + what);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ostringstream out;
  const auto& d = params.dims;
  const auto& o = params.options;
  out << "inpl-checkpoint 1\n";
  out << "dims " << d.nodes << ' ' << d.input_dim << ' ' << d.hidden << ' ' << d.classes << ' ' << d.depth << '\n';
  out << "architecture " << to_string(o.architecture) << '\n';
  out << "activation " << to_string(o.activation) << '\n';
  out << "linear_last_layer " << (o.linear_last_layer ? 1 : 0) << '\n';
  out << "no_ipl_layer " << (o.no_ipl_layer ? 1 : 0) << '\n';
  out << "readout " << to_string(o.readout) << '\n';
  out << "alpha_default " << format_double(o.alpha) << '\n';
  out << "theta " << format_double(o.theta) << '\n';
  auto write_list = [&](const char* key, const std::vector<double>& v) {
    out << key << ' ' << v.size();
    for (double x : v) out << ' ' << format_double(x);
    out << '\n';
  };
  write_list("alpha", params.alpha);
  write_list("beta", params.beta);
  params.visit([&](const std::string& name, const Matrix& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << format_double(m(i, j));
      out << '\n';
    }
  });
  out << "end\n";

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write checkpoint " + tmp);
    file << out.str();
    if (!file) throw IoError("write failed for checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(file, line)) bad_checkpoint(path, "unexpected end of file");
    return line;
  };
  if (next_line() != "inpl-checkpoint 1") bad_checkpoint(path, "missing header");

  ModelDims dims;
  ModelOptions options;
  std::vector<double> alpha, beta;
  std::map<std::string, Matrix> matrices;
  for (;;) {
    std::istringstream in(next_line());
    std::string key;
    in >> key;
    if (key == "end") break;
    if (key == "dims") {
      in >> dims.nodes >> dims.input_dim >> dims.hidden >> dims.classes >> dims.depth;
    } else if (key == "architecture") {
      std::string v;
      in >> v;
      if (v != "inpl" && v != "mlp") bad_checkpoint(path, "unknown architecture " + v);
      options.architecture = v == "inpl" ? Architecture::inpl : Architecture::mlp;
    } else if (key == "activation") {
      std::string v;
      in >> v;
      options.activation = v == "identity" ? Activation::identity : Activation::relu;
    } else if (key == "linear_last_layer" || key == "no_ipl_layer") {
      int v = 0;
      in >> v;
      (key == "no_ipl_layer" ? options.no_ipl_layer : options.linear_last_layer) = v != 0;
    } else if (key == "readout") {
      std::string v;
      in >> v;
      options.readout = v == "argmax" ? DepthReadout::argmax : DepthReadout::expected;
    } else if (key == "alpha_default" || key == "theta") {
      std::string v;
      in >> v;
      const auto x = parse_double(v);
      if (!x) bad_checkpoint(path, "bad value for " + key);
      (key == "theta" ? options.theta : options.alpha) = *x;
    } else if (key == "alpha" || key == "beta") {
      std::size_t count = 0;
      in >> count;
      auto& target = key == "alpha" ? alpha : beta;
      for (std::size_t i = 0; i < count; ++i) {
        std::string v;
        in >> v;
        const auto x = parse_double(v);
        if (!x) bad_checkpoint(path, "bad value in " + key);
        target.push_back(*x);
      }
    } else if (key == "matrix") {
      std::string name;
      Index rows = 0, cols = 0;
      in >> name >> rows >> cols;
      if (!in || rows < 0 || cols < 0) bad_checkpoint(path, "bad matrix header");
      Matrix m(rows, cols);
      for (Index i = 0; i < rows; ++i) {
        std::istringstream row(next_line());
        for (Index j = 0; j < cols; ++j) {
          std::string v;
          row >> v;
          const auto x = parse_double(v);
          if (!x) bad_checkpoint(path, "bad entry in matrix " + name);
          m(i, j) = *x;
        }
      }
      matrices.emplace(name, std::move(m));
    } else {
      bad_checkpoint(path, "unknown record '" + key + "'");
    }
  }

  ModelParams params = init_params(dims, options, 0);
  params.alpha = alpha;
  params.beta = beta;
  std::size_t used = 0;
  params.visit([&](const std::string& name, Matrix& m) {
    const auto it = matrices.find(name);
    if (it == matrices.end()) bad_checkpoint(path, "missing matrix " + name);
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      bad_checkpoint(path, "matrix " + name + " has shape " + shape_str(it->second) + ", expected " + shape_str(m));
    m = it->second;
    ++used;
  });
  if (used != matrices.size()) bad_checkpoint(path, "unexpected extra matrices");
  return params;
}

}  // namespace inpl
