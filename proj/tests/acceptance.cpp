// Acceptance run: one PASS/FAIL/SKIP line per criterion. Exits non-zero
// when any mandatory criterion fails.

#include "inpl/cli.hpp"
#include "inpl/data_io.hpp"
#include "inpl/invariance.hpp"
#include "inpl/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace inpl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status;
  std::string detail;
};

int mandatory_failures = 0;

void report(int id, const std::string& title, const Outcome& o, bool advisory = false) {
  const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
  std::printf("%s criterion %d: %s%s -- %s\n", tag, id, title.c_str(), advisory ? " (advisory)" : "",
              o.detail.c_str());
  std::fflush(stdout);
  if (o.status == Status::fail && !advisory) ++mandatory_failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

fs::path data_root() {
  if (const char* env = std::getenv("INPL_DATA_ROOT")) return env;
  return fs::path(INPL_SOURCE_DIR) / "data";
}

bool has_dataset(const fs::path& dir) {
  for (const char* f : {"edges.tsv", "features.csv", "labels.csv", "splits.json"})
    if (!fs::exists(dir / f)) return false;
  return true;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("inpl_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 -----------------------------------------------------------------------
Outcome gradient_check() {
  const auto t0 = Clock::now();
  SynthSpec spec;
  spec.n = 10;
  spec.p_intra = 0.1;
  spec.p_inter = 0.5;
  spec.feature_dim = 3;
  spec.seed = 5;
  const Dataset ds = gen_synth(spec);
  const PreparedGraph g = prepare(ds);
  const ModelParams layout = init_params({10, ds.features.cols(), 4, 2, 2}, {}, 13);
  Rng rng(17);
  const auto [nr, nc] = noise_shape(layout);
  const Matrix noise = gumbel_noise(nr, nc, rng);
  EnvPartition part;
  part.K = 2;
  for (Index u = 0; u < 10; ++u) part.assignment.push_back(int(u % 2));
  std::vector<Index> train;
  for (Index u = 0; u < 10; ++u)
    if (u != 3 && u != 8) train.push_back(u);
  const auto prior = uniform_prior(2);
  ad::Objective obj = [&](ad::Tape& tape, std::span<const ad::Tensor> leaves) {
    const BoundParams b = bind_params(layout, leaves);
    const ForwardPass pass = forward(tape, b, layout, g, DepthSampling::gumbel(0.5, noise));
    return rex_objective(env_losses(tape, pass, g, part, train, prior), 1.0).total;
  };
  const auto r = ad::finite_diff_check(obj, layout.values());
  const double secs = seconds_since(t0);
  const bool ok = r.max_rel_error < 1e-4 && secs < 10.0;
  return {ok ? Status::pass : Status::fail, "max relative error " + fmt(r.max_rel_error, 3) + " (< 1e-4) at " +
                                                layout.names()[r.param] + ", " + fmt(secs, 3) + " s (< 10 s)"};
}

// 2 -----------------------------------------------------------------------
Outcome gumbel_properties() {
  Rng rng(2024);
  Matrix logits(1, 4);
  logits << 0.3, -1.2, 2.0, 0.0;
  double worst_sum = 0.0;
  int sharp = 0;
  double worst_uniform = 0.0;
  for (int i = 0; i < 1000; ++i) {
    for (double t : {0.5, 1.0, 5.0}) {
      const Matrix w = gumbel_softmax(logits, t, rng);
      worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
    }
    const Matrix cold = gumbel_softmax(logits, 0.01, rng);
    worst_sum = std::max(worst_sum, std::abs(cold.sum() - 1.0));
    if (cold.maxCoeff() > 0.99) ++sharp;
    const Matrix hot = gumbel_softmax(logits, 1e6, rng);
    worst_sum = std::max(worst_sum, std::abs(hot.sum() - 1.0));
    worst_uniform = std::max(worst_uniform, (hot.array() - 0.25).abs().maxCoeff());
  }
  const bool ok = worst_sum <= 1e-6 && sharp >= 950 && worst_uniform <= 1e-3;
  return {ok ? Status::pass : Status::fail, "max |row sum - 1| " + fmt(worst_sum, 3) + " (<= 1e-6); " +
                                                std::to_string(sharp) + "/1000 draws with max > 0.99 at T=0.01 (>= 950); " +
                                                "max deviation from uniform at T=1e6 " + fmt(worst_uniform, 3) +
                                                " (<= 1e-3)"};
}

// 3 -----------------------------------------------------------------------
Outcome clustering() {
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed * 31 + 1);
    const Index n = 40 + Index(rng.below(80));
    const int K = 2 + int(rng.below(5));
    Matrix pts(n, 3);
    for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal() * (1.0 + double(i % 3));
    const auto part = cluster_environments(pts, K, 100, seed);
    for (std::size_t i = 1; i < part.objective_trace.size(); ++i)
      if (part.objective_trace[i] > part.objective_trace[i - 1]) ++violations;
  }
  Rng rng(7);
  Matrix pts(200, 5);
  for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal() * 10 + 3;
  const auto one = cluster_environments(pts, 1, 10, 0);
  const double err = (one.centroids.row(0) - pts.colwise().mean()).cwiseAbs().maxCoeff();
  const bool ok = violations == 0 && err <= 1e-12;
  return {ok ? Status::pass : Status::fail, std::to_string(violations) +
                                                " objective increases over 100 seeds (0); K=1 centroid error " +
                                                fmt(err, 3) + " (<= 1e-12)"};
}

// 4 -----------------------------------------------------------------------
Outcome objective_identities() {
  ad::Tape tape;
  const std::vector<ad::Tensor> single{tape.constant(Matrix::Constant(1, 1, 0.731))};
  const auto s = rex_objective(single, 3.0);
  const std::vector<ad::Tensor> pair{tape.constant(Matrix::Zero(1, 1)), tape.constant(Matrix::Constant(1, 1, 2.0))};
  const double two = rex_objective(pair, 1.0).total.scalar();

  SynthSpec spec;
  spec.n = 120;
  spec.seed = 3;
  const Dataset ds = gen_synth(spec);
  TrainConfig erm;
  erm.epochs = 15;
  erm.hidden = 16;
  erm.env_count = 1;
  erm.no_variance = true;
  TrainConfig zero = erm;
  zero.no_variance = false;
  zero.env_count = 3;
  zero.lambda = 0.0;
  const auto a = train(erm, ds), b = train(zero, ds);
  const bool identical = a.params == b.params && a.history.records.size() == b.history.records.size() &&
                         [&] {
                           for (std::size_t i = 0; i < a.history.records.size(); ++i)
                             if (a.history.records[i].objective != b.history.records[i].objective) return false;
                           return true;
                         }();
  const bool ok = s.variance.scalar() == 0.0 && two == 2.0 && identical;
  return {ok ? Status::pass : Status::fail, "single-environment variance " + fmt(s.variance.scalar()) +
                                                " (exactly 0); objective on losses [0, 2] " + fmt(two, 17) +
                                                " (exactly 2); lambda=0 vs pooled ERM " +
                                                (identical ? "bit-identical" : "differ")};
}

// 5 -----------------------------------------------------------------------
Outcome homophily_metrics() {
  std::vector<Edge> path{{0, 1}, {1, 2}, {2, 3}};
  const double eh = edge_homophily(build_graph(path, 4), LabelVector::from_labels({0, 0, 0, 1})).value;
  std::vector<Edge> cliques, bipartite;
  for (NodeId u = 0; u < 10; ++u)
    for (NodeId v = u + 1; v < 10; ++v) ((u < 5) == (v < 5) ? cliques : bipartite).emplace_back(u, v);
  const LabelVector y = LabelVector::from_labels({0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  const double h_hom = class_homophily(build_graph(cliques, 10), y);
  const double h_het = class_homophily(build_graph(bipartite, 10), y);
  bool ok = std::abs(eh - 2.0 / 3.0) < 1e-15 && h_hom == 1.0 && h_het == 0.0;
  std::string detail = "path edge homophily " + fmt(eh, 6) + " (2/3); class homophily " + fmt(h_hom) + " / " +
                       fmt(h_het) + " (1 / 0)";
  const fs::path cham = data_root() / "chameleon";
  if (has_dataset(cham)) {
    const Dataset ds = load_dataset(cham);
    const double e = edge_homophily(ds.graph, ds.labels).value;
    const double h = class_homophily(ds.graph, ds.labels);
    ok = ok && std::abs(e - 0.23) <= 0.01 && std::abs(h - 0.062) <= 0.005;
    detail += "; chameleon edge " + fmt(e) + " (0.23 +- 0.01), class " + fmt(h) + " (0.062 +- 0.005)";
  } else {
    detail += "; chameleon files not found under " + data_root().string() + ", that part skipped";
  }
  return {ok ? Status::pass : Status::fail, detail};
}

// 6 -----------------------------------------------------------------------
Outcome synthetic_shift() {
  const int seeds = 5;
  double inpl_acc = 0, wovar = 0, mlp = 0, wolayer = 0, slowest = 0, hom = 0;
  for (int s = 0; s < seeds; ++s) {
    SynthSpec spec;
    spec.seed = std::uint64_t(s);
    const Dataset base = gen_synth(spec);
    hom += edge_homophily(base.graph, base.labels).value / seeds;
    std::vector<double> deg;
    for (Index d : degrees(base.graph)) deg.push_back(double(d));
    const double tercile = quantile(deg, 1.0 / 3.0);
    Dataset ds = base;
    ds.masks = make_bias_split(base, BiasCriterion::degree, 0.0, tercile).masks;
    const PreparedGraph g = prepare(ds);
    auto run = [&](TrainConfig c) {
      c.seed = std::uint64_t(s);
      const auto t0 = Clock::now();
      const auto r = train(c, ds, g);
      slowest = std::max(slowest, seconds_since(t0));
      return evaluate(r.params, g, ds.masks.test, Metric::accuracy) / seeds;
    };
    TrainConfig full;
    TrainConfig v = full;
    v.lambda = 0.0;
    TrainConfig m = full;
    m.model = Architecture::mlp;
    TrainConfig l = full;
    l.no_ipl_layer = true;
    inpl_acc += run(full);
    wovar += run(v);
    mlp += run(m);
    wolayer += run(l);
  }
  const bool ok = inpl_acc >= wovar && inpl_acc >= mlp && inpl_acc - wolayer >= 0.03 && slowest < 120.0;
  return {ok ? Status::pass : Status::fail,
          "edge homophily " + fmt(hom, 3) + "; mean test accuracy INPL " + fmt(inpl_acc) + ", woVar " + fmt(wovar) +
              ", MLP " + fmt(mlp) + ", woLayer " + fmt(wolayer) + " (need INPL >= woVar, >= MLP, INPL - woLayer >= 0.03"
              "); slowest run " + fmt(slowest, 3) + " s (< 120 s)"};
}

// 7 -----------------------------------------------------------------------
Outcome webkb() {
  const std::vector<std::pair<std::string, double>> targets{{"texas", 0.8486}, {"cornell", 0.8324},
                                                            {"wisconsin", 0.8588}};
  const auto t0 = Clock::now();
  std::string detail;
  bool any = false, ok = true;
  for (const auto& [name, target] : targets) {
    const fs::path dir = data_root() / name;
    if (!has_dataset(dir)) continue;
    any = true;
    Dataset ds = load_dataset(dir);
    row_normalize(ds.features);
    const PreparedGraph g = prepare(ds);
    double best_val = -1, best_test = 0;
    for (double lambda : {0.5, 2.0})
      for (int depth : {1, 2})
        for (double wd : {5e-4, 5e-3}) {
          TrainConfig c;
          c.lambda = lambda;
          c.depth = depth;
          c.weight_decay = wd;
          const auto r = train(c, ds, g);
          if (r.history.best_val_accuracy > best_val) {
            best_val = r.history.best_val_accuracy;
            best_test = evaluate(r.params, g, ds.masks.test, Metric::accuracy);
          }
        }
    const bool hit = std::abs(best_test - target) <= 0.07;
    ok = ok && hit;
    detail += name + " " + fmt(best_test) + " (target " + fmt(target) + " +- 0.07); ";
  }
  const double secs = seconds_since(t0);
  if (!any) return {Status::skip, "texas/cornell/wisconsin files not found under " + data_root().string()};
  ok = ok && secs < 600.0;
  return {ok ? Status::pass : Status::fail, detail + "total " + fmt(secs, 3) + " s (< 600 s)"};
}

// 8 -----------------------------------------------------------------------
Outcome complexity() {
  auto epoch_time = [](double p) {
    SynthSpec spec;
    spec.n = 2000;
    spec.p_intra = p / 5.0;
    spec.p_inter = p;
    spec.seed = 11;
    const Dataset ds = gen_synth(spec);
    const PreparedGraph g = prepare(ds);
    TrainConfig c;
    c.epochs = 8;
    c.patience = 0;
    train(c, ds, g);  // warm-up
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = Clock::now();
      train(c, ds, g);
      best = std::min(best, seconds_since(t0) / c.epochs);
    }
    return std::make_pair(best, ds.graph.edge_count());
  };
  const auto [t1, e1] = epoch_time(0.0025);
  const auto [t2, e2] = epoch_time(0.005);
  const double ratio = t2 / t1;
  return {ratio < 2.5 ? Status::pass : Status::fail,
          "|E| " + std::to_string(e1) + " -> " + std::to_string(e2) + ", per-epoch " + fmt(t1 * 1e3, 4) + " ms -> " +
              fmt(t2 * 1e3, 4) + " ms, ratio " + fmt(ratio, 3) + " (< 2.5)"};
}

// 9 -----------------------------------------------------------------------
Outcome determinism() {
  const fs::path root = scratch("determinism");
  std::vector<std::string> mismatches;
  std::size_t compared = 0;
  auto invoke = [&](const fs::path& dir) {
    const std::string data = (dir / "data").string();
    std::vector<std::vector<std::string>> cmds{
        {"gen-synth", "--out", data, "--n", "150", "--seed", "4"},
        {"homophily", "--data", data, "--out", (dir / "homophily.json").string()},
        {"bias-split", "--data", data, "--criterion", "degree", "--range", "0:30", "--out",
         (dir / "bias.json").string()},
        {"train", "--data", data, "--epochs", "12", "--hidden", "16", "--seed", "9", "--splits",
         (dir / "bias.json").string(), "--out", (dir / "run").string()},
        {"eval", "--data", data, "--checkpoint", (dir / "run" / "checkpoint.txt").string(), "--metric", "auc",
         "--out", (dir / "eval.json").string()},
        {"env-report", "--data", data, "--checkpoint", (dir / "run" / "checkpoint.txt").string(), "--out",
         (dir / "report.jsonl").string()},
        {"train", "--data", data, "--epochs", "5", "--hidden", "8", "--model", "mlp", "--out", "-"}};
    std::string stdout_all;
    for (const auto& args : cmds) {
      std::ostringstream out, err;
      const int code = cli::run(args, out, err);
      if (code != 0) throw std::runtime_error(args.front() + " exited " + std::to_string(code) + ": " + err.str());
      stdout_all += out.str();
    }
    return stdout_all;
  };
  const std::string a = invoke(root / "a");
  const std::string b = invoke(root / "b");
  // Directory names a/ and b/ appear in nothing that is written.
  if (a != b) mismatches.push_back("stdout");
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), root / "a");
    ++compared;
    if (read_file(entry.path()) != read_file(root / "b" / rel)) mismatches.push_back(rel.string());
  }
  fs::remove_all(root);
  std::string detail = std::to_string(compared) + " output files compared";
  for (const auto& m : mismatches) detail += "; differs: " + m;
  return {mismatches.empty() && compared > 0 ? Status::pass : Status::fail, detail};
}

void guarded(int id, const std::string& title, const std::function<Outcome()>& f, bool advisory = false) {
  try {
    report(id, title, f(), advisory);
  } catch (const std::exception& e) {
    report(id, title, {Status::fail, std::string("exception: ") + e.what()}, advisory);
  }
}

}  // namespace

int main() {
  guarded(1, "gradient of the full objective matches finite differences", gradient_check);
  guarded(2, "Gumbel-Softmax properties", gumbel_properties);
  guarded(3, "clustering monotonicity and K=1 mean", clustering);
  guarded(4, "objective identities", objective_identities);
  guarded(5, "homophily metrics", homophily_metrics);
  guarded(6, "synthetic degree-shift experiment", synthetic_shift);
  guarded(7, "WebKB accuracy", webkb, true);
  guarded(8, "per-epoch time when |E| doubles", complexity);
  guarded(9, "repeated CLI invocations are byte-identical", determinism);
  std::printf("%d mandatory criteria failed\n", mandatory_failures);
  return mandatory_failures == 0 ? 0 : 1;
}
