#include "inpl/cli.hpp"

#include "inpl/data_io.hpp"
#include "inpl/numfmt.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace inpl::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

template <typename T>
T get_as(const nlohmann::json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError("config key \"" + key + "\" has the wrong type");
  }
}

void write_text(const std::string& path, const std::string& content, std::ostream& out) {
  if (path == "-") {
    out << content;
    return;
  }
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream file(target, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write " + path);
  file << content;
  if (!file) throw IoError("write failed for " + path);
}

std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw InputError("range '" + text + "' must look like lo:hi");
  const auto lo = parse_double(text.substr(0, colon));
  const auto hi = parse_double(text.substr(colon + 1));
  if (!lo || !hi) throw InputError("range '" + text + "' must look like lo:hi with numeric bounds");
  return {*lo, *hi};
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto v = parse_double(cell);
    if (!v) throw InputError("cannot parse '" + cell + "' in list '" + text + "'");
    out.push_back(*v);
  }
  return out;
}

Dataset load_with_splits(const std::string& dir, const std::string& splits, bool normalize) {
  Dataset ds = load_dataset(dir);
  if (!splits.empty()) {
    ds.masks = read_masks(splits, ds.num_nodes());
    ds.validate();
  }
  if (normalize) row_normalize(ds.features);
  return ds;
}

const std::vector<Index>& pick_mask(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.masks.train;
  if (name == "val") return ds.masks.val;
  if (name == "test") return ds.masks.test;
  throw InputError("unknown mask '" + name + "' (expected train, val or test)");
}

json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"objective", r.objective},
          {"pooled_loss", r.pooled_loss},
          {"mean_env_loss", r.mean_env_loss},
          {"variance", r.variance},
          {"kl", r.kl},
          {"train_accuracy", r.train_accuracy},
          {"val_accuracy", r.val_accuracy},
          {"temperature", r.temperature},
          {"environments", r.environments}};
}

json config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"hidden", c.hidden},
          {"depth", c.depth},
          {"env_count", c.env_count},
          {"lambda", c.lambda},
          {"temperature", c.temperature},
          {"anneal", c.anneal},
          {"final_temperature", c.final_temperature},
          {"recluster_period", c.recluster_period},
          {"kmeans_iters", c.kmeans_iters},
          {"cluster_input", c.cluster_input == ClusterInput::combined ? "H0" : "h0"},
          {"seed", c.seed},
          {"no_ipl_layer", c.no_ipl_layer},
          {"no_variance", c.no_variance},
          {"random_partition", c.random_partition},
          {"patience", c.patience},
          {"model", c.model == Architecture::inpl ? "inpl" : "mlp"},
          {"readout", c.readout == DepthReadout::expected ? "expected" : "argmax"},
          {"alpha", c.alpha},
          {"theta", c.theta}};
}

struct TrainFlags {
  std::string data, config, out = "-", splits;
  bool normalize = false;
  std::string model = "inpl";
  TrainConfig cfg;
};

void add_config_flags(CLI::App* cmd, TrainConfig& cfg, std::string& model, std::vector<CLI::Option*>& opts) {
  opts.push_back(cmd->add_option("--epochs", cfg.epochs, "Training epochs"));
  opts.push_back(cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate"));
  opts.push_back(cmd->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay"));
  opts.push_back(cmd->add_option("--hidden", cfg.hidden, "Hidden width d"));
  opts.push_back(cmd->add_option("--depth", cfg.depth, "Number of propagation layers L"));
  opts.push_back(cmd->add_option("--env-count", cfg.env_count, "Environment count K"));
  opts.push_back(cmd->add_option("--lambda", cfg.lambda, "Variance penalty weight"));
  opts.push_back(cmd->add_option("--temperature", cfg.temperature, "Gumbel-Softmax temperature"));
  opts.push_back(cmd->add_flag("--anneal", cfg.anneal, "Linearly anneal the temperature"));
  opts.push_back(cmd->add_option("--final-temperature", cfg.final_temperature, "Temperature at the last epoch"));
  opts.push_back(cmd->add_option("--recluster-period", cfg.recluster_period, "Epochs between re-clustering"));
  opts.push_back(cmd->add_option("--kmeans-iters", cfg.kmeans_iters, "Lloyd iterations per clustering"));
  opts.push_back(cmd->add_option("--seed", cfg.seed, "Random seed"));
  opts.push_back(cmd->add_flag("--no-ipl-layer", cfg.no_ipl_layer, "Ablation: classify H0 directly"));
  opts.push_back(cmd->add_flag("--no-variance", cfg.no_variance, "Ablation: drop the variance penalty"));
  opts.push_back(cmd->add_flag("--random-partition", cfg.random_partition, "Ablation: random environments"));
  opts.push_back(cmd->add_option("--patience", cfg.patience, "Early-stopping patience (0 disables)"));
  opts.push_back(cmd->add_option("--model", model, "Model architecture")->check(CLI::IsMember({"inpl", "mlp"})));
}

int cmd_homophily(const std::string& data, const std::string& out_path, std::ostream& out) {
  const Dataset ds = load_dataset(data);
  const HomophilyReport rep = homophily_report(ds.graph, ds.labels);
  std::vector<Index> hist(7, 0);
  Index undefined = 0;
  for (const auto& h : rep.node_homophily) {
    const int b = pattern_bin(h);
    if (b < 0)
      ++undefined;
    else
      ++hist[static_cast<std::size_t>(b)];
  }
  static const char* names[] = {"=0", "(0,0.2)", "[0.2,0.4)", "[0.4,0.6)", "[0.6,0.8)", "[0.8,1)", "=1"};
  json bins = json::array();
  for (std::size_t b = 0; b < hist.size(); ++b) bins.push_back({{"bin", names[b]}, {"count", hist[b]}});
  json doc = {{"dataset", ds.name},
              {"nodes", ds.num_nodes()},
              {"edges", ds.graph.edge_count()},
              {"classes", ds.labels.classes},
              {"edge_homophily", rep.edge_homophily},
              {"no_edges", rep.no_edges},
              {"class_homophily", rep.class_homophily},
              {"pattern_histogram", bins},
              {"undefined_pattern", undefined}};
  write_text(out_path, doc.dump() + "\n", out);
  return ok;
}

int cmd_train(TrainFlags& f, const std::vector<CLI::Option*>& overrides, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  if (!f.config.empty()) cfg = load_config(f.config);
  // CLI flags take precedence over the config file.
  const TrainConfig& flag = f.cfg;
  auto given = [&](std::size_t i) { return overrides[i]->count() > 0; };
  std::size_t i = 0;
  if (given(i++)) cfg.epochs = flag.epochs;
  if (given(i++)) cfg.learning_rate = flag.learning_rate;
  if (given(i++)) cfg.weight_decay = flag.weight_decay;
  if (given(i++)) cfg.hidden = flag.hidden;
  if (given(i++)) cfg.depth = flag.depth;
  if (given(i++)) cfg.env_count = flag.env_count;
  if (given(i++)) cfg.lambda = flag.lambda;
  if (given(i++)) cfg.temperature = flag.temperature;
  if (given(i++)) cfg.anneal = flag.anneal;
  if (given(i++)) cfg.final_temperature = flag.final_temperature;
  if (given(i++)) cfg.recluster_period = flag.recluster_period;
  if (given(i++)) cfg.kmeans_iters = flag.kmeans_iters;
  if (given(i++)) cfg.seed = flag.seed;
  if (given(i++)) cfg.no_ipl_layer = flag.no_ipl_layer;
  if (given(i++)) cfg.no_variance = flag.no_variance;
  if (given(i++)) cfg.random_partition = flag.random_partition;
  if (given(i++)) cfg.patience = flag.patience;
  if (given(i++)) cfg.model = f.model == "mlp" ? Architecture::mlp : Architecture::inpl;
  cfg.validate();

  const Dataset ds = load_with_splits(f.data, f.splits, f.normalize);
  const PreparedGraph g = prepare(ds);
  TrainResult result = train(cfg, ds, g);

  const Prediction pred = predict(result.params, g);
  json metrics = {{"dataset", ds.name},
                  {"model", cfg.model == Architecture::inpl ? "inpl" : "mlp"},
                  {"epochs_run", result.history.records.size()},
                  {"best_epoch", result.history.best_epoch},
                  {"train_accuracy", accuracy(pred.labels, g.labels, ds.masks.train)},
                  {"val_accuracy", accuracy(pred.labels, g.labels, ds.masks.val)},
                  {"test_accuracy", ds.masks.test.empty() ? json(nullptr) : json(accuracy(pred.labels, g.labels, ds.masks.test))},
                  {"config", config_json(cfg)}};

  if (f.out == "-") {
    out << metrics.dump() << "\n";
    return ok;
  }
  const fs::path dir(f.out);
  fs::create_directories(dir);
  const std::string checkpoint = "checkpoint.txt";
  save_checkpoint(result.params, dir / checkpoint);
  std::string history;
  for (const auto& r : result.history.records) history += record_json(r).dump() + "\n";
  json final_record = {{"final", true},
                       {"epochs_run", result.history.records.size()},
                       {"best_epoch", result.history.best_epoch},
                       {"best_val_accuracy", result.history.best_val_accuracy},
                       {"checkpoint", checkpoint}};
  history += final_record.dump() + "\n";
  write_text((dir / "history.jsonl").string(), history, out);
  write_text((dir / "metrics.json").string(), metrics.dump() + "\n", out);
  if (!result.partition.assignment.empty()) write_partition(result.partition, dir / "partition.txt");
  err << "trained " << result.history.records.size() << " epochs, best epoch " << result.history.best_epoch
      << ", test accuracy " << metrics["test_accuracy"].dump() << "\n";
  return ok;
}

}  // namespace

TrainConfig parse_config(const std::string& text, const std::string& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte);
    throw InputError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": config parse error");
  }
  if (!doc.is_object()) throw InputError(source + ": config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : doc.items()) {
    if (key == "epochs") c.epochs = get_as<int>(v, key);
    else if (key == "learning_rate") c.learning_rate = get_as<double>(v, key);
    else if (key == "weight_decay") c.weight_decay = get_as<double>(v, key);
    else if (key == "hidden") c.hidden = get_as<Index>(v, key);
    else if (key == "depth") c.depth = get_as<int>(v, key);
    else if (key == "env_count") c.env_count = get_as<int>(v, key);
    else if (key == "lambda") c.lambda = get_as<double>(v, key);
    else if (key == "temperature") c.temperature = get_as<double>(v, key);
    else if (key == "anneal") c.anneal = get_as<bool>(v, key);
    else if (key == "final_temperature") c.final_temperature = get_as<double>(v, key);
    else if (key == "recluster_period") c.recluster_period = get_as<int>(v, key);
    else if (key == "kmeans_iters") c.kmeans_iters = get_as<int>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "no_ipl_layer") c.no_ipl_layer = get_as<bool>(v, key);
    else if (key == "no_variance") c.no_variance = get_as<bool>(v, key);
    else if (key == "random_partition") c.random_partition = get_as<bool>(v, key);
    else if (key == "patience") c.patience = get_as<int>(v, key);
    else if (key == "alpha") c.alpha = get_as<double>(v, key);
    else if (key == "theta") c.theta = get_as<double>(v, key);
    else if (key == "cluster_input") {
      const auto s = get_as<std::string>(v, key);
      if (s != "H0" && s != "h0") throw InputError("config key \"cluster_input\" must be \"H0\" or \"h0\"");
      c.cluster_input = s == "H0" ? ClusterInput::combined : ClusterInput::features;
    } else if (key == "model") {
      const auto s = get_as<std::string>(v, key);
      if (s != "inpl" && s != "mlp") throw InputError("config key \"model\" must be \"inpl\" or \"mlp\"");
      c.model = s == "inpl" ? Architecture::inpl : Architecture::mlp;
    } else if (key == "readout") {
      const auto s = get_as<std::string>(v, key);
      if (s != "expected" && s != "argmax") throw InputError("config key \"readout\" must be \"expected\" or \"argmax\"");
      c.readout = s == "expected" ? DepthReadout::expected : DepthReadout::argmax;
    } else {
      throw InputError(source + ": unknown config key \"" + key + "\"");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Invariant propagation node classification on non-homophilous graphs", "inpl"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  std::string data, out_path = "-", splits, checkpoint;

  auto* homophily = app.add_subcommand("homophily", "Edge/class homophily and node-pattern histogram");
  homophily->add_option("--data", data, "Dataset directory")->required();
  homophily->add_option("--out", out_path, "Output file or - for stdout");

  SynthSpec synth;
  auto* gen = app.add_subcommand("gen-synth", "Generate a class-conditioned stochastic block model dataset");
  gen->add_option("--out", out_path, "Output dataset directory")->required();
  gen->add_option("--n", synth.n, "Node count");
  gen->add_option("--classes", synth.classes, "Class count");
  gen->add_option("--p-intra", synth.p_intra, "Intra-class edge probability");
  gen->add_option("--p-inter", synth.p_inter, "Inter-class edge probability");
  gen->add_option("--feature-dim", synth.feature_dim, "Feature dimension");
  gen->add_option("--separation", synth.feature_separation, "Class-mean norm");
  gen->add_option("--seed", synth.seed, "Random seed");

  TrainFlags tf;
  std::vector<CLI::Option*> overrides;
  auto* trn = app.add_subcommand("train", "Train a model and write history, checkpoint and metrics");
  trn->add_option("--data", tf.data, "Dataset directory")->required();
  trn->add_option("--config", tf.config, "Flat JSON config file");
  trn->add_option("--out", tf.out, "Output directory, or - to print metrics only");
  trn->add_option("--splits", tf.splits, "Replacement splits.json (e.g. from bias-split)");
  trn->add_flag("--row-normalize", tf.normalize, "Scale feature rows to unit L1 norm");
  add_config_flags(trn, tf.cfg, tf.model, overrides);

  std::string mask = "test", metric = "accuracy";
  bool normalize = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one mask");
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--mask", mask, "train, val or test");
  ev->add_option("--metric", metric, "accuracy or auc");
  ev->add_option("--splits", splits, "Replacement splits.json");
  ev->add_flag("--row-normalize", normalize, "Scale feature rows to unit L1 norm");
  ev->add_option("--out", out_path, "Output file or - for stdout");

  std::string binning = "pattern", edges;
  int quantiles = 4;
  auto* rep = app.add_subcommand("env-report", "Per-bin test accuracy (one record per line)");
  rep->add_option("--data", data, "Dataset directory")->required();
  rep->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  rep->add_option("--binning", binning, "pattern, label or degree");
  rep->add_option("--edges", edges, "Comma-separated degree bin edges");
  rep->add_option("--quantiles", quantiles, "Quantile bins when --edges is absent");
  rep->add_option("--splits", splits, "Replacement splits.json");
  rep->add_flag("--row-normalize", normalize, "Scale feature rows to unit L1 norm");
  rep->add_option("--out", out_path, "Output file or - for stdout");

  std::string criterion = "degree", range;
  auto* bias = app.add_subcommand("bias-split", "Restrict the train mask to a degree or pattern range");
  bias->add_option("--data", data, "Dataset directory")->required();
  bias->add_option("--criterion", criterion, "degree or pattern");
  bias->add_option("--range", range, "lo:hi (degree inclusive; pattern half-open)")->required();
  bias->add_option("--splits", splits, "Starting splits.json");
  bias->add_option("--out", out_path, "Output splits.json, or - for stdout")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    // Help for the subcommand that was named, if any.
    for (auto* sub : app.get_subcommands()) {
      out << sub->help();
      return ok;
    }
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return usage;
  }

  try {
    if (homophily->parsed()) return cmd_homophily(data, out_path, out);

    if (gen->parsed()) {
      const Dataset ds = gen_synth(synth);
      save_dataset(ds, out_path);
      const auto eh = edge_homophily(ds.graph, ds.labels);
      err << "wrote " << ds.num_nodes() << " nodes, " << ds.graph.edge_count() << " edges, edge homophily "
          << format_double(eh.value) << " to " << out_path << "\n";
      return ok;
    }

    if (trn->parsed()) return cmd_train(tf, overrides, out, err);

    if (ev->parsed()) {
      if (metric != "accuracy" && metric != "auc") throw InputError("unknown metric '" + metric + "'");
      if (mask != "train" && mask != "val" && mask != "test") throw InputError("unknown mask '" + mask + "'");
      const Dataset ds = load_with_splits(data, splits, normalize);
      const ModelParams params = load_checkpoint(checkpoint);
      if (params.dims.nodes != ds.num_nodes() || params.dims.input_dim != ds.features.cols())
        throw InputError("checkpoint dimensions do not match the dataset");
      const PreparedGraph g = prepare(ds);
      const auto& m = pick_mask(ds, mask);
      const double score = evaluate(params, g, m, metric == "auc" ? Metric::binary_auc : Metric::accuracy);
      json doc = {{"dataset", ds.name}, {"mask", mask}, {"metric", metric}, {"nodes", m.size()}, {"score", score}};
      write_text(out_path, doc.dump() + "\n", out);
      return ok;
    }

    if (rep->parsed()) {
      const Binning kind = parse_binning(binning);
      const std::vector<double> cuts = edges.empty() ? std::vector<double>{} : parse_list(edges);
      if (quantiles < 1) throw InputError("--quantiles must be at least 1");
      const Dataset ds = load_with_splits(data, splits, normalize);
      const ModelParams params = load_checkpoint(checkpoint);
      if (params.dims.nodes != ds.num_nodes() || params.dims.input_dim != ds.features.cols())
        throw InputError("checkpoint dimensions do not match the dataset");
      const PreparedGraph g = prepare(ds);
      const EnvReport report = env_report(params, ds, g, kind, cuts, quantiles);
      std::string lines;
      for (const auto& b : report.bins) {
        json rec = {{"binning", to_string(report.kind)},
                    {"bin", b.name},
                    {"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"accuracy", b.accuracy ? json(*b.accuracy) : json(nullptr)}};
        lines += rec.dump() + "\n";
      }
      write_text(out_path, lines, out);
      return ok;
    }

    if (bias->parsed()) {
      if (criterion != "degree" && criterion != "pattern") throw InputError("unknown criterion '" + criterion + "'");
      const auto [lo, hi] = parse_range(range);
      const Dataset ds = load_with_splits(data, splits, false);
      const BiasSplit split =
          make_bias_split(ds, criterion == "degree" ? BiasCriterion::degree : BiasCriterion::pattern, lo, hi);
      json summary = {{"criterion", criterion},
                      {"range", range},
                      {"train", split.train_size},
                      {"val", split.masks.val.size()},
                      {"test", split.masks.test.size()}};
      if (out_path == "-") {
        json doc = {{"train", split.masks.train}, {"val", split.masks.val}, {"test", split.masks.test}};
        out << doc.dump() << "\n";
        err << summary.dump() << "\n";
      } else {
        write_masks(split.masks, out_path);
        out << summary.dump() << "\n";
      }
      return ok;
    }
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return numerical_abort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return data_error;
  }
  return usage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace inpl::cli
