#include <algorithm>
#include <cstdlib>
#include <functional>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vrgcn/io.hpp"
#include "vrgcn/kernels.hpp"
#include "vrgcn/synth.hpp"
#include "vrgcn/trainer.hpp"
#include "vrgcn/variance.hpp"
#include "vrgcn/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vrgcn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitBadInput = 2;

// Flat run configuration shared by train, eval, variance-report and correlation-report.
struct RunConfig {
  std::string data;
  bool multilabel = false;
  std::string estimator = "cv";
  bool pp = false;
  double dropout = 0.0;
  std::vector<std::size_t> samples_per_layer{2, 2};
  std::string self_weighting = "scaled";
  std::string cvd_scaling = "div-sqrt-degree";
  std::vector<std::size_t> hidden{32};
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::string optimizer = "adam";
  double lr = 0.01;
  std::string lr_schedule = "constant";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string epoch_scan = "labeled";
  int warmup_epochs = -1;  // -1: number of graph layers
  std::string out = "out";
  std::size_t repeat = 1;
  std::string checkpoint;
  std::size_t draws = 1000;
  std::size_t correlation_samples = 1000;
};

const char* kConfigHelp = R"(JSON config keys (flat object, unknown keys rejected; flags override):
  data (string)                 dataset directory: edges.txt features.csv labels.csv train.txt val.txt test.txt
  multilabel (bool=false)       labels.csv holds binary strings
  estimator (string="cv")       exact | ns | is | cv | cvd
  pp (bool=false)               precompute P.X so the first layer is dense
  dropout (number=0)            dropout rate in [0, 1)
  samples_per_layer ([2,2])     neighbours (or IS samples) per graph layer
  self_weighting ("scaled")     scaled: self weight P_uu n(u)/D; exact: self weight P_uu
  cvd_scaling ("div-sqrt-degree")  div-sqrt-degree | sqrt-sample-ratio
  hidden ([32])                 hidden layer widths
  batch_size (32)  epochs (200)  seed (0)  repeat (1)
  optimizer ("adam")            adam | sgd
  lr (0.01)  lr_schedule ("constant" | "inv-sqrt")  beta1 (0.9)  beta2 (0.999)  eps (1e-8)
  weight_decay (0)              adds weight_decay * sum ||W||^2
  epoch_scan ("labeled")        labeled | all
  warmup_epochs (-1)            history passes before training (cv/cvd); -1 = graph layers
  out ("out")                   output directory
  checkpoint ("")               weights file for eval / reports
  draws (1000)                  gradient draws for variance-report
  correlation_samples (1000)    dropout forwards for correlation-report)";

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void apply_json(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  if (!j.is_object()) throw InputError(path + ": config must be a JSON object");
  static const std::vector<std::string> known{
      "data",        "multilabel", "estimator",    "pp",          "dropout",
      "samples_per_layer", "self_weighting", "cvd_scaling", "hidden", "batch_size",
      "epochs",      "optimizer",  "lr",           "lr_schedule", "beta1",
      "beta2",       "eps",        "weight_decay", "seed",        "epoch_scan",
      "warmup_epochs", "out",      "repeat",       "checkpoint",  "draws",
      "correlation_samples"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InputError(path + ": unknown key '" + key + "'");
  try {
    take(j, "data", c.data);
    take(j, "multilabel", c.multilabel);
    take(j, "estimator", c.estimator);
    take(j, "pp", c.pp);
    take(j, "dropout", c.dropout);
    take(j, "samples_per_layer", c.samples_per_layer);
    take(j, "self_weighting", c.self_weighting);
    take(j, "cvd_scaling", c.cvd_scaling);
    take(j, "hidden", c.hidden);
    take(j, "batch_size", c.batch_size);
    take(j, "epochs", c.epochs);
    take(j, "optimizer", c.optimizer);
    take(j, "lr", c.lr);
    take(j, "lr_schedule", c.lr_schedule);
    take(j, "beta1", c.beta1);
    take(j, "beta2", c.beta2);
    take(j, "eps", c.eps);
    take(j, "weight_decay", c.weight_decay);
    take(j, "seed", c.seed);
    take(j, "epoch_scan", c.epoch_scan);
    take(j, "warmup_epochs", c.warmup_epochs);
    take(j, "out", c.out);
    take(j, "repeat", c.repeat);
    take(j, "checkpoint", c.checkpoint);
    take(j, "draws", c.draws);
    take(j, "correlation_samples", c.correlation_samples);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

// Flags bind into `values`; resolve() layers the ones actually given over the
// JSON config.
struct FlagSet {
  RunConfig values;
  std::string config_path;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> bound;

  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, T RunConfig::*field,
                   const std::string& help) {
    CLI::Option* o = app->add_option(name, values.*field, help);
    bound.emplace_back(o, [this, field](RunConfig& c) { c.*field = values.*field; });
    return o;
  }
  void add_flag(CLI::App* app, const std::string& name, bool RunConfig::*field, const std::string& help) {
    CLI::Option* o = app->add_flag(name, values.*field, help);
    bound.emplace_back(o, [this, field](RunConfig& c) { c.*field = values.*field; });
  }
  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) apply_json(c, config_path);
    for (const auto& [opt, copy] : bound)
      if (opt->count() > 0) copy(c);
    return c;
  }
};

void add_run_flags(CLI::App* app, FlagSet& f, bool training) {
  app->add_option("-c,--config", f.config_path, "JSON config file (see --help of the root command)");
  f.add(app, "--data", &RunConfig::data, "dataset directory");
  f.add_flag(app, "--multilabel", &RunConfig::multilabel, "labels are binary strings");
  f.add(app, "--estimator", &RunConfig::estimator, "exact|ns|is|cv|cvd");
  f.add_flag(app, "--pp", &RunConfig::pp, "preprocess the first layer");
  f.add(app, "--dropout", &RunConfig::dropout, "dropout rate");
  f.add(app, "--samples", &RunConfig::samples_per_layer, "samples per graph layer")->delimiter(',');
  f.add(app, "--self-weighting", &RunConfig::self_weighting, "scaled|exact");
  f.add(app, "--cvd-scaling", &RunConfig::cvd_scaling, "div-sqrt-degree|sqrt-sample-ratio");
  f.add(app, "--hidden", &RunConfig::hidden, "hidden widths")->delimiter(',');
  f.add(app, "--batch-size", &RunConfig::batch_size, "minibatch size");
  f.add(app, "--seed", &RunConfig::seed, "random seed");
  f.add(app, "--out", &RunConfig::out, "output directory");
  f.add(app, "--checkpoint", &RunConfig::checkpoint, "weights file");
  if (!training) return;
  f.add(app, "--epochs", &RunConfig::epochs, "training epochs");
  f.add(app, "--optimizer", &RunConfig::optimizer, "adam|sgd");
  f.add(app, "--lr", &RunConfig::lr, "learning rate");
  f.add(app, "--lr-schedule", &RunConfig::lr_schedule, "constant|inv-sqrt");
  f.add(app, "--weight-decay", &RunConfig::weight_decay, "L2 penalty");
  f.add(app, "--epoch-scan", &RunConfig::epoch_scan, "labeled|all");
  f.add(app, "--warmup-epochs", &RunConfig::warmup_epochs, "history warm-up passes");
  f.add(app, "--repeat", &RunConfig::repeat, "independent runs with seeds seed, seed+1, ...");
}

EstimatorKind estimator_kind(const RunConfig& c) {
  EstimatorKind k;
  k.kind = estimator_from_string(c.estimator);
  k.preprocess_first_layer = c.pp;
  k.dropout_rate = c.dropout;
  if (c.cvd_scaling == "div-sqrt-degree") k.cvd_scaling = CvdScaling::kDivSqrtDegree;
  else if (c.cvd_scaling == "sqrt-sample-ratio") k.cvd_scaling = CvdScaling::kSqrtSampleRatio;
  else throw InputError("cvd_scaling must be div-sqrt-degree or sqrt-sample-ratio");
  return k;
}

SelfLoopWeighting self_weighting(const RunConfig& c) {
  if (c.self_weighting == "scaled") return SelfLoopWeighting::kScaled;
  if (c.self_weighting == "exact") return SelfLoopWeighting::kExact;
  throw InputError("self_weighting must be scaled or exact");
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.estimator = estimator_kind(c);
  t.samples_per_layer = c.samples_per_layer;
  t.self_weighting = self_weighting(c);
  t.hidden_dims = c.hidden;
  t.minibatch_size = c.batch_size;
  t.epochs = c.epochs;
  if (c.optimizer == "adam") t.optimizer.kind = OptimizerKind::kAdam;
  else if (c.optimizer == "sgd") t.optimizer.kind = OptimizerKind::kSgd;
  else throw InputError("optimizer must be adam or sgd");
  t.optimizer.lr = c.lr;
  if (c.lr_schedule == "constant") t.optimizer.schedule = LrSchedule::kConstant;
  else if (c.lr_schedule == "inv-sqrt") t.optimizer.schedule = LrSchedule::kInvSqrt;
  else throw InputError("lr_schedule must be constant or inv-sqrt");
  t.optimizer.beta1 = c.beta1;
  t.optimizer.beta2 = c.beta2;
  t.optimizer.eps = c.eps;
  t.weight_decay = c.weight_decay;
  t.seed = c.seed;
  if (c.epoch_scan == "labeled") t.epoch_scan = EpochScan::kLabeledOnly;
  else if (c.epoch_scan == "all") t.epoch_scan = EpochScan::kAllNodes;
  else throw InputError("epoch_scan must be labeled or all");
  if (c.warmup_epochs >= 0) t.warmup_epochs = static_cast<std::size_t>(c.warmup_epochs);
  t.validate();
  return t;
}

Graph load_graph(const RunConfig& c) {
  if (c.data.empty()) throw InputError("no dataset given (data / --data)");
  return load_dataset(DatasetPaths::in_directory(c.data, c.multilabel));
}

ModelParams load_or_init(const RunConfig& c, const Graph& g) {
  if (!c.checkpoint.empty()) return load_checkpoint(c.checkpoint);
  std::vector<std::size_t> dims{g.features.cols()};
  dims.insert(dims.end(), c.hidden.begin(), c.hidden.end());
  dims.push_back(g.labels.num_classes);
  Rng rng = make_rng(c.seed, 1);
  return ModelParams::glorot(dims, rng);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

int cmd_train(const RunConfig& c) {
  const Graph g = load_graph(c);
  const PropagationMatrix p = build_propagation(g);
  if (c.repeat < 1) throw InputError("repeat must be >= 1");
  fs::create_directories(c.out);
  std::ofstream report = open_out(fs::path(c.out) / "report.csv");
  std::ofstream timing = open_out(fs::path(c.out) / "timing.csv");
  report << "run,seed,epoch,iterations,train_loss,minibatch_loss,validation_metric,spmm_nnz,"
            "gemm_macs,feature_rows,history_rows\n";
  timing << "run,epoch,wall_seconds\n";
  json summary = json::array();
  int status = kExitOk;
  for (std::size_t run = 0; run < c.repeat; ++run) {
    RunConfig rc = c;
    rc.seed = c.seed + run;
    const TrainConfig cfg = train_config(rc);
    const TrainResult r = train(g, p, cfg, load_or_init(rc, g));
    for (const EpochStats& e : r.report.epochs) {
      report << run << ',' << rc.seed << ',' << e.epoch << ',' << e.iterations << ',' << e.train_loss
             << ',' << e.minibatch_loss << ',' << e.validation_metric << ',' << e.spmm_nnz << ','
             << e.gemm_macs << ',' << e.feature_rows << ',' << e.history_rows << '\n';
      timing << run << ',' << e.epoch << ',' << e.wall_seconds << '\n';
    }
    const std::string name = c.repeat == 1 ? "weights.bin" : "weights_run" + std::to_string(run) + ".bin";
    save_checkpoint((fs::path(c.out) / name).string(), r.best_params,
                    {rc.estimator, rc.seed, r.report.best_epoch});
    json entry{{"run", run},
               {"seed", rc.seed},
               {"epochs", r.report.epochs.size()},
               {"aborted", r.report.aborted},
               {"best_epoch", r.report.best_epoch},
               {"best_validation", r.report.best_validation},
               {"test_metric", evaluate(g, p, r.best_params, g.splits.test)}};
    if (!r.report.epochs.empty()) entry["final_train_loss"] = r.report.epochs.back().train_loss;
    if (r.report.aborted) {
      entry["message"] = r.report.message;
      std::cerr << "run " << run << " aborted: " << r.report.message << '\n';
      status = kExitFailed;
    }
    summary.push_back(entry);
  }
  std::cout << summary.dump(2) << '\n';
  return status;
}

int cmd_eval(const RunConfig& c, const std::string& split) {
  if (c.checkpoint.empty()) throw InputError("eval needs a checkpoint (checkpoint / --checkpoint)");
  const Graph g = load_graph(c);
  const ModelParams params = load_checkpoint(c.checkpoint);
  const PropagationMatrix p = build_propagation(g);
  const std::vector<NodeId>* nodes = split == "train"        ? &g.splits.train
                                     : split == "validation" ? &g.splits.validation
                                     : split == "test"       ? &g.splits.test
                                                             : nullptr;
  if (!nodes) throw InputError("split must be train, validation or test");
  const double metric = evaluate(g, p, params, *nodes);
  json out{{"split", split},
           {"metric", g.labels.multilabel ? "micro_f1" : "accuracy"},
           {"value", metric},
           {"nodes", nodes->size()}};
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

int cmd_variance_report(const RunConfig& c) {
  const Graph g = load_graph(c);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = load_or_init(c, g);
  std::vector<VarianceRow> rows;
  for (Estimator e : {Estimator::kExact, Estimator::kNS, Estimator::kIS, Estimator::kCV, Estimator::kCVD}) {
    RunConfig rc = c;
    rc.estimator = to_string(e);
    GradientStudyConfig cfg;
    cfg.estimator = estimator_kind(rc);
    cfg.samples_per_layer = c.samples_per_layer;
    cfg.self_weighting = self_weighting(c);
    cfg.minibatch_size = c.batch_size;
    cfg.draws = c.draws;
    cfg.seed = c.seed;
    const GradientBiasStd b = gradient_bias_std(g, p, params, cfg);
    for (std::size_t l = 0; l < b.bias.size(); ++l) {
      VarianceRow r;
      r.case_id = "gradient";
      r.estimator = to_string(e);
      r.layer = l;
      r.bias = b.bias[l];
      r.stddev = b.std[l];
      rows.push_back(r);
    }
  }
  // Closed-form VNS/VD for each output node of the first graph layer, using exact
  // activations as means and the inverted-dropout variance of each entry.
  const bool pp = c.pp;
  const Matrix x = pp ? preprocess_input(p, g.features) : g.features;
  const std::vector<Matrix> h = exact_activations(p, x, params, pp);
  const std::size_t layer = pp ? 1 : 0;
  const std::size_t d = c.samples_per_layer.front();
  const double keep = 1.0 - c.dropout;
  for (Estimator e : {Estimator::kExact, Estimator::kNS, Estimator::kCV, Estimator::kCVD}) {
    double vns = 0.0, vd = 0.0;
    std::size_t terms = 0;
    for (NodeId u = 0; u < g.num_nodes; ++u) {
      const auto cols = p.matrix().row_cols(u);
      const auto vals = p.matrix().row_values(u);
      if (d > cols.size()) continue;
      for (std::size_t dim = 0; dim < h[layer].cols(); ++dim) {
        NeighborhoodMoments in;
        in.d = d;
        for (std::size_t k = 0; k < cols.size(); ++k) {
          const double mu = h[layer](cols[k], dim);
          in.p.push_back(vals[k]);
          in.mu.push_back(mu);
          in.s.push_back(mu * mu * (1.0 - keep) / keep);
          in.delta_mu.push_back(0.0);
        }
        const VarianceBreakdown b = table2_breakdown(e, in);
        vns += b.vns;
        vd += b.vd;
        ++terms;
      }
    }
    VarianceRow r;
    r.case_id = "closed-form-mean";
    r.estimator = to_string(e);
    r.layer = layer;
    r.vns = terms ? vns / static_cast<double>(terms) : 0.0;
    r.vd = terms ? vd / static_cast<double>(terms) : 0.0;
    rows.push_back(r);
  }
  fs::create_directories(c.out);
  std::ofstream out = open_out(fs::path(c.out) / "variance.csv");
  write_variance_csv(out, rows);
  write_variance_csv(std::cout, rows);
  return kExitOk;
}

int cmd_correlation_report(const RunConfig& c) {
  const Graph g = load_graph(c);
  const PropagationMatrix p = build_propagation(g);
  const ModelParams params = load_or_init(c, g);
  CorrelationConfig cfg;
  cfg.preprocessed = c.pp;
  cfg.dropout_rate = c.dropout;
  cfg.samples_per_layer = c.samples_per_layer;
  cfg.samples = c.correlation_samples;
  cfg.seed = c.seed;
  const auto layers = correlation_diagnostics(p, g.features, params, cfg);
  fs::create_directories(c.out);
  std::ofstream out = open_out(fs::path(c.out) / "correlation.csv");
  std::ostringstream csv;
  csv << std::setprecision(17)
      << "layer,feature_correlation,neighbor_correlation,feature_terms,neighbor_terms,excluded_pairs\n";
  for (const LayerCorrelation& l : layers)
    csv << l.layer << ',' << l.feature_correlation << ',' << l.neighbor_correlation << ','
        << l.feature_terms << ',' << l.neighbor_terms << ',' << l.excluded_pairs << '\n';
  out << csv.str();
  std::cout << csv.str();
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& cora) {
  const SuiteReport r = suite == "acceptance" ? run_acceptance({cora, seed}) : run_suite(suite, seed);
  print_report(std::cout, r);
  std::cout << (r.passed() ? "suite passed" : "suite FAILED") << '\n';
  return r.passed() ? kExitOk : kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"Graph convolutional network training with sampled and variance-reduced estimators.\n"
               "VRGCN_THREADS caps OpenMP threads. Exit codes: 0 ok, 1 check failure, 2 bad input."};
  app.footer(kConfigHelp);
  app.require_subcommand(1);

  FlagSet train_flags;
  CLI::App* train = app.add_subcommand("train", "train a model; writes report.csv, timing.csv and weights");
  add_run_flags(train, train_flags, true);

  FlagSet eval_flags;
  std::string split = "test";
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_run_flags(eval, eval_flags, false);
  eval->add_option("--split", split, "train|validation|test")->capture_default_str();

  FlagSet variance_flags;
  CLI::App* variance = app.add_subcommand("variance-report", "gradient bias/std and closed-form variances");
  add_run_flags(variance, variance_flags, false);
  variance_flags.add(variance, "--draws", &RunConfig::draws, "gradient draws per estimator");

  FlagSet corr_flags;
  CLI::App* corr = app.add_subcommand("correlation-report", "feature and neighbour correlation per layer");
  add_run_flags(corr, corr_flags, false);
  corr_flags.add(corr, "--samples-mc", &RunConfig::correlation_samples, "dropout forwards");

  std::string suite;
  std::uint64_t verify_seed = 0;
  std::string cora;
  CLI::App* verify = app.add_subcommand("verify", "run a verification suite");
  std::string suites = "acceptance";
  for (const auto& s : suite_names()) suites += "|" + s;
  verify->add_option("suite", suite, suites)->required();
  verify->add_option("--seed", verify_seed, "seed")->capture_default_str();
  verify->add_option("--cora", cora, "Cora dataset directory (acceptance only)");

  SbmConfig sbm;
  std::string synth_out;
  CLI::App* gen = app.add_subcommand("gen-synth", "write a stochastic block model dataset");
  gen->add_option("--nodes", sbm.nodes, "node count")->capture_default_str();
  gen->add_option("--communities", sbm.communities, "community count")->capture_default_str();
  gen->add_option("--p-in", sbm.p_in, "edge probability inside a community")->capture_default_str();
  gen->add_option("--p-out", sbm.p_out, "edge probability across communities")->capture_default_str();
  gen->add_option("--feature-dim", sbm.feature_dim, "feature width")->capture_default_str();
  gen->add_option("--noise", sbm.feature_noise, "feature noise std")->capture_default_str();
  gen->add_option("--seed", sbm.seed, "seed")->capture_default_str();
  gen->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*train) return cmd_train(train_flags.resolve());
    if (*eval) return cmd_eval(eval_flags.resolve(), split);
    if (*variance) return cmd_variance_report(variance_flags.resolve());
    if (*corr) return cmd_correlation_report(corr_flags.resolve());
    if (*verify) {
      if (suite != "acceptance" &&
          std::find(suite_names().begin(), suite_names().end(), suite) == suite_names().end())
        throw InputError("unknown suite '" + suite + "'");
      return cmd_verify(suite, verify_seed, cora);
    }
    if (*gen) {
      write_dataset(generate_sbm(sbm), synth_out);
      std::cout << "wrote " << sbm.nodes << "-node dataset to " << synth_out << '\n';
      return kExitOk;
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  }
  return kExitBadInput;
}
