#pragma once

#include "attack.hpp"
#include "datagen.hpp"
#include "explainers.hpp"
#include "gcn.hpp"
#include "metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gxa {

inline constexpr const char* kVersion = "0.1.0";

// Dense n x n temporaries are large enough that glibc hands them to mmap, and
// the resulting page faults dominate an attack step. Keep them on the heap.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

struct WeakPredictor : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string dataset = "Syn2";
  SynConfig data = builtin_config("Syn2");
  TrainConfig train;
  PgxConfig pgx;
  GnnExplainerConfig gnnexp;
  AttackConfig attack;
  bool budget_set = false;
  int flip_budget = 15;
  int rewires = 8;
  int rewire_hops = 2;
  int trials = 5;
  std::uint64_t seed = 0;
  std::string targets = "all";  // all | correct | conf:5,9 | deg:2-4
  int max_targets = 0;          // 0 keeps every eligible node
  std::vector<std::string> methods = {"GXAttack", "RndFlip", "RndRewire"};
  bool transfer = false;
  bool node_json = true;
  bool traces = true;
  double accuracy_floor = 0.85;
  int threads = 1;
  std::string out = "out";
};

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("not a boolean: " + v);
}

inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto i = [&] { return std::stoi(v); };
  auto d = [&] { return std::stod(v); };
  auto u = [&] { return static_cast<std::uint64_t>(std::stoull(v)); };
  try {
    if (key == "dataset") {
      auto keep_seed = c.data.seed;
      c.data = builtin_config(v);
      c.data.seed = keep_seed;
      c.dataset = v;
    } else if (key == "data.shape") c.data.shape = shape_from_name(v);
    else if (key == "data.num_subgraphs") c.data.num_subgraphs = i();
    else if (key == "data.subgraph_size") c.data.subgraph_size = i();
    else if (key == "data.p_connection") c.data.p_connection = d();
    else if (key == "data.num_classes") c.data.num_classes = i();
    else if (key == "data.feature_dim") c.data.feature_dim = i();
    else if (key == "data.feature_sigma") c.data.feature_sigma = d();
    else if (key == "data.class_shift") c.data.class_shift = d();
    else if (key == "data.fill_p") c.data.fill_p = d();
    else if (key == "data.signal_all_motif") c.data.signal_all_motif = parse_bool(v);
    else if (key == "data.max_budget") c.data.max_budget = i();
    else if (key == "train.learning_rate") c.train.learning_rate = d();
    else if (key == "train.weight_decay") c.train.weight_decay = d();
    else if (key == "train.epochs") c.train.epochs = i();
    else if (key == "train.hidden") c.train.hidden = i();
    else if (key == "pgx.hidden_e") c.pgx.hidden_e = i();
    else if (key == "pgx.epochs") c.pgx.epochs = i();
    else if (key == "pgx.learning_rate") c.pgx.learning_rate = d();
    else if (key == "pgx.t_start") c.pgx.t_start = d();
    else if (key == "pgx.t_end") c.pgx.t_end = d();
    else if (key == "pgx.size_coef") c.pgx.size_coef = d();
    else if (key == "pgx.entropy_coef") c.pgx.entropy_coef = d();
    else if (key == "gnnexp.steps") c.gnnexp.steps = i();
    else if (key == "gnnexp.learning_rate") c.gnnexp.learning_rate = d();
    else if (key == "gnnexp.size_coef") c.gnnexp.size_coef = d();
    else if (key == "gnnexp.entropy_coef") c.gnnexp.entropy_coef = d();
    else if (key == "attack.budget") {
      c.attack.budget = i();
      c.budget_set = true;
    } else if (key == "attack.min_budget") c.attack.min_budget = i();
    else if (key == "attack.epochs") c.attack.epochs = i();
    else if (key == "attack.step_size") c.attack.step_size = d();
    else if (key == "attack.beta") c.attack.beta = d();
    else if (key == "attack.sample_trials") c.attack.sample_trials = i();
    else if (key == "attack.restrict_to_ball") c.attack.restrict_to_ball = parse_bool(v);
    else if (key == "attack.k_fraction") c.attack.k_fraction = d();
    else if (key == "attack.reference") {
      if (v == "topk") c.attack.reference = Reference::TopKMask;
      else if (v == "soft") c.attack.reference = Reference::Soft;
      else throw std::invalid_argument("reference must be topk or soft");
    } else if (key == "baseline.flip_budget") c.flip_budget = i();
    else if (key == "baseline.rewires") c.rewires = i();
    else if (key == "baseline.rewire_hops") c.rewire_hops = i();
    else if (key == "trials") c.trials = i();
    else if (key == "seed") c.seed = u();
    else if (key == "targets") c.targets = v;
    else if (key == "max_targets") c.max_targets = i();
    else if (key == "methods") c.methods = split(v, ',');
    else if (key == "transfer") c.transfer = parse_bool(v);
    else if (key == "node_json") c.node_json = parse_bool(v);
    else if (key == "traces") c.traces = parse_bool(v);
    else if (key == "accuracy_floor") c.accuracy_floor = d();
    else if (key == "threads") c.threads = i();
    else if (key == "out") c.out = v;
    else throw std::invalid_argument("unknown config key: " + key);
  } catch (const std::invalid_argument& e) {
    if (std::string(e.what()).rfind("unknown config key", 0) == 0) throw;
    throw std::invalid_argument("bad value for " + key + ": " + v + " (" + e.what() + ")");
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("bad value for " + key + ": " + v);
  }
}

inline void validate(const ExperimentConfig& c) {
  if (c.trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (c.attack.min_budget > c.attack.budget) throw std::invalid_argument("min_budget exceeds budget");
  if (c.attack.budget < 0 || c.attack.epochs < 0 || c.attack.sample_trials < 0)
    throw std::invalid_argument("attack counts must be non-negative");
  if (c.attack.k_fraction <= 0.0 || c.attack.k_fraction > 1.0) throw std::invalid_argument("k_fraction out of (0,1]");
  for (auto& m : c.methods)
    if (m != "GXAttack" && m != "RndFlip" && m != "RndRewire") throw std::invalid_argument("unknown method: " + m);
}

// The dataset's budget cap applies unless the attack budget was set directly.
inline void finalize(ExperimentConfig& c) {
  if (!c.budget_set) c.attack.budget = c.data.max_budget;
  c.attack.min_budget = std::min(c.attack.min_budget, c.attack.budget);
  validate(c);
}

using Settings = std::vector<std::pair<std::string, std::string>>;

inline void flatten_json(const nlohmann::json& j, const std::string& prefix, Settings& out) {
  if (j.is_object()) {
    for (auto& [k, v] : j.items()) flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_string()) {
    out.emplace_back(prefix, j.get<std::string>());
  } else if (j.is_array()) {
    std::string joined;
    for (auto& e : j) joined += (joined.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
    out.emplace_back(prefix, joined);
  } else {
    out.emplace_back(prefix, j.dump());
  }
}

inline Settings parse_settings(const std::string& text) {
  Settings out;
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    flatten_json(nlohmann::json::parse(text), "", out);
    return out;
  }
  std::stringstream ss(text);
  std::string line;
  int no = 0;
  while (std::getline(ss, line)) {
    ++no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(no) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

// dataset goes first so that later data.* keys override the preset
inline void apply_settings(ExperimentConfig& c, Settings s) {
  std::stable_partition(s.begin(), s.end(), [](auto& kv) { return kv.first == "dataset"; });
  for (auto& [k, v] : s) apply_setting(c, k, v);
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_settings(base, parse_settings(ss.str()));
  return base;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {
      {"dataset", c.dataset},
      {"data", config_to_json(c.data)},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"epochs", c.train.epochs},
        {"hidden", c.train.hidden}}},
      {"pgx",
       {{"hidden_e", c.pgx.hidden_e},
        {"epochs", c.pgx.epochs},
        {"learning_rate", c.pgx.learning_rate},
        {"t_start", c.pgx.t_start},
        {"t_end", c.pgx.t_end},
        {"size_coef", c.pgx.size_coef},
        {"entropy_coef", c.pgx.entropy_coef}}},
      {"gnnexp",
       {{"steps", c.gnnexp.steps},
        {"learning_rate", c.gnnexp.learning_rate},
        {"size_coef", c.gnnexp.size_coef},
        {"entropy_coef", c.gnnexp.entropy_coef}}},
      {"attack",
       {{"budget", c.attack.budget},
        {"min_budget", c.attack.min_budget},
        {"epochs", c.attack.epochs},
        {"step_size", c.attack.step_size},
        {"beta", c.attack.beta},
        {"sample_trials", c.attack.sample_trials},
        {"restrict_to_ball", c.attack.restrict_to_ball},
        {"k_fraction", c.attack.k_fraction},
        {"reference", c.attack.reference == Reference::TopKMask ? "topk" : "soft"}}},
      {"baseline", {{"flip_budget", c.flip_budget}, {"rewires", c.rewires}, {"rewire_hops", c.rewire_hops}}},
      {"trials", c.trials},
      {"seed", c.seed},
      {"targets", c.targets},
      {"max_targets", c.max_targets},
      {"methods", c.methods},
      {"transfer", c.transfer},
      {"accuracy_floor", c.accuracy_floor},
  };
}

// Everything shared by the node jobs of one trial. Read-only once built.
struct TrialContext {
  int trial = 0;
  std::uint64_t data_seed = 0, train_seed = 0, pgx_seed = 0, attack_seed = 0;
  GeneratedDataset ds;
  TrainResult model;
  PgxTrainResult pgx;
  Prediction pred;
  std::vector<int> degree;
  std::vector<int> targets;
};

inline int undirected_edges(const Mat& adj) { return static_cast<int>(adj.sum() / 2.0 + 0.5); }

inline bool target_passes(const std::string& filter, const TrialContext& ctx, int v) {
  if (filter == "all") return true;
  if (filter == "correct") return ctx.pred.labels[v] == ctx.ds.graph.y[v];
  if (filter.rfind("conf:", 0) == 0) {
    int bin = confidence_bin(ctx.pred.confidence(v));
    for (auto& b : split(filter.substr(5), ',')) {
      std::string t = b[0] == 'G' ? b.substr(1) : b;
      if (std::stoi(t) == bin) return true;
    }
    return false;
  }
  if (filter.rfind("deg:", 0) == 0) {
    auto r = filter.substr(4);
    auto dash = r.find('-');
    int lo = std::stoi(r.substr(0, dash));
    int hi = dash == std::string::npos ? lo : (r.substr(dash + 1).empty() ? 1 << 30 : std::stoi(r.substr(dash + 1)));
    return ctx.degree[v] >= lo && ctx.degree[v] <= hi;
  }
  throw std::invalid_argument("unknown target filter: " + filter);
}

inline std::vector<int> select_targets(const ExperimentConfig& cfg, const TrialContext& ctx) {
  std::vector<int> out;
  for (int v = 0; v < ctx.ds.graph.n(); ++v)
    if (target_passes(cfg.targets, ctx, v)) out.push_back(v);
  if (cfg.max_targets > 0 && static_cast<int>(out.size()) > cfg.max_targets) {
    auto key = [&](int v) {
      return derive_seed({cfg.seed, static_cast<std::uint64_t>(ctx.trial), static_cast<std::uint64_t>(v), 0x5e1ULL});
    };
    std::sort(out.begin(), out.end(), [&](int a, int b) { return key(a) < key(b); });
    out.resize(cfg.max_targets);
    std::sort(out.begin(), out.end());
  }
  return out;
}

inline TrialContext prepare_trial(const ExperimentConfig& cfg, int t) {
  TrialContext ctx;
  ctx.trial = t;
  const auto tt = static_cast<std::uint64_t>(t);
  ctx.data_seed = derive_seed({cfg.seed, tt, 1});
  ctx.train_seed = derive_seed({cfg.seed, tt, 2});
  ctx.pgx_seed = derive_seed({cfg.seed, tt, 3});
  ctx.attack_seed = derive_seed({cfg.seed, tt, 4});
  SynConfig sc = cfg.data;
  sc.seed = ctx.data_seed;
  ctx.ds = generate_dataset(sc);
  TrainConfig tc = cfg.train;
  tc.seed = ctx.train_seed;
  ctx.model = train(ctx.ds.graph, tc);
  if (ctx.model.accuracy < cfg.accuracy_floor) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "weak predictor: trial %d training accuracy %.3f below floor %.2f", t,
                  ctx.model.accuracy, cfg.accuracy_floor);
    throw WeakPredictor(buf);
  }
  ctx.pred = predict(ctx.model.params, ctx.ds.graph);
  PgxConfig pc = cfg.pgx;
  pc.seed = ctx.pgx_seed;
  ctx.pgx = pgx_train(ctx.model.params, ctx.ds.graph, pc);
  for (int v = 0; v < ctx.ds.graph.n(); ++v) ctx.degree.push_back(ctx.ds.graph.degree(v));
  ctx.targets = select_targets(cfg, ctx);
  return ctx;
}

inline Mat node_gt_mask(const TrialContext& ctx, int v, int hops) {
  return adjacency_from_edges(ctx.ds.graph.n(), node_ground_truth(ctx.ds.graph.adj, ctx.ds.ground_truth, v, hops));
}

inline double explanation_gea(const Mat& gt_mask, const ExplainerOutput& e, double k) {
  return gea(gt_mask, topk_binarize(e.importance, e.candidates, k));
}

inline EvalRecord evaluate_result(const TrialContext& ctx, const std::string& method, const AttackResult& r,
                                  const Mat& gt_mask, double k) {
  const int v = r.target;
  EvalRecord e;
  e.trial = ctx.trial;
  e.method = method;
  e.node = v;
  e.o_gea = explanation_gea(gt_mask, r.orig_expl, k);
  e.p_gea = explanation_gea(gt_mask, r.pert_expl, k);
  e.delta_gea = delta_gea(e.o_gea, e.p_gea);
  e.cos_sim = cosine_similarity(r.orig_expl.importance, r.pert_expl.importance);
  int y0 = ctx.pred.labels[v];
  e.delta_label = r.pert_labels[v] != y0;
  e.delta_prob = std::abs(r.orig_row(y0) - r.pert_row(y0));
  e.num_flips = r.num_flips;
  e.confidence_bin = confidence_bin(ctx.pred.confidence(v));
  e.degree = ctx.degree[v];
  e.correct = y0 == ctx.ds.graph.y[v];
  e.delta_label_all = delta_label(ctx.pred.labels, r.pert_labels);
  return e;
}

struct TransferRecord {
  int trial = 0;
  std::string explainer;
  int node = 0;
  double before = 0.0, after = 0.0;
};

struct NodeOutcome {
  std::vector<EvalRecord> records;
  std::vector<TracePoint> trace;
  std::vector<TransferRecord> transfer;
  std::vector<std::pair<std::string, std::string>> files;  // relative path, contents
};

inline std::vector<TransferRecord> transfer_for(const ExperimentConfig& cfg, const TrialContext& ctx,
                                                const AttackResult& r, const Mat& gt_mask) {
  const Mat& a0 = ctx.ds.graph.adj;
  const Mat& a1 = r.perturbed_adj;
  const Mat& x = ctx.ds.graph.x;
  const auto& f = ctx.model.params;
  const int v = r.target, hops = cfg.attack.hops;
  const double k = cfg.attack.k_fraction;
  std::uint64_t rs = derive_seed({ctx.attack_seed, 0x4dULL});
  std::vector<TransferRecord> out;
  auto add = [&](const char* name, const ExplainerOutput& b, const ExplainerOutput& a) {
    out.push_back({ctx.trial, name, v, explanation_gea(gt_mask, b, k), explanation_gea(gt_mask, a, k)});
  };
  add("PGExplainer", r.orig_expl, r.pert_expl);
  add("GradCAM", gradcam_explain(f, a0, x, v, hops), gradcam_explain(f, a1, x, v, hops));
  add("GNNExplainer", gnnexplainer_explain(f, a0, x, v, cfg.gnnexp).out,
      gnnexplainer_explain(f, a1, x, v, cfg.gnnexp).out);
  add("Random", random_explain(a0, v, rs, hops), random_explain(a1, v, rs, hops));
  return out;
}

inline std::string fmt(double x, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

inline nlohmann::json record_to_json(const EvalRecord& e) {
  return {{"trial", e.trial},         {"method", e.method},     {"node", e.node},
          {"o_gea", e.o_gea},         {"p_gea", e.p_gea},       {"delta_gea", e.delta_gea},
          {"cos_sim", e.cos_sim},     {"delta_label", e.delta_label}, {"delta_prob", e.delta_prob},
          {"num_flips", e.num_flips}, {"confidence_bin", e.confidence_bin}, {"degree", e.degree},
          {"correct", e.correct},     {"delta_label_all", e.delta_label_all}};
}

inline NodeOutcome run_node(const ExperimentConfig& cfg, const TrialContext& ctx, int v, const AttackConfig& acfg,
                            const std::vector<std::string>& methods, bool transfer, bool node_json) {
  NodeOutcome o;
  const auto& g = ctx.ds.graph;
  const auto& f = ctx.model.params;
  const auto& lam = ctx.pgx.params;
  Mat gt = node_gt_mask(ctx, v, acfg.hops);
  for (auto& m : methods) {
    AttackResult r;
    if (m == "GXAttack") {
      AttackConfig a = acfg;
      a.seed = ctx.attack_seed;
      r = gxattack(f, lam, g.adj, g.x, v, a);
      o.trace = r.trace;
    } else if (m == "RndFlip") {
      r = random_flip_baseline(f, lam, g.adj, g.x, v, cfg.flip_budget, ctx.attack_seed, acfg.hops);
    } else {
      r = random_rewire_baseline(f, lam, g.adj, g.x, v, cfg.rewires, cfg.rewire_hops, ctx.attack_seed, acfg.hops);
    }
    auto rec = evaluate_result(ctx, m, r, gt, acfg.k_fraction);
    o.records.push_back(rec);
    if (m == "GXAttack" && transfer) o.transfer = transfer_for(cfg, ctx, r, gt);
    if (node_json) {
      auto j = attack_to_json(r);
      j["method"] = m;
      j["trial"] = ctx.trial;
      j["metrics"] = record_to_json(rec);
      o.files.emplace_back("nodes/trial" + std::to_string(ctx.trial) + "/" + m + "_" + std::to_string(v) + ".json",
                           j.dump(1));
    }
  }
  return o;
}

// Runs job(i) for i in [0, count) on a few threads; results land by index so
// the output order never depends on scheduling.
template <class T, class F>
std::vector<T> parallel_map(int count, int threads, F job) {
  std::vector<T> out(count);
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) out[i] = job(i);
    return out;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = next++; i < count; i = next++) out[i] = job(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct TrialInfo {
  int trial = 0;
  std::uint64_t data_seed = 0, train_seed = 0, pgx_seed = 0, attack_seed = 0;
  int nodes = 0, edges = 0;
  double accuracy = 0.0;
  std::vector<double> pgx_loss;
  std::vector<int> targets;
};

inline TrialInfo trial_info(const TrialContext& c) {
  return {c.trial,
          c.data_seed,
          c.train_seed,
          c.pgx_seed,
          c.attack_seed,
          c.ds.graph.n(),
          undirected_edges(c.ds.graph.adj),
          c.model.accuracy,
          c.pgx.epoch_loss,
          c.targets};
}

struct ExperimentOutput {
  ExperimentConfig config;
  std::vector<TrialInfo> trials;
  std::vector<EvalRecord> records;
  std::vector<TransferRecord> transfer;
  std::vector<std::tuple<int, int, std::vector<TracePoint>>> traces;  // trial, node, trace
  std::vector<std::string> violations;
};

struct Summary {
  std::string method;
  int nodes = 0;
  // mean over nodes inside a trial, then mean and spread across trials
  std::map<std::string, std::pair<double, double>> cols;
};

inline const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> c = {"O.GEA", "P.GEA", "dGEA", "Sim_cos", "#Pert", "dLabel", "dProb",
                                             "dLabel_all"};
  return c;
}

inline double record_value(const EvalRecord& e, const std::string& col) {
  if (col == "O.GEA") return e.o_gea;
  if (col == "P.GEA") return e.p_gea;
  if (col == "dGEA") return e.delta_gea;
  if (col == "Sim_cos") return e.cos_sim;
  if (col == "#Pert") return e.num_flips;
  if (col == "dLabel") return e.delta_label;
  if (col == "dProb") return e.delta_prob;
  if (col == "dLabel_all") return e.delta_label_all;
  throw std::invalid_argument("unknown column " + col);
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(xs.size() - 1))};
}

inline std::vector<std::string> methods_in(const std::vector<EvalRecord>& recs) {
  std::vector<std::string> out;
  for (auto& r : recs)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

inline std::vector<Summary> summarize(const std::vector<EvalRecord>& recs) {
  std::vector<Summary> out;
  for (auto& m : methods_in(recs)) {
    Summary s;
    s.method = m;
    std::map<int, std::vector<const EvalRecord*>> by_trial;
    for (auto& r : recs)
      if (r.method == m) {
        by_trial[r.trial].push_back(&r);
        ++s.nodes;
      }
    for (auto& col : summary_columns()) {
      std::vector<double> trial_means;
      for (auto& [t, rs] : by_trial) {
        double acc = 0.0;
        for (auto* r : rs) acc += record_value(*r, col);
        trial_means.push_back(acc / static_cast<double>(rs.size()));
      }
      s.cols[col] = mean_std(trial_means);
    }
    out.push_back(s);
  }
  return out;
}

inline double summary_mean(const std::vector<Summary>& s, const std::string& method, const std::string& col) {
  for (auto& x : s)
    if (x.method == method) return x.cols.at(col).first;
  throw std::out_of_range("no summary for " + method);
}

inline ExperimentOutput run_attack_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentOutput out;
  out.config = cfg;
  for (int t = 0; t < cfg.trials; ++t) {
    TrialContext ctx = prepare_trial(cfg, t);
    out.trials.push_back(trial_info(ctx));
    auto results = parallel_map<NodeOutcome>(static_cast<int>(ctx.targets.size()), cfg.threads, [&](int i) {
      return run_node(cfg, ctx, ctx.targets[i], cfg.attack, cfg.methods, cfg.transfer, cfg.node_json);
    });
    for (size_t i = 0; i < results.size(); ++i) {
      auto& r = results[i];
      out.records.insert(out.records.end(), r.records.begin(), r.records.end());
      out.transfer.insert(out.transfer.end(), r.transfer.begin(), r.transfer.end());
      if (cfg.traces && !r.trace.empty()) out.traces.emplace_back(t, ctx.targets[i], std::move(r.trace));
      if (!r.files.empty()) {
        for (auto& [rel, body] : r.files) {
          auto path = std::filesystem::path(cfg.out) / rel;
          std::filesystem::create_directories(path.parent_path());
          std::ofstream(path) << body << "\n";
        }
      }
    }
  }
  for (auto& r : out.records) {
    int cap = r.method == "GXAttack" ? cfg.attack.budget : r.method == "RndFlip" ? cfg.flip_budget : 2 * cfg.rewires;
    if (r.num_flips > cap) {
      out.violations.push_back(r.method + " node " + std::to_string(r.node) + " used " +
                               std::to_string(r.num_flips) + " flips over cap " + std::to_string(cap));
    }
  }
  return out;
}

inline std::string results_csv(const std::vector<EvalRecord>& recs) {
  std::string s = std::string(eval_csv_header()) + "\n";
  for (auto& e : recs) {
    s += std::to_string(e.trial) + "," + e.method + "," + std::to_string(e.node) + "," + fmt(e.o_gea) + "," +
         fmt(e.p_gea) + "," + fmt(e.delta_gea) + "," + fmt(e.cos_sim) + "," + std::to_string(e.delta_label) + "," +
         fmt(e.delta_prob) + "," + std::to_string(e.num_flips) + ",G" + std::to_string(e.confidence_bin) + "," +
         std::to_string(e.degree) + "," + (e.correct ? "1" : "0") + "," + fmt(e.delta_label_all) + "\n";
  }
  return s;
}

inline std::vector<EvalRecord> parse_results_csv(const std::string& text) {
  std::vector<EvalRecord> out;
  std::stringstream ss(text);
  std::string line;
  std::getline(ss, line);
  if (trim(line) != eval_csv_header()) throw std::runtime_error("unexpected results header");
  while (std::getline(ss, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 14) throw std::runtime_error("malformed results row: " + line);
    EvalRecord e;
    e.trial = std::stoi(f[0]);
    e.method = f[1];
    e.node = std::stoi(f[2]);
    e.o_gea = std::stod(f[3]);
    e.p_gea = std::stod(f[4]);
    e.delta_gea = std::stod(f[5]);
    e.cos_sim = std::stod(f[6]);
    e.delta_label = std::stoi(f[7]);
    e.delta_prob = std::stod(f[8]);
    e.num_flips = std::stoi(f[9]);
    e.confidence_bin = std::stoi(f[10].substr(1));
    e.degree = std::stoi(f[11]);
    e.correct = f[12] == "1";
    e.delta_label_all = std::stod(f[13]);
    out.push_back(e);
  }
  return out;
}

inline std::string summary_csv(const std::vector<Summary>& s) {
  std::string out = "method,nodes";
  for (auto& c : summary_columns()) out += "," + c + "," + c + "_std";
  out += "\n";
  for (auto& x : s) {
    out += x.method + "," + std::to_string(x.nodes);
    for (auto& c : summary_columns()) out += "," + fmt(x.cols.at(c).first, 3) + "," + fmt(x.cols.at(c).second, 3);
    out += "\n";
  }
  return out;
}

inline std::string summary_table(const std::vector<Summary>& s) {
  std::string out = "method      nodes";
  for (auto& c : summary_columns()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, " %15s", c.c_str());
    out += buf;
  }
  out += "\n";
  for (auto& x : s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-11s %5d", x.method.c_str(), x.nodes);
    out += buf;
    for (auto& c : summary_columns()) {
      std::snprintf(buf, sizeof buf, " %7.3f+-%6.3f", x.cols.at(c).first, x.cols.at(c).second);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

struct TransferSummary {
  std::string explainer;
  double before = 0.0, after = 0.0;
  std::vector<double> trial_drops;
};

inline std::vector<TransferSummary> summarize_transfer(const std::vector<TransferRecord>& recs) {
  std::vector<std::string> names;
  for (auto& r : recs)
    if (std::find(names.begin(), names.end(), r.explainer) == names.end()) names.push_back(r.explainer);
  std::vector<TransferSummary> out;
  for (auto& name : names) {
    TransferSummary s;
    s.explainer = name;
    std::map<int, std::pair<double, int>> b, a;
    for (auto& r : recs)
      if (r.explainer == name) {
        b[r.trial].first += r.before;
        b[r.trial].second++;
        a[r.trial].first += r.after;
      }
    for (auto& [t, bc] : b) {
      double mb = bc.first / bc.second, ma = a[t].first / bc.second;
      s.before += mb;
      s.after += ma;
      s.trial_drops.push_back(mb - ma);
    }
    s.before /= static_cast<double>(b.size());
    s.after /= static_cast<double>(b.size());
    out.push_back(s);
  }
  return out;
}

inline std::string transfer_csv(const std::vector<TransferRecord>& recs) {
  std::string s = "trial,explainer,node,before,after\n";
  for (auto& r : recs)
    s += std::to_string(r.trial) + "," + r.explainer + "," + std::to_string(r.node) + "," + fmt(r.before) + "," +
         fmt(r.after) + "\n";
  return s;
}

inline std::string transfer_summary_csv(const std::vector<TransferSummary>& s) {
  std::string out = "explainer,before,after,drop,trials_with_drop,trials\n";
  for (auto& x : s) {
    int pos = 0;
    for (double d : x.trial_drops) pos += d > 0.0;
    out += x.explainer + "," + fmt(x.before, 3) + "," + fmt(x.after, 3) + "," + fmt(x.before - x.after, 3) + "," +
           std::to_string(pos) + "," + std::to_string(x.trial_drops.size()) + "\n";
  }
  return out;
}

struct GroupRow {
  std::string group_by, bucket;
  int count = 0;
  std::map<std::string, double> means;
};

inline std::string degree_bucket(int d) {
  if (d <= 1) return "1";
  if (d == 2) return "2";
  if (d == 3) return "3";
  if (d <= 5) return "4-5";
  return "6+";
}

inline std::vector<std::string> group_buckets(const std::string& by) {
  if (by == "confidence") return {"G5", "G6", "G7", "G8", "G9"};
  if (by == "degree") return {"1", "2", "3", "4-5", "6+"};
  if (by == "correctness") return {"correct", "wrong"};
  if (by == "all") return {"All"};
  throw std::invalid_argument("group_by must be confidence, degree, correctness or all");
}

inline std::string bucket_of(const EvalRecord& e, const std::string& by) {
  if (by == "confidence") return "G" + std::to_string(e.confidence_bin);
  if (by == "degree") return degree_bucket(e.degree);
  if (by == "correctness") return e.correct ? "correct" : "wrong";
  return "All";
}

// Node-level means per bucket for one method; empty buckets come out with count 0.
inline std::vector<GroupRow> group_analysis(const std::vector<EvalRecord>& recs, const std::string& by,
                                            const std::string& method = "GXAttack") {
  std::vector<GroupRow> out;
  for (auto& b : group_buckets(by)) {
    GroupRow row{by, b, 0, {}};
    for (auto& c : summary_columns()) row.means[c] = 0.0;
    for (auto& r : recs) {
      if (r.method != method || bucket_of(r, by) != b) continue;
      ++row.count;
      for (auto& c : summary_columns()) row.means[c] += record_value(r, c);
    }
    if (row.count)
      for (auto& [c, v] : row.means) v /= row.count;
    out.push_back(row);
  }
  return out;
}

inline std::string groups_csv(const std::vector<GroupRow>& rows) {
  std::string s = "group_by,bucket,count";
  for (auto& c : summary_columns()) s += "," + c;
  s += "\n";
  for (auto& r : rows) {
    s += r.group_by + "," + r.bucket + "," + std::to_string(r.count);
    for (auto& c : summary_columns()) s += "," + fmt(r.means.at(c), 3);
    s += "\n";
  }
  return s;
}

inline std::string traces_csv(const ExperimentOutput& o) {
  std::string s = "trial,node,epoch,term1,term2,total\n";
  for (auto& [t, v, tr] : o.traces)
    for (size_t e = 0; e < tr.size(); ++e)
      s += std::to_string(t) + "," + std::to_string(v) + "," + std::to_string(e) + "," + fmt(tr[e].term1, 8) + "," +
           fmt(tr[e].term2, 8) + "," + fmt(tr[e].total, 8) + "\n";
  return s;
}

inline void write_text(const std::filesystem::path& p, const std::string& body) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << body;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json manifest_json(const ExperimentOutput& o, const std::vector<std::string>& files,
                                    const std::string& command) {
  auto trials = nlohmann::json::array();
  for (auto& t : o.trials)
    trials.push_back({{"trial", t.trial},
                      {"data_seed", t.data_seed},
                      {"train_seed", t.train_seed},
                      {"pgx_seed", t.pgx_seed},
                      {"attack_seed", t.attack_seed},
                      {"nodes", t.nodes},
                      {"edges", t.edges},
                      {"train_accuracy", t.accuracy},
                      {"pgx_epoch_loss", t.pgx_loss},
                      {"targets", t.targets}});
  return {{"command", command},
          {"version", {{"gxattack", kVersion},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                     "." + std::to_string(EIGEN_MINOR_VERSION)},
                       {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR)},
                       {"compiler", __VERSION__}}},
          {"config", config_to_json(o.config)},
          {"trials", trials},
          {"outputs", files},
          {"violations", o.violations}};
}

// results.csv, summary.csv, traces.csv, transfer tables and manifest.json
inline std::vector<std::string> write_outputs(const ExperimentOutput& o, const std::string& command) {
  namespace fs = std::filesystem;
  fs::path dir(o.config.out);
  std::vector<std::string> files = {"results.csv", "summary.csv"};
  write_text(dir / "results.csv", results_csv(o.records));
  write_text(dir / "summary.csv", summary_csv(summarize(o.records)));
  if (!o.traces.empty()) {
    write_text(dir / "traces.csv", traces_csv(o));
    files.push_back("traces.csv");
  }
  if (!o.transfer.empty()) {
    write_text(dir / "transfer.csv", transfer_csv(o.transfer));
    write_text(dir / "transfer_summary.csv", transfer_summary_csv(summarize_transfer(o.transfer)));
    files.push_back("transfer.csv");
    files.push_back("transfer_summary.csv");
  }
  if (o.config.node_json) files.push_back("nodes/");
  files.push_back("manifest.json");
  write_text(dir / "manifest.json", manifest_json(o, files, command).dump(2) + "\n");
  return files;
}

struct SweepRow {
  std::string axis;
  double value = 0.0;
  int nodes = 0;
  double delta_gea = 0.0, delta_prob = 0.0, used_budget = 0.0, delta_label = 0.0;
};

inline AttackConfig with_axis(AttackConfig a, const std::string& axis, double value) {
  if (axis == "beta") {
    a.beta = value;
  } else if (axis == "budget") {
    a.budget = static_cast<int>(value);
    a.min_budget = std::min(a.min_budget, a.budget);
  } else if (axis == "epochs") {
    a.epochs = static_cast<int>(value);
  } else {
    throw std::invalid_argument("sweep axis must be exactly one of beta, budget, epochs");
  }
  return a;
}

// One axis at a time; data, model and explainer are built once per trial and
// shared by every grid value.
inline std::vector<SweepRow> run_sensitivity(const ExperimentConfig& cfg, const std::string& axis,
                                             const std::vector<double>& values) {
  validate(cfg);
  with_axis(cfg.attack, axis, values.empty() ? 0.0 : values.front());
  std::vector<TrialContext> trials;
  for (int t = 0; t < cfg.trials; ++t) trials.push_back(prepare_trial(cfg, t));
  std::vector<SweepRow> out;
  for (double val : values) {
    AttackConfig a = with_axis(cfg.attack, axis, val);
    SweepRow row{axis, val};
    std::vector<double> dg, dp, ub, dl;
    for (auto& ctx : trials) {
      auto res = parallel_map<NodeOutcome>(static_cast<int>(ctx.targets.size()), cfg.threads, [&](int i) {
        return run_node(cfg, ctx, ctx.targets[i], a, {"GXAttack"}, false, false);
      });
      double g = 0, p = 0, u = 0, l = 0;
      for (auto& r : res) {
        g += r.records[0].delta_gea;
        p += r.records[0].delta_prob;
        u += r.records[0].num_flips;
        l += r.records[0].delta_label;
      }
      const double m = std::max<size_t>(res.size(), 1);
      dg.push_back(g / m);
      dp.push_back(p / m);
      ub.push_back(u / m);
      dl.push_back(l / m);
      row.nodes += static_cast<int>(res.size());
    }
    row.delta_gea = mean_std(dg).first;
    row.delta_prob = mean_std(dp).first;
    row.used_budget = mean_std(ub).first;
    row.delta_label = mean_std(dl).first;
    out.push_back(row);
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "axis,value,nodes,dGEA,dProb,used_budget,dLabel\n";
  for (auto& r : rows) {
    char v[32];
    std::snprintf(v, sizeof v, "%g", r.value);
    s += r.axis + "," + v + "," + std::to_string(r.nodes) + "," + fmt(r.delta_gea, 3) + "," + fmt(r.delta_prob, 3) +
         "," + fmt(r.used_budget, 3) + "," + fmt(r.delta_label, 3) + "\n";
  }
  return s;
}

}  // namespace gxa
