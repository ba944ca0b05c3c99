#include <gxattack/harness.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

using namespace gxa;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kError = 1, kWeakPredictor = 3, kFloor = 4 };

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string dataset, out;
  long long seed = -1;
  int trials = 0, threads = 0, max_targets = -1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_file, "key=value or JSON config file");
  app->add_option("-s,--set", c.sets, "override, e.g. attack.beta=0.1 (repeatable)");
  app->add_option("--dataset", c.dataset, "Syn1..Syn7");
  app->add_option("-o,--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--trials", c.trials);
  app->add_option("--threads", c.threads);
  app->add_option("--max-targets", c.max_targets, "subsample target nodes (0 = all)");
}

ExperimentConfig build_config(const Common& c) {
  ExperimentConfig cfg;
  Settings s;
  if (!c.config_file.empty()) s = parse_settings(read_text(c.config_file));
  if (!c.dataset.empty()) s.emplace_back("dataset", c.dataset);
  if (!c.out.empty()) s.emplace_back("out", c.out);
  if (c.seed >= 0) s.emplace_back("seed", std::to_string(c.seed));
  if (c.trials > 0) s.emplace_back("trials", std::to_string(c.trials));
  if (c.threads > 0) s.emplace_back("threads", std::to_string(c.threads));
  if (c.max_targets >= 0) s.emplace_back("max_targets", std::to_string(c.max_targets));
  for (auto& kv : c.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    s.emplace_back(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  apply_settings(cfg, s);
  finalize(cfg);
  return cfg;
}

int finish_experiment(const ExperimentOutput& o, const std::string& command) {
  write_outputs(o, command);
  std::cout << summary_table(summarize(o.records));
  for (auto& t : o.trials)
    std::printf("trial %d: %d nodes, %d edges, train acc %.3f, %zu targets\n", t.trial, t.nodes, t.edges, t.accuracy,
                t.targets.size());
  for (auto& v : o.violations) std::cerr << "floor violation: " << v << "\n";
  std::cout << "wrote " << o.config.out << "\n";
  return o.violations.empty() ? kOk : kFloor;
}

GeneratedDataset load_or_generate(const std::string& data_path, const ExperimentConfig& cfg) {
  if (!data_path.empty()) return dataset_from_json(nlohmann::json::parse(read_text(data_path)));
  SynConfig sc = cfg.data;
  sc.seed = derive_seed({cfg.seed, 0, 1});
  return generate_dataset(sc);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Adversarial structure attacks on post-hoc GNN explanations"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset as JSON");
  std::string gen_file;
  add_common(gen, common);
  gen->add_option("-f,--file", gen_file, "dataset JSON path")->required();

  auto* tr = app.add_subcommand("train", "train the victim GCN");
  std::string tr_data, tr_model;
  add_common(tr, common);
  tr->add_option("--data", tr_data, "dataset JSON (generated from config if absent)");
  tr->add_option("-m,--model", tr_model, "where to write the parameters")->required();

  auto* ex = app.add_subcommand("explain", "explain one node");
  std::string ex_data, ex_model, ex_pgx, ex_which = "pgx", ex_file;
  int ex_node = 0;
  add_common(ex, common);
  ex->add_option("--data", ex_data);
  ex->add_option("-m,--model", ex_model, "GCN parameters JSON")->required();
  ex->add_option("--pgx", ex_pgx, "explainer parameters JSON; trained and written here if missing");
  ex->add_option("--explainer", ex_which)->check(CLI::IsMember({"pgx", "gradcam", "gnnexplainer", "random"}));
  ex->add_option("--node", ex_node)->required();
  ex->add_option("-f,--file", ex_file, "write the explanation JSON here");

  auto* at = app.add_subcommand("attack", "attack every target node and report explanation and prediction metrics");
  add_common(at, common);

  auto* tf = app.add_subcommand("transfer", "evaluate other explainers on the GXAttack perturbations");
  add_common(tf, common);

  auto* sw = app.add_subcommand("sweep", "sensitivity over one attack hyperparameter");
  std::string sw_axis;
  std::vector<double> sw_values;
  add_common(sw, common);
  sw->add_option("--axis", sw_axis)->required()->check(CLI::IsMember({"beta", "budget", "epochs"}));
  sw->add_option("--values", sw_values)->required()->delimiter(',');

  auto* gr = app.add_subcommand("groups", "bucket existing results by confidence, degree or correctness");
  std::string gr_by = "confidence", gr_method = "GXAttack";
  add_common(gr, common);
  gr->add_option("--by", gr_by)->check(CLI::IsMember({"confidence", "degree", "correctness", "all"}));
  gr->add_option("--method", gr_method);

  auto* rp = app.add_subcommand("report", "summarize an existing results directory");
  add_common(rp, common);

  CLI11_PARSE(app, argc, argv);

  std::string command;
  for (int i = 0; i < argc; ++i) command += (i ? " " : "") + std::string(argv[i]);

  try {
    ExperimentConfig cfg = build_config(common);
    fs::path out(cfg.out);

    if (gen->parsed()) {
      auto ds = load_or_generate("", cfg);
      write_text(gen_file, dataset_to_json(ds).dump() + "\n");
      std::printf("%d nodes, %d edges, %d ground-truth edges\n", ds.graph.n(), undirected_edges(ds.graph.adj),
                  undirected_edges(ds.ground_truth));
      return kOk;
    }

    if (tr->parsed()) {
      auto ds = load_or_generate(tr_data, cfg);
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed({cfg.seed, 0, 2});
      auto r = train(ds.graph, tc);
      write_text(tr_model, params_to_json(r.params).dump() + "\n");
      std::printf("train accuracy %.4f, final loss %.4f\n", r.accuracy, r.losses.empty() ? 0.0 : r.losses.back());
      if (r.accuracy < cfg.accuracy_floor) {
        std::fprintf(stderr, "weak predictor: accuracy %.3f below floor %.2f\n", r.accuracy, cfg.accuracy_floor);
        return kWeakPredictor;
      }
      return kOk;
    }

    if (ex->parsed()) {
      auto ds = load_or_generate(ex_data, cfg);
      auto f = params_from_json(nlohmann::json::parse(read_text(ex_model)));
      const auto& g = ds.graph;
      if (ex_node < 0 || ex_node >= g.n()) throw std::out_of_range("node id out of range");
      ExplainerOutput e;
      if (ex_which == "pgx") {
        PgxParams lam;
        if (!ex_pgx.empty() && fs::exists(ex_pgx)) {
          lam = pgx_from_json(nlohmann::json::parse(read_text(ex_pgx)));
        } else {
          PgxConfig pc = cfg.pgx;
          pc.seed = derive_seed({cfg.seed, 0, 3});
          lam = pgx_train(f, g, pc).params;
          if (!ex_pgx.empty()) write_text(ex_pgx, pgx_to_json(lam).dump() + "\n");
        }
        e = pgx_explain(lam, f, g.adj, g.x, ex_node);
      } else if (ex_which == "gradcam") {
        e = gradcam_explain(f, g.adj, g.x, ex_node);
      } else if (ex_which == "gnnexplainer") {
        e = gnnexplainer_explain(f, g.adj, g.x, ex_node, cfg.gnnexp).out;
      } else {
        e = random_explain(g.adj, ex_node, cfg.seed);
      }
      auto j = explanation_to_json(e);
      Mat gt = adjacency_from_edges(g.n(), node_ground_truth(g.adj, ds.ground_truth, ex_node));
      j["gea"] = explanation_gea(gt, e, cfg.attack.k_fraction);
      if (!ex_file.empty()) write_text(ex_file, j.dump(1) + "\n");
      std::printf("node %d: %zu candidate edges, GEA %.3f\n", ex_node, e.candidates.size(), j["gea"].get<double>());
      return kOk;
    }

    if (at->parsed()) return finish_experiment(run_attack_experiment(cfg), command);

    if (tf->parsed()) {
      cfg.transfer = true;
      bool listed = std::find(cfg.methods.begin(), cfg.methods.end(), "GXAttack") != cfg.methods.end();
      if (!listed) cfg.methods.insert(cfg.methods.begin(), "GXAttack");
      auto o = run_attack_experiment(cfg);
      int code = finish_experiment(o, command);
      std::printf("%-13s %7s %7s %7s\n", "explainer", "before", "after", "drop");
      for (auto& s : summarize_transfer(o.transfer))
        std::printf("%-13s %7.3f %7.3f %7.3f\n", s.explainer.c_str(), s.before, s.after, s.before - s.after);
      return code;
    }

    if (sw->parsed()) {
      auto rows = run_sensitivity(cfg, sw_axis, sw_values);
      auto body = sweep_csv(rows);
      write_text(out / ("sweep_" + sw_axis + ".csv"), body);
      std::cout << body;
      return kOk;
    }

    if (gr->parsed()) {
      auto recs = parse_results_csv(read_text(out / "results.csv"));
      auto body = groups_csv(group_analysis(recs, gr_by, gr_method));
      write_text(out / ("groups_" + gr_by + ".csv"), body);
      std::cout << body;
      return kOk;
    }

    if (rp->parsed()) {
      auto recs = parse_results_csv(read_text(out / "results.csv"));
      auto s = summarize(recs);
      write_text(out / "summary.csv", summary_csv(s));
      std::cout << summary_table(s);
      int code = kOk;
      for (auto& x : s) {
        int cap = x.method == "GXAttack" ? cfg.attack.budget : x.method == "RndFlip" ? cfg.flip_budget : 2 * cfg.rewires;
        if (x.cols.at("#Pert").first > cap) {
          std::fprintf(stderr, "floor violation: %s mean #Pert above %d\n", x.method.c_str(), cap);
          code = kFloor;
        }
      }
      if (fs::exists(out / "transfer.csv")) {
        std::string text = read_text(out / "transfer.csv");
        std::vector<TransferRecord> tr_recs;
        std::stringstream ss(text);
        std::string line;
        std::getline(ss, line);
        while (std::getline(ss, line)) {
          auto f = split(line, ',');
          if (f.size() != 5) continue;
          tr_recs.push_back({std::stoi(f[0]), f[1], std::stoi(f[2]), std::stod(f[3]), std::stod(f[4])});
        }
        std::cout << transfer_summary_csv(summarize_transfer(tr_recs));
      }
      return code;
    }
  } catch (const WeakPredictor& e) {
    std::cerr << e.what() << "\n";
    return kWeakPredictor;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kError;
  }
  return kOk;
}
