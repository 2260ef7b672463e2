// nero: grammar-guided neuroevolution of robust convnets.
// Subcommands: evolve, train, eval, attack, describe, plot.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "nero/engine.hpp"
#include "nero/evolution.hpp"
#include "nero/fitness.hpp"
#include "nero/netbuilder.hpp"

#ifndef NERO_ASSET_DIR
#define NERO_ASSET_DIR "core/assets"
#endif

namespace fs = std::filesystem;
using namespace nero;

namespace {

std::string bundled_asset(const std::string& name) {
  return std::string(NERO_ASSET_DIR) + "/" + name;
}

// "8/255" parsed as an exact rational, otherwise a plain decimal
double parse_eps(const std::string& text) {
  const size_t slash = text.find('/');
  if (slash == std::string::npos) return std::stod(text);
  const double num = std::stod(text.substr(0, slash));
  const double den = std::stod(text.substr(slash + 1));
  if (den == 0.0) throw CLI::ValidationError("--eps", "zero denominator");
  return num / den;
}

struct DataChoice {
  std::string kind;  // "synth" or "cifar10"
  std::string dir;
};

DataChoice parse_data(const std::string& text) {
  if (text == "synth") return {"synth", ""};
  if (text.rfind("cifar10:", 0) == 0) return {"cifar10", text.substr(8)};
  if (text == "cifar10")
    throw CLI::ValidationError("--data", "cifar10 needs a directory: cifar10:DIR");
  throw CLI::ValidationError("--data", "expected synth or cifar10:DIR");
}

// training bundle: evolutionary split of the training data
DataBundle load_train_bundle(const DataChoice& dc, std::uint64_t seed) {
  if (dc.kind == "synth") {
    const Dataset ds = synth_dataset(240, 3, 8, seed);
    SplitSpec spec;
    spec.evo_train = 600;
    spec.control = 60;
    spec.fitness = 60;
    spec.seed = seed;
    const DataSplit s = split(ds, spec);
    return {s.evo_train, s.control, s.fitness};
  }
  const Dataset ds = cifar10_train(dc.dir);
  SplitSpec spec;  // published sizes: 43000 / 3500 / 3500
  spec.seed = seed;
  const DataSplit s = split(ds, spec);
  return {s.evo_train, s.control, s.fitness};
}

// held-out data for eval/attack
Dataset load_eval_dataset(const DataChoice& dc, std::uint64_t seed) {
  if (dc.kind == "synth") return synth_dataset(120, 3, 8, Rng::mix(seed, 0x7e57ULL));
  return cifar10_test(dc.dir);
}

std::string default_grammar_for(const DataChoice& dc) {
  return bundled_asset(dc.kind == "synth" ? "desk.grammar" : "neronet.grammar");
}

int run_evolve(const std::string& config_path, std::optional<std::uint64_t> seed,
               const std::string& out_override, bool resume, int jobs) {
  EvolutionConfig cfg = load_evolution_config(config_path);
  if (seed) cfg.rng_seed = *seed;
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (jobs > 0) cfg.jobs = jobs;

  const std::string grammar_path =
      cfg.grammar_path.empty()
          ? bundled_asset(cfg.structure == "cifar" ? "neronet.grammar" : "desk.grammar")
          : cfg.grammar_path;
  const Grammar grammar = Grammar::parse_file(grammar_path);
  const auto specs = cfg.structure == "cifar" ? cifar_structure() : desk_structure();
  const DataBundle data = load_train_bundle(parse_data(cfg.dataset), cfg.rng_seed);

  const RunLog log = run(cfg, grammar, specs, data, resume);
  std::cout << "run complete: " << log.generations.size() << " generations, "
            << log.base_evaluations << " base evaluations, " << log.retrainings
            << " fair-comparison retrainings\n";
  if (!log.generations.empty()) {
    const auto& last = log.generations.back();
    std::cout << "final best F " << last.best_F << " (best C " << last.best_C << ", best A "
              << last.best_A << ", regime " << last.regime << ")\n";
  }
  if (log.transition_generation >= 0)
    std::cout << "warm-up transition at generation " << log.transition_generation << "\n";
  std::cout << "logs under " << cfg.out_dir << "\n";
  return 0;
}

int run_train(const std::string& genome_path, const std::string& grammar_flag,
              const std::string& mode, long long budget_flag, const std::string& data_flag,
              const std::string& out_path, const std::string& preset, std::uint64_t seed) {
  const DataChoice dc = parse_data(data_flag);
  const Genome genome = load_genome(genome_path);
  const Grammar grammar =
      Grammar::parse_file(grammar_flag.empty() ? default_grammar_for(dc) : grammar_flag);
  const DataBundle data = load_train_bundle(dc, seed);

  const NetworkPlan plan = decode_genome(genome, grammar, data.evo_train.sample_shape());
  const int n_classes = data.evo_train.n_classes;
  const ShapeResult shapes = infer_shapes(plan, n_classes);
  if (!shapes.ok) {
    std::cerr << "invalid plan: " << shapes.error << "\n";
    return 1;
  }

  Rng build_rng(Rng::mix(seed, 0xb11dULL));
  Network net = build_network(plan, n_classes, build_rng);
  std::cout << "built network: " << net.param_count() << " parameters\n";

  TrainConfig tc =
      train_config_from_attrs(plan.learning, budget_flag > 0 ? budget_flag : genome.budget);
  tc.rng_seed = Rng::mix(seed, 0x7247ULL);
  OptimizerConfig oc = optimizer_from_attrs(plan.learning);
  bool adversarial = mode == "adversarial";
  AttackConfig adv;
  ThreatModel tm;

  if (preset == "std-350") {
    // extended standard training: SGD momentum, cosine-annealed lr
    oc = OptimizerConfig{};
    oc.kind = OptKind::GradientDescent;
    oc.momentum = 0.9;
    oc.lr = 0.025;
    oc.schedule = LrSchedule::Cosine;
    tc.batch_size = 128;
    tc.epochs_cap = 350;
    tc.budget = std::numeric_limits<long long>::max() / 4;
    tc.l2_coeff = 3e-4;
    tc.grad_clip_norm = 5.0;
    tc.augment = true;
    adversarial = false;
  } else if (preset == "adv-200") {
    // adversarial training: 7-step PGD, stepped lr decay at epochs 100/150
    oc = OptimizerConfig{};
    oc.kind = OptKind::GradientDescent;
    oc.momentum = 0.9;
    oc.lr = 0.1;
    oc.schedule = LrSchedule::StepDecay;
    oc.step_factor = 0.1;
    oc.step_epochs = {100, 150};
    tc.batch_size = 64;
    tc.epochs_cap = 200;
    tc.budget = std::numeric_limits<long long>::max() / 4;
    tc.l2_coeff = 1e-4;
    tc.grad_clip_norm = 5.0;
    tc.augment = true;
    adversarial = true;
  } else if (!preset.empty()) {
    std::cerr << "unknown preset: " << preset << " (want std-350 or adv-200)\n";
    return 1;
  }

  if (adversarial) {
    adv.kind = AttackKind::Pgd;
    adv.steps = 7;
    tm.norm = ThreatModel::Norm::Linf;
    tm.eps = dc.kind == "synth" ? 0.1 : 8.0 / 255.0;  // scaled to the dataset
    adv.step_size = tm.eps / 4.0;
    adv.random_start = true;
  }

  Optimizer opt(oc, net.parameters());
  const TrainReport report =
      adversarial ? adversarial_train(net, data.evo_train, data.control, tc, oc, adv, tm)
                  : train(net, data.evo_train, data.control, tc, oc);

  std::cout << "training stopped: " << to_string(report.stop_reason) << " after "
            << report.epochs_run << " epochs, " << report.budget_consumed << " steps\n";
  if (!report.control_loss.empty())
    std::cout << "final control loss " << report.control_loss.back() << "\n";
  const EvalResult fit = evaluate(net, data.fitness, 128);
  std::cout << "fitness-set clean accuracy " << fit.accuracy << "\n";

  save_checkpoint(out_path, plan, net, n_classes, &opt, report);
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_flag, int batch,
             std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Network net = restore_network(ck);
  const Dataset ds = load_eval_dataset(parse_data(data_flag), seed);
  const EvalResult res = evaluate(net, ds, batch);
  std::cout << "clean accuracy " << res.accuracy << " over " << ds.size() << " samples\n";
  std::cout << "prediction histogram:";
  for (long long h : res.histogram) std::cout << " " << h;
  std::cout << "\n";
  return 0;
}

int run_attack(const std::string& ckpt_path, const std::string& attack,
               const std::string& norm_flag, const std::string& eps_flag, int steps,
               double step_size, const std::string& out_csv, const std::string& data_flag,
               int batch, std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Network net = restore_network(ck);
  const Dataset ds = load_eval_dataset(parse_data(data_flag), seed);

  ThreatModel tm;
  tm.norm = norm_flag == "l2" ? ThreatModel::Norm::L2 : ThreatModel::Norm::Linf;
  tm.eps = parse_eps(eps_flag);

  const EvalResult clean = evaluate(net, ds, batch);
  std::cout << "clean accuracy " << clean.accuracy << " (N=" << ds.size() << ")\n";

  AaLiteResult result;
  result.clean_correct = clean.mask;
  result.robust = clean.mask;
  result.flipped_ce.assign(static_cast<size_t>(ds.size()), 0);
  result.flipped_t.assign(static_cast<size_t>(ds.size()), 0);
  result.x_adv = ds.images;

  if (attack == "aa-lite") {
    result = aa_lite(net, ds.images, ds.labels, tm, steps);
  } else {
    // attack only the correctly classified samples
    std::vector<int> idx;
    for (int i = 0; i < ds.size(); ++i)
      if (clean.mask[static_cast<size_t>(i)]) idx.push_back(i);
    if (!idx.empty()) {
      const Dataset sub = take(ds, idx);
      Tensor x_adv;
      Rng rng(Rng::mix(seed, 0xa77acULL));
      if (attack == "fgsm") {
        x_adv = fgsm(net, sub.images, sub.labels, tm);
      } else if (attack == "fgm") {
        x_adv = fgm(net, sub.images, sub.labels, tm);
      } else if (attack == "pgd") {
        AttackConfig cfg;
        cfg.kind = AttackKind::Pgd;
        cfg.steps = steps;
        cfg.step_size = step_size > 0 ? step_size : tm.eps / 4.0;
        cfg.random_start = true;
        x_adv = pgd(net, sub.images, sub.labels, tm, cfg, rng);
      } else if (attack == "apgd") {
        AttackConfig cfg;
        cfg.kind = AttackKind::Apgd;
        cfg.steps = steps;
        x_adv = apgd(net, sub.images, sub.labels, tm, cfg);
      } else {
        std::cerr << "unknown attack: " << attack << "\n";
        return 1;
      }
      const Tensor logits = net.forward(x_adv, Mode::Infer);
      const int k = logits.dim(1);
      const std::int64_t d = x_adv.size() / x_adv.dim(0);
      for (size_t i = 0; i < idx.size(); ++i) {
        const float* row = logits.data() + static_cast<std::int64_t>(i) * k;
        const int pred = static_cast<int>(std::max_element(row, row + k) - row);
        if (pred != sub.labels[i]) {
          result.flipped_ce[static_cast<size_t>(idx[i])] = 1;
          result.robust[static_cast<size_t>(idx[i])] = 0;
          std::copy_n(x_adv.data() + static_cast<std::int64_t>(i) * d, d,
                      result.x_adv.data() + idx[i] * d);
        }
      }
    }
    long long robust = 0;
    for (auto r : result.robust) robust += r;
    result.robust_accuracy = ds.size() > 0 ? static_cast<double>(robust) / ds.size() : 0.0;
  }

  long long n_correct = 0, survived = 0;
  for (int i = 0; i < ds.size(); ++i) {
    n_correct += result.clean_correct[static_cast<size_t>(i)];
    survived += result.robust[static_cast<size_t>(i)];
  }
  const double adv_acc =
      n_correct > 0 ? static_cast<double>(survived) / static_cast<double>(n_correct) : 0.0;
  std::cout << "adversarial accuracy A " << adv_acc << " (over N_c=" << n_correct << ")\n";
  std::cout << "overall post-attack accuracy " << result.robust_accuracy << " (over full N)\n";

  if (!out_csv.empty()) {
    write_attack_csv(out_csv, result);
    std::cout << "per-sample results written to " << out_csv << "\n";
  }
  return 0;
}

int run_describe(const std::string& genome_path, const std::string& grammar_flag,
                 const std::string& input_flag, int n_classes) {
  const Genome genome = load_genome(genome_path);
  const Grammar grammar =
      Grammar::parse_file(grammar_flag.empty() ? bundled_asset("desk.grammar") : grammar_flag);
  std::array<int, 3> shape{8, 8, 3};
  if (!input_flag.empty()) {
    int h, w, c;
    if (std::sscanf(input_flag.c_str(), "%dx%dx%d", &h, &w, &c) != 3)
      throw CLI::ValidationError("--input", "expected HxWxC");
    shape = {h, w, c};
  }
  const NetworkPlan plan = decode_genome(genome, grammar, shape);
  std::cout << plan_summary(plan, n_classes);
  std::cout << "plan hash " << std::hex << plan_hash(plan) << std::dec << "\n";
  std::cout << "learning:";
  for (const auto& [k, v] : plan.learning) {
    std::cout << " " << k << "=";
    if (const auto* s = std::get_if<std::string>(&v))
      std::cout << *s;
    else
      std::cout << std::get<std::vector<double>>(v)[0];
  }
  std::cout << "\n";
  return 0;
}

struct SeriesPoint {
  int generation;
  double best_f, mean_f, best_c, best_a;
  bool transitioned_now;
};

std::vector<SeriesPoint> read_generations_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open run log: " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<SeriesPoint> out;
  while (std::getline(f, line)) {
    SeriesPoint p{};
    char regime = 'W';
    int transitioned = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%c,%d", &p.generation, &p.best_f,
                    &p.mean_f, &p.best_c, &p.best_a, &regime, &transitioned) != 7)
      throw std::runtime_error("malformed run log row: " + line);
    p.transitioned_now = transitioned != 0;
    out.push_back(p);
  }
  return out;
}

void write_plot_csv(const std::vector<SeriesPoint>& pts, const std::string& path) {
  std::ofstream f(path);
  f << "generation,best_F,best_C,best_A,transition\n";
  for (const auto& p : pts)
    f << p.generation << "," << p.best_f << "," << p.best_c << "," << p.best_a << ","
      << (p.transitioned_now ? 1 : 0) << "\n";
}

void write_plot_svg(const std::vector<SeriesPoint>& pts, const std::string& path) {
  const int w = 720, h = 420, ml = 50, mr = 20, mt = 20, mb = 40;
  const int pw = w - ml - mr, ph = h - mt - mb;
  const int n = static_cast<int>(pts.size());
  auto sx = [&](int gen) { return ml + (n <= 1 ? 0 : pw * gen / (n - 1)); };
  auto sy = [&](double v) {
    const double clamped = std::min(1.0, std::max(-1.0, v));
    return mt + static_cast<int>(ph * (1.0 - (clamped + 1.0) / 2.0));
  };
  auto polyline = [&](auto value_of, const char* color) {
    std::ostringstream os;
    os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : pts) os << sx(p.generation) << "," << sy(value_of(p)) << " ";
    os << "\"/>\n";
    return os.str();
  };

  std::ofstream f(path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << (h - mb)
    << "\" stroke=\"black\"/>\n";
  f << "  <line x1=\"" << ml << "\" y1=\"" << (h - mb) << "\" x2=\"" << (w - mr) << "\" y2=\""
    << (h - mb) << "\" stroke=\"black\"/>\n";
  for (double v : {0.0, 0.5, 1.0}) {
    f << "  <line x1=\"" << ml << "\" y1=\"" << sy(v) << "\" x2=\"" << (w - mr) << "\" y2=\""
      << sy(v) << "\" stroke=\"#dddddd\"/>\n";
    f << "  <text x=\"8\" y=\"" << sy(v) + 4 << "\" font-size=\"11\">" << v << "</text>\n";
  }
  for (const auto& p : pts)
    if (p.transitioned_now)
      f << "  <line x1=\"" << sx(p.generation) << "\" y1=\"" << mt << "\" x2=\""
        << sx(p.generation) << "\" y2=\"" << (h - mb)
        << "\" stroke=\"red\" stroke-dasharray=\"4 3\"/>\n";
  f << polyline([](const SeriesPoint& p) { return p.best_f; }, "#1f77b4");
  f << polyline([](const SeriesPoint& p) { return p.best_c; }, "#2ca02c");
  f << polyline([](const SeriesPoint& p) { return p.best_a; }, "#d62728");
  f << "  <text x=\"" << ml << "\" y=\"" << (h - 8)
    << "\" font-size=\"11\">generation (blue: best F, green: best C, red: best A; dashed: "
       "warm-up transition)</text>\n";
  f << "</svg>\n";
}

int run_plot(const std::string& runlog, const std::string& out_path) {
  const auto pts = read_generations_csv(runlog);
  if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".svg")
    write_plot_svg(pts, out_path);
  else
    write_plot_csv(pts, out_path);
  std::cout << "wrote " << out_path << " (" << pts.size() << " generations)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grammar-guided neuroevolution of adversarially robust convnets"};
  app.require_subcommand(1);

  auto* evolve = app.add_subcommand("evolve", "run the evolutionary search");
  std::string cfg_path, out_dir;
  std::uint64_t seed = 0;
  bool resume = false;
  int jobs = 0;
  auto* seed_opt = evolve->add_option("--seed", seed, "override rng seed");
  evolve->add_option("--config", cfg_path, "run config JSON")->required();
  evolve->add_option("--out", out_dir, "output directory override");
  evolve->add_flag("--resume", resume, "continue from the newest checkpoint");
  evolve->add_option("--jobs", jobs, "parallel offspring evaluations");

  auto* train_cmd = app.add_subcommand("train", "train a genome into a checkpoint");
  std::string genome_path, grammar_path, mode = "standard", data_flag = "synth";
  std::string ckpt_out = "model.ckpt", preset;
  long long budget = 0;
  std::uint64_t train_seed = 1;
  train_cmd->add_option("--genome", genome_path, "genome JSON file")->required();
  train_cmd->add_option("--grammar", grammar_path, "grammar file (default: bundled)");
  train_cmd->add_option("--mode", mode, "standard|adversarial")
      ->check(CLI::IsMember({"standard", "adversarial"}));
  train_cmd->add_option("--budget", budget, "training budget in update steps");
  train_cmd->add_option("--data", data_flag, "synth or cifar10:DIR");
  train_cmd->add_option("--out", ckpt_out, "checkpoint output path");
  train_cmd->add_option("--preset", preset, "std-350 or adv-200");
  train_cmd->add_option("--seed", train_seed, "rng seed");

  auto* eval_cmd = app.add_subcommand("eval", "clean accuracy of a checkpoint");
  std::string eval_ckpt, eval_data = "synth";
  int eval_batch = 128;
  std::uint64_t eval_seed = 1;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "synth or cifar10:DIR");
  eval_cmd->add_option("--batch", eval_batch, "evaluation batch size");
  eval_cmd->add_option("--seed", eval_seed, "rng seed for synthetic data");

  auto* attack_cmd = app.add_subcommand("attack", "attack a checkpoint and report A");
  std::string atk_ckpt, atk_name = "fgsm", atk_norm = "linf", atk_eps = "8/255";
  std::string atk_csv, atk_data = "synth";
  int atk_steps = 20, atk_batch = 32;
  double atk_step_size = 0.0;
  std::uint64_t atk_seed = 1;
  attack_cmd->add_option("--ckpt", atk_ckpt, "checkpoint file")->required();
  attack_cmd->add_option("--attack", atk_name, "fgsm|fgm|pgd|apgd|aa-lite")
      ->check(CLI::IsMember({"fgsm", "fgm", "pgd", "apgd", "aa-lite"}));
  attack_cmd->add_option("--norm", atk_norm, "linf|l2")->check(CLI::IsMember({"linf", "l2"}));
  attack_cmd->add_option("--eps", atk_eps, "budget, decimal or rational like 8/255");
  attack_cmd->add_option("--steps", atk_steps, "attack iterations");
  attack_cmd->add_option("--step-size", atk_step_size, "override step size");
  attack_cmd->add_option("--out", atk_csv, "per-sample CSV output");
  attack_cmd->add_option("--data", atk_data, "synth or cifar10:DIR");
  attack_cmd->add_option("--batch", atk_batch, "attack batch size");
  attack_cmd->add_option("--seed", atk_seed, "rng seed");

  auto* describe_cmd = app.add_subcommand("describe", "print the architecture of a genome");
  std::string desc_genome, desc_grammar, desc_input;
  int desc_classes = 3;
  describe_cmd->add_option("--genome", desc_genome, "genome JSON file")->required();
  describe_cmd->add_option("--grammar", desc_grammar, "grammar file (default: bundled desk)");
  describe_cmd->add_option("--input", desc_input, "input shape HxWxC (default 8x8x3)");
  describe_cmd->add_option("--classes", desc_classes, "number of classes");

  auto* plot_cmd = app.add_subcommand("plot", "emit best-F / C / A series from a run log");
  std::string plot_runlog, plot_out = "plot.svg";
  plot_cmd->add_option("--runlog", plot_runlog, "generations.csv from a run")->required();
  plot_cmd->add_option("--out", plot_out, "output .svg or .csv path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags: usage + exit 2
  }

  try {
    if (evolve->parsed())
      return run_evolve(cfg_path,
                        seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt,
                        out_dir, resume, jobs);
    if (train_cmd->parsed())
      return run_train(genome_path, grammar_path, mode, budget, data_flag, ckpt_out, preset,
                       train_seed);
    if (eval_cmd->parsed()) return run_eval(eval_ckpt, eval_data, eval_batch, eval_seed);
    if (attack_cmd->parsed())
      return run_attack(atk_ckpt, atk_name, atk_norm, atk_eps, atk_steps, atk_step_size,
                        atk_csv, atk_data, atk_batch, atk_seed);
    if (describe_cmd->parsed())
      return run_describe(desc_genome, desc_grammar, desc_input, desc_classes);
    if (plot_cmd->parsed()) return run_plot(plot_runlog, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
