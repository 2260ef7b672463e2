#include "nero/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "nero/netbuilder.hpp"
#include "nero/network.hpp"

namespace nero {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---- config ----

namespace {

void reject_unknown_keys(const ordered_json& j, const std::vector<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::runtime_error("unknown config key" + (where.empty() ? "" : " in " + where) +
                               ": " + key);
}

}  // namespace

EvolutionConfig load_evolution_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  const auto j = ordered_json::parse(buf.str(), nullptr, true, /*ignore_comments=*/true);

  reject_unknown_keys(j, {"lambda", "generations", "rates", "gaussian", "budget", "tau",
                          "beta", "seed_mode", "rng_seed", "jobs", "attack_eps",
                          "fitness_batch", "l2_coeff", "augment", "dataset", "grammar",
                          "structure", "out_dir"},
                      "");
  EvolutionConfig cfg;
  cfg.lambda = j.value("lambda", cfg.lambda);
  cfg.generations = j.value("generations", cfg.generations);
  if (j.contains("rates")) {
    const auto& r = j.at("rates");
    reject_unknown_keys(r, {"add_layer", "replicate_layer", "remove_layer", "add_conn",
                            "remove_conn", "dsge_layer", "dsge_learning", "train_time"},
                        "rates");
    cfg.rates.add_layer = r.value("add_layer", cfg.rates.add_layer);
    cfg.rates.replicate_layer = r.value("replicate_layer", cfg.rates.replicate_layer);
    cfg.rates.remove_layer = r.value("remove_layer", cfg.rates.remove_layer);
    cfg.rates.add_conn = r.value("add_conn", cfg.rates.add_conn);
    cfg.rates.remove_conn = r.value("remove_conn", cfg.rates.remove_conn);
    cfg.rates.dsge_layer = r.value("dsge_layer", cfg.rates.dsge_layer);
    cfg.rates.dsge_learning = r.value("dsge_learning", cfg.rates.dsge_learning);
    cfg.rates.train_time = r.value("train_time", cfg.rates.train_time);
  }
  if (j.contains("gaussian")) {
    const auto& g = j.at("gaussian");
    reject_unknown_keys(g, {"mu", "sigma"}, "gaussian");
    cfg.gaussian_mu = g.value("mu", cfg.gaussian_mu);
    cfg.gaussian_sigma = g.value("sigma", cfg.gaussian_sigma);
  }
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    reject_unknown_keys(b, {"default", "max", "increment"}, "budget");
    cfg.budget.default_steps = b.value("default", cfg.budget.default_steps);
    cfg.budget.max_steps = b.value("max", cfg.budget.max_steps);
    cfg.budget.increment = b.value("increment", cfg.budget.increment);
  }
  cfg.tau = j.value("tau", cfg.tau);
  cfg.beta = j.value("beta", cfg.beta);
  if (j.contains("seed_mode")) {
    const std::string m = j.at("seed_mode").get<std::string>();
    if (m == "random")
      cfg.seed_mode = SeedMode::Random;
    else if (m == "seeded")
      cfg.seed_mode = SeedMode::Seeded;
    else
      throw std::runtime_error("seed_mode must be random|seeded");
  }
  cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
  cfg.jobs = j.value("jobs", cfg.jobs);
  cfg.attack_eps = j.value("attack_eps", cfg.attack_eps);
  cfg.fitness_batch = j.value("fitness_batch", cfg.fitness_batch);
  cfg.l2_coeff = j.value("l2_coeff", cfg.l2_coeff);
  cfg.augment = j.value("augment", cfg.augment);
  cfg.dataset = j.value("dataset", cfg.dataset);
  cfg.grammar_path = j.value("grammar", cfg.grammar_path);
  cfg.structure = j.value("structure", cfg.structure);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

std::string evolution_config_to_json(const EvolutionConfig& cfg) {
  ordered_json j;
  j["lambda"] = cfg.lambda;
  j["generations"] = cfg.generations;
  j["rates"] = {{"add_layer", cfg.rates.add_layer},
                {"replicate_layer", cfg.rates.replicate_layer},
                {"remove_layer", cfg.rates.remove_layer},
                {"add_conn", cfg.rates.add_conn},
                {"remove_conn", cfg.rates.remove_conn},
                {"dsge_layer", cfg.rates.dsge_layer},
                {"dsge_learning", cfg.rates.dsge_learning},
                {"train_time", cfg.rates.train_time}};
  j["gaussian"] = {{"mu", cfg.gaussian_mu}, {"sigma", cfg.gaussian_sigma}};
  j["budget"] = {{"default", cfg.budget.default_steps},
                 {"max", cfg.budget.max_steps},
                 {"increment", cfg.budget.increment}};
  j["tau"] = cfg.tau;
  j["beta"] = cfg.beta;
  j["seed_mode"] = cfg.seed_mode == SeedMode::Random ? "random" : "seeded";
  j["rng_seed"] = cfg.rng_seed;
  j["jobs"] = cfg.jobs;
  j["attack_eps"] = cfg.attack_eps;
  j["fitness_batch"] = cfg.fitness_batch;
  j["l2_coeff"] = cfg.l2_coeff;
  j["augment"] = cfg.augment;
  j["dataset"] = cfg.dataset;
  j["grammar"] = cfg.grammar_path;
  j["structure"] = cfg.structure;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

std::uint64_t config_hash(const EvolutionConfig& cfg) {
  // out_dir, jobs and the stop horizon do not affect the per-generation
  // trajectory; resuming may extend `generations`
  EvolutionConfig canon = cfg;
  canon.out_dir = "";
  canon.jobs = 1;
  canon.generations = 0;
  const std::string s = evolution_config_to_json(canon);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- mutation machinery ----

namespace {

// Re-derives connection lists that stopped satisfying the window rules after
// a structural change; never touches valid skip connections.
void normalize_connections(Genome& g, Rng& rng) {
  const int n = static_cast<int>(g.layer_units.size());
  for (int i = 0; i < n; ++i) {
    auto& u = g.layer_units[static_cast<size_t>(i)];
    const auto& spec = g.modules[static_cast<size_t>(u.module_index)];
    if (!spec.allow_skip) {
      u.inputs = {i - 1};
      continue;
    }
    std::vector<int> kept;
    for (int s : u.inputs) {
      if (s >= -1 && s < i && connection_distance(i, s) <= spec.levels_back) kept.push_back(s);
    }
    std::sort(kept.begin(), kept.end());
    kept.erase(std::unique(kept.begin(), kept.end()), kept.end());
    if (kept.empty()) {
      const auto window = connection_window(i, spec);
      kept.push_back(window[static_cast<size_t>(
          rng.uniform_index(static_cast<int>(window.size())))]);
    }
    u.inputs = std::move(kept);
  }
}

// Shifts all connection indices after inserting a unit at global position p.
void shift_for_insert(Genome& g, int p) {
  for (size_t i = 0; i < g.layer_units.size(); ++i)
    for (int& s : g.layer_units[i].inputs)
      if (s >= p) ++s;
}

void shift_for_remove(Genome& g, int p) {
  for (size_t i = 0; i < g.layer_units.size(); ++i) {
    auto& in = g.layer_units[i].inputs;
    in.erase(std::remove(in.begin(), in.end(), p), in.end());
    for (int& s : in)
      if (s > p) --s;
  }
}

struct ModuleSpan {
  int first = 0;  // global index of the module's first unit
  int count = 0;
};

std::vector<ModuleSpan> module_spans(const Genome& g) {
  std::vector<ModuleSpan> spans(g.modules.size());
  int pos = 0;
  for (size_t m = 0; m < g.modules.size(); ++m) {
    spans[m].first = pos;
    int count = 0;
    while (pos < static_cast<int>(g.layer_units.size()) &&
           g.layer_units[static_cast<size_t>(pos)].module_index == static_cast<int>(m)) {
      ++pos;
      ++count;
    }
    spans[m].count = count;
  }
  return spans;
}

void insert_unit(Genome& g, int module_index, int global_pos, InnerGenotype inner, Rng& rng) {
  shift_for_insert(g, global_pos);
  Unit u;
  u.module_index = module_index;
  u.inner = std::move(inner);
  const auto& spec = g.modules[static_cast<size_t>(module_index)];
  if (!spec.allow_skip) {
    u.inputs = {global_pos - 1};
  } else {
    const auto window = connection_window(global_pos, spec);
    u.inputs = {window[static_cast<size_t>(rng.uniform_index(static_cast<int>(window.size())))]};
  }
  g.layer_units.insert(g.layer_units.begin() + global_pos, std::move(u));
}

}  // namespace

Individual mutate(const Individual& parent, const EvolutionConfig& cfg, const Grammar& grammar,
                  Rng& rng) {
  Individual child;
  child.genome = parent.genome;
  Genome& g = child.genome;

  // gate draws first, in a fixed order, so the stream layout is stable
  const bool do_add = rng.bernoulli(cfg.rates.add_layer);
  const bool do_repl = rng.bernoulli(cfg.rates.replicate_layer);
  const bool do_del = rng.bernoulli(cfg.rates.remove_layer);
  const bool do_add_conn = rng.bernoulli(cfg.rates.add_conn);
  const bool do_del_conn = rng.bernoulli(cfg.rates.remove_conn);
  const bool do_dsge_layer = rng.bernoulli(cfg.rates.dsge_layer);
  const bool do_dsge_learning = rng.bernoulli(cfg.rates.dsge_learning);
  const bool do_train_time = rng.bernoulli(cfg.rates.train_time);

  if (do_add) {
    const auto spans = module_spans(g);
    std::vector<int> eligible;
    for (size_t m = 0; m < g.modules.size(); ++m)
      if (spans[m].count < g.modules[m].max_units) eligible.push_back(static_cast<int>(m));
    if (!eligible.empty()) {
      const int m = eligible[static_cast<size_t>(rng.uniform_index(static_cast<int>(eligible.size())))];
      const auto span = spans[static_cast<size_t>(m)];
      const int pos = span.first + static_cast<int>(rng.uniform_int(0, span.count));
      insert_unit(g, m, pos, derive(grammar, g.modules[static_cast<size_t>(m)].nonterminal, rng),
                  rng);
    }
  }

  if (do_repl) {
    const auto spans = module_spans(g);
    std::vector<int> eligible;
    for (size_t m = 0; m < g.modules.size(); ++m)
      if (spans[m].count >= 1 && spans[m].count < g.modules[m].max_units)
        eligible.push_back(static_cast<int>(m));
    if (!eligible.empty()) {
      const int m = eligible[static_cast<size_t>(rng.uniform_index(static_cast<int>(eligible.size())))];
      const auto span = spans[static_cast<size_t>(m)];
      const int src = span.first + rng.uniform_index(span.count);
      InnerGenotype copy = g.layer_units[static_cast<size_t>(src)].inner;  // by value
      const int pos = span.first + static_cast<int>(rng.uniform_int(0, span.count));
      insert_unit(g, m, pos, std::move(copy), rng);
    }
  }

  if (do_del) {
    const auto spans = module_spans(g);
    std::vector<int> eligible;
    for (size_t m = 0; m < g.modules.size(); ++m)
      if (spans[m].count > g.modules[m].min_units) eligible.push_back(static_cast<int>(m));
    if (!eligible.empty()) {
      const int m = eligible[static_cast<size_t>(rng.uniform_index(static_cast<int>(eligible.size())))];
      const auto span = spans[static_cast<size_t>(m)];
      const int pos = span.first + rng.uniform_index(span.count);
      g.layer_units.erase(g.layer_units.begin() + pos);
      shift_for_remove(g, pos);
    }
  }

  normalize_connections(g, rng);

  if (do_add_conn) {
    // units in skip modules with spare window candidates
    std::vector<std::pair<int, std::vector<int>>> eligible;
    for (int i = 0; i < static_cast<int>(g.layer_units.size()); ++i) {
      const auto& u = g.layer_units[static_cast<size_t>(i)];
      const auto& spec = g.modules[static_cast<size_t>(u.module_index)];
      if (!spec.allow_skip) continue;
      std::vector<int> candidates;
      for (int s : connection_window(i, spec))
        if (std::find(u.inputs.begin(), u.inputs.end(), s) == u.inputs.end())
          candidates.push_back(s);
      if (!candidates.empty()) eligible.emplace_back(i, std::move(candidates));
    }
    if (!eligible.empty()) {
      auto& [i, candidates] =
          eligible[static_cast<size_t>(rng.uniform_index(static_cast<int>(eligible.size())))];
      auto& in = g.layer_units[static_cast<size_t>(i)].inputs;
      in.push_back(candidates[static_cast<size_t>(
          rng.uniform_index(static_cast<int>(candidates.size())))]);
      std::sort(in.begin(), in.end());
    }
  }

  if (do_del_conn) {
    std::vector<int> eligible;
    for (int i = 0; i < static_cast<int>(g.layer_units.size()); ++i) {
      const auto& u = g.layer_units[static_cast<size_t>(i)];
      if (g.modules[static_cast<size_t>(u.module_index)].allow_skip && u.inputs.size() >= 2)
        eligible.push_back(i);
    }
    if (!eligible.empty()) {
      const int i = eligible[static_cast<size_t>(rng.uniform_index(static_cast<int>(eligible.size())))];
      auto& in = g.layer_units[static_cast<size_t>(i)].inputs;
      in.erase(in.begin() + rng.uniform_index(static_cast<int>(in.size())));
    }
  }

  if (do_dsge_layer && !g.layer_units.empty()) {
    const int i = rng.uniform_index(static_cast<int>(g.layer_units.size()));
    auto& u = g.layer_units[static_cast<size_t>(i)];
    u.inner = mutate_dsge(grammar, u.inner, rng, cfg.gaussian_mu, cfg.gaussian_sigma);
  }

  if (do_dsge_learning)
    g.learning_unit =
        mutate_dsge(grammar, g.learning_unit, rng, cfg.gaussian_mu, cfg.gaussian_sigma);

  if (do_train_time) {
    if (g.budget >= cfg.budget.max_steps) {
      // cap reached: strict reset back to the default training time
      g.budget = cfg.budget.default_steps;
    } else {
      g.budget = std::min(g.budget + cfg.budget.increment, cfg.budget.max_steps);
    }
  }

  repair_dead_ends(g, rng);
  if (const auto violations = validate(g); !violations.empty())
    throw std::logic_error("mutation produced invalid genome: " + violations.front().rule +
                           ": " + violations.front().message);
  return child;
}

std::vector<Individual> init_population(const EvolutionConfig& cfg, const Grammar& grammar,
                                        const std::vector<ModuleSpec>& specs, Rng& rng) {
  std::vector<Individual> pop;
  if (cfg.seed_mode == SeedMode::Random) {
    for (int i = 0; i < cfg.lambda; ++i) {
      Individual ind;
      ind.genome = random_genome(specs, grammar, rng, cfg.budget.default_steps);
      pop.push_back(std::move(ind));
    }
    return pop;
  }
  const SeedVariant variant =
      cfg.structure == "cifar" ? SeedVariant::Cifar : SeedVariant::Desk;
  Individual seed;
  seed.genome = seed_genome(grammar, rng, variant, cfg.budget.default_steps);
  pop.push_back(seed);
  for (int i = 1; i < cfg.lambda; ++i) pop.push_back(mutate(pop.front(), cfg, grammar, rng));
  return pop;
}

int select(const Individual* parent, std::vector<Individual>& offspring,
           const RetrainFn& retrain) {
  std::vector<bool> retrained(offspring.size(), false);
  while (true) {
    int best = -1;  // -1 = incumbent parent
    double best_f = parent && parent->fitness ? parent->fitness->F
                                              : -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < offspring.size(); ++i) {
      const double f = offspring[i].fitness ? offspring[i].fitness->F
                                            : -std::numeric_limits<double>::infinity();
      if (f > best_f) {  // ties prefer the incumbent, then the lowest index
        best_f = f;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) return -1;
    if (!parent) return best;
    auto& challenger = offspring[static_cast<size_t>(best)];
    if (challenger.evaluated_budget >= parent->evaluated_budget ||
        retrained[static_cast<size_t>(best)])
      return best;
    // fair comparison: extend the cheaper-trained winner to the incumbent's budget
    retrained[static_cast<size_t>(best)] = true;
    retrain(challenger, parent->evaluated_budget);
  }
}

// ---- evaluation pipeline ----

namespace {

class Evaluator {
 public:
  Evaluator(const Grammar& grammar, const DataBundle& data, const EvolutionConfig& cfg)
      : grammar_(grammar), data_(data), cfg_(cfg) {
    tm_.norm = ThreatModel::Norm::Linf;
    tm_.eps = cfg.attack_eps;
    input_shape_ = data.fitness.sample_shape();
    n_classes_ = data.fitness.n_classes;
  }

  void evaluate(Individual& ind, const WarmupController& warmup, std::uint64_t eval_seed,
                long long budget) const {
    ind.evaluated_budget = budget;
    NetworkPlan plan;
    try {
      plan = decode_genome(ind.genome, grammar_, input_shape_);
    } catch (const std::exception&) {
      ind.fitness = penalized_report(IllFitted::InvalidPlan, warmup.regime());
      return;
    }
    ind.plan_hash = plan_hash(plan);
    ind.learning_hash = attrs_hash(plan.learning);

    const ShapeResult shapes = infer_shapes(plan, n_classes_);
    if (!shapes.ok) {
      ind.fitness = penalized_report(IllFitted::InvalidPlan, warmup.regime());
      return;
    }

    Rng build_rng(Rng::mix(eval_seed, 0xb11dULL));
    Network net = build_network(plan, n_classes_, build_rng);

    TrainConfig tc = train_config_from_attrs(plan.learning, budget);
    tc.l2_coeff = cfg_.l2_coeff;
    tc.augment = cfg_.augment;
    tc.rng_seed = Rng::mix(eval_seed, 0x7247ULL);
    const OptimizerConfig oc = optimizer_from_attrs(plan.learning);

    const TrainReport tr = train(net, data_.evo_train, data_.control, tc, oc);
    ind.fitness = evaluate_individual(net, data_.fitness, cfg_.beta, tm_, warmup, tr,
                                      cfg_.fitness_batch);
  }

 private:
  const Grammar& grammar_;
  const DataBundle& data_;
  const EvolutionConfig& cfg_;
  ThreatModel tm_;
  std::array<int, 3> input_shape_;
  int n_classes_ = 0;
};

// ---- checkpointing ----

ordered_json fitness_to_json(const FitnessReport& r) {
  ordered_json j;
  j["C"] = r.C;
  j["A"] = r.A;
  j["F"] = r.F;
  j["n_clean"] = r.n_clean;
  j["n_correct"] = r.n_correct;
  j["ill_fitted"] = r.ill_fitted ? to_string(*r.ill_fitted) : "";
  j["regime"] = r.regime == FitnessRegime::Warmup ? "warmup" : "fbeta";
  j["a_evaluated"] = r.a_evaluated;
  return j;
}

FitnessReport fitness_from_json(const ordered_json& j) {
  FitnessReport r;
  r.C = j.at("C").get<double>();
  r.A = j.at("A").get<double>();
  r.F = j.at("F").get<double>();
  r.n_clean = j.at("n_clean").get<long long>();
  r.n_correct = j.at("n_correct").get<long long>();
  const std::string ill = j.at("ill_fitted").get<std::string>();
  if (ill == "non-finite-loss") r.ill_fitted = IllFitted::NonFiniteLoss;
  else if (ill == "trivial-classifier") r.ill_fitted = IllFitted::TrivialClassifier;
  else if (ill == "invalid-plan") r.ill_fitted = IllFitted::InvalidPlan;
  r.regime = j.at("regime").get<std::string>() == "fbeta" ? FitnessRegime::FBeta
                                                          : FitnessRegime::Warmup;
  r.a_evaluated = j.at("a_evaluated").get<bool>();
  return r;
}

ordered_json individual_to_json(const Individual& ind) {
  ordered_json j;
  j["genome"] = ordered_json::parse(genome_to_json(ind.genome));
  if (ind.fitness) j["fitness"] = fitness_to_json(*ind.fitness);
  j["plan_hash"] = ind.plan_hash;
  j["learning_hash"] = ind.learning_hash;
  j["evaluated_budget"] = ind.evaluated_budget;
  return j;
}

Individual individual_from_json(const ordered_json& j) {
  Individual ind;
  ind.genome = genome_from_json(j.at("genome").dump());
  if (j.contains("fitness")) ind.fitness = fitness_from_json(j.at("fitness"));
  ind.plan_hash = j.at("plan_hash").get<std::uint64_t>();
  ind.learning_hash = j.at("learning_hash").get<std::uint64_t>();
  ind.evaluated_budget = j.at("evaluated_budget").get<long long>();
  return ind;
}

ordered_json row_to_json(const IndividualRow& r) {
  return ordered_json{{"generation", r.generation}, {"index", r.index},     {"kind", r.kind},
                      {"C", r.C},                   {"A", r.A},             {"F", r.F},
                      {"regime", std::string(1, r.regime)},                 {"ill", r.ill_fitted},
                      {"budget", r.budget},         {"plan_hash", r.plan_hash}};
}

IndividualRow row_from_json(const ordered_json& j) {
  IndividualRow r;
  r.generation = j.at("generation").get<int>();
  r.index = j.at("index").get<int>();
  r.kind = j.at("kind").get<std::string>();
  r.C = j.at("C").get<double>();
  r.A = j.at("A").get<double>();
  r.F = j.at("F").get<double>();
  r.regime = j.at("regime").get<std::string>()[0];
  r.ill_fitted = j.at("ill").get<std::string>();
  r.budget = j.at("budget").get<long long>();
  r.plan_hash = j.at("plan_hash").get<std::uint64_t>();
  return r;
}

ordered_json gen_row_to_json(const GenerationRow& r) {
  return ordered_json{{"generation", r.generation},
                      {"best_F", r.best_F},
                      {"mean_F", r.mean_F},
                      {"best_C", r.best_C},
                      {"best_A", r.best_A},
                      {"regime", std::string(1, r.regime)},
                      {"transitioned_now", r.transitioned_now}};
}

GenerationRow gen_row_from_json(const ordered_json& j) {
  GenerationRow r;
  r.generation = j.at("generation").get<int>();
  r.best_F = j.at("best_F").get<double>();
  r.mean_F = j.at("mean_F").get<double>();
  r.best_C = j.at("best_C").get<double>();
  r.best_A = j.at("best_A").get<double>();
  r.regime = j.at("regime").get<std::string>()[0];
  r.transitioned_now = j.at("transitioned_now").get<bool>();
  return r;
}

struct RunState {
  int generation = -1;  // last completed generation
  Rng rng;
  WarmupController warmup;
  Individual parent;
  RunLog log;
};

void save_run_checkpoint(const std::string& dir, const EvolutionConfig& cfg,
                         const RunState& st) {
  ordered_json j;
  j["format"] = "nero-run-checkpoint";
  j["version"] = 1;
  j["config_hash"] = config_hash(cfg);
  j["generation"] = st.generation;
  j["rng"] = st.rng.serialize();
  j["warmup"] = {{"tau", st.warmup.tau}, {"transitioned", st.warmup.transitioned}};
  j["parent"] = individual_to_json(st.parent);
  j["base_evaluations"] = st.log.base_evaluations;
  j["retrainings"] = st.log.retrainings;
  j["transition_generation"] = st.log.transition_generation;
  j["individual_rows"] = ordered_json::array();
  for (const auto& r : st.log.individuals) j["individual_rows"].push_back(row_to_json(r));
  j["generation_rows"] = ordered_json::array();
  for (const auto& r : st.log.generations) j["generation_rows"].push_back(gen_row_to_json(r));

  char name[32];
  std::snprintf(name, sizeof(name), "gen_%05d.json", st.generation);
  const fs::path path = fs::path(dir) / name;
  std::ofstream f(path);
  f << j.dump();
  std::ofstream latest(fs::path(dir) / "latest");
  latest << name << "\n";
}

RunState load_run_checkpoint(const std::string& dir, const EvolutionConfig& cfg) {
  std::ifstream latest(fs::path(dir) / "latest");
  if (!latest) throw std::runtime_error("no checkpoint to resume from in " + dir);
  std::string name;
  latest >> name;
  std::ifstream f(fs::path(dir) / name);
  if (!f) throw std::runtime_error("checkpoint file missing: " + name);
  std::stringstream buf;
  buf << f.rdbuf();
  const auto j = ordered_json::parse(buf.str());
  if (j.value("format", "") != "nero-run-checkpoint" || j.value("version", 0) != 1)
    throw std::runtime_error("unrecognized checkpoint format");
  if (j.at("config_hash").get<std::uint64_t>() != config_hash(cfg))
    throw std::runtime_error("checkpoint was produced by a different configuration");

  RunState st;
  st.generation = j.at("generation").get<int>();
  st.rng = Rng::deserialize(j.at("rng").get<std::string>());
  st.warmup.tau = j.at("warmup").at("tau").get<double>();
  st.warmup.transitioned = j.at("warmup").at("transitioned").get<bool>();
  st.parent = individual_from_json(j.at("parent"));
  st.log.base_evaluations = j.at("base_evaluations").get<long long>();
  st.log.retrainings = j.at("retrainings").get<long long>();
  st.log.transition_generation = j.at("transition_generation").get<int>();
  for (const auto& r : j.at("individual_rows")) st.log.individuals.push_back(row_from_json(r));
  for (const auto& r : j.at("generation_rows")) st.log.generations.push_back(gen_row_from_json(r));
  return st;
}

IndividualRow make_row(int gen, int index, const std::string& kind, const Individual& ind) {
  IndividualRow r;
  r.generation = gen;
  r.index = index;
  r.kind = kind;
  if (ind.fitness) {
    r.C = ind.fitness->C;
    r.A = ind.fitness->A;
    r.F = ind.fitness->F;
    r.regime = ind.fitness->regime == FitnessRegime::Warmup ? 'W' : 'F';
    r.ill_fitted = ind.fitness->ill_fitted ? to_string(*ind.fitness->ill_fitted) : "";
  }
  r.budget = ind.genome.budget;
  r.plan_hash = ind.plan_hash;
  return r;
}

}  // namespace

RunLog run(const EvolutionConfig& cfg, const Grammar& grammar,
           const std::vector<ModuleSpec>& specs, const DataBundle& data, bool resume) {
  const fs::path out_dir(cfg.out_dir);
  const fs::path ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  Evaluator evaluator(grammar, data, cfg);
  RunState st;
  st.warmup.tau = cfg.tau;
  st.rng = Rng(cfg.rng_seed);
  if (resume) st = load_run_checkpoint(ckpt_dir.string(), cfg);

  for (int gen = st.generation + 1; gen < cfg.generations; ++gen) {
    // breed
    std::vector<Individual> offspring;
    if (gen == 0) {
      offspring = init_population(cfg, grammar, specs, st.rng);
    } else {
      for (int i = 0; i < cfg.lambda; ++i)
        offspring.push_back(mutate(st.parent, cfg, grammar, st.rng));
    }

    // evaluate (cache offspring identical to the parent)
    std::vector<bool> cached(offspring.size(), false);
    std::vector<int> to_eval;
    for (size_t i = 0; i < offspring.size(); ++i) {
      if (gen > 0 && st.parent.fitness) {
        auto& off = offspring[i];
        NetworkPlan probe;
        bool same = false;
        try {
          probe = decode_genome(off.genome, grammar, data.fitness.sample_shape());
          off.plan_hash = plan_hash(probe);
          off.learning_hash = attrs_hash(probe.learning);
          same = off.plan_hash == st.parent.plan_hash &&
                 off.learning_hash == st.parent.learning_hash &&
                 off.genome.budget == st.parent.genome.budget;
        } catch (const std::exception&) {
          same = false;
        }
        if (same) {
          off.fitness = st.parent.fitness;
          off.evaluated_budget = st.parent.evaluated_budget;
          cached[i] = true;
          continue;
        }
      }
      to_eval.push_back(static_cast<int>(i));
    }

    const int jobs = std::max(1, cfg.jobs);
    if (jobs == 1 || to_eval.size() <= 1) {
      for (int i : to_eval)
        evaluator.evaluate(offspring[static_cast<size_t>(i)], st.warmup,
                           Rng::mix(cfg.rng_seed, static_cast<std::uint64_t>(gen),
                                    static_cast<std::uint64_t>(i)),
                           offspring[static_cast<size_t>(i)].genome.budget);
    } else {
      std::vector<std::thread> pool;
      std::atomic<size_t> next{0};
      for (int t = 0; t < jobs; ++t)
        pool.emplace_back([&]() {
          for (size_t k = next.fetch_add(1); k < to_eval.size(); k = next.fetch_add(1)) {
            const int i = to_eval[k];
            evaluator.evaluate(offspring[static_cast<size_t>(i)], st.warmup,
                               Rng::mix(cfg.rng_seed, static_cast<std::uint64_t>(gen),
                                        static_cast<std::uint64_t>(i)),
                               offspring[static_cast<size_t>(i)].genome.budget);
          }
        });
      for (auto& th : pool) th.join();
    }

    for (size_t i = 0; i < offspring.size(); ++i) {
      st.log.individuals.push_back(make_row(gen, static_cast<int>(i) + 1,
                                            cached[i] ? "cached" : "base", offspring[i]));
      ++st.log.base_evaluations;
    }
    if (gen > 0) st.log.individuals.push_back(make_row(gen, 0, "parent", st.parent));

    // warm-up update on the full generation (parent + offspring)
    std::vector<FitnessReport> reports;
    if (gen > 0 && st.parent.fitness) reports.push_back(*st.parent.fitness);
    for (const auto& off : offspring)
      if (off.fitness) reports.push_back(*off.fitness);
    const bool was_transitioned = st.warmup.transitioned;
    update_warmup(st.warmup, reports);
    const bool transitioned_now = !was_transitioned && st.warmup.transitioned;
    if (transitioned_now) st.log.transition_generation = gen + 1;

    // selection with fair-comparison retraining
    int retrain_count = 0;
    RetrainFn retrain = [&](Individual& ind, long long budget) {
      ind.genome.budget = budget;
      evaluator.evaluate(ind, st.warmup,
                         Rng::mix(cfg.rng_seed ^ 0xfa12c0debeefULL,
                                  static_cast<std::uint64_t>(gen),
                                  static_cast<std::uint64_t>(retrain_count)),
                         budget);
      ++retrain_count;
      ++st.log.retrainings;
      st.log.individuals.push_back(make_row(gen, -1, "retrain", ind));
    };
    const int winner = select(gen > 0 ? &st.parent : nullptr, offspring, retrain);
    if (winner >= 0) st.parent = offspring[static_cast<size_t>(winner)];

    // per-generation summary: elitism series from the incumbent, C/A detail
    // from the generation's best freshly evaluated individual
    GenerationRow grow;
    grow.generation = gen;
    grow.best_F = st.parent.fitness ? st.parent.fitness->F : kPenaltyFitness;
    double mean = 0.0;
    for (const auto& r : reports) mean += r.F;
    grow.mean_F = reports.empty() ? 0.0 : mean / static_cast<double>(reports.size());
    const Individual* gen_best = nullptr;
    for (const auto& off : offspring)
      if (off.fitness && (!gen_best || off.fitness->F > gen_best->fitness->F)) gen_best = &off;
    if (gen_best) {
      grow.best_C = gen_best->fitness->C;
      grow.best_A = gen_best->fitness->A;
    }
    grow.regime = st.warmup.transitioned ? 'F' : 'W';
    grow.transitioned_now = transitioned_now;
    st.log.generations.push_back(grow);

    st.generation = gen;
    save_run_checkpoint(ckpt_dir.string(), cfg, st);
    write_run_csvs(st.log, cfg.out_dir);
    save_genome(st.parent.genome, (out_dir / "best_genome.json").string());
  }

  return st.log;
}

void write_run_csvs(const RunLog& log, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "individuals.csv");
    f << "generation,individual,C,A,F,regime,ill_fitted_reason,budget,kind,plan_hash\n";
    f.precision(17);
    for (const auto& r : log.individuals)
      f << r.generation << "," << r.index << "," << r.C << "," << r.A << "," << r.F << ","
        << r.regime << "," << r.ill_fitted << "," << r.budget << "," << r.kind << ","
        << std::hex << r.plan_hash << std::dec << "\n";
  }
  {
    std::ofstream f(fs::path(out_dir) / "generations.csv");
    f << "generation,best_F,mean_F,best_C,best_A,regime,transitioned_now\n";
    f.precision(17);
    for (const auto& r : log.generations)
      f << r.generation << "," << r.best_F << "," << r.mean_F << "," << r.best_C << ","
        << r.best_A << "," << r.regime << "," << (r.transitioned_now ? 1 : 0) << "\n";
  }
}

}  // namespace nero
