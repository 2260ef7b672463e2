#include "nero/evolution.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace nero;
namespace fs = std::filesystem;

namespace {

Grammar desk() { return Grammar::parse_file(asset_path("desk.grammar")); }

EvolutionConfig tiny_config(const std::string& out_dir) {
  EvolutionConfig cfg;
  cfg.lambda = 2;
  cfg.generations = 4;
  cfg.budget = {30, 90, 30};
  cfg.tau = 0.80;
  cfg.beta = 4.0;
  cfg.seed_mode = SeedMode::Seeded;
  cfg.rng_seed = 11;
  cfg.attack_eps = 0.1;
  cfg.fitness_batch = 32;
  cfg.augment = false;
  cfg.structure = "desk";
  cfg.out_dir = out_dir;
  return cfg;
}

DataBundle tiny_data(std::uint64_t seed = 5) {
  const Dataset ds = synth_dataset(12, 3, 8, seed);  // 36 samples
  SplitSpec spec;
  spec.evo_train = 24;
  spec.control = 6;
  spec.fitness = 6;
  spec.seed = seed;
  const DataSplit s = split(ds, spec);
  return DataBundle{s.evo_train, s.control, s.fitness};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

}  // namespace

TEST(InitPopulation, SeededIsSeedPlusMutants) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  cfg.lambda = 4;
  Rng rng(1);
  const auto pop = init_population(cfg, g, desk_structure(), rng);
  ASSERT_EQ(pop.size(), 4u);
  for (const auto& ind : pop) EXPECT_TRUE(validate(ind.genome).empty());
  // individual 0 is the seed transcription
  Rng seed_rng(2);
  const Genome reference = seed_genome(g, seed_rng, SeedVariant::Desk, cfg.budget.default_steps);
  ASSERT_EQ(pop[0].genome.layer_units.size(), reference.layer_units.size());
  for (size_t i = 0; i < reference.layer_units.size(); ++i)
    EXPECT_EQ(pop[0].genome.layer_units[i].inputs, reference.layer_units[i].inputs);
}

TEST(InitPopulation, RandomModeAllValid) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  cfg.lambda = 4;
  cfg.seed_mode = SeedMode::Random;
  Rng rng(3);
  const auto pop = init_population(cfg, g, desk_structure(), rng);
  ASSERT_EQ(pop.size(), 4u);
  for (const auto& ind : pop) {
    EXPECT_TRUE(validate(ind.genome).empty());
    EXPECT_EQ(ind.genome.budget, cfg.budget.default_steps);
  }
}

TEST(InitPopulation, DeterministicUnderSeed) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  Rng r1(7), r2(7);
  const auto a = init_population(cfg, g, desk_structure(), r1);
  const auto b = init_population(cfg, g, desk_structure(), r2);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].genome, b[i].genome);
}

TEST(Mutate, TrainTimeIncrementAndCapReset) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  cfg.rates = {0, 0, 0, 0, 0, 0, 0, 1.0};  // only the training-time mutation fires
  Rng rng(4);
  Individual parent;
  parent.genome = seed_genome(g, rng, SeedVariant::Desk, cfg.budget.default_steps);

  Individual child = mutate(parent, cfg, g, rng);
  EXPECT_EQ(child.genome.budget, 60);
  child = mutate(child, cfg, g, rng);
  EXPECT_EQ(child.genome.budget, 90);
  // at the cap the mutation short-circuits back to the default
  child = mutate(child, cfg, g, rng);
  EXPECT_EQ(child.genome.budget, cfg.budget.default_steps);
}

TEST(Mutate, PureTrainTimeKeepsArchitecture) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  cfg.rates = {0, 0, 0, 0, 0, 0, 0, 1.0};
  Rng rng(5);
  Individual parent;
  parent.genome = seed_genome(g, rng, SeedVariant::Desk, 30);
  const Individual child = mutate(parent, cfg, g, rng);
  EXPECT_EQ(child.genome.layer_units, parent.genome.layer_units);
  EXPECT_EQ(child.genome.learning_unit, parent.genome.learning_unit);
  EXPECT_NE(child.genome.budget, parent.genome.budget);
}

TEST(Mutate, FuzzClosure) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  Rng rng(31337);
  Individual parent;
  parent.genome = random_genome(desk_structure(), g, rng, cfg.budget.default_steps);
  const BudgetSpec budget = cfg.budget;
  for (int i = 0; i < 10000; ++i) {
    Individual child = mutate(parent, cfg, g, rng);
    const auto violations = validate(child.genome, &budget);
    ASSERT_TRUE(violations.empty()) << "iteration " << i << ": " << violations.front().rule
                                    << " " << violations.front().message;
    // drift the lineage so many structures get exercised
    if (i % 3 == 0) parent = std::move(child);
  }
}

TEST(Mutate, OperatorsReachEveryKind) {
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config("unused");
  Rng rng(99);
  Individual parent;
  parent.genome = seed_genome(g, rng, SeedVariant::Desk, 30);
  bool grew = false, shrank = false, conn_changed = false, learning_changed = false;
  for (int i = 0; i < 300; ++i) {
    const Individual child = mutate(parent, cfg, g, rng);
    if (child.genome.layer_units.size() > parent.genome.layer_units.size()) grew = true;
    if (child.genome.layer_units.size() < parent.genome.layer_units.size()) shrank = true;
    if (child.genome.layer_units.size() == parent.genome.layer_units.size()) {
      for (size_t u = 0; u < child.genome.layer_units.size(); ++u)
        if (child.genome.layer_units[u].inputs != parent.genome.layer_units[u].inputs)
          conn_changed = true;
    }
    if (!(child.genome.learning_unit == parent.genome.learning_unit)) learning_changed = true;
  }
  EXPECT_TRUE(grew);
  EXPECT_TRUE(shrank);
  EXPECT_TRUE(conn_changed);
  EXPECT_TRUE(learning_changed);
}

TEST(Select, ElitismOnTiesAndWorseOffspring) {
  Individual parent;
  parent.fitness = FitnessReport{};
  parent.fitness->F = 0.8;
  parent.evaluated_budget = 300;

  std::vector<Individual> offspring(3);
  for (auto& o : offspring) {
    o.fitness = FitnessReport{};
    o.evaluated_budget = 300;
  }
  offspring[0].fitness->F = 0.5;
  offspring[1].fitness->F = 0.8;  // exact tie
  offspring[2].fitness->F = 0.79;

  int retrains = 0;
  const int winner = select(&parent, offspring, [&](Individual&, long long) { ++retrains; });
  EXPECT_EQ(winner, -1);
  EXPECT_EQ(retrains, 0);
}

TEST(Select, FairComparisonRetrainsCheaperWinner) {
  Individual parent;
  parent.fitness = FitnessReport{};
  parent.fitness->F = 0.6;
  parent.evaluated_budget = 600;

  std::vector<Individual> offspring(2);
  offspring[0].fitness = FitnessReport{};
  offspring[0].fitness->F = 0.9;
  offspring[0].evaluated_budget = 300;  // cheaper training, must be retrained
  offspring[1].fitness = FitnessReport{};
  offspring[1].fitness->F = 0.1;
  offspring[1].evaluated_budget = 600;

  // retraining keeps it ahead -> it wins at the incumbent budget
  int retrains = 0;
  int winner = select(&parent, offspring, [&](Individual& ind, long long budget) {
    ++retrains;
    EXPECT_EQ(budget, 600);
    ind.evaluated_budget = budget;
    ind.fitness->F = 0.85;
  });
  EXPECT_EQ(winner, 0);
  EXPECT_EQ(retrains, 1);

  // retraining collapses the advantage -> the incumbent is retained
  offspring[0].fitness->F = 0.9;
  offspring[0].evaluated_budget = 300;
  retrains = 0;
  winner = select(&parent, offspring, [&](Individual& ind, long long budget) {
    ++retrains;
    ind.evaluated_budget = budget;
    ind.fitness->F = 0.2;
  });
  EXPECT_EQ(winner, -1);
  EXPECT_EQ(retrains, 1);
}

TEST(Select, FirstGenerationPicksBestByLowestIndex) {
  std::vector<Individual> offspring(3);
  for (auto& o : offspring) {
    o.fitness = FitnessReport{};
    o.evaluated_budget = 300;
  }
  offspring[0].fitness->F = 0.4;
  offspring[1].fitness->F = 0.7;
  offspring[2].fitness->F = 0.7;  // tie with index 1
  const int winner = select(nullptr, offspring, [](Individual&, long long) {});
  EXPECT_EQ(winner, 1);
}

TEST(ConfigFile, RoundTripAndUnknownKeyRejection) {
  EvolutionConfig cfg = tiny_config("somewhere");
  cfg.rates.replicate_layer = 0.5;
  cfg.dataset = "synth";
  const std::string text = evolution_config_to_json(cfg);

  const fs::path path = fs::temp_directory_path() / "nero_cfg_test.json";
  {
    std::ofstream f(path);
    f << text;
  }
  const EvolutionConfig back = load_evolution_config(path.string());
  EXPECT_EQ(evolution_config_to_json(back), text);
  EXPECT_EQ(config_hash(back), config_hash(cfg));

  {
    std::ofstream f(path);
    f << "{\"lambda\": 4, \"not_a_key\": 1}";
  }
  EXPECT_THROW(load_evolution_config(path.string()), std::runtime_error);
  fs::remove(path);
}

TEST(ConfigFile, DefaultsMatchPublishedTable) {
  const EvolutionConfig cfg;
  EXPECT_EQ(cfg.lambda, 4);
  EXPECT_EQ(cfg.generations, 100);
  EXPECT_DOUBLE_EQ(cfg.rates.add_layer, 0.25);
  EXPECT_DOUBLE_EQ(cfg.rates.replicate_layer, 0.35);
  EXPECT_DOUBLE_EQ(cfg.rates.remove_layer, 0.25);
  EXPECT_DOUBLE_EQ(cfg.rates.add_conn, 0.15);
  EXPECT_DOUBLE_EQ(cfg.rates.remove_conn, 0.15);
  EXPECT_DOUBLE_EQ(cfg.rates.dsge_layer, 0.15);
  EXPECT_DOUBLE_EQ(cfg.rates.dsge_learning, 0.30);
  EXPECT_DOUBLE_EQ(cfg.rates.train_time, 0.10);
  EXPECT_DOUBLE_EQ(cfg.gaussian_mu, 0.0);
  EXPECT_DOUBLE_EQ(cfg.gaussian_sigma, 0.15);
  EXPECT_DOUBLE_EQ(cfg.tau, 0.80);
  EXPECT_DOUBLE_EQ(cfg.beta, 4.0);
  EXPECT_NEAR(cfg.attack_eps, 8.0 / 255.0, 1e-12);
  EXPECT_EQ(cfg.fitness_batch, 128);
  EXPECT_EQ(cfg.budget.max_steps / cfg.budget.default_steps, 3);  // 10 vs 30 minutes
}

TEST(Run, CompletesWithExpectedEvaluationCount) {
  const fs::path out = fs::temp_directory_path() / "nero_run_basic";
  fs::remove_all(out);
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config(out.string());
  const DataBundle data = tiny_data();
  const RunLog log = run(cfg, g, desk_structure(), data);

  EXPECT_EQ(log.base_evaluations, cfg.lambda * cfg.generations);
  EXPECT_EQ(log.generations.size(), static_cast<size_t>(cfg.generations));

  // elitism: best F non-decreasing within each regime
  for (size_t i = 1; i < log.generations.size(); ++i) {
    if (log.generations[i].regime == log.generations[i - 1].regime &&
        !log.generations[i].transitioned_now)
      EXPECT_GE(log.generations[i].best_F, log.generations[i - 1].best_F - 1e-12);
  }

  EXPECT_TRUE(fs::exists(out / "individuals.csv"));
  EXPECT_TRUE(fs::exists(out / "generations.csv"));
  EXPECT_TRUE(fs::exists(out / "best_genome.json"));
  const Genome best = load_genome((out / "best_genome.json").string());
  EXPECT_TRUE(validate(best).empty());
  fs::remove_all(out);
}

TEST(Run, CachedOffspringReuseParentReport) {
  const fs::path out = fs::temp_directory_path() / "nero_run_cached";
  fs::remove_all(out);
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config(out.string());
  cfg.rates = {0, 0, 0, 0, 0, 0, 0, 0};  // offspring are exact copies
  cfg.generations = 3;
  const DataBundle data = tiny_data();
  const RunLog log = run(cfg, g, desk_structure(), data);

  int cached = 0;
  for (const auto& row : log.individuals)
    if (row.kind == "cached") ++cached;
  // generations 1..2 produce lambda cached offspring each
  EXPECT_EQ(cached, cfg.lambda * (cfg.generations - 1));
  fs::remove_all(out);
}

TEST(Run, ResumeReproducesUninterruptedRunBitwise) {
  const Grammar g = desk();
  const DataBundle data = tiny_data();

  const fs::path full_dir = fs::temp_directory_path() / "nero_run_full";
  fs::remove_all(full_dir);
  EvolutionConfig cfg_full = tiny_config(full_dir.string());
  run(cfg_full, g, desk_structure(), data);

  // interrupted twin: run 2 generations, then resume to the full horizon
  const fs::path part_dir = fs::temp_directory_path() / "nero_run_part";
  fs::remove_all(part_dir);
  EvolutionConfig cfg_part = tiny_config(part_dir.string());
  cfg_part.generations = 2;
  run(cfg_part, g, desk_structure(), data);
  cfg_part.generations = cfg_full.generations;
  run(cfg_part, g, desk_structure(), data, /*resume=*/true);

  EXPECT_EQ(slurp(full_dir / "individuals.csv"), slurp(part_dir / "individuals.csv"));
  EXPECT_EQ(slurp(full_dir / "generations.csv"), slurp(part_dir / "generations.csv"));
  EXPECT_EQ(slurp(full_dir / "best_genome.json"), slurp(part_dir / "best_genome.json"));
  fs::remove_all(full_dir);
  fs::remove_all(part_dir);
}

TEST(Run, ResumeRejectsAlteredConfig) {
  const fs::path out = fs::temp_directory_path() / "nero_run_cfgmismatch";
  fs::remove_all(out);
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config(out.string());
  cfg.generations = 2;
  const DataBundle data = tiny_data();
  run(cfg, g, desk_structure(), data);

  cfg.tau = 0.5;  // a trajectory-relevant change
  cfg.generations = 4;
  EXPECT_THROW(run(cfg, g, desk_structure(), data, /*resume=*/true), std::runtime_error);
  fs::remove_all(out);
}

TEST(Run, BudgetsStayWithinBounds) {
  const fs::path out = fs::temp_directory_path() / "nero_run_budget";
  fs::remove_all(out);
  const Grammar g = desk();
  EvolutionConfig cfg = tiny_config(out.string());
  cfg.generations = 6;
  cfg.rates.train_time = 0.9;  // hammer the training-time gene
  const DataBundle data = tiny_data();
  const RunLog log = run(cfg, g, desk_structure(), data);
  for (const auto& row : log.individuals) {
    EXPECT_GE(row.budget, cfg.budget.default_steps);
    EXPECT_LE(row.budget, cfg.budget.max_steps);
  }
  fs::remove_all(out);
}

TEST(Run, ParallelJobsMatchSingleThread) {
  const Grammar g = desk();
  const DataBundle data = tiny_data();

  const fs::path a_dir = fs::temp_directory_path() / "nero_run_seq";
  const fs::path b_dir = fs::temp_directory_path() / "nero_run_par";
  fs::remove_all(a_dir);
  fs::remove_all(b_dir);
  EvolutionConfig a = tiny_config(a_dir.string());
  EvolutionConfig b = tiny_config(b_dir.string());
  b.jobs = 2;
  run(a, g, desk_structure(), data);
  run(b, g, desk_structure(), data);
  EXPECT_EQ(slurp(a_dir / "individuals.csv"), slurp(b_dir / "individuals.csv"));
  fs::remove_all(a_dir);
  fs::remove_all(b_dir);
}
