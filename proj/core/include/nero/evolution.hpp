#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nero/fitness.hpp"
#include "nero/genome.hpp"

namespace nero {

struct MutationRates {
  double add_layer = 0.25;
  double replicate_layer = 0.35;
  double remove_layer = 0.25;
  double add_conn = 0.15;
  double remove_conn = 0.15;
  double dsge_layer = 0.15;
  double dsge_learning = 0.30;
  double train_time = 0.10;
};

enum class SeedMode { Random, Seeded };

struct EvolutionConfig {
  int lambda = 4;
  int generations = 100;
  MutationRates rates;
  double gaussian_mu = 0.0;
  double gaussian_sigma = 0.15;
  BudgetSpec budget;  // default/max/increment, in update steps
  double tau = 0.80;
  double beta = 4.0;
  SeedMode seed_mode = SeedMode::Seeded;
  std::uint64_t rng_seed = 1;
  int jobs = 1;

  // evaluation setup
  double attack_eps = 8.0 / 255.0;
  int fitness_batch = 128;
  double l2_coeff = 5e-4;
  bool augment = true;

  // run wiring
  std::string dataset = "synth";     // "synth" or "cifar10:<dir>"
  std::string grammar_path;          // empty = bundled grammar for `structure`
  std::string structure = "desk";    // "desk" or "cifar"
  std::string out_dir = "run-out";
};

/// Parses the run config document (JSON, comments allowed); unknown keys are
/// rejected, missing ones keep the published defaults.
EvolutionConfig load_evolution_config(const std::string& path);
std::string evolution_config_to_json(const EvolutionConfig& cfg);
std::uint64_t config_hash(const EvolutionConfig& cfg);

struct Individual {
  Genome genome;
  std::optional<FitnessReport> fitness;
  std::uint64_t plan_hash = 0;
  std::uint64_t learning_hash = 0;
  long long evaluated_budget = 0;
};

/// Random mode: lambda independent random genomes. Seeded mode: the seed
/// architecture plus lambda-1 mutants of it.
std::vector<Individual> init_population(const EvolutionConfig& cfg, const Grammar& grammar,
                                        const std::vector<ModuleSpec>& specs, Rng& rng);

/// One offspring: every operator fires independently at its configured rate,
/// applied structural -> connections -> DSGE -> training time; dead ends are
/// repaired and the result always validates.
Individual mutate(const Individual& parent, const EvolutionConfig& cfg, const Grammar& grammar,
                  Rng& rng);

/// Re-evaluation hook used by selection for fair-comparison retraining:
/// trains the individual at the given budget and refreshes its fitness.
using RetrainFn = std::function<void(Individual&, long long budget)>;

/// Elitist (1+lambda) selection with fair comparison: a winning challenger
/// trained on a smaller budget is re-trained at the incumbent's budget before
/// the final decision. Ties prefer the incumbent, then the lowest index.
/// With no incumbent (first generation) pass parent = nullptr.
int select(const Individual* parent, std::vector<Individual>& offspring,
           const RetrainFn& retrain);

struct DataBundle {
  Dataset evo_train;
  Dataset control;
  Dataset fitness;
};

struct IndividualRow {
  int generation = 0;
  int index = 0;  // 0 = incumbent parent row
  std::string kind;  // "base", "cached", "retrain", "parent"
  double C = 0.0, A = 0.0, F = 0.0;
  char regime = 'W';
  std::string ill_fitted;
  long long budget = 0;
  std::uint64_t plan_hash = 0;
};

struct GenerationRow {
  int generation = 0;
  double best_F = 0.0, mean_F = 0.0, best_C = 0.0, best_A = 0.0;
  char regime = 'W';
  bool transitioned_now = false;
};

struct RunLog {
  std::vector<IndividualRow> individuals;
  std::vector<GenerationRow> generations;
  long long base_evaluations = 0;
  long long retrainings = 0;
  int transition_generation = -1;  // first generation evaluated under F_beta
};

/// Full evolutionary run: generation loop, warm-up update, selection,
/// per-generation checkpointing and CSV logs under cfg.out_dir. With
/// resume=true the loop continues from the newest checkpoint.
RunLog run(const EvolutionConfig& cfg, const Grammar& grammar,
           const std::vector<ModuleSpec>& specs, const DataBundle& data, bool resume = false);

void write_run_csvs(const RunLog& log, const std::string& out_dir);

}  // namespace nero
