#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nero/grammar.hpp"
#include "nero/netplan.hpp"
#include "nero/rng.hpp"

namespace nero {

/// Outer-level module: 4-element tuple (nonterminal, min, max, allow_skip)
/// plus the levels-back connection window.
struct ModuleSpec {
  std::string nonterminal;
  int min_units = 0;
  int max_units = 1;
  bool allow_skip = false;
  int levels_back = 1;

  bool operator==(const ModuleSpec&) const = default;
};

/// One evolutionary layer unit. Inputs are indices into the global
/// layer-unit ordering; -1 is the network input.
struct Unit {
  int module_index = 0;
  InnerGenotype inner;
  std::vector<int> inputs;

  bool operator==(const Unit&) const = default;
};

struct Genome {
  std::vector<ModuleSpec> modules;
  std::vector<Unit> layer_units;
  InnerGenotype learning_unit;
  long long budget = 0;

  bool operator==(const Genome&) const = default;
};

struct BudgetSpec {
  long long default_steps = 2000;
  long long max_steps = 6000;
  long long increment = 2000;
};

struct Violation {
  int unit_index;  // -1 for genome-level rules
  std::string rule;
  std::string message;
};

struct RepairError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Distance from consumer unit `unit_index` to source index `source`
/// (source -1 = network input). Valid when 1 <= distance <= levels_back.
inline int connection_distance(int unit_index, int source) { return unit_index - source; }

/// Units within the levels-back window of `unit_index` for `spec`.
std::vector<int> connection_window(int unit_index, const ModuleSpec& spec);

Genome random_genome(const std::vector<ModuleSpec>& specs, const Grammar& grammar, Rng& rng,
                     long long default_budget, const std::string& learning_nt = "learning");

/// Empty result iff every genome/unit invariant holds.
std::vector<Violation> validate(const Genome& genome, const BudgetSpec* budget = nullptr);

/// Wires every dead-end unit into one uniformly chosen valid successor.
/// Throws RepairError when a dead end has no reachable successor.
void repair_dead_ends(Genome& genome, Rng& rng);

NetworkPlan decode_genome(const Genome& genome, const Grammar& grammar,
                          std::array<int, 3> input_shape = {32, 32, 3});

/// Hand-transcribed approximation of the NSGA-Net macro-space architecture
/// inside this search space. `desk` selects a reduced variant sized for the
/// 8x8 synthetic dataset.
enum class SeedVariant { Cifar, Desk };
Genome seed_genome(const Grammar& grammar, Rng& rng, SeedVariant variant = SeedVariant::Cifar,
                   long long default_budget = 2000);

/// Outer-level structures. The full one spans stem/features/last-transition/
/// classification/softmax with the published unit bounds; the desk one is a
/// reduced search space for the synthetic dataset.
std::vector<ModuleSpec> cifar_structure();
std::vector<ModuleSpec> desk_structure();

std::string genome_to_json(const Genome& genome);
Genome genome_from_json(const std::string& text);
void save_genome(const Genome& genome, const std::string& path);
Genome load_genome(const std::string& path);

}  // namespace nero
