#include "nero/genome.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace nero {

using ordered_json = nlohmann::ordered_json;

std::vector<int> connection_window(int unit_index, const ModuleSpec& spec) {
  std::vector<int> window;
  const int lo = std::max(-1, unit_index - spec.levels_back);
  for (int s = lo; s < unit_index; ++s) window.push_back(s);
  return window;
}

Genome random_genome(const std::vector<ModuleSpec>& specs, const Grammar& grammar, Rng& rng,
                     long long default_budget, const std::string& learning_nt) {
  Genome g;
  g.modules = specs;
  g.budget = default_budget;
  for (size_t m = 0; m < specs.size(); ++m) {
    const auto& spec = specs[m];
    const int count = static_cast<int>(rng.uniform_int(spec.min_units, spec.max_units));
    for (int k = 0; k < count; ++k) {
      Unit u;
      u.module_index = static_cast<int>(m);
      u.inner = derive(grammar, spec.nonterminal, rng);
      const int index = static_cast<int>(g.layer_units.size());
      if (!spec.allow_skip) {
        u.inputs = {index - 1};
      } else {
        auto window = connection_window(index, spec);
        const int k_inputs = static_cast<int>(rng.uniform_int(1, static_cast<long long>(window.size())));
        // partial Fisher-Yates draw of k distinct sources
        for (int i = 0; i < k_inputs; ++i) {
          const int j = i + rng.uniform_index(static_cast<int>(window.size()) - i);
          std::swap(window[static_cast<size_t>(i)], window[static_cast<size_t>(j)]);
        }
        u.inputs.assign(window.begin(), window.begin() + k_inputs);
        std::sort(u.inputs.begin(), u.inputs.end());
      }
      g.layer_units.push_back(std::move(u));
    }
  }
  g.learning_unit = derive(grammar, learning_nt, rng);
  repair_dead_ends(g, rng);
  return g;
}

std::vector<Violation> validate(const Genome& genome, const BudgetSpec* budget) {
  std::vector<Violation> out;
  const int n = static_cast<int>(genome.layer_units.size());

  // per-module counts and ordering
  std::vector<int> counts(genome.modules.size(), 0);
  int last_module = -1;
  for (int i = 0; i < n; ++i) {
    const int m = genome.layer_units[static_cast<size_t>(i)].module_index;
    if (m < 0 || m >= static_cast<int>(genome.modules.size())) {
      out.push_back({i, "module", "unit references unknown module"});
      continue;
    }
    if (m < last_module)
      out.push_back({i, "module-order", "units not in outer-structure module order"});
    last_module = std::max(last_module, m);
    ++counts[static_cast<size_t>(m)];
  }
  for (size_t m = 0; m < genome.modules.size(); ++m) {
    const auto& spec = genome.modules[m];
    if (counts[m] < spec.min_units || counts[m] > spec.max_units)
      out.push_back({-1, "module-count",
                     "module <" + spec.nonterminal + "> has " + std::to_string(counts[m]) +
                         " units, bounds [" + std::to_string(spec.min_units) + "," +
                         std::to_string(spec.max_units) + "]"});
  }

  // softmax unit: exactly one, last in order
  for (size_t m = 0; m < genome.modules.size(); ++m) {
    if (genome.modules[m].nonterminal != "softmax") continue;
    if (counts[m] != 1) {
      out.push_back({-1, "softmax", "expected exactly one softmax unit"});
    } else if (n == 0 ||
               genome.layer_units[static_cast<size_t>(n - 1)].module_index !=
                   static_cast<int>(m)) {
      out.push_back({n - 1, "softmax", "softmax unit is not last"});
    }
  }

  // connections
  for (int i = 0; i < n; ++i) {
    const auto& u = genome.layer_units[static_cast<size_t>(i)];
    if (u.module_index < 0 || u.module_index >= static_cast<int>(genome.modules.size())) continue;
    const auto& spec = genome.modules[static_cast<size_t>(u.module_index)];
    if (u.inputs.empty()) {
      out.push_back({i, "inputs", "unit has no input connection"});
      continue;
    }
    for (int s : u.inputs) {
      if (s < -1 || s >= i) {
        out.push_back({i, "inputs", "input " + std::to_string(s) + " is not an earlier unit"});
      } else if (connection_distance(i, s) > spec.levels_back) {
        out.push_back({i, "window",
                       "input " + std::to_string(s) + " outside levels-back window " +
                           std::to_string(spec.levels_back)});
      }
    }
    if (!spec.allow_skip &&
        !(u.inputs.size() == 1 && u.inputs[0] == i - 1))
      out.push_back({i, "chain", "non-skip module unit must take exactly its predecessor"});
  }

  // dead ends
  std::vector<bool> consumed(static_cast<size_t>(n), false);
  for (int i = 0; i < n; ++i)
    for (int s : genome.layer_units[static_cast<size_t>(i)].inputs)
      if (s >= 0 && s < n) consumed[static_cast<size_t>(s)] = true;
  for (int i = 0; i + 1 < n; ++i)
    if (!consumed[static_cast<size_t>(i)])
      out.push_back({i, "dead-end", "unit output is never consumed"});

  if (budget && (genome.budget < budget->default_steps || genome.budget > budget->max_steps))
    out.push_back({-1, "budget", "budget outside [default, max]"});

  return out;
}

void repair_dead_ends(Genome& genome, Rng& rng) {
  const int n = static_cast<int>(genome.layer_units.size());
  for (int d = 0; d + 1 < n; ++d) {
    bool consumed = false;
    for (int j = d + 1; j < n && !consumed; ++j) {
      const auto& in = genome.layer_units[static_cast<size_t>(j)].inputs;
      consumed = std::find(in.begin(), in.end(), d) != in.end();
    }
    if (consumed) continue;

    std::vector<int> successors;
    for (int j = d + 1; j < n; ++j) {
      const auto& spec = genome.modules[static_cast<size_t>(
          genome.layer_units[static_cast<size_t>(j)].module_index)];
      if (!spec.allow_skip) continue;
      if (connection_distance(j, d) <= spec.levels_back) successors.push_back(j);
    }
    if (successors.empty())
      throw RepairError("dead end at unit " + std::to_string(d) + " has no valid successor");
    const int j = successors[static_cast<size_t>(
        rng.uniform_index(static_cast<int>(successors.size())))];
    auto& in = genome.layer_units[static_cast<size_t>(j)].inputs;
    in.push_back(d);
    std::sort(in.begin(), in.end());
    in.erase(std::unique(in.begin(), in.end()), in.end());
  }
}

namespace {

LayerKind kind_from_attrs(const AttributeList& attrs) {
  const std::string layer = attr_str(attrs, "layer");
  if (layer == "convblock") return LayerKind::ConvBlock;
  if (layer == "macro-node") return LayerKind::MacroNode;
  if (layer == "transition") return LayerKind::Transition;
  if (layer == "poolblock") return LayerKind::PoolBlock;
  if (layer == "fc") {
    if (has_attr(attrs, "act") && attr_str(attrs, "act") == "softmax") return LayerKind::Softmax;
    return LayerKind::Fc;
  }
  throw GenotypeError("unknown layer kind: " + layer);
}

}  // namespace

NetworkPlan decode_genome(const Genome& genome, const Grammar& grammar,
                          std::array<int, 3> input_shape) {
  if (const auto violations = validate(genome); !violations.empty())
    throw GenotypeError("decode_genome on invalid genome: " + violations.front().rule + ": " +
                        violations.front().message);
  NetworkPlan plan;
  plan.input_shape = input_shape;
  for (const auto& u : genome.layer_units) {
    LayerDescriptor d;
    d.attrs = decode(grammar, u.inner);
    d.kind = kind_from_attrs(d.attrs);
    d.inputs = u.inputs;
    plan.descriptors.push_back(std::move(d));
  }
  plan.learning = decode(grammar, genome.learning_unit);
  return plan;
}

// ---- outer-level structures ----

std::vector<ModuleSpec> cifar_structure() {
  return {
      {"stem", 0, 1, false, 1},
      {"features", 1, 30, true, 5},
      {"last-transition", 0, 1, false, 1},
      {"classification", 0, 5, false, 1},
      {"softmax", 1, 1, false, 1},
  };
}

std::vector<ModuleSpec> desk_structure() {
  return {
      {"stem", 0, 1, false, 1},
      {"features", 1, 6, true, 3},
      {"last-transition", 0, 1, false, 1},
      {"classification", 0, 2, false, 1},
      {"softmax", 1, 1, false, 1},
  };
}

// ---- seed genome ----

namespace {

InnerGenotype scripted_unit(const Grammar& grammar, const std::string& start,
                            std::map<std::string, int> choice_map,
                            std::map<std::string, double> value_map, Rng& rng) {
  return derive_scripted(
      grammar, start,
      [&](const std::string& nt, int n_alts) {
        auto it = choice_map.find(nt);
        const int c = it == choice_map.end() ? 0 : it->second;
        return std::min(c, n_alts - 1);
      },
      [&](const std::string&, const ParameterSpec& spec)
          -> std::optional<std::vector<double>> {
        auto it = value_map.find(spec.name);
        if (it == value_map.end()) return std::nullopt;
        return std::vector<double>{it->second};
      },
      rng);
}

}  // namespace

Genome seed_genome(const Grammar& grammar, Rng& rng, SeedVariant variant,
                   long long default_budget) {
  // Transcription of the NSGA-Net macro-space architecture: a convolutional
  // stem, three densely connected phases of macro-nodes separated by
  // stride-2 transitions, then global pooling and the softmax head. Filter
  // counts are approximated within the grammar ranges (see assets).
  Genome g;
  g.budget = default_budget;

  const bool desk = variant == SeedVariant::Desk;
  g.modules = desk ? desk_structure() : cifar_structure();

  const int phase_len = desk ? 2 : 4;
  const int n_phases = desk ? 2 : 3;
  const std::vector<double> phase_filters = desk ? std::vector<double>{8, 16}
                                                 : std::vector<double>{64, 128, 256};
  const double stem_filters = desk ? 8 : 64;
  const double last_kernel = desk ? 2 : 7;

  auto add_unit = [&](int module_index, InnerGenotype inner, std::vector<int> inputs) {
    Unit u;
    u.module_index = module_index;
    u.inner = std::move(inner);
    u.inputs = std::move(inputs);
    g.layer_units.push_back(std::move(u));
  };

  // stem: 3x3 linear conv, no BN (module 0)
  add_unit(0, scripted_unit(grammar, "stem", {{"padding", 0}}, {{"num-filters", stem_filters}}, rng),
           {-1});

  // feature phases (module 1); each node consumes the phase input and all
  // earlier nodes of its phase, transitions consume the whole phase
  for (int p = 0; p < n_phases; ++p) {
    const int phase_start = static_cast<int>(g.layer_units.size());
    for (int k = 0; k < phase_len; ++k) {
      std::vector<int> inputs;
      for (int s = phase_start - 1; s < phase_start + k; ++s) inputs.push_back(s);
      add_unit(1,
               scripted_unit(grammar, "features", {{"features", 0}, {"node-activation", 0}},
                             {{"num-filters", phase_filters[static_cast<size_t>(p)]}}, rng),
               std::move(inputs));
    }
    if (p + 1 < n_phases) {
      std::vector<int> inputs;
      for (int s = phase_start; s < phase_start + phase_len; ++s) inputs.push_back(s);
      add_unit(1,
               scripted_unit(grammar, "features",
                             {{"features", 2}, {"node-activation", 0}, {"pooling-type", 1}},
                             {{"num-filters", phase_filters[static_cast<size_t>(p + 1)]}}, rng),
               std::move(inputs));
    }
  }

  // last-transition (module 2): global-style average pooling, stride 1
  add_unit(2,
           scripted_unit(grammar, "last-transition", {{"node-activation", 0}, {"pooling-type", 0}},
                         {{"num-filters", phase_filters.back()}, {"pool-kernel-size", last_kernel}},
                         rng),
           {static_cast<int>(g.layer_units.size()) - 1});

  // desk variant keeps one small fully-connected unit (module 3)
  if (desk)
    add_unit(3,
             scripted_unit(grammar, "classification", {{"act-function", 0}, {"bias", 0}},
                           {{"num-units", 32}}, rng),
             {static_cast<int>(g.layer_units.size()) - 1});

  // softmax head (module 4)
  add_unit(4, scripted_unit(grammar, "softmax", {}, {}, rng),
           {static_cast<int>(g.layer_units.size()) - 1});

  g.learning_unit = derive(grammar, "learning", rng);
  return g;
}

// ---- serialization ----

namespace {

ordered_json genotype_to_json(const InnerGenotype& gt) {
  ordered_json j;
  j["start"] = gt.start;
  ordered_json choices = ordered_json::object();
  for (const auto& [nt, idxs] : gt.choices) choices[nt] = idxs;
  j["choices"] = std::move(choices);
  ordered_json params = ordered_json::object();
  for (const auto& [nt, by_name] : gt.params) {
    ordered_json per_nt = ordered_json::object();
    for (const auto& [name, occ] : by_name) per_nt[name] = occ;
    params[nt] = std::move(per_nt);
  }
  j["params"] = std::move(params);
  return j;
}

InnerGenotype genotype_from_json(const ordered_json& j) {
  InnerGenotype gt;
  gt.start = j.at("start").get<std::string>();
  for (const auto& [nt, idxs] : j.at("choices").items())
    gt.choices[nt] = idxs.get<std::vector<int>>();
  for (const auto& [nt, by_name] : j.at("params").items())
    for (const auto& [name, occ] : by_name.items())
      gt.params[nt][name] = occ.get<std::vector<std::vector<double>>>();
  return gt;
}

}  // namespace

std::string genome_to_json(const Genome& genome) {
  ordered_json j;
  j["format"] = "nero-genome";
  j["version"] = 1;
  j["modules"] = ordered_json::array();
  for (const auto& m : genome.modules)
    j["modules"].push_back({{"nonterminal", m.nonterminal},
                            {"min_units", m.min_units},
                            {"max_units", m.max_units},
                            {"allow_skip", m.allow_skip},
                            {"levels_back", m.levels_back}});
  j["layer_units"] = ordered_json::array();
  for (const auto& u : genome.layer_units)
    j["layer_units"].push_back({{"module", u.module_index},
                                {"inputs", u.inputs},
                                {"genotype", genotype_to_json(u.inner)}});
  j["learning_unit"] = genotype_to_json(genome.learning_unit);
  j["budget"] = genome.budget;
  return j.dump(2);
}

Genome genome_from_json(const std::string& text) {
  const auto j = ordered_json::parse(text, nullptr, true, /*ignore_comments=*/true);
  if (j.value("format", "") != "nero-genome")
    throw GenotypeError("not a nero genome document");
  Genome g;
  for (const auto& m : j.at("modules"))
    g.modules.push_back({m.at("nonterminal").get<std::string>(), m.at("min_units").get<int>(),
                         m.at("max_units").get<int>(), m.at("allow_skip").get<bool>(),
                         m.at("levels_back").get<int>()});
  for (const auto& u : j.at("layer_units")) {
    Unit unit;
    unit.module_index = u.at("module").get<int>();
    unit.inputs = u.at("inputs").get<std::vector<int>>();
    unit.inner = genotype_from_json(u.at("genotype"));
    g.layer_units.push_back(std::move(unit));
  }
  g.learning_unit = genotype_from_json(j.at("learning_unit"));
  g.budget = j.at("budget").get<long long>();
  return g;
}

void save_genome(const Genome& genome, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write genome file: " + path);
  f << genome_to_json(genome) << "\n";
}

Genome load_genome(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open genome file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return genome_from_json(buf.str());
}

}  // namespace nero
