#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nero/rng.hpp"

namespace nero {

struct GrammarError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GenotypeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ParamKind { Int, Float, IntPower2, IntPower10 };

const char* to_string(ParamKind k);
ParamKind param_kind_from_string(const std::string& s);

/// Bracketed 5-element parameter tuple: [name,kind,count,min,max].
/// For the power kinds, min/max bound the exponent and must be integers.
struct ParameterSpec {
  std::string name;
  ParamKind kind = ParamKind::Int;
  int count = 1;
  double min_value = 0.0;
  double max_value = 0.0;

  bool integral() const { return kind != ParamKind::Float; }
  bool operator==(const ParameterSpec&) const = default;
};

struct NonterminalRef {
  std::string name;
  bool operator==(const NonterminalRef&) const = default;
};

struct Terminal {
  std::string key;
  std::string value;
  bool operator==(const Terminal&) const = default;
};

using Symbol = std::variant<NonterminalRef, Terminal, ParameterSpec>;
using Alternative = std::vector<Symbol>;

/// Context-free grammar in the line-oriented format
///   <nt> ::= alt (| alt)*
/// with key:value terminals, bracketed parameter tuples and continuation
/// lines. Alternative order is preserved: duplicated alternatives raise
/// the probability of being selected under uniform choice.
class Grammar {
 public:
  static Grammar parse(const std::string& text);
  static Grammar parse_file(const std::string& path);

  bool has(const std::string& nt) const { return productions_.count(nt) != 0; }
  const std::vector<Alternative>& alternatives(const std::string& nt) const;
  const std::map<std::string, std::vector<Alternative>>& productions() const {
    return productions_;
  }

  /// First spec named `name` under nonterminal `nt`, if any.
  const ParameterSpec* find_spec(const std::string& nt, const std::string& name) const;

 private:
  void validate() const;
  std::map<std::string, std::vector<Alternative>> productions_;
};

/// kind int/float: identity; int_power2: 2^raw; int_power10: 10^raw.
std::vector<double> realize_parameter(const ParameterSpec& spec,
                                      const std::vector<double>& raw);

/// Inner-level genotype: per-nonterminal derivation choices in derivation
/// order plus directly encoded parameter values (raw, i.e. exponents for
/// the power kinds).
struct InnerGenotype {
  std::string start;
  std::map<std::string, std::vector<int>> choices;
  // params[nt][spec_name][occurrence] = raw values (length = spec.count)
  std::map<std::string, std::map<std::string, std::vector<std::vector<double>>>> params;

  bool operator==(const InnerGenotype&) const = default;
};

using AttrValue = std::variant<std::string, std::vector<double>>;
using AttributeList = std::vector<std::pair<std::string, AttrValue>>;

// Attribute access helpers shared by the plan consumers.
const AttrValue* find_attr(const AttributeList& attrs, const std::string& key);
std::string attr_str(const AttributeList& attrs, const std::string& key);
double attr_num(const AttributeList& attrs, const std::string& key);
int attr_int(const AttributeList& attrs, const std::string& key);
bool attr_bool(const AttributeList& attrs, const std::string& key);
bool has_attr(const AttributeList& attrs, const std::string& key);

inline constexpr int kMaxDerivationDepth = 50;

/// Complete left-to-right derivation with uniform choices and uniform raw
/// parameter draws (integers for int/power kinds).
InnerGenotype derive(const Grammar& g, const std::string& start, Rng& rng,
                     int max_depth = kMaxDerivationDepth);

/// Scripted derivation: `choice_for(nt, n_alts)` picks the alternative,
/// `values_for(spec)` supplies raw values (empty optional = uniform draw).
/// Used for hand-built genomes such as the seed architecture.
InnerGenotype derive_scripted(
    const Grammar& g, const std::string& start,
    const std::function<int(const std::string&, int)>& choice_for,
    const std::function<std::optional<std::vector<double>>(const std::string&, const ParameterSpec&)>&
        values_for,
    Rng& rng, int max_depth = kMaxDerivationDepth);

/// Deterministic genotype-to-phenotype mapping. Consumes exactly the stored
/// choices and parameters; anything left over or missing is a GenotypeError.
AttributeList decode(const Grammar& g, const InnerGenotype& genotype);

/// Re-draws one derivation choice with >=2 alternatives to a different
/// index and randomly re-derives the subtree below it. Returns the
/// genotype unchanged when no mutable choice exists.
InnerGenotype mutate_choice(const Grammar& g, const InnerGenotype& genotype, Rng& rng);

/// Perturbs one parameter slot: floats get additive Gaussian noise
/// N(mu, sigma) clamped to [min, max]; int/power parameters are re-drawn
/// uniformly. Unchanged when the genotype has no parameters.
InnerGenotype perturb_param(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                            double mu = 0.0, double sigma = 0.15);

/// Gaussian perturbation restricted to float-kind parameters; unchanged if
/// the genotype has none.
InnerGenotype perturb_float(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                            double mu = 0.0, double sigma = 0.15);

/// DSGE mutation used by the evolutionary operators: picks uniformly among
/// all mutable sites (choice points and parameter slots).
InnerGenotype mutate_dsge(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                          double mu = 0.0, double sigma = 0.15);

}  // namespace nero
