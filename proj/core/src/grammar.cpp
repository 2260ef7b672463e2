#include "nero/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace nero {

const char* to_string(ParamKind k) {
  switch (k) {
    case ParamKind::Int: return "int";
    case ParamKind::Float: return "float";
    case ParamKind::IntPower2: return "int_power2";
    case ParamKind::IntPower10: return "int_power10";
  }
  return "?";
}

ParamKind param_kind_from_string(const std::string& s) {
  if (s == "int") return ParamKind::Int;
  if (s == "float") return ParamKind::Float;
  if (s == "int_power2") return ParamKind::IntPower2;
  if (s == "int_power10") return ParamKind::IntPower10;
  throw GrammarError("unknown parameter kind: " + s);
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool is_integer_valued(double x) { return x == std::floor(x); }

ParameterSpec parse_param_tuple(const std::string& tok) {
  // tok is "[name,kind,count,min,max]"
  const std::string inner = tok.substr(1, tok.size() - 2);
  std::vector<std::string> parts;
  std::stringstream ss(inner);
  std::string p;
  while (std::getline(ss, p, ',')) parts.push_back(trim(p));
  if (parts.size() != 5)
    throw GrammarError("malformed parameter tuple (want 5 elements): [" + inner + "]");
  ParameterSpec spec;
  spec.name = parts[0];
  if (spec.name.empty()) throw GrammarError("parameter tuple with empty name");
  spec.kind = param_kind_from_string(parts[1]);
  try {
    spec.count = std::stoi(parts[2]);
    spec.min_value = std::stod(parts[3]);
    spec.max_value = std::stod(parts[4]);
  } catch (const std::exception&) {
    throw GrammarError("malformed parameter tuple: [" + inner + "]");
  }
  if (spec.count < 1) throw GrammarError("parameter count must be >= 1: " + spec.name);
  if (spec.min_value > spec.max_value)
    throw GrammarError("parameter min > max: " + spec.name);
  if (spec.kind != ParamKind::Float &&
      (!is_integer_valued(spec.min_value) || !is_integer_valued(spec.max_value)))
    throw GrammarError("integer-kind parameter with non-integer bounds: " + spec.name);
  return spec;
}

Symbol parse_symbol(const std::string& tok) {
  if (tok.front() == '<') {
    if (tok.back() != '>' || tok.size() < 3)
      throw GrammarError("malformed nonterminal reference: " + tok);
    return NonterminalRef{tok.substr(1, tok.size() - 2)};
  }
  if (tok.front() == '[') {
    if (tok.back() != ']') throw GrammarError("malformed parameter tuple: " + tok);
    return parse_param_tuple(tok);
  }
  const size_t colon = tok.find(':');
  if (colon == std::string::npos || colon == 0)
    throw GrammarError("terminal must be key:value, got: " + tok);
  return Terminal{tok.substr(0, colon), tok.substr(colon + 1)};
}

// Splits an alternative body into whitespace-separated tokens; bracketed
// tuples may contain spaces after commas.
std::vector<std::string> tokenize(const std::string& body) {
  std::vector<std::string> toks;
  size_t i = 0;
  while (i < body.size()) {
    while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
    if (i >= body.size()) break;
    if (body[i] == '[') {
      size_t j = body.find(']', i);
      if (j == std::string::npos) throw GrammarError("unterminated parameter tuple");
      toks.push_back(body.substr(i, j - i + 1));
      i = j + 1;
    } else {
      size_t j = i;
      while (j < body.size() && !std::isspace(static_cast<unsigned char>(body[j]))) ++j;
      toks.push_back(body.substr(i, j - i));
      i = j;
    }
  }
  return toks;
}

}  // namespace

Grammar Grammar::parse(const std::string& text) {
  Grammar g;
  std::string current_nt;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = trim(raw);
    if (line.empty()) continue;

    std::string body;
    const size_t defpos = line.find("::=");
    if (defpos != std::string::npos) {
      std::string head = trim(line.substr(0, defpos));
      if (head.size() < 3 || head.front() != '<' || head.back() != '>')
        throw GrammarError("line " + std::to_string(lineno) + ": malformed production head");
      current_nt = head.substr(1, head.size() - 2);
      if (g.productions_.count(current_nt))
        throw GrammarError("duplicate production for <" + current_nt + ">");
      g.productions_[current_nt] = {Alternative{}};
      body = line.substr(defpos + 3);
    } else {
      if (current_nt.empty())
        throw GrammarError("line " + std::to_string(lineno) + ": continuation before any production");
      body = line;
    }

    auto& alts = g.productions_[current_nt];
    // '|' separates alternatives; it may open a continuation line. Split by
    // hand so a trailing '|' yields the (invalid) empty alternative.
    std::vector<std::string> pieces(1);
    for (char c : body) {
      if (c == '|')
        pieces.emplace_back();
      else
        pieces.back() += c;
    }
    for (size_t i = 0; i < pieces.size(); ++i) {
      if (i > 0) alts.emplace_back();
      for (const auto& tok : tokenize(pieces[i])) alts.back().push_back(parse_symbol(tok));
    }
  }
  g.validate();
  return g;
}

Grammar Grammar::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw GrammarError("cannot open grammar file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse(buf.str());
}

void Grammar::validate() const {
  for (const auto& [nt, alts] : productions_) {
    if (alts.empty()) throw GrammarError("production <" + nt + "> has no alternatives");
    for (const auto& alt : alts) {
      if (alt.empty()) throw GrammarError("empty alternative in <" + nt + ">");
      for (const auto& sym : alt) {
        if (const auto* ref = std::get_if<NonterminalRef>(&sym)) {
          if (!productions_.count(ref->name))
            throw GrammarError("undefined nonterminal <" + ref->name + "> referenced from <" +
                               nt + ">");
        } else if (const auto* t = std::get_if<Terminal>(&sym)) {
          if (t->key.empty()) throw GrammarError("terminal with empty key in <" + nt + ">");
        }
      }
    }
  }
}

const std::vector<Alternative>& Grammar::alternatives(const std::string& nt) const {
  auto it = productions_.find(nt);
  if (it == productions_.end()) throw GrammarError("undefined nonterminal <" + nt + ">");
  return it->second;
}

const ParameterSpec* Grammar::find_spec(const std::string& nt, const std::string& name) const {
  auto it = productions_.find(nt);
  if (it == productions_.end()) return nullptr;
  for (const auto& alt : it->second)
    for (const auto& sym : alt)
      if (const auto* spec = std::get_if<ParameterSpec>(&sym))
        if (spec->name == name) return spec;
  return nullptr;
}

std::vector<double> realize_parameter(const ParameterSpec& spec,
                                      const std::vector<double>& raw) {
  if (static_cast<int>(raw.size()) != spec.count)
    throw GenotypeError("parameter " + spec.name + ": expected " + std::to_string(spec.count) +
                        " values, got " + std::to_string(raw.size()));
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const double x = raw[i];
    if (x < spec.min_value || x > spec.max_value)
      throw GenotypeError("parameter " + spec.name + ": raw value out of range");
    switch (spec.kind) {
      case ParamKind::Int:
      case ParamKind::Float: out[i] = x; break;
      case ParamKind::IntPower2: out[i] = std::pow(2.0, x); break;
      case ParamKind::IntPower10: out[i] = std::pow(10.0, x); break;
    }
  }
  return out;
}

namespace {

std::vector<double> draw_raw(const ParameterSpec& spec, Rng& rng) {
  std::vector<double> vals(static_cast<size_t>(spec.count));
  for (auto& v : vals) {
    if (spec.integral())
      v = static_cast<double>(rng.uniform_int(static_cast<long long>(spec.min_value),
                                              static_cast<long long>(spec.max_value)));
    else
      v = rng.uniform_real(spec.min_value, spec.max_value);
  }
  return vals;
}

// One walker drives derive, decode, mutation replay and subtree skipping.
struct Walker {
  const Grammar& g;
  const InnerGenotype* src = nullptr;  // replay source (null = fresh)
  InnerGenotype* dst = nullptr;        // output genotype (null = decode/skip only)
  AttributeList* attrs = nullptr;      // decode output
  Rng* rng = nullptr;
  int max_depth = kMaxDerivationDepth;

  // replay cursors into src
  std::map<std::string, size_t> choice_cur;
  std::map<std::string, std::map<std::string, size_t>> param_cur;

  int replay_choice(const std::string& nt) {
    const auto it = src->choices.find(nt);
    size_t& cur = choice_cur[nt];
    if (it == src->choices.end() || cur >= it->second.size())
      throw GenotypeError("decode: missing derivation choice for <" + nt + ">");
    return it->second[cur++];
  }

  std::vector<double> replay_params(const std::string& nt, const ParameterSpec& spec) {
    const auto nt_it = src->params.find(nt);
    size_t& cur = param_cur[nt][spec.name];
    if (nt_it == src->params.end()) throw GenotypeError("decode: missing parameters for <" + nt + ">");
    const auto sp_it = nt_it->second.find(spec.name);
    if (sp_it == nt_it->second.end() || cur >= sp_it->second.size())
      throw GenotypeError("decode: missing parameter entry " + spec.name + " in <" + nt + ">");
    return sp_it->second[cur++];
  }

  void assert_fully_consumed() const {
    for (const auto& [nt, idxs] : src->choices) {
      auto it = choice_cur.find(nt);
      const size_t used = it == choice_cur.end() ? 0 : it->second;
      if (used != idxs.size())
        throw GenotypeError("decode: surplus derivation choices for <" + nt + ">");
    }
    for (const auto& [nt, by_name] : src->params)
      for (const auto& [name, occ] : by_name) {
        size_t used = 0;
        auto nt_it = param_cur.find(nt);
        if (nt_it != param_cur.end()) {
          auto n_it = nt_it->second.find(name);
          if (n_it != nt_it->second.end()) used = n_it->second;
        }
        if (used != occ.size())
          throw GenotypeError("decode: surplus parameter entries " + name + " in <" + nt + ">");
      }
  }

  enum class Mode { Replay, Fresh, Skip };

  // Mutation state: when site_nt/site_pos matches the replay cursor, the
  // stored subtree is skipped and a fresh one derived with site_new_index.
  std::string site_nt;
  int site_pos = -1;
  int site_new_index = -1;
  bool site_hit = false;

  void walk(const std::string& nt, Mode mode, int depth) {
    if (depth > max_depth)
      throw GenotypeError("derivation exceeds maximum depth " + std::to_string(max_depth));
    const auto& alts = g.alternatives(nt);

    if (mode == Mode::Replay && !site_hit && nt == site_nt &&
        static_cast<int>(choice_cur[nt]) == site_pos) {
      site_hit = true;
      const int old_index = replay_choice(nt);
      // discard the stored subtree, then re-derive randomly
      expand(nt, alts[static_cast<size_t>(old_index)], Mode::Skip, depth);
      dst->choices[nt].push_back(site_new_index);
      expand(nt, alts[static_cast<size_t>(site_new_index)], Mode::Fresh, depth);
      return;
    }

    int index;
    if (mode == Mode::Fresh) {
      index = rng->uniform_index(static_cast<int>(alts.size()));
    } else {
      index = replay_choice(nt);
      if (index < 0 || index >= static_cast<int>(alts.size()))
        throw GenotypeError("choice index out of bounds for <" + nt + ">");
    }
    if (mode != Mode::Skip && dst) dst->choices[nt].push_back(index);
    expand(nt, alts[static_cast<size_t>(index)], mode, depth);
  }

  void expand(const std::string& nt, const Alternative& alt, Mode mode, int depth) {
    for (const auto& sym : alt) {
      if (const auto* ref = std::get_if<NonterminalRef>(&sym)) {
        walk(ref->name, mode, depth + 1);
      } else if (const auto* term = std::get_if<Terminal>(&sym)) {
        if (mode != Mode::Skip && attrs) attrs->emplace_back(term->key, term->value);
      } else {
        const auto& spec = std::get<ParameterSpec>(sym);
        std::vector<double> raw;
        if (mode == Mode::Fresh)
          raw = draw_raw(spec, *rng);
        else
          raw = replay_params(nt, spec);
        if (mode == Mode::Skip) continue;
        if (dst) dst->params[nt][spec.name].push_back(raw);
        if (attrs) attrs->emplace_back(spec.name, realize_parameter(spec, raw));
      }
    }
  }
};

}  // namespace

InnerGenotype derive(const Grammar& g, const std::string& start, Rng& rng, int max_depth) {
  InnerGenotype out;
  out.start = start;
  Walker w{g};
  w.dst = &out;
  w.rng = &rng;
  w.max_depth = max_depth;
  w.walk(start, Walker::Mode::Fresh, 0);
  return out;
}

InnerGenotype derive_scripted(
    const Grammar& g, const std::string& start,
    const std::function<int(const std::string&, int)>& choice_for,
    const std::function<std::optional<std::vector<double>>(const std::string&, const ParameterSpec&)>&
        values_for,
    Rng& rng, int max_depth) {
  InnerGenotype out;
  out.start = start;
  std::function<void(const std::string&, int)> walk = [&](const std::string& nt, int depth) {
    if (depth > max_depth) throw GenotypeError("scripted derivation exceeds maximum depth");
    const auto& alts = g.alternatives(nt);
    const int index = choice_for(nt, static_cast<int>(alts.size()));
    if (index < 0 || index >= static_cast<int>(alts.size()))
      throw GenotypeError("scripted choice out of bounds for <" + nt + ">");
    out.choices[nt].push_back(index);
    for (const auto& sym : alts[static_cast<size_t>(index)]) {
      if (const auto* ref = std::get_if<NonterminalRef>(&sym)) {
        walk(ref->name, depth + 1);
      } else if (std::holds_alternative<ParameterSpec>(sym)) {
        const auto& spec = std::get<ParameterSpec>(sym);
        auto vals = values_for(nt, spec);
        out.params[nt][spec.name].push_back(vals ? *vals : draw_raw(spec, rng));
      }
    }
  };
  walk(start, 0);
  return out;
}

AttributeList decode(const Grammar& g, const InnerGenotype& genotype) {
  AttributeList attrs;
  Walker w{g};
  w.src = &genotype;
  w.attrs = &attrs;
  w.walk(genotype.start, Walker::Mode::Replay, 0);
  w.assert_fully_consumed();
  return attrs;
}

namespace {

// Enumerates choice sites in derivation order: (nt, position, n_alts, index).
struct Site {
  std::string nt;
  int pos;
  int n_alts;
  int index;
};

std::vector<Site> enumerate_sites(const Grammar& g, const InnerGenotype& genotype) {
  std::vector<Site> sites;
  Walker w{g};
  w.src = &genotype;
  std::map<std::string, size_t> seen;
  std::function<void(const std::string&, int)> walk = [&](const std::string& nt, int depth) {
    if (depth > w.max_depth) throw GenotypeError("derivation exceeds maximum depth");
    const auto& alts = g.alternatives(nt);
    const int pos = static_cast<int>(seen[nt]);
    const auto it = genotype.choices.find(nt);
    if (it == genotype.choices.end() || seen[nt] >= it->second.size())
      throw GenotypeError("enumerate: missing derivation choice for <" + nt + ">");
    const int index = it->second[seen[nt]++];
    sites.push_back({nt, pos, static_cast<int>(alts.size()), index});
    for (const auto& sym : alts[static_cast<size_t>(index)])
      if (const auto* ref = std::get_if<NonterminalRef>(&sym)) walk(ref->name, depth + 1);
  };
  walk(genotype.start, 0);
  return sites;
}

}  // namespace

InnerGenotype mutate_choice(const Grammar& g, const InnerGenotype& genotype, Rng& rng) {
  std::vector<Site> mutable_sites;
  for (const auto& s : enumerate_sites(g, genotype))
    if (s.n_alts >= 2) mutable_sites.push_back(s);
  if (mutable_sites.empty()) return genotype;

  const Site& site = mutable_sites[static_cast<size_t>(rng.uniform_index(
      static_cast<int>(mutable_sites.size())))];
  int new_index = rng.uniform_index(site.n_alts - 1);
  if (new_index >= site.index) ++new_index;  // forced change

  InnerGenotype out;
  out.start = genotype.start;
  Walker w{g};
  w.src = &genotype;
  w.dst = &out;
  w.rng = &rng;
  w.site_nt = site.nt;
  w.site_pos = site.pos;
  w.site_new_index = new_index;
  w.walk(genotype.start, Walker::Mode::Replay, 0);
  return out;
}

namespace {

struct ParamSlot {
  std::string nt;
  std::string name;
  size_t occurrence;
  int element;
};

std::vector<ParamSlot> param_slots(const InnerGenotype& genotype, const Grammar& g,
                                   bool floats_only) {
  std::vector<ParamSlot> slots;
  for (const auto& [nt, by_name] : genotype.params)
    for (const auto& [name, occs] : by_name) {
      const ParameterSpec* spec = g.find_spec(nt, name);
      if (!spec) continue;
      if (floats_only && spec->kind != ParamKind::Float) continue;
      for (size_t occ = 0; occ < occs.size(); ++occ)
        for (int e = 0; e < static_cast<int>(occs[occ].size()); ++e)
          slots.push_back({nt, name, occ, e});
    }
  return slots;
}

InnerGenotype perturb_slots(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                            double mu, double sigma, bool floats_only) {
  const auto slots = param_slots(genotype, g, floats_only);
  if (slots.empty()) return genotype;
  const ParamSlot& s =
      slots[static_cast<size_t>(rng.uniform_index(static_cast<int>(slots.size())))];
  const ParameterSpec* spec = g.find_spec(s.nt, s.name);
  InnerGenotype out = genotype;
  double& v = out.params[s.nt][s.name][s.occurrence][static_cast<size_t>(s.element)];
  if (spec->kind == ParamKind::Float) {
    v = std::clamp(v + rng.gaussian(mu, sigma), spec->min_value, spec->max_value);
  } else {
    v = static_cast<double>(rng.uniform_int(static_cast<long long>(spec->min_value),
                                            static_cast<long long>(spec->max_value)));
  }
  return out;
}

}  // namespace

InnerGenotype perturb_param(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                            double mu, double sigma) {
  return perturb_slots(g, genotype, rng, mu, sigma, /*floats_only=*/false);
}

InnerGenotype perturb_float(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                            double mu, double sigma) {
  return perturb_slots(g, genotype, rng, mu, sigma, /*floats_only=*/true);
}

InnerGenotype mutate_dsge(const Grammar& g, const InnerGenotype& genotype, Rng& rng,
                          double mu, double sigma) {
  size_t n_choice_sites = 0;
  for (const auto& s : enumerate_sites(g, genotype))
    if (s.n_alts >= 2) ++n_choice_sites;
  const size_t n_param_slots = param_slots(genotype, g, false).size();
  const size_t total = n_choice_sites + n_param_slots;
  if (total == 0) return genotype;
  const auto pick = static_cast<size_t>(rng.uniform_int(0, static_cast<long long>(total) - 1));
  if (pick < n_choice_sites) return mutate_choice(g, genotype, rng);
  return perturb_param(g, genotype, rng, mu, sigma);
}

// ---- attribute helpers ----

const AttrValue* find_attr(const AttributeList& attrs, const std::string& key) {
  for (const auto& [k, v] : attrs)
    if (k == key) return &v;
  return nullptr;
}

bool has_attr(const AttributeList& attrs, const std::string& key) {
  return find_attr(attrs, key) != nullptr;
}

std::string attr_str(const AttributeList& attrs, const std::string& key) {
  const AttrValue* v = find_attr(attrs, key);
  if (!v) throw GenotypeError("missing attribute: " + key);
  if (const auto* s = std::get_if<std::string>(v)) return *s;
  throw GenotypeError("attribute " + key + " is numeric, expected string");
}

double attr_num(const AttributeList& attrs, const std::string& key) {
  const AttrValue* v = find_attr(attrs, key);
  if (!v) throw GenotypeError("missing attribute: " + key);
  if (const auto* nums = std::get_if<std::vector<double>>(v)) {
    if (nums->empty()) throw GenotypeError("attribute " + key + " has no values");
    return (*nums)[0];
  }
  try {
    return std::stod(std::get<std::string>(*v));
  } catch (const std::exception&) {
    throw GenotypeError("attribute " + key + " is not numeric");
  }
}

int attr_int(const AttributeList& attrs, const std::string& key) {
  return static_cast<int>(std::llround(attr_num(attrs, key)));
}

bool attr_bool(const AttributeList& attrs, const std::string& key) {
  std::string s = attr_str(attrs, key);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true") return true;
  if (s == "false") return false;
  throw GenotypeError("attribute " + key + " is not a boolean: " + s);
}

}  // namespace nero
