#include "nero/netbuilder.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace nero {

using ordered_json = nlohmann::ordered_json;

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::ConvBlock: return "convblock";
    case LayerKind::MacroNode: return "macro-node";
    case LayerKind::Transition: return "transition";
    case LayerKind::Fc: return "fc";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::PoolBlock: return "poolblock";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "convblock") return LayerKind::ConvBlock;
  if (s == "macro-node") return LayerKind::MacroNode;
  if (s == "transition") return LayerKind::Transition;
  if (s == "fc") return LayerKind::Fc;
  if (s == "softmax") return LayerKind::Softmax;
  if (s == "poolblock") return LayerKind::PoolBlock;
  throw GenotypeError("unknown layer kind: " + s);
}

ActKind act_kind_from_string(const std::string& s) {
  if (s == "relu") return ActKind::Relu;
  if (s == "swish") return ActKind::Swish;
  if (s == "sigmoid") return ActKind::Sigmoid;
  if (s == "linear") return ActKind::Linear;
  throw GenotypeError("unknown activation: " + s);
}

namespace {

bool same_padding_attr(const AttributeList& attrs, const std::string& key) {
  const std::string p = attr_str(attrs, key);
  if (p == "same") return true;
  if (p == "valid") return false;
  throw GenotypeError("unknown padding: " + p);
}

PoolType pool_type_attr(const AttributeList& attrs, const std::string& key) {
  const std::string p = attr_str(attrs, key);
  if (p == "avg") return PoolType::Avg;
  if (p == "max") return PoolType::Max;
  throw GenotypeError("unknown pooling type: " + p);
}

PrimitiveSpec conv_prim(int filters, int kernel, int stride, bool same, bool bias) {
  PrimitiveSpec p;
  p.op = PrimOp::Conv;
  p.filters = filters;
  p.kernel = kernel;
  p.stride = stride;
  p.same_padding = same;
  p.bias = bias;
  return p;
}

PrimitiveSpec act_prim(ActKind a) {
  PrimitiveSpec p;
  p.op = PrimOp::Act;
  p.act = a;
  return p;
}

PrimitiveSpec bn_prim() {
  PrimitiveSpec p;
  p.op = PrimOp::BatchNorm;
  return p;
}

PrimitiveSpec pool_prim(PoolType t, int kernel, int stride, bool same) {
  PrimitiveSpec p;
  p.op = PrimOp::Pool;
  p.pool = t;
  p.kernel = kernel;
  p.stride = stride;
  p.same_padding = same;
  return p;
}

PrimitiveSpec dense_prim(int units, bool bias) {
  PrimitiveSpec p;
  p.op = PrimOp::Dense;
  p.units = units;
  p.bias = bias;
  return p;
}

// convblock ordering: pre region | conv | post region, driven by
// (act-pos, bn). Within the pre region BN precedes the activation;
// bn=mid lands immediately after the conv, bn=post at the very end.
void expand_convblock(const AttributeList& attrs, std::vector<PrimitiveSpec>& out) {
  const ActKind act = act_kind_from_string(attr_str(attrs, "act"));
  const std::string act_pos = attr_str(attrs, "act-pos");
  const std::string bn = attr_str(attrs, "bn");
  const bool pre_act = act_pos == "preconv";
  if (!pre_act && act_pos != "postconv")
    throw GenotypeError("unknown act-pos: " + act_pos);
  if (bn != "pre" && bn != "mid" && bn != "post" && bn != "none")
    throw GenotypeError("unknown bn position: " + bn);

  if (bn == "pre") out.push_back(bn_prim());
  if (pre_act && act != ActKind::Linear) out.push_back(act_prim(act));
  out.push_back(conv_prim(attr_int(attrs, "num-filters"), attr_int(attrs, "filter-shape"),
                          attr_int(attrs, "stride"), same_padding_attr(attrs, "padding"),
                          attr_bool(attrs, "bias")));
  if (bn == "mid") out.push_back(bn_prim());
  if (!pre_act && act != ActKind::Linear) out.push_back(act_prim(act));
  if (bn == "post") out.push_back(bn_prim());
}

}  // namespace

std::vector<PrimitiveSpec> expand_block(const LayerDescriptor& d, int n_classes) {
  std::vector<PrimitiveSpec> out;
  switch (d.kind) {
    case LayerKind::ConvBlock:
      expand_convblock(d.attrs, out);
      break;

    case LayerKind::MacroNode: {
      // bottleneck: BN-act-1x1 conv (expanded), BN-act-3x3 conv
      const ActKind act = act_kind_from_string(attr_str(d.attrs, "act"));
      const int filters = attr_int(d.attrs, "num-filters");
      const int mult = attr_int(d.attrs, "filters-mult");
      out.push_back(bn_prim());
      out.push_back(act_prim(act));
      out.push_back(conv_prim(mult * filters, 1, 1, false, false));
      out.push_back(bn_prim());
      out.push_back(act_prim(act));
      out.push_back(conv_prim(filters, 3, 1, true, false));
      break;
    }

    case LayerKind::Transition: {
      // 1x1 conv block (conv-* attributes re-keyed) followed by pooling
      AttributeList conv_attrs;
      for (const auto& [k, v] : d.attrs) {
        if (k.rfind("conv-", 0) == 0)
          conv_attrs.emplace_back(k.substr(5), v);
        else if (k == "act" || k == "act-pos" || k == "num-filters")
          conv_attrs.emplace_back(k, v);
      }
      expand_convblock(conv_attrs, out);
      out.push_back(pool_prim(pool_type_attr(d.attrs, "pooling"),
                              attr_int(d.attrs, "pool-kernel-size"),
                              attr_int(d.attrs, "pool-stride"),
                              same_padding_attr(d.attrs, "pool-padding")));
      if (has_attr(d.attrs, "pool-bn") && attr_str(d.attrs, "pool-bn") != "none")
        out.push_back(bn_prim());
      break;
    }

    case LayerKind::PoolBlock: {
      out.push_back(pool_prim(pool_type_attr(d.attrs, "pooling"),
                              attr_int(d.attrs, "pool-kernel-size"),
                              attr_int(d.attrs, "pool-stride"),
                              same_padding_attr(d.attrs, "pool-padding")));
      if (has_attr(d.attrs, "bn") && attr_str(d.attrs, "bn") != "none")
        out.push_back(bn_prim());
      break;
    }

    case LayerKind::Fc: {
      const ActKind act = act_kind_from_string(attr_str(d.attrs, "act"));
      out.push_back(dense_prim(attr_int(d.attrs, "num-units"), attr_bool(d.attrs, "bias")));
      if (act != ActKind::Linear) out.push_back(act_prim(act));
      break;
    }

    case LayerKind::Softmax: {
      PrimitiveSpec dense = dense_prim(n_classes, attr_bool(d.attrs, "bias"));
      out.push_back(dense);
      PrimitiveSpec sm;
      sm.op = PrimOp::Softmax;
      out.push_back(sm);
      break;
    }
  }
  return out;
}

AggregationRecipe aggregate_inputs(const std::vector<std::array<int, 3>>& shapes) {
  if (shapes.empty()) throw PlanError("aggregation with no inputs");
  AggregationRecipe r;
  int min_h = shapes[0][0], min_w = shapes[0][1];
  for (const auto& s : shapes) {
    min_h = std::min(min_h, s[0]);
    min_w = std::min(min_w, s[1]);
  }
  if (min_h <= 0 || min_w <= 0) throw PlanError("aggregation with non-positive spatial size");
  int channels = 0;
  for (const auto& s : shapes) {
    if (s[0] % min_h != 0 || s[1] % min_w != 0)
      throw PlanError("aggregation spatial ratio is not an integer");
    r.factors.push_back({s[0] / min_h, s[1] / min_w});
    channels += s[2];
  }
  r.out_shape = {min_h, min_w, channels};
  return r;
}

int conv_out_dim(int in, int kernel, int stride, bool same_padding) {
  if (same_padding) return (in + stride - 1) / stride;  // ceil(in / stride)
  return (in - kernel) / stride + 1;                    // floor((in - k) / stride) + 1
}

ShapeResult infer_shapes(const NetworkPlan& plan, int n_classes) {
  ShapeResult res;
  res.outputs.resize(plan.descriptors.size());
  auto fail = [&](const std::string& why) {
    res.ok = false;
    res.error = why;
    return res;
  };

  for (size_t i = 0; i < plan.descriptors.size(); ++i) {
    const auto& d = plan.descriptors[i];
    // gather input shapes
    std::vector<std::array<int, 3>> in_shapes;
    bool any_flat = false;
    for (int s : d.inputs) {
      if (s < -1 || s >= static_cast<int>(i)) return fail("bad input edge");
      if (s == -1) {
        in_shapes.push_back(plan.input_shape);
      } else {
        const auto& ns = res.outputs[static_cast<size_t>(s)];
        any_flat |= ns.flat;
        in_shapes.push_back(ns.shape);
      }
    }

    NodeShape cur;
    if (any_flat) {
      if (in_shapes.size() != 1) return fail("cannot aggregate flattened inputs");
      cur.shape = in_shapes[0];
      cur.flat = true;
    } else {
      try {
        const auto agg = aggregate_inputs(in_shapes);
        cur.shape = agg.out_shape;
      } catch (const PlanError& e) {
        return fail(e.what());
      }
    }

    std::vector<PrimitiveSpec> prims;
    try {
      prims = expand_block(d, n_classes);
    } catch (const GenotypeError& e) {
      return fail(e.what());
    }

    for (const auto& p : prims) {
      switch (p.op) {
        case PrimOp::Conv:
        case PrimOp::Pool: {
          if (cur.flat) return fail("spatial layer after flatten");
          if (!p.same_padding && (cur.shape[0] < p.kernel || cur.shape[1] < p.kernel))
            return fail("kernel larger than input under valid padding");
          const int h = conv_out_dim(cur.shape[0], p.kernel, p.stride, p.same_padding);
          const int w = conv_out_dim(cur.shape[1], p.kernel, p.stride, p.same_padding);
          if (h <= 0 || w <= 0) return fail("non-positive spatial dimension");
          cur.shape = {h, w, p.op == PrimOp::Conv ? p.filters : cur.shape[2]};
          break;
        }
        case PrimOp::Dense: {
          // implicit flatten before the first fully-connected layer
          cur.shape = {1, 1, p.units};
          cur.flat = true;
          break;
        }
        case PrimOp::BatchNorm:
          if (cur.flat) return fail("batch norm after flatten");
          break;
        case PrimOp::Act:
        case PrimOp::Flatten:
        case PrimOp::Softmax:
          break;
      }
    }
    res.outputs[i] = cur;
  }

  // single sink: only the final descriptor may be unconsumed
  res.ok = true;
  return res;
}

// ---- plan hash + serialization ----

namespace {

void hash_bytes(std::uint64_t& h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void hash_str(std::uint64_t& h, const std::string& s) {
  hash_bytes(h, s.data(), s.size());
  hash_bytes(h, "\x1f", 1);
}

void hash_attrs(std::uint64_t& h, const AttributeList& attrs) {
  for (const auto& [k, v] : attrs) {
    hash_str(h, k);
    if (const auto* s = std::get_if<std::string>(&v)) {
      hash_str(h, *s);
    } else {
      for (double d : std::get<std::vector<double>>(v)) hash_bytes(h, &d, sizeof(d));
    }
  }
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace

std::uint64_t plan_hash(const NetworkPlan& plan) {
  std::uint64_t h = kFnvOffset;
  for (int d : plan.input_shape) hash_bytes(h, &d, sizeof(d));
  for (const auto& desc : plan.descriptors) {
    hash_str(h, to_string(desc.kind));
    hash_attrs(h, desc.attrs);
    for (int s : desc.inputs) hash_bytes(h, &s, sizeof(s));
    hash_bytes(h, "\x1e", 1);
  }
  return h;
}

std::uint64_t attrs_hash(const AttributeList& attrs) {
  std::uint64_t h = kFnvOffset;
  hash_attrs(h, attrs);
  return h;
}

namespace {

ordered_json attrs_to_json(const AttributeList& attrs) {
  ordered_json arr = ordered_json::array();
  for (const auto& [k, v] : attrs) {
    if (const auto* s = std::get_if<std::string>(&v))
      arr.push_back({{"k", k}, {"s", *s}});
    else
      arr.push_back({{"k", k}, {"n", std::get<std::vector<double>>(v)}});
  }
  return arr;
}

AttributeList attrs_from_json(const ordered_json& arr) {
  AttributeList attrs;
  for (const auto& e : arr) {
    if (e.contains("s"))
      attrs.emplace_back(e.at("k").get<std::string>(), e.at("s").get<std::string>());
    else
      attrs.emplace_back(e.at("k").get<std::string>(), e.at("n").get<std::vector<double>>());
  }
  return attrs;
}

}  // namespace

std::string plan_to_json(const NetworkPlan& plan) {
  ordered_json j;
  j["format"] = "nero-plan";
  j["version"] = 1;
  j["input_shape"] = plan.input_shape;
  j["descriptors"] = ordered_json::array();
  for (const auto& d : plan.descriptors)
    j["descriptors"].push_back({{"kind", to_string(d.kind)},
                                {"attrs", attrs_to_json(d.attrs)},
                                {"inputs", d.inputs}});
  j["learning"] = attrs_to_json(plan.learning);
  return j.dump();
}

NetworkPlan plan_from_json(const std::string& text) {
  const auto j = ordered_json::parse(text);
  if (j.value("format", "") != "nero-plan") throw PlanError("not a nero plan document");
  NetworkPlan plan;
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  if (shape.size() != 3) throw PlanError("bad input shape");
  plan.input_shape = {shape[0], shape[1], shape[2]};
  for (const auto& d : j.at("descriptors")) {
    LayerDescriptor desc;
    desc.kind = layer_kind_from_string(d.at("kind").get<std::string>());
    desc.attrs = attrs_from_json(d.at("attrs"));
    desc.inputs = d.at("inputs").get<std::vector<int>>();
    plan.descriptors.push_back(std::move(desc));
  }
  plan.learning = attrs_from_json(j.at("learning"));
  return plan;
}

namespace {

std::string prim_name(const PrimitiveSpec& p) {
  std::ostringstream os;
  switch (p.op) {
    case PrimOp::Conv:
      os << "conv " << p.kernel << "x" << p.kernel << "/" << p.stride << " f" << p.filters
         << (p.same_padding ? " same" : " valid");
      break;
    case PrimOp::BatchNorm: os << "batchnorm"; break;
    case PrimOp::Act:
      os << (p.act == ActKind::Relu ? "relu"
             : p.act == ActKind::Swish ? "swish"
             : p.act == ActKind::Sigmoid ? "sigmoid" : "linear");
      break;
    case PrimOp::Pool:
      os << (p.pool == PoolType::Avg ? "avgpool " : "maxpool ") << p.kernel << "x" << p.kernel
         << "/" << p.stride;
      break;
    case PrimOp::Dense: os << "dense " << p.units; break;
    case PrimOp::Flatten: os << "flatten"; break;
    case PrimOp::Softmax: os << "softmax"; break;
  }
  return os.str();
}

std::int64_t prim_params(const PrimitiveSpec& p, int in_channels, std::int64_t in_flat) {
  switch (p.op) {
    case PrimOp::Conv:
      return static_cast<std::int64_t>(p.kernel) * p.kernel * in_channels * p.filters +
             (p.bias ? p.filters : 0);
    case PrimOp::BatchNorm: return 2LL * in_channels;
    case PrimOp::Dense: return in_flat * p.units + (p.bias ? p.units : 0);
    default: return 0;
  }
}

}  // namespace

std::string plan_summary(const NetworkPlan& plan, int n_classes) {
  const ShapeResult shapes = infer_shapes(plan, n_classes);
  std::ostringstream os;
  os << "input " << plan.input_shape[0] << "x" << plan.input_shape[1] << "x"
     << plan.input_shape[2] << "\n";
  if (!shapes.ok) {
    os << "invalid plan: " << shapes.error << "\n";
    return os.str();
  }
  std::int64_t total = 0;
  for (size_t i = 0; i < plan.descriptors.size(); ++i) {
    const auto& d = plan.descriptors[i];
    os << "#" << i << " " << to_string(d.kind) << "  inputs:[";
    for (size_t k = 0; k < d.inputs.size(); ++k) os << (k ? "," : "") << d.inputs[k];
    os << "]\n";

    // replay shape math for the per-primitive rows
    std::vector<std::array<int, 3>> in_shapes;
    for (int s : d.inputs)
      in_shapes.push_back(s == -1 ? plan.input_shape : shapes.outputs[static_cast<size_t>(s)].shape);
    bool flat = false;
    for (int s : d.inputs)
      if (s >= 0) flat |= shapes.outputs[static_cast<size_t>(s)].flat;
    std::array<int, 3> cur = flat ? in_shapes[0] : aggregate_inputs(in_shapes).out_shape;
    if (in_shapes.size() > 1)
      os << "    aggregate -> " << cur[0] << "x" << cur[1] << "x" << cur[2] << "\n";
    for (const auto& p : expand_block(d, n_classes)) {
      const std::int64_t in_flat = static_cast<std::int64_t>(cur[0]) * cur[1] * cur[2];
      const std::int64_t n = prim_params(p, cur[2], in_flat);
      if (p.op == PrimOp::Conv || p.op == PrimOp::Pool) {
        cur = {conv_out_dim(cur[0], p.kernel, p.stride, p.same_padding),
               conv_out_dim(cur[1], p.kernel, p.stride, p.same_padding),
               p.op == PrimOp::Conv ? p.filters : cur[2]};
      } else if (p.op == PrimOp::Dense) {
        cur = {1, 1, p.units};
        flat = true;
      }
      os << "    " << prim_name(p) << " -> " << cur[0] << "x" << cur[1] << "x" << cur[2];
      if (n > 0) os << "  params " << n;
      os << "\n";
      total += n;
    }
  }
  os << "total params " << total << "\n";
  return os.str();
}

}  // namespace nero
