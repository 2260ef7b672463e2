#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "nero/netplan.hpp"

namespace nero {

enum class PrimOp { Conv, BatchNorm, Act, Pool, Dense, Flatten, Softmax };
enum class ActKind { Relu, Swish, Sigmoid, Linear };
enum class PoolType { Avg, Max };

ActKind act_kind_from_string(const std::string& s);

/// A primitive layer produced by block expansion.
struct PrimitiveSpec {
  PrimOp op = PrimOp::Conv;
  // conv / pool
  int filters = 0;
  int kernel = 1;
  int stride = 1;
  bool same_padding = false;
  bool bias = false;
  PoolType pool = PoolType::Avg;
  // act
  ActKind act = ActKind::Linear;
  // dense
  int units = 0;
};

/// Expands one decoded block descriptor into its primitive layer sequence
/// with the grammar-specified internal ordering. Identity activations are
/// dropped. Throws GenotypeError on unknown kinds or missing attributes.
std::vector<PrimitiveSpec> expand_block(const LayerDescriptor& d, int n_classes = 10);

/// How a node's inputs are merged: each input is average-pooled down to the
/// smallest spatial size (non-overlapping, kernel = stride = ratio), then
/// concatenated along channels.
struct AggregationRecipe {
  std::vector<std::array<int, 2>> factors;  // per input (fh, fw); 1 = pass-through
  std::array<int, 3> out_shape{0, 0, 0};    // H, W, sum of channels
};

struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Throws PlanError when a spatial ratio is not a positive integer.
AggregationRecipe aggregate_inputs(const std::vector<std::array<int, 3>>& shapes);

struct NodeShape {
  std::array<int, 3> shape{0, 0, 0};  // H, W, C (1,1,D once flat)
  bool flat = false;
};

/// Per-descriptor output shapes; `ok=false` marks the plan invalid (with the
/// offending reason) instead of throwing.
struct ShapeResult {
  bool ok = false;
  std::string error;
  std::vector<NodeShape> outputs;
};

ShapeResult infer_shapes(const NetworkPlan& plan, int n_classes = 10);

int conv_out_dim(int in, int kernel, int stride, bool same_padding);

/// Human-readable architecture summary: layer table with shapes and
/// parameter counts.
std::string plan_summary(const NetworkPlan& plan, int n_classes = 10);

}  // namespace nero
