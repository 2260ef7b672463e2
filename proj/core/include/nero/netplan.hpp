#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nero/grammar.hpp"

namespace nero {

enum class LayerKind { ConvBlock, MacroNode, Transition, Fc, Softmax, PoolBlock };

const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

/// Decoded layer unit: attribute list plus resolved input edges.
/// Input index -1 denotes the network input.
struct LayerDescriptor {
  LayerKind kind = LayerKind::ConvBlock;
  AttributeList attrs;
  std::vector<int> inputs;
};

/// Decoded, architecture-only view of a genome: topologically ordered
/// descriptors, the learning attributes as metadata and the input shape
/// (H, W, C).
struct NetworkPlan {
  std::vector<LayerDescriptor> descriptors;
  AttributeList learning;
  std::array<int, 3> input_shape{32, 32, 3};
};

/// Stable FNV-1a content hash over the structural part of the plan
/// (descriptors + input shape; learning metadata excluded).
std::uint64_t plan_hash(const NetworkPlan& plan);

/// Hash over an attribute list; used to fingerprint learning units.
std::uint64_t attrs_hash(const AttributeList& attrs);

std::string plan_to_json(const NetworkPlan& plan);
NetworkPlan plan_from_json(const std::string& text);

}  // namespace nero
