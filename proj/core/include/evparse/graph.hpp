#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evparse/corpus.hpp"
#include "evparse/roles.hpp"

namespace evparse {

// Three ways to write a tagged sentence as a graph:
//   labeled_edge       roles live on edges; all triggers merge into one node;
//                      an unanchored virtual root (id 0) points at the trigger
//                      (edge label "trigger") or, when no trigger exists,
//                      directly at each argument with the role as edge label.
//   node_centric       roles live on node labels; all triggers merge into one
//                      node; unlabeled edges run trigger -> argument.
//   node_centric_split one trigger node per trigger chunk; unlabeled edges
//                      form a complete bipartite trigger x argument set.
enum class GraphFlavor : std::uint8_t {
  labeled_edge = 0,
  node_centric,
  node_centric_split,
};

std::string_view flavor_name(GraphFlavor flavor);  // "labeled-edge" etc.
std::optional<GraphFlavor> flavor_from_name(std::string_view name);

// Half-open token interval.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const TokenSpan&) const = default;
};

// The token span(s) a node covers; sorted by start, pairwise disjoint.
struct Anchor {
  std::vector<TokenSpan> spans;

  bool operator==(const Anchor&) const = default;
};

struct GraphNode {
  int id = 0;
  std::optional<Role> label;
  std::optional<Anchor> anchor;  // absent only for the virtual root
  bool is_root = false;

  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  int source = 0;
  int target = 0;
  std::optional<Role> label;

  auto operator<=>(const GraphEdge&) const = default;
};

struct EventGraph {
  std::string sentence_id;
  GraphFlavor flavor = GraphFlavor::node_centric;
  std::size_t n_tokens = 0;
  std::vector<GraphNode> nodes;  // id order; root (if any) first
  std::vector<GraphEdge> edges;  // sorted by (source, target, label)

  bool operator==(const EventGraph&) const = default;

  const GraphNode* find_node(int id) const;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sentence -> graph. The sentence must carry valid (repaired) BIO tags; node
// ids are assigned in first-token order, root first for labeled_edge.
EventGraph encode(const AnnotatedSentence& sentence, GraphFlavor flavor);

struct DecodeResult {
  std::vector<BioTag> tags;
  std::size_t dropped_nodes = 0;  // nodes whose role could not be resolved
};

// Graph -> BIO. Tolerates schema violations in predicted graphs: nodes are
// written in descending score order (ties: first span start, then id); tokens
// claimed earlier win, surviving fragments are re-emitted as fresh chunks.
DecodeResult decode_to_bio(
    const EventGraph& graph,
    const std::unordered_map<int, double>* node_scores = nullptr);

// One JSON object per line:
//   {"id":..,"flavor":..,"n_tokens":..,
//    "nodes":[{"id":..,"label"?,"anchors":[{"from":..,"to":..}]}],
//    "edges":[{"source":..,"target":..,"label"?}]}
// The virtual root serializes without label and anchors fields.
std::string serialize_graph(const EventGraph& graph);
EventGraph parse_graph(std::string_view line);

// Returns all violations of the flavor schema (empty when valid). With
// gold_encoded, additionally requires anchors of distinct nodes to be
// pairwise token-disjoint.
std::vector<std::string> validate_graph(const EventGraph& graph,
                                        bool gold_encoded = false);

// Equality modulo node/edge storage order.
bool structurally_equal(const EventGraph& a, const EventGraph& b);

}  // namespace evparse
