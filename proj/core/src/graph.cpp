#include "evparse/graph.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "json.hpp"

#include "evparse/scorer.hpp"

namespace evparse {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct ProtoNode {
  std::optional<Role> label;
  Anchor anchor;
  bool is_trigger = false;
  std::size_t first_token = 0;
};

// Chunks are disjoint, so first tokens are distinct and the order is total.
void sort_by_first_token(std::vector<ProtoNode>& protos) {
  std::sort(protos.begin(), protos.end(),
            [](const ProtoNode& a, const ProtoNode& b) {
              return a.first_token < b.first_token;
            });
}

void sort_edges(std::vector<GraphEdge>& edges) {
  std::sort(edges.begin(), edges.end());
}

}  // namespace

std::string_view flavor_name(GraphFlavor flavor) {
  switch (flavor) {
    case GraphFlavor::labeled_edge: return "labeled-edge";
    case GraphFlavor::node_centric: return "node-centric";
    case GraphFlavor::node_centric_split: return "node-centric-split";
  }
  return "node-centric";
}

std::optional<GraphFlavor> flavor_from_name(std::string_view name) {
  if (name == "labeled-edge" || name == "labeled_edge")
    return GraphFlavor::labeled_edge;
  if (name == "node-centric" || name == "node_centric")
    return GraphFlavor::node_centric;
  if (name == "node-centric-split" || name == "node_centric_split")
    return GraphFlavor::node_centric_split;
  return std::nullopt;
}

const GraphNode* EventGraph::find_node(int id) const {
  for (const auto& node : nodes) {
    if (node.id == id) return &node;
  }
  return nullptr;
}

EventGraph encode(const AnnotatedSentence& sentence, GraphFlavor flavor) {
  EventGraph graph;
  graph.sentence_id = sentence.id;
  graph.flavor = flavor;
  graph.n_tokens = sentence.tokens.size();

  auto chunks = extract_chunks(sentence.tags);
  std::vector<RoleChunk> triggers;
  std::vector<RoleChunk> arguments;
  for (const auto& chunk : chunks) {
    (chunk.role == Role::trigger ? triggers : arguments).push_back(chunk);
  }

  bool merge_triggers = flavor != GraphFlavor::node_centric_split;
  bool labels_on_nodes = flavor != GraphFlavor::labeled_edge;

  std::vector<ProtoNode> protos;
  if (!triggers.empty()) {
    if (merge_triggers) {
      ProtoNode trigger_node;
      trigger_node.is_trigger = true;
      trigger_node.first_token = triggers.front().start;
      if (labels_on_nodes) trigger_node.label = Role::trigger;
      for (const auto& chunk : triggers) {
        trigger_node.anchor.spans.push_back({chunk.start, chunk.end});
      }
      protos.push_back(std::move(trigger_node));
    } else {
      for (const auto& chunk : triggers) {
        ProtoNode node;
        node.is_trigger = true;
        node.first_token = chunk.start;
        node.label = Role::trigger;
        node.anchor.spans.push_back({chunk.start, chunk.end});
        protos.push_back(std::move(node));
      }
    }
  }
  for (const auto& chunk : arguments) {
    ProtoNode node;
    node.first_token = chunk.start;
    if (labels_on_nodes) node.label = chunk.role;
    node.anchor.spans.push_back({chunk.start, chunk.end});
    protos.push_back(std::move(node));
  }
  sort_by_first_token(protos);

  int next_id = 0;
  if (flavor == GraphFlavor::labeled_edge) {
    graph.nodes.push_back({0, std::nullopt, std::nullopt, true});
    next_id = 1;
  }
  std::vector<int> trigger_ids;
  std::vector<std::pair<int, Role>> argument_ids;  // id + role of the chunk
  // Argument roles are needed for labeled_edge edges even though the nodes
  // themselves stay unlabeled; recover them via the chunk's first token.
  std::map<std::size_t, Role> role_by_first;
  for (const auto& chunk : arguments) role_by_first[chunk.start] = chunk.role;

  for (auto& proto : protos) {
    GraphNode node;
    node.id = next_id++;
    node.label = proto.label;
    node.anchor = std::move(proto.anchor);
    graph.nodes.push_back(std::move(node));
    if (proto.is_trigger) {
      trigger_ids.push_back(graph.nodes.back().id);
    } else {
      argument_ids.push_back(
          {graph.nodes.back().id, role_by_first.at(proto.first_token)});
    }
  }

  switch (flavor) {
    case GraphFlavor::labeled_edge: {
      if (!trigger_ids.empty()) {
        int t = trigger_ids.front();
        graph.edges.push_back({0, t, Role::trigger});
        for (auto [id, role] : argument_ids) graph.edges.push_back({t, id, role});
      } else {
        for (auto [id, role] : argument_ids) graph.edges.push_back({0, id, role});
      }
      break;
    }
    case GraphFlavor::node_centric: {
      if (!trigger_ids.empty()) {
        int t = trigger_ids.front();
        for (auto [id, role] : argument_ids)
          graph.edges.push_back({t, id, std::nullopt});
      }
      break;
    }
    case GraphFlavor::node_centric_split: {
      for (int t : trigger_ids) {
        for (auto [id, role] : argument_ids)
          graph.edges.push_back({t, id, std::nullopt});
      }
      break;
    }
  }
  sort_edges(graph.edges);
  return graph;
}

DecodeResult decode_to_bio(const EventGraph& graph,
                           const std::unordered_map<int, double>* node_scores) {
  DecodeResult result;
  const std::size_t n = graph.n_tokens;
  result.tags.assign(n, BioTag::outside());

  std::map<int, std::vector<GraphEdge>> incoming;
  for (const auto& edge : graph.edges) incoming[edge.target].push_back(edge);

  struct Item {
    Role role;
    const Anchor* anchor;
    double score;
    std::size_t first_token;
    int id;
  };
  std::vector<Item> items;

  for (const auto& node : graph.nodes) {
    if (node.is_root) continue;

    std::optional<Role> role;
    if (graph.flavor == GraphFlavor::labeled_edge) {
      // Role comes from the unique incoming edge; a root edge labeled
      // "trigger" resolves to the trigger role.
      auto it = incoming.find(node.id);
      if (it == incoming.end() || it->second.empty()) {
        ++result.dropped_nodes;
        continue;
      }
      auto edges = it->second;
      std::sort(edges.begin(), edges.end());
      role = edges.front().label;
      if (!role) {
        ++result.dropped_nodes;
        continue;
      }
    } else {
      role = node.label;
      if (!role) {
        ++result.dropped_nodes;
        continue;
      }
    }

    if (!node.anchor || node.anchor->spans.empty()) continue;
    double score = 1.0;
    if (node_scores) {
      auto it = node_scores->find(node.id);
      if (it != node_scores->end()) score = it->second;
    }
    items.push_back(
        {*role, &*node.anchor, score, node.anchor->spans.front().start, node.id});
  }

  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.first_token != b.first_token) return a.first_token < b.first_token;
    return a.id < b.id;
  });

  std::vector<bool> claimed(n, false);
  for (const auto& item : items) {
    for (const auto& span : item.anchor->spans) {
      std::size_t start = std::min(span.start, n);
      std::size_t end = std::min(span.end, n);
      std::size_t run_start = start;
      bool in_run = false;
      auto emit = [&](std::size_t from, std::size_t to) {
        result.tags[from] = BioTag::begin(item.role);
        for (std::size_t t = from + 1; t < to; ++t)
          result.tags[t] = BioTag::inside(item.role);
      };
      for (std::size_t t = start; t < end; ++t) {
        if (!claimed[t]) {
          claimed[t] = true;
          if (!in_run) {
            run_start = t;
            in_run = true;
          }
        } else if (in_run) {
          emit(run_start, t);
          in_run = false;
        }
      }
      if (in_run) emit(run_start, end);
    }
  }
  return result;
}

std::string serialize_graph(const EventGraph& graph) {
  ordered_json j;
  j["id"] = graph.sentence_id;
  j["flavor"] = std::string(flavor_name(graph.flavor));
  j["n_tokens"] = graph.n_tokens;
  j["nodes"] = ordered_json::array();
  for (const auto& node : graph.nodes) {
    ordered_json n;
    n["id"] = node.id;
    if (node.label) n["label"] = std::string(role_name(*node.label));
    if (node.anchor) {
      ordered_json anchors = ordered_json::array();
      for (const auto& span : node.anchor->spans) {
        anchors.push_back({{"from", span.start}, {"to", span.end}});
      }
      n["anchors"] = std::move(anchors);
    }
    j["nodes"].push_back(std::move(n));
  }
  j["edges"] = ordered_json::array();
  for (const auto& edge : graph.edges) {
    ordered_json e;
    e["source"] = edge.source;
    e["target"] = edge.target;
    if (edge.label) e["label"] = std::string(role_name(*edge.label));
    j["edges"].push_back(std::move(e));
  }
  return j.dump();
}

EventGraph parse_graph(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw GraphError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw GraphError("graph record is not an object");

  EventGraph graph;
  if (!j.contains("id") || !j["id"].is_string())
    throw GraphError("missing string field \"id\"");
  graph.sentence_id = j["id"].get<std::string>();

  auto fail = [&](const std::string& message) -> GraphError {
    return GraphError("graph \"" + graph.sentence_id + "\": " + message);
  };

  if (!j.contains("flavor") || !j["flavor"].is_string())
    throw fail("missing string field \"flavor\"");
  auto flavor = flavor_from_name(j["flavor"].get<std::string>());
  if (!flavor)
    throw fail("unknown flavor \"" + j["flavor"].get<std::string>() + "\"");
  graph.flavor = *flavor;

  if (!j.contains("n_tokens") || !j["n_tokens"].is_number_unsigned())
    throw fail("missing unsigned field \"n_tokens\"");
  graph.n_tokens = j["n_tokens"].get<std::size_t>();

  if (!j.contains("nodes") || !j["nodes"].is_array())
    throw fail("missing array field \"nodes\"");
  std::size_t node_index = 0;
  for (const auto& n : j["nodes"]) {
    auto nfail = [&](const std::string& message) -> GraphError {
      return fail("node " + std::to_string(node_index) + ": " + message);
    };
    if (!n.is_object()) throw nfail("not an object");
    GraphNode node;
    if (!n.contains("id") || !n["id"].is_number_integer())
      throw nfail("missing integer field \"id\"");
    node.id = n["id"].get<int>();
    if (n.contains("label")) {
      if (!n["label"].is_string()) throw nfail("field \"label\" must be a string");
      auto role = role_from_name(n["label"].get<std::string>());
      if (!role)
        throw nfail("unknown label \"" + n["label"].get<std::string>() + "\"");
      node.label = role;
    }
    if (n.contains("anchors")) {
      if (!n["anchors"].is_array()) throw nfail("field \"anchors\" must be an array");
      Anchor anchor;
      for (const auto& a : n["anchors"]) {
        if (!a.is_object() || !a.contains("from") || !a.contains("to") ||
            !a["from"].is_number_unsigned() || !a["to"].is_number_unsigned())
          throw nfail("anchors must be {\"from\":.., \"to\":..} objects");
        anchor.spans.push_back(
            {a["from"].get<std::size_t>(), a["to"].get<std::size_t>()});
      }
      node.anchor = std::move(anchor);
    } else {
      // Only the labeled-edge virtual root may omit anchors.
      node.is_root = true;
    }
    graph.nodes.push_back(std::move(node));
    ++node_index;
  }

  if (!j.contains("edges") || !j["edges"].is_array())
    throw fail("missing array field \"edges\"");
  std::size_t edge_index = 0;
  for (const auto& e : j["edges"]) {
    auto efail = [&](const std::string& message) -> GraphError {
      return fail("edge " + std::to_string(edge_index) + ": " + message);
    };
    if (!e.is_object()) throw efail("not an object");
    GraphEdge edge;
    if (!e.contains("source") || !e["source"].is_number_integer() ||
        !e.contains("target") || !e["target"].is_number_integer())
      throw efail("missing integer fields \"source\"/\"target\"");
    edge.source = e["source"].get<int>();
    edge.target = e["target"].get<int>();
    if (e.contains("label")) {
      if (!e["label"].is_string()) throw efail("field \"label\" must be a string");
      auto role = role_from_name(e["label"].get<std::string>());
      if (!role)
        throw efail("unknown label \"" + e["label"].get<std::string>() + "\"");
      edge.label = role;
    }
    graph.edges.push_back(edge);
    ++edge_index;
  }

  auto violations = validate_graph(graph);
  if (!violations.empty()) throw fail(violations.front());
  return graph;
}

std::vector<std::string> validate_graph(const EventGraph& graph,
                                        bool gold_encoded) {
  std::vector<std::string> out;
  auto report = [&](std::string message) { out.push_back(std::move(message)); };

  std::map<int, const GraphNode*> by_id;
  for (const auto& node : graph.nodes) {
    if (!by_id.emplace(node.id, &node).second)
      report("duplicate node id " + std::to_string(node.id));
  }

  for (const auto& node : graph.nodes) {
    std::string where = "node " + std::to_string(node.id);
    if (node.is_root) {
      if (node.id != 0) report(where + ": root must have id 0");
      if (node.anchor) report(where + ": root must not be anchored");
      if (node.label) report(where + ": root must not be labeled");
      if (graph.flavor != GraphFlavor::labeled_edge)
        report(where + ": only labeled-edge graphs have a root");
      continue;
    }
    if (!node.anchor || node.anchor->spans.empty()) {
      report(where + ": missing anchor");
      continue;
    }
    const auto& spans = node.anchor->spans;
    for (const auto& span : spans) {
      if (span.start >= span.end)
        report(where + ": empty span [" + std::to_string(span.start) + "," +
               std::to_string(span.end) + ")");
      if (span.end > graph.n_tokens)
        report(where + ": span beyond sentence (" + std::to_string(span.end) +
               " > " + std::to_string(graph.n_tokens) + ")");
    }
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i - 1].start > spans[i].start)
        report(where + ": spans not sorted");
      else if (spans[i - 1].end > spans[i].start)
        report(where + ": overlapping spans");
    }
  }

  for (const auto& edge : graph.edges) {
    std::string where = "edge " + std::to_string(edge.source) + "->" +
                        std::to_string(edge.target);
    if (edge.source == edge.target) report(where + ": self loop");
    if (!by_id.contains(edge.source)) report(where + ": unknown source");
    if (!by_id.contains(edge.target)) report(where + ": unknown target");
  }
  if (!out.empty()) return out;  // flavor checks assume basic shape

  std::map<int, std::size_t> incoming;
  for (const auto& edge : graph.edges) ++incoming[edge.target];

  switch (graph.flavor) {
    case GraphFlavor::labeled_edge: {
      const GraphNode* root = graph.find_node(0);
      if (!root || !root->is_root) {
        report("labeled-edge graph must have the virtual root as node 0");
        break;
      }
      for (const auto& node : graph.nodes) {
        if (!node.is_root && node.label)
          report("node " + std::to_string(node.id) +
                 ": labeled-edge nodes must be unlabeled");
      }
      std::optional<int> trigger_id;
      for (const auto& edge : graph.edges) {
        if (!edge.label) {
          report("edge " + std::to_string(edge.source) + "->" +
                 std::to_string(edge.target) + ": missing label");
          continue;
        }
        if (edge.source == 0 && *edge.label == Role::trigger) {
          if (trigger_id)
            report("more than one root edge labeled trigger");
          else
            trigger_id = edge.target;
        }
      }
      for (const auto& node : graph.nodes) {
        if (node.is_root) continue;
        std::size_t in = incoming.count(node.id) ? incoming[node.id] : 0;
        if (in != 1)
          report("node " + std::to_string(node.id) + ": has " +
                 std::to_string(in) + " incoming edges, expected 1");
      }
      for (const auto& edge : graph.edges) {
        if (edge.source == 0 || !edge.label) continue;
        if (!trigger_id || edge.source != *trigger_id)
          report("edge " + std::to_string(edge.source) + "->" +
                 std::to_string(edge.target) +
                 ": non-root edges must originate at the trigger node");
        else if (*edge.label == Role::trigger)
          report("edge " + std::to_string(edge.source) + "->" +
                 std::to_string(edge.target) +
                 ": trigger label is reserved for the root edge");
      }
      break;
    }
    case GraphFlavor::node_centric:
    case GraphFlavor::node_centric_split: {
      bool split = graph.flavor == GraphFlavor::node_centric_split;
      std::vector<int> trigger_ids;
      std::vector<int> argument_ids;
      for (const auto& node : graph.nodes) {
        if (!node.label) {
          report("node " + std::to_string(node.id) + ": missing label");
          continue;
        }
        if (*node.label == Role::trigger) {
          trigger_ids.push_back(node.id);
          if (split && node.anchor->spans.size() != 1)
            report("node " + std::to_string(node.id) +
                   ": split trigger nodes must anchor exactly one span");
        } else {
          argument_ids.push_back(node.id);
        }
      }
      if (!split && trigger_ids.size() > 1)
        report("more than one trigger node");
      for (const auto& edge : graph.edges) {
        if (edge.label)
          report("edge " + std::to_string(edge.source) + "->" +
                 std::to_string(edge.target) + ": must be unlabeled");
        bool src_trigger = std::find(trigger_ids.begin(), trigger_ids.end(),
                                     edge.source) != trigger_ids.end();
        bool tgt_argument = std::find(argument_ids.begin(), argument_ids.end(),
                                      edge.target) != argument_ids.end();
        if (!src_trigger || !tgt_argument)
          report("edge " + std::to_string(edge.source) + "->" +
                 std::to_string(edge.target) +
                 ": edges must run trigger -> argument");
      }
      if (!out.empty()) break;
      if (split) {
        // Complete bipartite, no duplicates.
        std::set<std::pair<int, int>> seen;
        for (const auto& edge : graph.edges) {
          if (!seen.emplace(edge.source, edge.target).second)
            report("duplicate edge " + std::to_string(edge.source) + "->" +
                   std::to_string(edge.target));
        }
        if (seen.size() != trigger_ids.size() * argument_ids.size())
          report("expected complete bipartite trigger x argument edges (" +
                 std::to_string(trigger_ids.size() * argument_ids.size()) +
                 "), found " + std::to_string(seen.size()));
      } else {
        if (trigger_ids.empty()) {
          if (!graph.edges.empty())
            report("graphs without a trigger node must have no edges");
        } else {
          for (int id : argument_ids) {
            std::size_t in = incoming.count(id) ? incoming[id] : 0;
            if (in != 1)
              report("node " + std::to_string(id) + ": has " +
                     std::to_string(in) + " incoming edges, expected 1");
          }
        }
      }
      break;
    }
  }

  if (gold_encoded && out.empty()) {
    std::vector<int> owner(graph.n_tokens, -1);
    for (const auto& node : graph.nodes) {
      if (!node.anchor) continue;
      for (const auto& span : node.anchor->spans) {
        for (std::size_t t = span.start; t < span.end && t < graph.n_tokens; ++t) {
          if (owner[t] != -1)
            report("token " + std::to_string(t) + " anchored by nodes " +
                   std::to_string(owner[t]) + " and " + std::to_string(node.id));
          owner[t] = node.id;
        }
      }
    }
  }
  return out;
}

bool structurally_equal(const EventGraph& a, const EventGraph& b) {
  if (a.flavor != b.flavor || a.n_tokens != b.n_tokens) return false;
  auto nodes_a = a.nodes;
  auto nodes_b = b.nodes;
  auto by_id = [](const GraphNode& x, const GraphNode& y) { return x.id < y.id; };
  std::sort(nodes_a.begin(), nodes_a.end(), by_id);
  std::sort(nodes_b.begin(), nodes_b.end(), by_id);
  if (nodes_a != nodes_b) return false;
  auto edges_a = a.edges;
  auto edges_b = b.edges;
  std::sort(edges_a.begin(), edges_a.end());
  std::sort(edges_b.begin(), edges_b.end());
  return edges_a == edges_b;
}

}  // namespace evparse
