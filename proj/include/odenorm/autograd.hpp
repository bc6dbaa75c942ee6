#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "odenorm/tensor.hpp"

namespace odenorm {

// A named model tensor. Trainable parameters become differentiable leaves when
// used under a recording graph; buffers (running statistics, power-iteration
// vectors) are persisted but never differentiated.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

class Graph;

// A value flowing through a computation, optionally tied to a node of the
// graph that produced it. Untracked Vars are constants.
class Var {
 public:
  Var() = default;
  Var(Tensor value) : value_(std::move(value)) {}  // NOLINT: constants convert implicitly

  const Tensor& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  bool tracked() const { return graph_ != nullptr; }
  const Graph* graph() const { return graph_; }
  int64_t node() const { return node_; }

 private:
  friend class Graph;
  Tensor value_;
  Graph* graph_ = nullptr;
  int64_t node_ = -1;
};

using InputGrads = std::vector<std::optional<Tensor>>;

struct Node;

// Maps the gradient w.r.t. a node's output to gradients w.r.t. its inputs, one
// slot per input. Slots may be left empty for inputs that are not tracked.
using BackwardFn = std::function<InputGrads(const Tensor& grad_out, const Node& node)>;

struct Node {
  const char* op = "";
  std::vector<int64_t> inputs;  // -1 marks a constant input
  std::vector<Tensor> saved;
  BackwardFn backward;
  Shape shape;
  const Parameter* param = nullptr;

  bool is_leaf() const { return !backward; }
  bool needs_grad(size_t input) const { return inputs[input] >= 0; }
};

// Gradients w.r.t. the leaves of one backward sweep.
class Gradients {
 public:
  // Zeros when the leaf was not reached from the output.
  Tensor of(const Var& leaf) const;
  Tensor of(const Parameter& param) const;
  bool reached(const Parameter& param) const;

 private:
  friend class Graph;
  std::unordered_map<int64_t, Tensor> by_node_;
  std::unordered_map<int64_t, Shape> leaf_shapes_;
  std::unordered_map<const Parameter*, int64_t> param_nodes_;
};

// Reverse-mode tape. Nodes are appended in execution order, so the node list is
// a topological order by construction. A Graph is confined to one thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  ~Graph();

  Var leaf(Tensor value);
  // One leaf per parameter per graph; repeated uses accumulate gradients.
  Var param(const Parameter& p);

  Var record(const char* op, const std::vector<const Var*>& inputs, Tensor out,
             std::vector<Tensor> saved, BackwardFn backward);

  // Does not modify the graph; calling twice gives identical results.
  Gradients backward(const Var& output, const Tensor& seed) const;
  Gradients backward(const Var& output) const;  // seed of ones

  size_t node_count() const { return nodes_.size(); }
  const Node& node(int64_t id) const { return nodes_[static_cast<size_t>(id)]; }
  int64_t retained_bytes() const { return retained_bytes_; }

 private:
  Var append(Node node, Tensor value);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int64_t> param_nodes_;
  int64_t retained_bytes_ = 0;
};

// The graph ops record onto in the current thread, or nullptr.
Graph* active_graph();

class RecordingScope {
 public:
  explicit RecordingScope(Graph& graph);
  ~RecordingScope();
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  Graph* previous_;
};

class NoRecordScope {
 public:
  NoRecordScope();
  ~NoRecordScope();
  NoRecordScope(const NoRecordScope&) = delete;
  NoRecordScope& operator=(const NoRecordScope&) = delete;

 private:
  Graph* previous_;
};

// The parameter as a leaf of the active graph when recording, else a constant.
Var use(const Parameter& p);

// Appends a node to the active graph when recording and at least one input is
// tracked there; otherwise returns `out` as a constant.
Var make_result(const char* op, const std::vector<const Var*>& inputs, Tensor out,
                std::vector<Tensor> saved, BackwardFn backward);

// Bytes of saved tensors held by all live graphs in the process.
struct TapeMemory {
  static int64_t live_bytes();
  static int64_t peak_bytes();
  static void reset_peak();
};

}  // namespace odenorm
