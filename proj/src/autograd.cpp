#include "odenorm/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

namespace odenorm {

namespace {

thread_local Graph* g_active = nullptr;

std::atomic<int64_t> g_live_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};

void track_bytes(int64_t delta) {
  int64_t now = g_live_bytes.fetch_add(delta) + delta;
  int64_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

void accumulate(std::optional<Tensor>& slot, Tensor grad) {
  if (!slot) {
    slot = std::move(grad);
    return;
  }
  auto dst = slot->mutable_data();
  auto src = grad.data();
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor Gradients::of(const Var& leaf) const {
  if (!leaf.tracked()) throw std::invalid_argument("gradients: variable is not a graph leaf");
  auto it = by_node_.find(leaf.node());
  if (it != by_node_.end()) return it->second;
  return Tensor::zeros(leaf.shape());
}

Tensor Gradients::of(const Parameter& param) const {
  auto it = param_nodes_.find(&param);
  if (it == param_nodes_.end()) return Tensor::zeros(param.value.shape());
  auto g = by_node_.find(it->second);
  if (g != by_node_.end()) return g->second;
  return Tensor::zeros(param.value.shape());
}

bool Gradients::reached(const Parameter& param) const {
  auto it = param_nodes_.find(&param);
  return it != param_nodes_.end() && by_node_.count(it->second) > 0;
}

Graph::~Graph() { track_bytes(-retained_bytes_); }

Var Graph::append(Node node, Tensor value) {
  int64_t bytes = 0;
  for (const Tensor& t : node.saved) bytes += t.size() * static_cast<int64_t>(sizeof(double));
  retained_bytes_ += bytes;
  track_bytes(bytes);
  node.shape = value.shape();
  nodes_.push_back(std::move(node));
  Var v(std::move(value));
  v.graph_ = this;
  v.node_ = static_cast<int64_t>(nodes_.size()) - 1;
  return v;
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  return append(std::move(n), std::move(value));
}

Var Graph::param(const Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) {
    Var v(p.value);
    v.graph_ = this;
    v.node_ = it->second;
    return v;
  }
  Node n;
  n.op = "param";
  n.param = &p;
  Var v = append(std::move(n), p.value);
  param_nodes_.emplace(&p, v.node_);
  return v;
}

Var Graph::record(const char* op, const std::vector<const Var*>& inputs, Tensor out,
                  std::vector<Tensor> saved, BackwardFn backward) {
  Node n;
  n.op = op;
  n.inputs.reserve(inputs.size());
  for (const Var* in : inputs) {
    if (in->tracked() && in->graph_ != this) {
      throw std::logic_error(std::string(op) + ": input recorded on a different graph");
    }
    n.inputs.push_back(in->tracked() ? in->node_ : -1);
  }
  n.saved = std::move(saved);
  n.backward = std::move(backward);
  return append(std::move(n), std::move(out));
}

Gradients Graph::backward(const Var& output) const {
  return backward(output, Tensor::ones(output.shape()));
}

Gradients Graph::backward(const Var& output, const Tensor& seed) const {
  if (nodes_.empty()) throw std::invalid_argument("backward: graph is empty");
  if (output.graph_ != this) throw std::invalid_argument("backward: output is not recorded on this graph");
  if (seed.shape() != output.shape()) {
    throw ShapeError("backward: seed shape " + shape_str(seed.shape()) + " does not match output " +
                     shape_str(output.shape()));
  }
  std::vector<std::optional<Tensor>> grads(static_cast<size_t>(output.node_) + 1);
  grads.back() = seed;
  Gradients result;
  for (int64_t id = output.node_; id >= 0; --id) {
    auto& slot = grads[static_cast<size_t>(id)];
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.is_leaf()) {
      result.leaf_shapes_.emplace(id, n.shape);
      if (n.param) result.param_nodes_.emplace(n.param, id);
      if (slot) result.by_node_.emplace(id, std::move(*slot));
      continue;
    }
    if (!slot) continue;
    InputGrads in = n.backward(*slot, n);
    if (in.size() != n.inputs.size()) {
      throw std::logic_error(std::string(n.op) + ": backward returned wrong number of gradients");
    }
    for (size_t j = 0; j < in.size(); ++j) {
      int64_t src = n.inputs[j];
      if (src < 0 || !in[j]) continue;
      if (in[j]->shape() != nodes_[static_cast<size_t>(src)].shape) {
        throw std::logic_error(std::string(n.op) + ": gradient shape " + shape_str(in[j]->shape()) +
                               " does not match input " +
                               shape_str(nodes_[static_cast<size_t>(src)].shape));
      }
      accumulate(grads[static_cast<size_t>(src)], std::move(*in[j]));
    }
    slot.reset();
  }
  return result;
}

Graph* active_graph() { return g_active; }

RecordingScope::RecordingScope(Graph& graph) : previous_(g_active) { g_active = &graph; }
RecordingScope::~RecordingScope() { g_active = previous_; }

NoRecordScope::NoRecordScope() : previous_(g_active) { g_active = nullptr; }
NoRecordScope::~NoRecordScope() { g_active = previous_; }

Var use(const Parameter& p) {
  if (g_active && p.trainable) return g_active->param(p);
  return Var(p.value);
}

Var make_result(const char* op, const std::vector<const Var*>& inputs, Tensor out,
                std::vector<Tensor> saved, BackwardFn backward) {
  Graph* g = g_active;
  if (!g) return Var(std::move(out));
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return v->tracked(); });
  if (!any) return Var(std::move(out));
  return g->record(op, inputs, std::move(out), std::move(saved), std::move(backward));
}

int64_t TapeMemory::live_bytes() { return g_live_bytes.load(); }
int64_t TapeMemory::peak_bytes() { return g_peak_bytes.load(); }
void TapeMemory::reset_peak() { g_peak_bytes.store(g_live_bytes.load()); }

}  // namespace odenorm
