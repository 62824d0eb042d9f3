// Copyright 2026 The sgir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sgir {

// Error hierarchy. Validation problems (bad shapes, bad arguments, bad
// files) are distinguished from runtime failures so the CLI can map them to
// different exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class Tape;

// Shape-tagged dense array of doubles. Storage is shared between copies and
// treated as immutable once a tensor has been recorded on a tape;
// mutable_data() copies on write when the buffer is shared.
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
    if (shape_size(shape_) != data_->size())
      throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                       std::to_string(data_->size()) + " values");
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor full(Shape shape, double v) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  std::span<const double> data() const { return *data_; }
  const std::vector<double>& vec() const { return *data_; }

  std::span<double> mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
    return *data_;
  }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  bool attached() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  NodeId node() const { return node_; }

  // Same storage, new extents; the result is detached.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = kNoNode;
    return t;
  }

  bool same_values(const Tensor& o) const { return shape_ == o.shape_ && *data_ == *o.data_; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

// Gradient accumulators handed to a node's backward function, one per
// input. Entries are null for inputs that are not on the tape.
using GradInputs = std::vector<std::vector<double>*>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradInputs& grad_in)>;

struct TapeNode {
  std::string kind;
  std::vector<NodeId> inputs;  // kNoNode for constant inputs
  Shape shape;
  BackwardFn backward;  // empty for leaves
};

// Append-only record of differentiable operations. Inputs always precede
// outputs, so reverse append order is a valid reverse topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Tensor& value) {
    Tensor t = value.detach();
    t.tape_ = this;
    t.node_ = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(TapeNode{"leaf", {}, t.shape(), {}});
    leaves_.push_back(t.node_);
    return t;
  }

  // Records `out` as the result of `kind` applied to `inputs`. The output
  // is attached only when at least one input is.
  Tensor record(std::string_view kind, std::initializer_list<const Tensor*> inputs, Tensor out,
                BackwardFn backward) {
    return record(kind, std::vector<const Tensor*>(inputs), std::move(out), std::move(backward));
  }

  Tensor record(std::string_view kind, const std::vector<const Tensor*>& inputs, Tensor out,
                BackwardFn backward) {
    std::vector<NodeId> ids;
    ids.reserve(inputs.size());
    for (const Tensor* in : inputs) {
      if (in->tape_ && in->tape_ != this)
        throw Error(std::string(kind) + ": inputs belong to different tapes");
      ids.push_back(in->tape_ ? in->node_ : kNoNode);
    }
    out.tape_ = this;
    out.node_ = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(TapeNode{std::string(kind), std::move(ids), out.shape(), std::move(backward)});
    return out;
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<NodeId>& leaves() const { return leaves_; }

 private:
  std::vector<TapeNode> nodes_;
  std::vector<NodeId> leaves_;
};

// Records `out` on the tape shared by `inputs`, or returns it detached when
// no input is attached (pure forward evaluation saves nothing).
inline Tensor record_op(std::string_view kind, const std::vector<const Tensor*>& inputs, Tensor out,
                        BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->tape()) continue;
    if (tape && in->tape() != tape) throw Error(std::string(kind) + ": inputs belong to different tapes");
    tape = in->tape();
  }
  if (!tape) return out;
  return tape->record(kind, inputs, std::move(out), std::move(backward));
}

// d(loss)/d(leaf) for every leaf on a tape.
class Gradients {
 public:
  Gradients() = default;

  const Tensor& operator[](const Tensor& leaf) const { return at(leaf.node()); }
  const Tensor& at(NodeId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw Error("no gradient recorded for node " + std::to_string(id));
    return it->second;
  }
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  const std::unordered_map<NodeId, Tensor>& map() const { return grads_; }

 private:
  friend Gradients backward(const Tape& tape, const Tensor& loss);
  std::unordered_map<NodeId, Tensor> grads_;
};

inline Gradients backward(const Tape& tape, const Tensor& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (loss.tape() != &tape) throw Error("backward: loss is not recorded on this tape");

  std::vector<std::vector<double>> acc(tape.size());
  auto root = static_cast<std::size_t>(loss.node());
  acc[root].assign(1, 1.0);

  for (std::size_t i = root + 1; i-- > 0;) {
    const TapeNode& n = tape.node(static_cast<NodeId>(i));
    if (acc[i].empty() || !n.backward) continue;
    GradInputs gin(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      NodeId in = n.inputs[k];
      if (in == kNoNode) continue;
      auto& a = acc[static_cast<std::size_t>(in)];
      if (a.empty()) a.assign(shape_size(tape.node(in).shape), 0.0);
      gin[k] = &a;
    }
    n.backward(acc[i], gin);
    std::vector<double>().swap(acc[i]);  // intermediate grads are no longer needed
  }

  Gradients g;
  for (NodeId id : tape.leaves()) {
    const Shape& s = tape.node(id).shape;
    auto& a = acc[static_cast<std::size_t>(id)];
    if (a.empty()) a.assign(shape_size(s), 0.0);
    g.grads_.emplace(id, Tensor(s, std::move(a)));
  }
  return g;
}

}  // namespace sgir
