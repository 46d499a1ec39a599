#include "pnr/tape.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "pnr/error.hpp"

namespace pnr {

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

NodeId Tape::push(Op op, std::vector<NodeId> inputs, Matrix value, double aux) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(value), aux, {}});
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::check_id(NodeId id) const {
  if (id < 0 || id >= size()) {
    throw ContractError("tape: node id " + std::to_string(id) + " out of range");
  }
}

const Matrix& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value;
}

const Matrix& Tape::in_value(const Node& n, int k) const {
  return nodes_[n.inputs[k]].value;
}

NodeId Tape::input(Matrix value) { return push(Op::kLeaf, {}, std::move(value)); }

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  return push(Op::kMatMul, {a, b}, pnr::matmul(value(a), value(b)));
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  return push(Op::kAdd, {a, b}, value(a) + value(b));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  return push(Op::kSub, {a, b}, value(a) - value(b));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  return push(Op::kMul, {a, b}, hadamard(value(a), value(b)));
}

NodeId Tape::scale(NodeId a, double c) {
  check_id(a);
  return push(Op::kScale, {a}, c * value(a), c);
}

NodeId Tape::tanh(NodeId a) {
  check_id(a);
  return push(Op::kTanh, {a}, map_unary(value(a), [](double x) { return std::tanh(x); }));
}

NodeId Tape::sigmoid(NodeId a) {
  check_id(a);
  return push(Op::kSigmoid, {a}, map_unary(value(a), sigmoid_scalar));
}

NodeId Tape::relu(NodeId a) {
  check_id(a);
  return push(Op::kRelu, {a},
              map_unary(value(a), [](double x) { return x > 0.0 ? x : 0.0; }));
}

NodeId Tape::abs(NodeId a) {
  check_id(a);
  return push(Op::kAbs, {a}, map_unary(value(a), [](double x) { return std::fabs(x); }));
}

NodeId Tape::softplus(NodeId a) {
  check_id(a);
  return push(Op::kSoftplus, {a}, map_unary(value(a), softplus_scalar));
}

NodeId Tape::sum(NodeId a) {
  check_id(a);
  Matrix s(1, 1);
  s(0, 0) = pnr::sum(value(a));
  return push(Op::kSum, {a}, std::move(s));
}

NodeId Tape::mean(NodeId a) {
  check_id(a);
  Matrix s(1, 1);
  s(0, 0) = pnr::mean(value(a));
  return push(Op::kMean, {a}, std::move(s));
}

NodeId Tape::reshape(NodeId a, int rows, int cols) {
  check_id(a);
  const Matrix& v = value(a);
  if (static_cast<long long>(rows) * cols != v.size()) {
    throw DimensionError("reshape: cannot view " + v.shape_str() + " as " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out(rows, cols);
  std::copy(v.data(), v.data() + v.size(), out.data());
  return push(Op::kReshape, {a}, std::move(out));
}

NodeId Tape::hconcat(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.rows() != vb.rows()) {
    throw DimensionError("hconcat: row mismatch " + va.shape_str() + " vs " +
                         vb.shape_str());
  }
  Matrix out(va.rows(), va.cols() + vb.cols());
  for (int i = 0; i < va.rows(); ++i) {
    for (int j = 0; j < va.cols(); ++j) out(i, j) = va(i, j);
    for (int j = 0; j < vb.cols(); ++j) out(i, va.cols() + j) = vb(i, j);
  }
  return push(Op::kHconcat, {a, b}, std::move(out));
}

NodeId Tape::vconcat(NodeId a, NodeId b) {
  check_id(a);
  check_id(b);
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.cols()) {
    throw DimensionError("vconcat: column mismatch " + va.shape_str() + " vs " +
                         vb.shape_str());
  }
  Matrix out(va.rows() + vb.rows(), va.cols());
  for (int i = 0; i < va.rows(); ++i)
    for (int j = 0; j < va.cols(); ++j) out(i, j) = va(i, j);
  for (int i = 0; i < vb.rows(); ++i)
    for (int j = 0; j < vb.cols(); ++j) out(va.rows() + i, j) = vb(i, j);
  return push(Op::kVconcat, {a, b}, std::move(out));
}

NodeId Tape::custom(Matrix value, std::vector<NodeId> inputs, CustomBackward backward) {
  for (NodeId id : inputs) check_id(id);
  NodeId out = push(Op::kCustom, std::move(inputs), std::move(value));
  nodes_[out].custom_backward = std::move(backward);
  return out;
}

void Tape::backprop_node(NodeId id, const Matrix& upstream,
                         std::vector<Matrix>& grads, std::vector<char>& reached) const {
  const Node& n = nodes_[id];
  auto accumulate = [&](int k, Matrix g) {
    const NodeId target = n.inputs[k];
    if (!g.same_shape(nodes_[target].value)) {
      throw ContractError("backward: gradient shape " + g.shape_str() +
                          " does not match input value shape " +
                          nodes_[target].value.shape_str());
    }
    if (reached[target]) {
      grads[target] = grads[target] + g;
    } else {
      grads[target] = std::move(g);
      reached[target] = 1;
    }
  };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatMul:
      accumulate(0, pnr::matmul(upstream, transpose(in_value(n, 1))));
      accumulate(1, pnr::matmul(transpose(in_value(n, 0)), upstream));
      break;
    case Op::kAdd:
      accumulate(0, upstream);
      accumulate(1, upstream);
      break;
    case Op::kSub:
      accumulate(0, upstream);
      accumulate(1, -1.0 * upstream);
      break;
    case Op::kMul:
      accumulate(0, hadamard(upstream, in_value(n, 1)));
      accumulate(1, hadamard(upstream, in_value(n, 0)));
      break;
    case Op::kScale:
      accumulate(0, n.aux * upstream);
      break;
    case Op::kTanh: {
      // d tanh = 1 - tanh^2, using the cached output value
      Matrix d = map_unary(n.value, [](double y) { return 1.0 - y * y; });
      accumulate(0, hadamard(upstream, d));
      break;
    }
    case Op::kSigmoid: {
      Matrix d = map_unary(n.value, [](double y) { return y * (1.0 - y); });
      accumulate(0, hadamard(upstream, d));
      break;
    }
    case Op::kRelu: {
      // subgradient at 0 taken as 0
      Matrix d = map_unary(in_value(n, 0), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
      accumulate(0, hadamard(upstream, d));
      break;
    }
    case Op::kAbs: {
      Matrix d = map_unary(in_value(n, 0),
                           [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
      accumulate(0, hadamard(upstream, d));
      break;
    }
    case Op::kSoftplus: {
      Matrix d = map_unary(in_value(n, 0), sigmoid_scalar);
      accumulate(0, hadamard(upstream, d));
      break;
    }
    case Op::kSum: {
      const Matrix& in = in_value(n, 0);
      accumulate(0, Matrix::full(in.rows(), in.cols(), upstream(0, 0)));
      break;
    }
    case Op::kMean: {
      const Matrix& in = in_value(n, 0);
      accumulate(0, Matrix::full(in.rows(), in.cols(),
                                 upstream(0, 0) / static_cast<double>(in.size())));
      break;
    }
    case Op::kReshape: {
      const Matrix& in = in_value(n, 0);
      Matrix g(in.rows(), in.cols());
      std::copy(upstream.data(), upstream.data() + upstream.size(), g.data());
      accumulate(0, std::move(g));
      break;
    }
    case Op::kHconcat: {
      const Matrix& va = in_value(n, 0);
      const Matrix& vb = in_value(n, 1);
      Matrix ga(va.rows(), va.cols());
      Matrix gb(vb.rows(), vb.cols());
      for (int i = 0; i < va.rows(); ++i) {
        for (int j = 0; j < va.cols(); ++j) ga(i, j) = upstream(i, j);
        for (int j = 0; j < vb.cols(); ++j) gb(i, j) = upstream(i, va.cols() + j);
      }
      accumulate(0, std::move(ga));
      accumulate(1, std::move(gb));
      break;
    }
    case Op::kVconcat: {
      const Matrix& va = in_value(n, 0);
      const Matrix& vb = in_value(n, 1);
      Matrix ga(va.rows(), va.cols());
      Matrix gb(vb.rows(), vb.cols());
      for (int i = 0; i < va.rows(); ++i)
        for (int j = 0; j < va.cols(); ++j) ga(i, j) = upstream(i, j);
      for (int i = 0; i < vb.rows(); ++i)
        for (int j = 0; j < vb.cols(); ++j) gb(i, j) = upstream(va.rows() + i, j);
      accumulate(0, std::move(ga));
      accumulate(1, std::move(gb));
      break;
    }
    case Op::kCustom: {
      std::vector<Matrix> gs = n.custom_backward(upstream);
      if (gs.size() != n.inputs.size()) {
        throw ContractError("custom backward returned " + std::to_string(gs.size()) +
                            " gradients for " + std::to_string(n.inputs.size()) +
                            " inputs");
      }
      for (std::size_t k = 0; k < gs.size(); ++k) {
        accumulate(static_cast<int>(k), std::move(gs[k]));
      }
      break;
    }
  }
}

std::vector<Matrix> Tape::backward(NodeId loss) const {
  check_id(loss);
  const Matrix& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss node must be 1x1, got " + lv.shape_str());
  }
  std::vector<Matrix> grads(nodes_.size());
  std::vector<char> reached(nodes_.size(), 0);
  grads[loss] = Matrix::full(1, 1, 1.0);
  reached[loss] = 1;
  // Node ids are topologically ordered, so one reverse sweep suffices.
  for (NodeId id = loss; id >= 0; --id) {
    if (!reached[id]) continue;
    backprop_node(id, grads[id], grads, reached);
  }
  for (NodeId id = 0; id < size(); ++id) {
    if (!reached[id]) {
      grads[id] = Matrix::zeros(nodes_[id].value.rows(), nodes_[id].value.cols());
    }
  }
  return grads;
}

}  // namespace pnr
