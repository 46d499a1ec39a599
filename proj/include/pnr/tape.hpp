#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pnr/matrix.hpp"

namespace pnr {

using NodeId = std::int32_t;

// Backward rule of a user-registered node: maps the upstream gradient
// (shaped like the node's value) to one gradient per input, each shaped
// like the corresponding input value.
using CustomBackward = std::function<std::vector<Matrix>(const Matrix& upstream)>;

// Define-by-run reverse-mode tape over Matrix values. A tape is built for
// one forward pass, back-propagated once or twice, then dropped; it is
// single-owner and neither copyable nor movable so that recorded closures
// may safely refer to it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding an externally supplied value (parameter or constant).
  NodeId input(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double c);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId relu(NodeId a);
  NodeId abs(NodeId a);
  NodeId softplus(NodeId a);
  NodeId sum(NodeId a);   // 1x1
  NodeId mean(NodeId a);  // 1x1
  NodeId reshape(NodeId a, int rows, int cols);
  NodeId hconcat(NodeId a, NodeId b);
  NodeId vconcat(NodeId a, NodeId b);

  // Registers a node whose forward value was produced outside the tape.
  // backward is invoked during backward() and must return grads matching
  // the inputs' shapes; a mismatch raises ContractError at backward time.
  NodeId custom(Matrix value, std::vector<NodeId> inputs, CustomBackward backward);

  const Matrix& value(NodeId id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

  // Reverse pass from a 1x1 loss node. Returns one gradient per node id;
  // nodes not reachable from the loss get a zero gradient of their shape.
  // Contributions to a node consumed twice are accumulated.
  std::vector<Matrix> backward(NodeId loss) const;

 private:
  enum class Op {
    kLeaf,
    kMatMul,
    kAdd,
    kSub,
    kMul,
    kScale,
    kTanh,
    kSigmoid,
    kRelu,
    kAbs,
    kSoftplus,
    kSum,
    kMean,
    kReshape,
    kHconcat,
    kVconcat,
    kCustom,
  };

  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Matrix value;
    double aux = 0.0;  // scale factor
    CustomBackward custom_backward;
  };

  NodeId push(Op op, std::vector<NodeId> inputs, Matrix value, double aux = 0.0);
  const Matrix& in_value(const Node& n, int k) const;
  void check_id(NodeId id) const;

  // Appends this node's input gradients into grads.
  void backprop_node(NodeId id, const Matrix& upstream,
                     std::vector<Matrix>& grads, std::vector<char>& reached) const;

  std::vector<Node> nodes_;
};

double sigmoid_scalar(double x);
double softplus_scalar(double x);

}  // namespace pnr
