#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "neat/types.hpp"

// Reverse-mode automatic differentiation over flat parameter vectors, plus a
// small fully connected network evaluator. Tapes record layer-level nodes
// (values are matrices, one column per point), so a whole batch of points
// shares one tape and the backward pass runs as dense matrix products.

namespace neat::ad {

struct SegmentInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  Eigen::Index offset = 0;
  Eigen::Index size() const { return Eigen::Index(rows) * cols; }
};

// Flat parameter storage with a named (name, shape) segment layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<SegmentInfo> layout);

  static ParamVector zeros_like(const ParamVector& other);

  Eigen::Index size() const { return values_.size(); }
  const VecX& values() const { return values_; }
  VecX& values() { return values_; }

  const std::vector<SegmentInfo>& layout() const { return layout_; }
  int segment_count() const { return int(layout_.size()); }
  int segment_index(const std::string& name) const;  // -1 if absent
  const SegmentInfo& segment_info(int i) const { return layout_[size_t(i)]; }

  Eigen::Map<Mat> segment(int i);
  Eigen::Map<const Mat> segment(int i) const;
  Eigen::Map<Mat> segment(const std::string& name);
  Eigen::Map<const Mat> segment(const std::string& name) const;

  bool same_layout(const ParamVector& other) const;

 private:
  VecX values_;
  std::vector<SegmentInfo> layout_;
  std::unordered_map<std::string, int> index_;
};

enum class Activation { Linear, Softplus, Tanh, Sigmoid };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Network shape description. Hidden layers share one activation; the output
// layer is linear or sigmoid. Skip indices name hidden layers whose input is
// the previous activation concatenated with the encoded network input.
struct MlpSpec {
  std::string name = "mlp";
  int input_dim = 3;
  std::vector<int> hidden;
  int output_dim = 1;
  Activation hidden_activation = Activation::Softplus;
  Scalar softplus_beta = 100.0;
  Activation output_activation = Activation::Linear;
  std::vector<int> skip_layers;
  int encoding_frequencies = 0;  // L; encoded dim = input_dim * (1 + 2L)

  int encoded_dim() const { return input_dim * (1 + 2 * encoding_frequencies); }
  int layer_count() const { return int(hidden.size()) + 1; }
  // (in, out) of affine layer k, skip concat included.
  std::pair<int, int> layer_dims(int k) const;
  bool has_skip(int k) const;
  void validate() const;  // throws SchemaError
  void append_segments(std::vector<SegmentInfo>& out) const;
};

// x -> concat(x, sin(2^k pi x), cos(2^k pi x)) for k < L, applied per column.
Mat positional_encode(const Mat& x, int L);
VecX positional_encode(const VecX& x, int L);

enum class NodeKind { Input, Encode, Concat, Affine, Act };

struct TapeNode {
  NodeKind kind = NodeKind::Input;
  int in0 = -1;
  int in1 = -1;     // second parent for Concat (the Encode node)
  Mat value;        // this node's forward value, one column per point
  int weight_seg = -1;
  int bias_seg = -1;
  Activation act = Activation::Linear;
  Scalar softplus_beta = 0.0;
};

// Topologically ordered record of one batched forward pass. Holds a snapshot
// of the parameters it was recorded against, so replay and backward need no
// external state.
struct Tape {
  MlpSpec spec;
  ParamVector params;
  std::vector<TapeNode> nodes;
  int output_node = -1;
  Eigen::Index n_points = 0;

  // Re-runs the recorded computation from the stored input; bit-identical.
  Mat replay() const;
};

// Evaluates the network on a batch of points (columns of x). If tape is
// non-null it records the computation for the reverse pass.
Mat forward(const MlpSpec& spec, const ParamVector& params, const Mat& x,
            Tape* tape = nullptr);
VecX forward(const MlpSpec& spec, const ParamVector& params, const Vec3& x,
             Tape* tape = nullptr);

// Accumulates d<cotangent, output>/dparams into grad. The cotangent has one
// column per point, matching the recorded batch. If input_grad is non-null it
// also receives d<cotangent, output>/dx (input_dim x N).
void backward(const Tape& tape, const Mat& cotangent, ParamVector& grad,
              Mat* input_grad = nullptr);
ParamVector backward(const Tape& tape, const Mat& cotangent);

// d<cotangent, output>/dx only; skips parameter gradient work.
Mat input_backward(const Tape& tape, const Mat& cotangent);

}  // namespace neat::ad
