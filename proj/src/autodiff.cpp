#include "neat/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace neat::ad {

// ---------------------------------------------------------------------------
// ParamVector

ParamVector::ParamVector(std::vector<SegmentInfo> layout) : layout_(std::move(layout)) {
  Eigen::Index total = 0;
  for (auto& seg : layout_) {
    if (seg.rows <= 0 || seg.cols <= 0)
      throw SchemaError("parameter segment '" + seg.name + "' has non-positive shape");
    if (index_.count(seg.name))
      throw SchemaError("duplicate parameter segment name '" + seg.name + "'");
    seg.offset = total;
    index_[seg.name] = int(&seg - layout_.data());
    total += seg.size();
  }
  values_ = VecX::Zero(total);
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
  ParamVector out;
  out.layout_ = other.layout_;
  out.index_ = other.index_;
  out.values_ = VecX::Zero(other.values_.size());
  return out;
}

int ParamVector::segment_index(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

Eigen::Map<Mat> ParamVector::segment(int i) {
  const SegmentInfo& s = layout_[size_t(i)];
  return {values_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Mat> ParamVector::segment(int i) const {
  const SegmentInfo& s = layout_[size_t(i)];
  return {values_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Mat> ParamVector::segment(const std::string& name) {
  int i = segment_index(name);
  if (i < 0) throw SchemaError("no parameter segment named '" + name + "'");
  return segment(i);
}

Eigen::Map<const Mat> ParamVector::segment(const std::string& name) const {
  int i = segment_index(name);
  if (i < 0) throw SchemaError("no parameter segment named '" + name + "'");
  return segment(i);
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_.size() != other.layout_.size()) return false;
  for (size_t i = 0; i < layout_.size(); ++i) {
    const auto& a = layout_[i];
    const auto& b = other.layout_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// MlpSpec

Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "softplus") return Activation::Softplus;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw SchemaError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Softplus: return "softplus";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "linear";
}

bool MlpSpec::has_skip(int k) const {
  return std::find(skip_layers.begin(), skip_layers.end(), k) != skip_layers.end();
}

std::pair<int, int> MlpSpec::layer_dims(int k) const {
  const int depth = layer_count();
  int in = (k == 0) ? encoded_dim() : hidden[size_t(k - 1)];
  if (k > 0 && has_skip(k)) in += encoded_dim();
  int out = (k == depth - 1) ? output_dim : hidden[size_t(k)];
  return {in, out};
}

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0)
    throw SchemaError("mlp '" + name + "': dimensions must be positive");
  if (encoding_frequencies < 0)
    throw SchemaError("mlp '" + name + "': encoding frequency count must be >= 0");
  for (int w : hidden)
    if (w <= 0) throw SchemaError("mlp '" + name + "': hidden widths must be positive");
  for (int k : skip_layers)
    if (k < 1 || k >= layer_count())
      throw SchemaError("mlp '" + name + "': skip index " + std::to_string(k) +
                        " outside (0, depth)");
}

void MlpSpec::append_segments(std::vector<SegmentInfo>& out) const {
  validate();
  for (int k = 0; k < layer_count(); ++k) {
    auto [in, o] = layer_dims(k);
    out.push_back({name + ".l" + std::to_string(k) + ".W", o, in, 0});
    out.push_back({name + ".l" + std::to_string(k) + ".b", o, 1, 0});
  }
}

// ---------------------------------------------------------------------------
// Positional encoding

Mat positional_encode(const Mat& x, int L) {
  if (L < 0) throw SchemaError("positional encoding: L must be >= 0");
  const Eigen::Index d = x.rows(), n = x.cols();
  Mat out(d * (1 + 2 * L), n);
  out.topRows(d) = x;
  Scalar freq = kPi;  // 2^k * pi
  for (int k = 0; k < L; ++k) {
    out.middleRows(d * (1 + 2 * k), d) = (x.array() * freq).sin();
    out.middleRows(d * (2 + 2 * k), d) = (x.array() * freq).cos();
    freq *= 2.0;
  }
  return out;
}

VecX positional_encode(const VecX& x, int L) {
  Mat col = positional_encode(Mat(x), L);
  return VecX(col.col(0));
}

// ---------------------------------------------------------------------------
// Activations (stable elementwise forms)

namespace {

inline Scalar softplus_scaled(Scalar z, Scalar beta) {
  const Scalar bz = beta * z;
  if (bz > 30.0) return z;
  if (bz < -30.0) return std::exp(bz) / beta;
  return std::log1p(std::exp(bz)) / beta;
}

inline Scalar sigmoid(Scalar z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (1.0 + e);
}

void apply_activation(Activation act, Scalar beta, Mat& z) {
  switch (act) {
    case Activation::Linear:
      return;
    case Activation::Softplus:
      z = z.unaryExpr([beta](Scalar v) { return softplus_scaled(v, beta); });
      return;
    case Activation::Tanh:
      z = z.array().tanh();
      return;
    case Activation::Sigmoid:
      z = z.unaryExpr([](Scalar v) { return sigmoid(v); });
      return;
  }
}

// Derivative in terms of pre-activation z (softplus) or the activated value a
// (tanh, sigmoid), whichever is cheaper from the tape.
Mat activation_derivative(Activation act, Scalar beta, const Mat& z, const Mat& a) {
  switch (act) {
    case Activation::Linear:
      return Mat::Ones(z.rows(), z.cols());
    case Activation::Softplus:
      return z.unaryExpr([beta](Scalar v) { return sigmoid(beta * v); });
    case Activation::Tanh:
      return (1.0 - a.array().square()).matrix();
    case Activation::Sigmoid:
      return (a.array() * (1.0 - a.array())).matrix();
  }
  return Mat::Ones(z.rows(), z.cols());
}

void check_layout(const MlpSpec& spec, const ParamVector& params) {
  for (int k = 0; k < spec.layer_count(); ++k) {
    auto [in, out] = spec.layer_dims(k);
    const std::string base = spec.name + ".l" + std::to_string(k);
    int wi = params.segment_index(base + ".W");
    int bi = params.segment_index(base + ".b");
    if (wi < 0 || bi < 0)
      throw SchemaError("parameters missing segment '" + base + "' for mlp '" + spec.name + "'");
    const auto& w = params.segment_info(wi);
    const auto& b = params.segment_info(bi);
    if (w.rows != out || w.cols != in || b.rows != out || b.cols != 1)
      throw SchemaError("parameter shape mismatch at '" + base + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward

Mat forward(const MlpSpec& spec, const ParamVector& params, const Mat& x, Tape* tape) {
  spec.validate();
  check_layout(spec, params);
  if (x.rows() != spec.input_dim)
    throw SchemaError("mlp '" + spec.name + "': input has " + std::to_string(x.rows()) +
                      " rows, expected " + std::to_string(spec.input_dim));
  if (!x.allFinite()) throw NumericError("mlp '" + spec.name + "': non-finite input");

  const int L = spec.encoding_frequencies;
  const int depth = spec.layer_count();

  if (tape) {
    tape->spec = spec;
    tape->params = params;
    tape->nodes.clear();
    tape->n_points = x.cols();

    auto push = [&](TapeNode&& n) {
      tape->nodes.push_back(std::move(n));
      return int(tape->nodes.size()) - 1;
    };

    int input = push({NodeKind::Input, -1, -1, x, -1, -1, Activation::Linear, 0.0});
    int enc = input;
    if (L > 0)
      enc = push({NodeKind::Encode, input, -1, positional_encode(x, L), -1, -1,
                  Activation::Linear, 0.0});
    int cur = enc;
    for (int k = 0; k < depth; ++k) {
      if (k > 0 && spec.has_skip(k)) {
        Mat cat(tape->nodes[size_t(cur)].value.rows() + tape->nodes[size_t(enc)].value.rows(),
                x.cols());
        cat << tape->nodes[size_t(cur)].value, tape->nodes[size_t(enc)].value;
        cur = push({NodeKind::Concat, cur, enc, std::move(cat), -1, -1, Activation::Linear, 0.0});
      }
      const std::string base = spec.name + ".l" + std::to_string(k);
      const int wi = params.segment_index(base + ".W");
      const int bi = params.segment_index(base + ".b");
      Mat z = params.segment(wi) * tape->nodes[size_t(cur)].value;
      z.colwise() += VecX(params.segment(bi).col(0));
      cur = push({NodeKind::Affine, cur, -1, std::move(z), wi, bi, Activation::Linear, 0.0});
      const Activation act =
          (k == depth - 1) ? spec.output_activation : spec.hidden_activation;
      if (act != Activation::Linear) {
        Mat a = tape->nodes[size_t(cur)].value;
        apply_activation(act, spec.softplus_beta, a);
        cur = push({NodeKind::Act, cur, -1, std::move(a), -1, -1, act, spec.softplus_beta});
      }
    }
    tape->output_node = cur;
    return tape->nodes[size_t(cur)].value;
  }

  // Tapeless path: ping-pong buffers only.
  Mat enc = (L > 0) ? positional_encode(x, L) : x;
  Mat cur = enc;
  for (int k = 0; k < depth; ++k) {
    if (k > 0 && spec.has_skip(k)) {
      Mat cat(cur.rows() + enc.rows(), cur.cols());
      cat << cur, enc;
      cur = std::move(cat);
    }
    const std::string base = spec.name + ".l" + std::to_string(k);
    Mat z;
    z.noalias() = params.segment(base + ".W") * cur;
    z.colwise() += VecX(params.segment(base + ".b").col(0));
    const Activation act = (k == depth - 1) ? spec.output_activation : spec.hidden_activation;
    apply_activation(act, spec.softplus_beta, z);
    cur = std::move(z);
  }
  return cur;
}

VecX forward(const MlpSpec& spec, const ParamVector& params, const Vec3& x, Tape* tape) {
  Mat out = forward(spec, params, Mat(x), tape);
  return VecX(out.col(0));
}

Mat Tape::replay() const {
  if (nodes.empty()) throw SchemaError("cannot replay an empty tape");
  return forward(spec, params, nodes.front().value, nullptr);
}

// ---------------------------------------------------------------------------
// Backward

namespace {

// Jacobian-transpose of positional_encode applied to delta (enc_dim x N),
// accumulating into dx (d x N). Reuses the recorded sin/cos rows.
void encode_backward(const Mat& enc_value, int d, int L, const Mat& delta, Mat& dx) {
  dx += delta.topRows(d);
  Scalar freq = kPi;
  for (int k = 0; k < L; ++k) {
    const auto sin_rows = enc_value.middleRows(d * (1 + 2 * k), d).array();
    const auto cos_rows = enc_value.middleRows(d * (2 + 2 * k), d).array();
    dx.array() += freq * delta.middleRows(d * (1 + 2 * k), d).array() * cos_rows;
    dx.array() -= freq * delta.middleRows(d * (2 + 2 * k), d).array() * sin_rows;
    freq *= 2.0;
  }
}

}  // namespace

namespace {

void backward_impl(const Tape& tape, const Mat& cotangent, ParamVector* grad, Mat* input_grad) {
  if (tape.output_node < 0) throw SchemaError("backward: tape was not produced by forward");
  const TapeNode& out = tape.nodes[size_t(tape.output_node)];
  if (cotangent.rows() != out.value.rows() || cotangent.cols() != out.value.cols())
    throw SchemaError("backward: cotangent shape " + std::to_string(cotangent.rows()) + "x" +
                      std::to_string(cotangent.cols()) + " does not match output " +
                      std::to_string(out.value.rows()) + "x" + std::to_string(out.value.cols()));

  const auto& nodes = tape.nodes;
  std::vector<Mat> delta(nodes.size());
  delta[size_t(tape.output_node)] = cotangent;

  auto add_delta = [&](int node, Mat&& d) {
    if (delta[size_t(node)].size() == 0)
      delta[size_t(node)] = std::move(d);
    else
      delta[size_t(node)] += d;
  };

  for (int i = tape.output_node; i >= 0; --i) {
    if (delta[size_t(i)].size() == 0) continue;
    const TapeNode& node = nodes[size_t(i)];
    const Mat& dl = delta[size_t(i)];
    switch (node.kind) {
      case NodeKind::Input:
        if (input_grad) *input_grad += dl;
        break;
      case NodeKind::Encode: {
        const int d = int(nodes[size_t(node.in0)].value.rows());
        const int L = (int(node.value.rows()) / d - 1) / 2;
        Mat dx = Mat::Zero(d, dl.cols());
        encode_backward(node.value, d, L, dl, dx);
        add_delta(node.in0, std::move(dx));
        break;
      }
      case NodeKind::Concat: {
        const Eigen::Index top = nodes[size_t(node.in0)].value.rows();
        add_delta(node.in0, Mat(dl.topRows(top)));
        add_delta(node.in1, Mat(dl.bottomRows(dl.rows() - top)));
        break;
      }
      case NodeKind::Affine: {
        if (grad) {
          const Mat& a_prev = nodes[size_t(node.in0)].value;
          grad->segment(node.weight_seg).noalias() += dl * a_prev.transpose();
          grad->segment(node.bias_seg).col(0) += dl.rowwise().sum();
        }
        Mat dx;
        dx.noalias() = tape.params.segment(node.weight_seg).transpose() * dl;
        add_delta(node.in0, std::move(dx));
        break;
      }
      case NodeKind::Act: {
        const Mat& z = nodes[size_t(node.in0)].value;
        Mat dx = dl.cwiseProduct(activation_derivative(node.act, node.softplus_beta, z, node.value));
        add_delta(node.in0, std::move(dx));
        break;
      }
    }
    delta[size_t(i)].resize(0, 0);  // free as we go
  }
}

}  // namespace

void backward(const Tape& tape, const Mat& cotangent, ParamVector& grad, Mat* input_grad) {
  if (grad.size() > 0 && !grad.same_layout(tape.params))
    throw SchemaError("backward: gradient layout does not mirror parameter layout");
  if (grad.size() == 0) grad = ParamVector::zeros_like(tape.params);
  backward_impl(tape, cotangent, &grad, input_grad);
}

ParamVector backward(const Tape& tape, const Mat& cotangent) {
  ParamVector grad = ParamVector::zeros_like(tape.params);
  backward(tape, cotangent, grad, nullptr);
  return grad;
}

Mat input_backward(const Tape& tape, const Mat& cotangent) {
  Mat dx = Mat::Zero(tape.spec.input_dim, tape.n_points);
  backward_impl(tape, cotangent, nullptr, &dx);
  return dx;
}

}  // namespace neat::ad
