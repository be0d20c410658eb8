#pragma once

#include <string>
#include <vector>

#include "smeta/linalg.hpp"
#include "smeta/rng.hpp"
#include "smeta/tape.hpp"

namespace smeta {

enum class Activation { kRelu, kTanh, kIdentity };

Activation activation_from_string(const std::string& name);
std::string activation_name(Activation a);

// Small multilayer perceptron phi: R^d -> R^k. The activation is applied
// after every layer, including the last; an identity activation with a
// single layer therefore reduces to a plain linear map. An encoder with no
// layers is the identity embedding (used by the linear-regression paths).
struct EncoderParams {
  struct Layer {
    Matrix weight;  // out x in
    Matrix bias;    // 1 x out
  };
  std::vector<Layer> layers;
  Activation activation = Activation::kTanh;
  int input_dim = 0;
  int output_dim = 0;

  int layer_count() const { return static_cast<int>(layers.size()); }
  std::vector<int> dims() const;  // d, hidden..., k
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
// dims = {d, hidden..., k}; dims with a single entry gives the identity
// encoder.
EncoderParams init_encoder(const std::vector<int>& dims, Activation activation, Rng& rng);

// Plain (tape-free) forward pass over a batch of row vectors.
Matrix encoder_eval(const EncoderParams& p, const Matrix& x_rows);
VecD encoder_eval(const EncoderParams& p, const VecD& x);

// Forward pass recorded on a tape. Parameters enter as leaves so gradients
// can be pulled for all of them; the ids are also the handles used by the
// meta-learners to build adapted parameter graphs.
struct EncoderNodes {
  std::vector<Tape::Id> weights;
  std::vector<Tape::Id> biases;
};

EncoderNodes encoder_leaves(Tape& t, const EncoderParams& p);

// Applies the encoder given parameter node ids (leaves or derived nodes).
Tape::Id encoder_apply(Tape& t, const EncoderNodes& nodes, Activation activation, Tape::Id x_rows);

struct EncoderForward {
  EncoderNodes nodes;
  Tape::Id output = Tape::kNone;  // n x k embedding rows
};

EncoderForward encoder_forward(Tape& t, const EncoderParams& p, const Matrix& x_rows);

// Per-parameter gradients in the same layout as EncoderParams.
struct EncoderGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};

// Pulls gradients of a scalar tape node for every encoder parameter.
// Untouched parameters come back as zero matrices.
EncoderGrads encoder_gradients(Tape& t, const EncoderForward& f, Tape::Id scalar_loss);

// Gradient of `upstream . phi(x)` for a single input row: the classic
// backward contract (weight/bias/input gradients for a given output adjoint).
struct EncoderBackward {
  EncoderGrads params;
  VecD input;  // d(loss)/dx
};

EncoderBackward encoder_backward(const EncoderParams& p, const VecD& x, const VecD& upstream);

struct SgdRule {
  double lr = 0.01;
};

struct AdamRule {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment accumulators for Adam, laid out like the parameters.
struct AdamState {
  std::vector<Matrix> m_w, v_w, m_b, v_b;
  long step = 0;
};

AdamState make_adam_state(const EncoderParams& p);

EncoderParams apply_update(const EncoderParams& p, const EncoderGrads& g, const SgdRule& rule);
EncoderParams apply_update(const EncoderParams& p, const EncoderGrads& g, const AdamRule& rule,
                           AdamState& state);

// Flat CSV checkpoint: a 4-line header (layer count, dims chain, activation,
// value count) followed by one value per line in layer-major order
// (weight rows, then bias, per layer).
std::string serialize_encoder(const EncoderParams& p);
EncoderParams deserialize_encoder(const std::string& text);

}  // namespace smeta
