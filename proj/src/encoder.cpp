#include "smeta/encoder.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "smeta/csvio.hpp"

namespace smeta {

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  throw std::logic_error("bad activation enum");
}

std::vector<int> EncoderParams::dims() const {
  std::vector<int> d{input_dim};
  for (const Layer& l : layers) d.push_back(l.weight.rows);
  return d;
}

EncoderParams init_encoder(const std::vector<int>& dims, Activation activation, Rng& rng) {
  if (dims.empty()) throw std::invalid_argument("init_encoder: dims must not be empty");
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("init_encoder: dims must be positive");
  }
  EncoderParams p;
  p.activation = activation;
  p.input_dim = dims.front();
  p.output_dim = dims.back();
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i];
    const int fan_out = dims[i + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    EncoderParams::Layer layer;
    layer.weight = Matrix(fan_out, fan_in);
    for (double& w : layer.weight.a) w = rng.uniform(-bound, bound);
    layer.bias = Matrix(1, fan_out);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

}  // namespace

Matrix encoder_eval(const EncoderParams& p, const Matrix& x_rows) {
  if (x_rows.cols != p.input_dim && !p.layers.empty()) {
    throw std::invalid_argument("encoder_eval: input width does not match input_dim");
  }
  Matrix h = x_rows;
  for (const auto& layer : p.layers) {
    Matrix z = matmul(h, transpose(layer.weight));
    for (int i = 0; i < z.rows; ++i)
      for (int j = 0; j < z.cols; ++j) z(i, j) = activate(p.activation, z(i, j) + layer.bias(0, j));
    h = std::move(z);
  }
  return h;
}

VecD encoder_eval(const EncoderParams& p, const VecD& x) {
  Matrix in(1, static_cast<int>(x.size()), x);
  Matrix out = encoder_eval(p, in);
  return out.a;
}

EncoderNodes encoder_leaves(Tape& t, const EncoderParams& p) {
  EncoderNodes n;
  for (const auto& layer : p.layers) {
    n.weights.push_back(t.leaf(layer.weight));
    n.biases.push_back(t.leaf(layer.bias));
  }
  return n;
}

Tape::Id encoder_apply(Tape& t, const EncoderNodes& nodes, Activation activation, Tape::Id x_rows) {
  if (nodes.weights.size() != nodes.biases.size()) {
    throw std::invalid_argument("encoder_apply: weight/bias count mismatch");
  }
  Tape::Id h = x_rows;
  for (size_t i = 0; i < nodes.weights.size(); ++i) {
    Tape::Id z = t.add_rowvec(t.matmul(h, t.transpose(nodes.weights[i])), nodes.biases[i]);
    switch (activation) {
      case Activation::kRelu: h = t.relu_op(z); break;
      case Activation::kTanh: h = t.tanh_op(z); break;
      case Activation::kIdentity: h = z; break;
    }
  }
  return h;
}

EncoderForward encoder_forward(Tape& t, const EncoderParams& p, const Matrix& x_rows) {
  if (!p.layers.empty() && x_rows.cols != p.input_dim) {
    throw std::invalid_argument("encoder_forward: input width does not match input_dim");
  }
  EncoderForward f;
  f.nodes = encoder_leaves(t, p);
  f.output = encoder_apply(t, f.nodes, p.activation, t.constant(x_rows));
  return f;
}

EncoderGrads encoder_gradients(Tape& t, const EncoderForward& f, Tape::Id scalar_loss) {
  std::vector<Tape::Id> wrt;
  for (Tape::Id id : f.nodes.weights) wrt.push_back(id);
  for (Tape::Id id : f.nodes.biases) wrt.push_back(id);
  std::vector<Tape::Id> g = t.gradients(scalar_loss, wrt);
  EncoderGrads out;
  const size_t n = f.nodes.weights.size();
  for (size_t i = 0; i < n; ++i) {
    const Matrix& w = t.value(f.nodes.weights[i]);
    out.weights.push_back(g[i] == Tape::kNone ? Matrix(w.rows, w.cols) : t.value(g[i]));
  }
  for (size_t i = 0; i < n; ++i) {
    const Matrix& b = t.value(f.nodes.biases[i]);
    out.biases.push_back(g[n + i] == Tape::kNone ? Matrix(b.rows, b.cols) : t.value(g[n + i]));
  }
  return out;
}

EncoderBackward encoder_backward(const EncoderParams& p, const VecD& x, const VecD& upstream) {
  if (static_cast<int>(upstream.size()) != p.output_dim && !p.layers.empty()) {
    throw std::invalid_argument("encoder_backward: upstream width does not match output_dim");
  }
  Tape t;
  Tape::Id xin = t.leaf(Matrix(1, static_cast<int>(x.size()), x));
  EncoderNodes nodes = encoder_leaves(t, p);
  Tape::Id out = encoder_apply(t, nodes, p.activation, xin);
  Tape::Id up = t.constant(Matrix(1, static_cast<int>(upstream.size()), upstream));
  Tape::Id loss = t.sum_all(t.mul(out, up));

  std::vector<Tape::Id> wrt{xin};
  for (Tape::Id id : nodes.weights) wrt.push_back(id);
  for (Tape::Id id : nodes.biases) wrt.push_back(id);
  std::vector<Tape::Id> g = t.gradients(loss, wrt);

  EncoderBackward result;
  result.input = g[0] == Tape::kNone ? VecD(x.size(), 0.0) : t.value(g[0]).a;
  const size_t n = nodes.weights.size();
  for (size_t i = 0; i < n; ++i) {
    const Matrix& w = p.layers[i].weight;
    result.params.weights.push_back(g[1 + i] == Tape::kNone ? Matrix(w.rows, w.cols)
                                                            : t.value(g[1 + i]));
  }
  for (size_t i = 0; i < n; ++i) {
    const Matrix& b = p.layers[i].bias;
    result.params.biases.push_back(g[1 + n + i] == Tape::kNone ? Matrix(b.rows, b.cols)
                                                               : t.value(g[1 + n + i]));
  }
  return result;
}

AdamState make_adam_state(const EncoderParams& p) {
  AdamState s;
  for (const auto& layer : p.layers) {
    s.m_w.push_back(Matrix(layer.weight.rows, layer.weight.cols));
    s.v_w.push_back(Matrix(layer.weight.rows, layer.weight.cols));
    s.m_b.push_back(Matrix(layer.bias.rows, layer.bias.cols));
    s.v_b.push_back(Matrix(layer.bias.rows, layer.bias.cols));
  }
  return s;
}

namespace {

void check_grad_shapes(const EncoderParams& p, const EncoderGrads& g) {
  if (g.weights.size() != p.layers.size() || g.biases.size() != p.layers.size()) {
    throw std::invalid_argument("apply_update: gradient layer count mismatch");
  }
  for (size_t i = 0; i < p.layers.size(); ++i) {
    if (!g.weights[i].same_shape(p.layers[i].weight) || !g.biases[i].same_shape(p.layers[i].bias)) {
      throw std::invalid_argument("apply_update: gradient shape mismatch");
    }
  }
}

void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, const AdamRule& r,
               double bc1, double bc2) {
  for (size_t i = 0; i < param.a.size(); ++i) {
    m.a[i] = r.beta1 * m.a[i] + (1.0 - r.beta1) * grad.a[i];
    v.a[i] = r.beta2 * v.a[i] + (1.0 - r.beta2) * grad.a[i] * grad.a[i];
    const double mhat = m.a[i] / bc1;
    const double vhat = v.a[i] / bc2;
    param.a[i] -= r.lr * mhat / (std::sqrt(vhat) + r.eps);
  }
}

}  // namespace

EncoderParams apply_update(const EncoderParams& p, const EncoderGrads& g, const SgdRule& rule) {
  check_grad_shapes(p, g);
  EncoderParams out = p;
  for (size_t i = 0; i < out.layers.size(); ++i) {
    for (size_t j = 0; j < out.layers[i].weight.a.size(); ++j)
      out.layers[i].weight.a[j] -= rule.lr * g.weights[i].a[j];
    for (size_t j = 0; j < out.layers[i].bias.a.size(); ++j)
      out.layers[i].bias.a[j] -= rule.lr * g.biases[i].a[j];
  }
  return out;
}

EncoderParams apply_update(const EncoderParams& p, const EncoderGrads& g, const AdamRule& rule,
                           AdamState& state) {
  check_grad_shapes(p, g);
  if (state.m_w.size() != p.layers.size()) {
    throw std::invalid_argument("apply_update: adam state layer count mismatch");
  }
  EncoderParams out = p;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(rule.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(rule.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < out.layers.size(); ++i) {
    adam_step(out.layers[i].weight, g.weights[i], state.m_w[i], state.v_w[i], rule, bc1, bc2);
    adam_step(out.layers[i].bias, g.biases[i], state.m_b[i], state.v_b[i], rule, bc1, bc2);
  }
  return out;
}

std::string serialize_encoder(const EncoderParams& p) {
  std::ostringstream os;
  os << "layers," << p.layers.size() << "\n";
  os << "dims";
  for (int d : p.dims()) os << "," << d;
  os << "\n";
  os << "activation," << activation_name(p.activation) << "\n";
  size_t count = 0;
  for (const auto& layer : p.layers) count += layer.weight.a.size() + layer.bias.a.size();
  os << "values," << count << "\n";
  for (const auto& layer : p.layers) {
    for (double w : layer.weight.a) os << format_g17(w) << "\n";
    for (double b : layer.bias.a) os << format_g17(b) << "\n";
  }
  return os.str();
}

EncoderParams deserialize_encoder(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) {
      throw std::runtime_error(std::string("encoder checkpoint: missing ") + what);
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  auto fields = split_csv_line(next_line("layer count"));
  if (fields.size() != 2 || fields[0] != "layers") {
    throw std::runtime_error("encoder checkpoint: bad header line 1");
  }
  const int n_layers = std::stoi(fields[1]);

  fields = split_csv_line(next_line("dims"));
  if (fields.size() != static_cast<size_t>(n_layers) + 2 || fields[0] != "dims") {
    throw std::runtime_error("encoder checkpoint: bad header line 2");
  }
  std::vector<int> dims;
  for (size_t i = 1; i < fields.size(); ++i) dims.push_back(std::stoi(fields[i]));

  fields = split_csv_line(next_line("activation"));
  if (fields.size() != 2 || fields[0] != "activation") {
    throw std::runtime_error("encoder checkpoint: bad header line 3");
  }
  const Activation act = activation_from_string(fields[1]);

  fields = split_csv_line(next_line("value count"));
  if (fields.size() != 2 || fields[0] != "values") {
    throw std::runtime_error("encoder checkpoint: bad header line 4");
  }
  const size_t value_count = static_cast<size_t>(std::stoul(fields[1]));

  EncoderParams p;
  p.activation = act;
  p.input_dim = dims.front();
  p.output_dim = dims.back();
  size_t consumed = 0;
  size_t line_no = 4;
  auto next_value = [&]() {
    next_line("parameter value");
    ++line_no;
    VecD vals = parse_csv_doubles(line, static_cast<int>(line_no));
    if (vals.size() != 1) {
      throw std::runtime_error("encoder checkpoint: expected one value at line " +
                               std::to_string(line_no));
    }
    ++consumed;
    return vals[0];
  };
  for (int l = 0; l < n_layers; ++l) {
    EncoderParams::Layer layer;
    layer.weight = Matrix(dims[l + 1], dims[l]);
    for (double& w : layer.weight.a) w = next_value();
    layer.bias = Matrix(1, dims[l + 1]);
    for (double& b : layer.bias.a) b = next_value();
    p.layers.push_back(std::move(layer));
  }
  if (consumed != value_count) {
    throw std::runtime_error("encoder checkpoint: value count mismatch");
  }
  return p;
}

}  // namespace smeta
