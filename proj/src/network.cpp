#include "selftransfer/network.hpp"

#include <cmath>
#include <sstream>

namespace selftransfer {

SequenceBatch::SequenceBatch(Matrix values, Index steps_, Index batch_)
    : data(std::move(values)), steps(steps_), batch(batch_) {
  if (data.cols() != steps * batch) throw Error("SequenceBatch: column count != steps * batch");
}

Vector SequenceBatch::series(Index sample, Index feature) const {
  Vector v(steps);
  for (Index t = 0; t < steps; ++t) v[t] = data(feature, t * batch + sample);
  return v;
}

SequenceBatch pack_series(const std::vector<const Vector*>& series) {
  if (series.empty()) throw Error("pack_series: empty batch");
  const Index T = series.front()->size();
  const auto B = static_cast<Index>(series.size());
  Matrix data(1, T * B);
  for (Index b = 0; b < B; ++b) {
    const Vector& s = *series[static_cast<std::size_t>(b)];
    if (s.size() != T) throw Error("pack_series: sequences must share one length");
    for (Index t = 0; t < T; ++t) data(0, t * B + b) = s[t];
  }
  return {std::move(data), T, B};
}

Index output_dim(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> Index {
        if constexpr (std::is_same_v<std::decay_t<decltype(l)>, LstmLayer>)
          return l.hidden_dim();
        else
          return l.output_dim();
      },
      layer);
}

bool is_recurrent(const Layer& layer) { return std::holds_alternative<LstmLayer>(layer); }

Index Network::input_dim() const {
  if (layers.empty()) throw Error("empty network");
  return std::visit([](const auto& l) { return l.input_dim(); }, layers.front());
}

Index Network::output_dim() const {
  if (layers.empty()) throw Error("empty network");
  return selftransfer::output_dim(layers.back());
}

std::string fingerprint(const Network& net) {
  std::ostringstream os;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (i) os << '|';
    if (const auto* l = std::get_if<LstmLayer>(&net.layers[i])) {
      os << "lstm(" << l->input_dim() << ',' << l->hidden_dim() << ')';
    } else {
      const auto& d = std::get<DenseLayer>(net.layers[i]);
      os << "dense(" << d.input_dim() << ',' << d.output_dim()
         << (d.activation == Activation::relu ? ",relu)" : ")");
    }
  }
  return os.str();
}

namespace {

template <typename Net, typename Span>
std::vector<Span> arrays_of(Net& net) {
  std::vector<Span> out;
  auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& layer : net.layers) {
    std::visit(
        [&](auto& l) {
          if constexpr (std::is_same_v<std::decay_t<decltype(l)>, LstmLayer>) {
            add(l.w_input);
            add(l.w_recurrent);
            add(l.bias);
          } else {
            add(l.weight);
            add(l.bias);
          }
        },
        layer);
  }
  return out;
}

}  // namespace

std::vector<std::span<Scalar>> parameter_arrays(Network& net) {
  return arrays_of<Network, std::span<Scalar>>(net);
}

std::vector<std::span<const Scalar>> parameter_arrays(const Network& net) {
  return arrays_of<const Network, std::span<const Scalar>>(net);
}

Index parameter_count(const Network& net) {
  Index n = 0;
  for (auto a : parameter_arrays(net)) n += static_cast<Index>(a.size());
  return n;
}

Network zeros_like(const Network& net) {
  Network z = net;
  for (auto a : parameter_arrays(z)) std::fill(a.begin(), a.end(), 0.0);
  return z;
}

Network stack(const Network& lower, const Network& upper) {
  Network out = lower;
  out.layers.insert(out.layers.end(), upper.layers.begin(), upper.layers.end());
  return out;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  return (1.0 + (-x).exp()).inverse();
}

void check_finite(const Matrix& m, Index batch, const char* what, std::size_t layer) {
  if (m.allFinite()) return;
  for (Index c = 0; c < m.cols(); ++c) {
    if (!m.col(c).allFinite())
      throw Error(std::string("non-finite ") + what + " in layer " + std::to_string(layer) +
                  " at step " + std::to_string(c / batch));
  }
}

void lstm_forward(const LstmLayer& l, const Matrix& x, Index T, Index B, LayerCache& c) {
  const Index H = l.hidden_dim();
  if (x.rows() != l.input_dim()) throw Error("lstm: input dimension mismatch");
  c.gates.noalias() = l.w_input * x;
  c.gates.colwise() += l.bias;
  c.cell.resize(H, T * B);
  c.cell_tanh.resize(H, T * B);
  c.output.resize(H, T * B);
  for (Index t = 0; t < T; ++t) {
    auto z = c.gates.middleCols(t * B, B);
    if (t > 0) z.noalias() += l.w_recurrent * c.output.middleCols((t - 1) * B, B);
    z.topRows(2 * H) = sigmoid(z.topRows(2 * H).array()).matrix();
    z.middleRows(2 * H, H) = z.middleRows(2 * H, H).array().tanh().matrix();
    z.bottomRows(H) = sigmoid(z.bottomRows(H).array()).matrix();
    auto cell = c.cell.middleCols(t * B, B);
    cell = z.topRows(H).cwiseProduct(z.middleRows(2 * H, H));
    if (t > 0) cell += z.middleRows(H, H).cwiseProduct(c.cell.middleCols((t - 1) * B, B));
    c.cell_tanh.middleCols(t * B, B) = cell.array().tanh().matrix();
    c.output.middleCols(t * B, B) = z.bottomRows(H).cwiseProduct(c.cell_tanh.middleCols(t * B, B));
  }
}

void dense_forward(const DenseLayer& l, const Matrix& x, LayerCache& c) {
  if (x.rows() != l.input_dim()) throw Error("dense: input dimension mismatch");
  c.output.noalias() = l.weight * x;
  c.output.colwise() += l.bias;
  if (l.activation == Activation::relu) c.output = c.output.cwiseMax(0.0);
}

}  // namespace

ForwardCache forward(const Network& net, const SequenceBatch& input) {
  if (net.empty()) throw Error("forward: empty network");
  ForwardCache cache;
  cache.input = input;
  cache.layers.resize(net.layers.size());
  const Matrix* x = &cache.input.data;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& c = cache.layers[i];
    if (const auto* l = std::get_if<LstmLayer>(&net.layers[i]))
      lstm_forward(*l, *x, input.steps, input.batch, c);
    else
      dense_forward(std::get<DenseLayer>(net.layers[i]), *x, c);
    check_finite(c.output, input.batch, "activation", i);
    x = &c.output;
  }
  return cache;
}

SequenceBatch predict(const Network& net, const SequenceBatch& input) {
  auto cache = forward(net, input);
  return {std::move(cache.layers.back().output), input.steps, input.batch};
}

// ---------------------------------------------------------------------------
// Backward

namespace {

void accumulate(Matrix& into, const Matrix& add) {
  if (add.size() == 0) return;
  if (into.size() == 0)
    into = add;
  else
    into += add;
}

Matrix lstm_backward(const LstmLayer& l, const Matrix& x, const LayerCache& c, const Matrix& d_out,
                     Index T, Index B, LstmLayer& g, bool want_input_grad) {
  const Index H = l.hidden_dim();
  Matrix dz(4 * H, T * B);
  Matrix dh_rec = Matrix::Zero(H, B);
  Matrix dc_next = Matrix::Zero(H, B);
  for (Index t = T - 1; t >= 0; --t) {
    const auto gates = c.gates.middleCols(t * B, B);
    const auto i = gates.topRows(H).array();
    const auto f = gates.middleRows(H, H).array();
    const auto gg = gates.middleRows(2 * H, H).array();
    const auto o = gates.bottomRows(H).array();
    const auto ct = c.cell_tanh.middleCols(t * B, B).array();

    const Eigen::ArrayXXd dh = d_out.middleCols(t * B, B).array() + dh_rec.array();
    const Eigen::ArrayXXd dc = dh * o * (1.0 - ct.square()) + dc_next.array();
    auto dzt = dz.middleCols(t * B, B);
    dzt.topRows(H) = (dc * gg * i * (1.0 - i)).matrix();
    if (t > 0)
      dzt.middleRows(H, H) =
          (dc * c.cell.middleCols((t - 1) * B, B).array() * f * (1.0 - f)).matrix();
    else
      dzt.middleRows(H, H).setZero();
    dzt.middleRows(2 * H, H) = (dc * i * (1.0 - gg.square())).matrix();
    dzt.bottomRows(H) = (dh * ct * o * (1.0 - o)).matrix();
    dc_next = (dc * f).matrix();
    dh_rec.noalias() = l.w_recurrent.transpose() * dzt;
  }
  g.w_input.noalias() += dz * x.transpose();
  if (T > 1)
    g.w_recurrent.noalias() +=
        dz.rightCols((T - 1) * B) * c.output.leftCols((T - 1) * B).transpose();
  g.bias += dz.rowwise().sum();
  if (!want_input_grad) return {};
  return l.w_input.transpose() * dz;
}

Matrix dense_backward(const DenseLayer& l, const Matrix& x, const LayerCache& c,
                      const Matrix& d_out, DenseLayer& g, bool want_input_grad) {
  Matrix da = d_out;
  if (l.activation == Activation::relu) da = (c.output.array() > 0.0).select(da, 0.0);
  g.weight.noalias() += da * x.transpose();
  g.bias += da.rowwise().sum();
  if (!want_input_grad) return {};
  return l.weight.transpose() * da;
}

}  // namespace

Matrix backward(const Network& net, const ForwardCache& cache, const Matrix& d_output,
                const std::vector<Matrix>& injected, Network& grad, bool want_input_grad) {
  const std::size_t L = net.layers.size();
  if (cache.layers.size() != L || grad.layers.size() != L)
    throw Error("backward: cache/gradient do not match the network");
  if (!injected.empty() && injected.size() != L)
    throw Error("backward: injected gradients must cover every layer or none");
  const Index T = cache.input.steps, B = cache.input.batch;

  Matrix upstream = d_output;
  for (std::size_t k = L; k-- > 0;) {
    if (!injected.empty()) accumulate(upstream, injected[k]);
    const Matrix& x = k == 0 ? cache.input.data : cache.layers[k - 1].output;
    if (upstream.size() == 0) continue;  // nothing flows through this layer
    const bool need_dx = k > 0 || want_input_grad;
    Matrix dx;
    if (const auto* l = std::get_if<LstmLayer>(&net.layers[k]))
      dx = lstm_backward(*l, x, cache.layers[k], upstream, T, B, std::get<LstmLayer>(grad.layers[k]),
                         need_dx);
    else
      dx = dense_backward(std::get<DenseLayer>(net.layers[k]), x, cache.layers[k], upstream,
                          std::get<DenseLayer>(grad.layers[k]), need_dx);
    upstream = std::move(dx);
  }
  if (!want_input_grad) return {};
  if (upstream.size() == 0) return Matrix::Zero(cache.input.data.rows(), cache.input.data.cols());
  return upstream;
}

// ---------------------------------------------------------------------------
// Surrogate

void validate(const SurrogateArch& a) {
  if (a.hidden_dim < 1) throw Error("arch: hidden_dim must be >= 1");
  if (a.n_recurrent_layers < 0 || a.n_dense_layers < 1)
    throw Error("arch: need n_recurrent_layers >= 0 and n_dense_layers >= 1");
  if (a.input_dim < 1 || a.output_dim < 1) throw Error("arch: input/output dims must be >= 1");
}

namespace {

void fill_uniform(Matrix& m, Scalar limit, Rng& rng) {
  std::uniform_real_distribution<Scalar> u(-limit, limit);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
}

}  // namespace

LstmLayer make_lstm(Index in, Index hidden, Rng& rng) {
  LstmLayer l;
  const Scalar limit = 1.0 / std::sqrt(static_cast<Scalar>(in + hidden));
  l.w_input.resize(4 * hidden, in);
  l.w_recurrent.resize(4 * hidden, hidden);
  fill_uniform(l.w_input, limit, rng);
  fill_uniform(l.w_recurrent, limit, rng);
  l.bias = Vector::Zero(4 * hidden);
  l.bias.segment(hidden, hidden).setOnes();
  return l;
}

DenseLayer make_dense(Index in, Index out, Activation act, Rng& rng) {
  DenseLayer l;
  l.weight.resize(out, in);
  fill_uniform(l.weight, 1.0 / std::sqrt(static_cast<Scalar>(in)), rng);
  l.bias = Vector::Zero(out);
  l.activation = act;
  return l;
}

Network init_surrogate(const SurrogateArch& a, std::uint64_t seed) {
  validate(a);
  Rng rng(seed);
  Network net;
  Index in = a.input_dim;
  for (int i = 0; i < a.n_recurrent_layers; ++i) {
    net.layers.emplace_back(make_lstm(in, a.hidden_dim, rng));
    in = a.hidden_dim;
  }
  for (int i = 0; i + 1 < a.n_dense_layers; ++i) {
    net.layers.emplace_back(make_dense(in, a.hidden_dim, Activation::relu, rng));
    in = a.hidden_dim;
  }
  net.layers.emplace_back(make_dense(in, a.output_dim, Activation::identity, rng));
  return net;
}

Matrix forward_surrogate(const Network& net, const SequenceBatch& input) {
  const SequenceBatch out = predict(net, input);
  if (out.features() != 1) throw Error("forward_surrogate: network must have one output");
  // Column t * B + b -> row b, column t.
  return Eigen::Map<const Matrix>(out.data.data(), out.batch, out.steps);
}

}  // namespace selftransfer
