#include "advbench/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advbench/container.hpp"
#include "advbench/rng.hpp"

namespace advbench {

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

Error fit_error(const std::string& msg) { return Error(ErrorCode::kShapeMismatch, msg); }

void require_rank3(const LayerSpec& layer, const Shape& in) {
  if (in.size() != 3) {
    throw fit_error(layer_name(layer) + " expects a C x H x W sample, got " + shape_string(in));
  }
}

// Rows are (c, ki, kj) triples, columns output positions.
template <typename S>
void im2col(const S* x, std::size_t C, std::size_t H, std::size_t W, const Conv2D& cv,
            std::size_t Ho, std::size_t Wo, RowMat<S>& col) {
  const std::size_t k = cv.kernel;
  col.resize(ix(C * k * k), ix(Ho * Wo));
  const auto pad = static_cast<std::ptrdiff_t>(cv.padding);
  const auto stride = static_cast<std::ptrdiff_t>(cv.stride);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        S* dst = col.row(ix((c * k + ki) * k + kj)).data();
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride +
                                    static_cast<std::ptrdiff_t>(ki) - pad;
          S* out = dst + oy * Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(out, out + Wo, S(0));
            continue;
          }
          const S* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t jx = static_cast<std::ptrdiff_t>(ox) * stride +
                                      static_cast<std::ptrdiff_t>(kj) - pad;
            out[ox] = (jx < 0 || jx >= static_cast<std::ptrdiff_t>(W))
                          ? S(0)
                          : src[static_cast<std::size_t>(jx)];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const RowMat<S>& col, std::size_t C, std::size_t H, std::size_t W, const Conv2D& cv,
            std::size_t Ho, std::size_t Wo, S* dx) {
  const std::size_t k = cv.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(cv.padding);
  const auto stride = static_cast<std::ptrdiff_t>(cv.stride);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const S* src = col.row(ix((c * k + ki) * k + kj)).data();
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride +
                                    static_cast<std::ptrdiff_t>(ki) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          S* row = dx + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t jx = static_cast<std::ptrdiff_t>(ox) * stride +
                                      static_cast<std::ptrdiff_t>(kj) - pad;
            if (jx < 0 || jx >= static_cast<std::ptrdiff_t>(W)) continue;
            row[static_cast<std::size_t>(jx)] += src[oy * Wo + ox];
          }
        }
      }
    }
  }
}

// Max over [y0,y1) x [x0,x1) of one channel plane; first maximum wins.
template <typename S>
std::uint32_t argmax_cell(const S* plane, std::size_t W, std::size_t y0, std::size_t y1,
                          std::size_t x0, std::size_t x1) {
  std::size_t best = y0 * W + x0;
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      if (plane[y * W + x] > plane[best]) best = y * W + x;
    }
  }
  return static_cast<std::uint32_t>(best);
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const Conv2D& c) {
            return "Conv2D(" + std::to_string(c.out_channels) + ", k=" + std::to_string(c.kernel) +
                   ", s=" + std::to_string(c.stride) + ", p=" + std::to_string(c.padding) + ")";
          },
          [](const MaxPool2D& p) { return "MaxPool2D(" + std::to_string(p.window) + ")"; },
          [](const AdaptiveMaxPool2D& p) {
            return "AdaptiveMaxPool2D(" + std::to_string(p.target_h) + ", " +
                   std::to_string(p.target_w) + ")";
          },
          [](const ReLU&) { return std::string("ReLU"); },
          [](const Flatten&) { return std::string("Flatten"); },
          [](const Dense& d) { return "Dense(" + std::to_string(d.out_features) + ")"; },
      },
      layer);
}

void validate_layer(const LayerSpec& layer) {
  auto bad = [&](const char* what) {
    throw Error(ErrorCode::kInvalidArgument, layer_name(layer) + ": " + what);
  };
  std::visit(Overloaded{
                 [&](const Conv2D& c) {
                   if (c.kernel < 1 || c.stride < 1) bad("kernel and stride must be >= 1");
                   if (c.out_channels < 1) bad("out_channels must be >= 1");
                 },
                 [&](const MaxPool2D& p) {
                   if (p.window < 1) bad("window must be >= 1");
                 },
                 [&](const AdaptiveMaxPool2D& p) {
                   if (p.target_h < 1 || p.target_w < 1) bad("targets must be >= 1");
                 },
                 [](const ReLU&) {},
                 [](const Flatten&) {},
                 [&](const Dense& d) {
                   if (d.out_features < 1) bad("out_features must be >= 1");
                 },
             },
             layer);
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& in, std::size_t dense_in) {
  return std::visit(
      Overloaded{
          [&](const Conv2D& c) -> Shape {
            require_rank3(layer, in);
            const std::size_t h = in[1] + 2 * c.padding, w = in[2] + 2 * c.padding;
            if (h < c.kernel || w < c.kernel) {
              throw fit_error(layer_name(layer) + ": input " + shape_string(in) +
                              " smaller than the kernel");
            }
            return {c.out_channels, (h - c.kernel) / c.stride + 1, (w - c.kernel) / c.stride + 1};
          },
          [&](const MaxPool2D& p) -> Shape {
            require_rank3(layer, in);
            if (in[1] < p.window || in[2] < p.window) {
              throw fit_error(layer_name(layer) + ": input " + shape_string(in) +
                              " smaller than the pooling window");
            }
            return {in[0], in[1] / p.window, in[2] / p.window};
          },
          [&](const AdaptiveMaxPool2D& p) -> Shape {
            require_rank3(layer, in);
            if (in[1] < p.target_h || in[2] < p.target_w) {
              throw fit_error(layer_name(layer) + ": input " + shape_string(in) +
                              " smaller than the adaptive-pool grid");
            }
            return {in[0], p.target_h, p.target_w};
          },
          [&](const ReLU&) -> Shape { return in; },
          [&](const Flatten&) -> Shape { return {checked_numel(in)}; },
          [&](const Dense& d) -> Shape {
            if (in.size() != 1) {
              throw fit_error(layer_name(layer) + " expects a flat sample, got " +
                              shape_string(in));
            }
            if (dense_in != 0 && in[0] != dense_in) {
              throw fit_error(layer_name(layer) + ": expects " + std::to_string(dense_in) +
                              " input features, got " + std::to_string(in[0]));
            }
            return {d.out_features};
          },
      },
      layer);
}

template <typename Scalar>
BasicNetwork<Scalar>::BasicNetwork(std::vector<LayerSpec> layers, ParamSet params)
    : layers_(std::move(layers)), params_(std::move(params)) {
  if (layers_.empty()) throw Error(ErrorCode::kInvalidArgument, "network has no layers");
  if (params_.size() != layers_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "parameter list does not match layer count");
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    validate_layer(layers_[i]);
    const auto& p = params_[i];
    auto bad = [&](const std::string& what) {
      throw Error(ErrorCode::kShapeMismatch,
                  "layer " + std::to_string(i) + " " + layer_name(layers_[i]) + ": " + what);
    };
    if (const auto* c = std::get_if<Conv2D>(&layers_[i])) {
      if (p.size() != 2 || p[0].rank() != 4 || p[0].dim(0) != c->out_channels ||
          p[0].dim(2) != c->kernel || p[0].dim(3) != c->kernel || p[1].shape() != Shape{c->out_channels}) {
        bad("expects weight [O, C, k, k] and bias [O]");
      }
    } else if (const auto* d = std::get_if<Dense>(&layers_[i])) {
      if (p.size() != 2 || p[0].rank() != 2 || p[0].dim(0) != d->out_features ||
          p[1].shape() != Shape{d->out_features}) {
        bad("expects weight [O, I] and bias [O]");
      }
    } else if (!p.empty()) {
      bad("parameter-free layer carries tensors");
    }
  }
  const auto* last = std::get_if<Dense>(&layers_.back());
  if (last == nullptr) throw Error(ErrorCode::kInvalidArgument, "final layer must be Dense");
  num_classes_ = last->out_features;

  input_rank_ = 3;
  for (const auto& layer : layers_) {
    if (std::holds_alternative<ReLU>(layer)) continue;
    input_rank_ = std::holds_alternative<Dense>(layer) ? 1 : 3;
    break;
  }
}

template <typename Scalar>
BasicNetwork<Scalar> BasicNetwork<Scalar>::initialized(std::vector<LayerSpec> layers,
                                                       const Shape& sample_shape,
                                                       std::uint64_t seed) {
  ParamSet params(layers.size());
  Shape shape = sample_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    validate_layer(layers[i]);
    const Shape out = layer_output_shape(layers[i], shape);
    CounterRng rng(seed, i);
    auto he_uniform = [&](Shape wshape, std::size_t fan_in) {
      const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
      TensorT w = TensorT::zeros(std::move(wshape));
      for (auto& v : w.values()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
      return w;
    };
    if (const auto* c = std::get_if<Conv2D>(&layers[i])) {
      const std::size_t fan_in = shape[0] * c->kernel * c->kernel;
      params[i].push_back(he_uniform({c->out_channels, shape[0], c->kernel, c->kernel}, fan_in));
      params[i].push_back(TensorT::zeros({c->out_channels}));
    } else if (const auto* d = std::get_if<Dense>(&layers[i])) {
      params[i].push_back(he_uniform({d->out_features, shape[0]}, shape[0]));
      params[i].push_back(TensorT::zeros({d->out_features}));
    }
    shape = out;
  }
  return BasicNetwork(std::move(layers), std::move(params));
}

template <typename Scalar>
std::size_t BasicNetwork<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : params_) {
    for (const auto& t : layer) n += t.size();
  }
  return n;
}

template <typename Scalar>
Shape BasicNetwork<Scalar>::output_shape(const Shape& sample_shape) const {
  Shape shape = sample_shape;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* c = std::get_if<Conv2D>(&layers_[i])) {
      (void)c;
      if (shape.size() == 3 && shape[0] != params_[i][0].dim(1)) {
        throw fit_error("layer " + std::to_string(i) + " " + layer_name(layers_[i]) +
                        ": expects " + std::to_string(params_[i][0].dim(1)) +
                        " input channels, got " + std::to_string(shape[0]));
      }
    }
    const std::size_t dense_in =
        std::holds_alternative<Dense>(layers_[i]) ? params_[i][0].dim(1) : 0;
    shape = layer_output_shape(layers_[i], shape, dense_in);
  }
  return shape;
}

template <typename Scalar>
typename BasicNetwork<Scalar>::TensorT BasicNetwork<Scalar>::forward(const TensorT& batch,
                                                                     Tape* tape) const {
  if (batch.rank() != input_rank_ + 1) {
    throw fit_error("network expects batches of rank " + std::to_string(input_rank_ + 1) +
                    ", got " + shape_string(batch.shape()));
  }
  const std::size_t N = batch.dim(0);
  const Shape sample(batch.shape().begin() + 1, batch.shape().end());
  output_shape(sample);  // validates the whole chain before any work

  if (tape) {
    tape->inputs.clear();
    tape->argmax.assign(layers_.size(), {});
  }

  TensorT cur = batch;
  Shape cur_sample = sample;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& layer = layers_[li];
    const std::size_t dense_in =
        std::holds_alternative<Dense>(layer) ? params_[li][0].dim(1) : 0;
    const Shape out_sample = layer_output_shape(layer, cur_sample, dense_in);
    Shape out_shape{N};
    out_shape.insert(out_shape.end(), out_sample.begin(), out_sample.end());
    TensorT out = TensorT::zeros(out_shape);
    std::vector<std::uint32_t> winners;

    std::visit(
        Overloaded{
            [&](const Conv2D& cv) {
              const std::size_t C = cur_sample[0], H = cur_sample[1], W = cur_sample[2];
              const std::size_t O = out_sample[0], Ho = out_sample[1], Wo = out_sample[2];
              const auto weight = params_[li][0].matrix(O, C * cv.kernel * cv.kernel);
              const auto& bias = params_[li][1].vec();
              RowMat<Scalar> col;
              for (std::size_t n = 0; n < N; ++n) {
                im2col(cur.data() + n * C * H * W, C, H, W, cv, Ho, Wo, col);
                Eigen::Map<RowMat<Scalar>> dst(out.data() + n * O * Ho * Wo, ix(O), ix(Ho * Wo));
                dst.noalias() = weight * col;
                dst.colwise() += bias;
              }
            },
            [&](const MaxPool2D& mp) {
              const std::size_t C = cur_sample[0], H = cur_sample[1], W = cur_sample[2];
              const std::size_t Ho = out_sample[1], Wo = out_sample[2];
              winners.resize(N * C * Ho * Wo);
              for (std::size_t p = 0; p < N * C; ++p) {
                const Scalar* plane = cur.data() + p * H * W;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const std::uint32_t a =
                        argmax_cell(plane, W, oy * mp.window, (oy + 1) * mp.window,
                                    ox * mp.window, (ox + 1) * mp.window);
                    const std::size_t o = (p * Ho + oy) * Wo + ox;
                    winners[o] = static_cast<std::uint32_t>(p * H * W) + a;
                    out[o] = plane[a];
                  }
                }
              }
            },
            [&](const AdaptiveMaxPool2D& ap) {
              const std::size_t C = cur_sample[0], H = cur_sample[1], W = cur_sample[2];
              const std::size_t Ho = ap.target_h, Wo = ap.target_w;
              winners.resize(N * C * Ho * Wo);
              for (std::size_t p = 0; p < N * C; ++p) {
                const Scalar* plane = cur.data() + p * H * W;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                  const std::size_t y0 = oy * H / Ho, y1 = (oy + 1) * H / Ho;
                  for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const std::size_t x0 = ox * W / Wo, x1 = (ox + 1) * W / Wo;
                    const std::uint32_t a = argmax_cell(plane, W, y0, y1, x0, x1);
                    const std::size_t o = (p * Ho + oy) * Wo + ox;
                    winners[o] = static_cast<std::uint32_t>(p * H * W) + a;
                    out[o] = plane[a];
                  }
                }
              }
            },
            [&](const ReLU&) { out.vec() = cur.vec().cwiseMax(Scalar(0)); },
            [&](const Flatten&) { out.vec() = cur.vec(); },
            [&](const Dense& d) {
              const std::size_t I = dense_in, O = d.out_features;
              auto dst = out.matrix(N, O);
              dst.noalias() = cur.matrix(N, I) * params_[li][0].matrix(O, I).transpose();
              dst.rowwise() += params_[li][1].vec().transpose();
            },
        },
        layer);

    if (tape) {
      tape->inputs.push_back(std::move(cur));
      tape->argmax[li] = std::move(winners);
    }
    cur = std::move(out);
    cur_sample = out_sample;
  }
  if (tape) tape->logits = cur;
  return cur;
}

template <typename Scalar>
std::optional<typename BasicNetwork<Scalar>::TensorT> BasicNetwork<Scalar>::backward(
    const Tape& tape, const TensorT& grad_logits, ParamSet* param_grads,
    bool want_input_grad) const {
  if (tape.inputs.size() != layers_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "tape does not belong to this network");
  }
  require_same_shape(grad_logits, tape.logits, "backward");
  if (param_grads && param_grads->size() != layers_.size()) *param_grads = zero_params();

  TensorT grad = grad_logits;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const TensorT& in = tape.inputs[li];
    const std::size_t N = in.dim(0);
    const bool need_dx = want_input_grad || li > 0;
    TensorT dx = need_dx ? TensorT::zeros(in.shape()) : TensorT();

    std::visit(
        Overloaded{
            [&](const Conv2D& cv) {
              const std::size_t C = in.dim(1), H = in.dim(2), W = in.dim(3);
              const std::size_t O = grad.dim(1), Ho = grad.dim(2), Wo = grad.dim(3);
              const std::size_t K = C * cv.kernel * cv.kernel;
              const auto weight = params_[li][0].matrix(O, K);
              RowMat<Scalar> col, dcol;
              for (std::size_t n = 0; n < N; ++n) {
                Eigen::Map<const RowMat<Scalar>> dout(grad.data() + n * O * Ho * Wo, ix(O),
                                                      ix(Ho * Wo));
                if (param_grads) {
                  im2col(in.data() + n * C * H * W, C, H, W, cv, Ho, Wo, col);
                  auto dw = (*param_grads)[li][0].matrix(O, K);
                  dw.noalias() += dout * col.transpose();
                  (*param_grads)[li][1].vec() += dout.rowwise().sum();
                }
                if (need_dx) {
                  dcol.noalias() = weight.transpose() * dout;
                  col2im(dcol, C, H, W, cv, Ho, Wo, dx.data() + n * C * H * W);
                }
              }
            },
            [&](const MaxPool2D&) {
              if (!need_dx) return;
              const auto& winners = tape.argmax[li];
              for (std::size_t o = 0; o < winners.size(); ++o) dx[winners[o]] += grad[o];
            },
            [&](const AdaptiveMaxPool2D&) {
              if (!need_dx) return;
              const auto& winners = tape.argmax[li];
              for (std::size_t o = 0; o < winners.size(); ++o) dx[winners[o]] += grad[o];
            },
            [&](const ReLU&) {
              if (!need_dx) return;
              dx.vec().array() = (in.vec().array() > Scalar(0)).select(grad.vec().array(), Scalar(0));
            },
            [&](const Flatten&) {
              if (need_dx) dx.vec() = grad.vec();
            },
            [&](const Dense& d) {
              const std::size_t I = in.size() / N, O = d.out_features;
              const auto dout = grad.matrix(N, O);
              if (param_grads) {
                auto dw = (*param_grads)[li][0].matrix(O, I);
                dw.noalias() += dout.transpose() * in.matrix(N, I);
                (*param_grads)[li][1].vec() += dout.colwise().sum().transpose();
              }
              if (need_dx) dx.matrix(N, I).noalias() = dout * params_[li][0].matrix(O, I);
            },
        },
        layers_[li]);
    if (!need_dx) return std::nullopt;
    grad = std::move(dx);
  }
  return grad;
}

template <typename Scalar>
typename BasicNetwork<Scalar>::ParamSet BasicNetwork<Scalar>::zero_params() const {
  ParamSet out(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (const auto& t : params_[i]) out[i].push_back(TensorT::zeros(t.shape()));
  }
  return out;
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;

std::vector<LayerSpec> paper_cnn_layers(std::size_t num_classes) {
  return {Conv2D{32, 5, 1, 2}, ReLU{},    MaxPool2D{2},
          Conv2D{64, 5, 1, 2}, ReLU{},    AdaptiveMaxPool2D{7, 7},
          Flatten{},           Dense{1024}, ReLU{},
          Dense{num_classes}};
}

Network build_paper_cnn(std::size_t in_channels, std::size_t num_classes, std::uint64_t seed) {
  if (in_channels < 1) throw Error(ErrorCode::kInvalidArgument, "in_channels must be >= 1");
  if (num_classes < 2) throw Error(ErrorCode::kInvalidArgument, "num_classes must be >= 2");
  return Network::initialized(paper_cnn_layers(num_classes), {in_channels, 14, 14}, seed);
}

namespace {

template <typename Scalar>
void check_label(const BasicNetwork<Scalar>& net, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= net.num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(label) +
                                                 " outside [0, " +
                                                 std::to_string(net.num_classes()) + ")");
  }
}

// Cross-entropy of one logits row; writes softmax probabilities to probs.
template <typename Scalar>
Scalar row_cross_entropy(const Scalar* z, std::size_t K, int label, Scalar* probs) {
  Scalar m = z[0];
  for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[k]);
  Scalar sum = 0;
  for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - m);
  const Scalar lse = m + std::log(sum);
  if (probs) {
    for (std::size_t k = 0; k < K; ++k) probs[k] = std::exp(z[k] - lse);
  }
  return lse - z[label];
}

template <typename Scalar>
BasicTensor<Scalar> with_batch_axis(const BasicTensor<Scalar>& x) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return x.reshaped(std::move(s));
}

}  // namespace

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits) {
  if (logits.rank() != 2) throw fit_error("softmax expects N x K logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  auto out = BasicTensor<Scalar>::zeros(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    row_cross_entropy(logits.data() + n * K, K, 0, out.data() + n * K);
  }
  return out;
}

template BasicTensor<float> softmax(const BasicTensor<float>&);
template BasicTensor<double> softmax(const BasicTensor<double>&);

template <typename Scalar>
std::vector<int> argmax_rows(const BasicTensor<Scalar>& logits) {
  if (logits.rank() != 2) throw fit_error("argmax_rows expects N x K logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const Scalar* row = logits.data() + n * K;
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[n] = static_cast<int>(best);
  }
  return out;
}

template std::vector<int> argmax_rows(const BasicTensor<float>&);
template std::vector<int> argmax_rows(const BasicTensor<double>&);

template <typename Scalar>
LossAndGrad<Scalar> loss_and_input_grad(const BasicNetwork<Scalar>& net,
                                        const BasicTensor<Scalar>& x, int label) {
  check_label(net, label);
  typename BasicNetwork<Scalar>::Tape tape;
  const auto logits = net.forward(with_batch_axis(x), &tape);
  const std::size_t K = net.num_classes();
  auto grad_logits = BasicTensor<Scalar>::zeros(logits.shape());
  const Scalar loss = row_cross_entropy(logits.data(), K, label, grad_logits.data());
  grad_logits[static_cast<std::size_t>(label)] -= Scalar(1);
  auto grad = net.backward(tape, grad_logits, nullptr, true);
  return {loss, grad->reshaped(x.shape())};
}

template LossAndGrad<float> loss_and_input_grad(const BasicNetwork<float>&,
                                                const BasicTensor<float>&, int);
template LossAndGrad<double> loss_and_input_grad(const BasicNetwork<double>&,
                                                 const BasicTensor<double>&, int);

template <typename Scalar>
Scalar sample_loss(const BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x, int label) {
  check_label(net, label);
  const auto logits = net.forward(with_batch_axis(x));
  return row_cross_entropy<Scalar>(logits.data(), net.num_classes(), label, nullptr);
}

template float sample_loss(const BasicNetwork<float>&, const BasicTensor<float>&, int);
template double sample_loss(const BasicNetwork<double>&, const BasicTensor<double>&, int);

template <typename Scalar>
ParamGradResult<Scalar> param_grads(const BasicNetwork<Scalar>& net,
                                    const BasicTensor<Scalar>& batch,
                                    std::span<const int> labels) {
  const std::size_t N = batch.dim(0);
  if (labels.size() != N) {
    throw Error(ErrorCode::kShapeMismatch, "param_grads: " + std::to_string(labels.size()) +
                                               " labels for a batch of " + std::to_string(N));
  }
  for (int y : labels) check_label(net, y);
  typename BasicNetwork<Scalar>::Tape tape;
  const auto logits = net.forward(batch, &tape);
  const std::size_t K = net.num_classes();
  auto grad_logits = BasicTensor<Scalar>::zeros(logits.shape());
  Scalar total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    Scalar* g = grad_logits.data() + n * K;
    total += row_cross_entropy(logits.data() + n * K, K, labels[n], g);
    g[labels[n]] -= Scalar(1);
  }
  grad_logits.vec() /= static_cast<Scalar>(N);
  ParamGradResult<Scalar> result{total / static_cast<Scalar>(N), net.zero_params()};
  net.backward(tape, grad_logits, &result.grads, false);
  return result;
}

template ParamGradResult<float> param_grads(const BasicNetwork<float>&, const BasicTensor<float>&,
                                            std::span<const int>);
template ParamGradResult<double> param_grads(const BasicNetwork<double>&,
                                             const BasicTensor<double>&, std::span<const int>);

Tensor forward(const Network& net, const Tensor& batch) { return net.forward(batch); }

std::vector<int> predict(const Network& net, const Tensor& batch) {
  return argmax_rows(net.forward(batch));
}

namespace {

template <typename Fn>
void for_each_batch(const LabeledDataset& ds, std::size_t batch_size, Fn&& fn) {
  if (ds.empty()) throw Error(ErrorCode::kEmptyDataset, "dataset '" + ds.name + "' is empty");
  batch_size = std::max<std::size_t>(1, batch_size);
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    idx.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    fn(gather_batch(ds, idx), std::span<const int>(ds.labels).subspan(begin, end - begin));
  }
}

}  // namespace

double evaluate(const Network& net, const LabeledDataset& ds, std::size_t batch_size) {
  std::size_t correct = 0;
  for_each_batch(ds, batch_size, [&](const Tensor& batch, std::span<const int> labels) {
    const auto pred = predict(net, batch);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  });
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double mean_loss(const Network& net, const LabeledDataset& ds, std::size_t batch_size) {
  double total = 0;
  const std::size_t K = net.num_classes();
  for_each_batch(ds, batch_size, [&](const Tensor& batch, std::span<const int> labels) {
    const Tensor logits = net.forward(batch);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      check_label(net, labels[i]);
      total += row_cross_entropy<float>(logits.data() + i * K, K, labels[i], nullptr);
    }
  });
  return total / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

using container::RecordTag;

void write_tensor(container::ByteWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  w.f32s(t.values());
}

Tensor read_tensor(container::ByteReader& r) {
  const std::size_t at = r.offset();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) {
    throw Error(ErrorCode::kFormat, "bad tensor rank " + std::to_string(rank) + " at offset " +
                                        std::to_string(at));
  }
  Shape shape(rank);
  for (auto& e : shape) e = r.u32();
  std::vector<float> data(checked_numel(shape));
  r.f32s(data);
  return Tensor(std::move(shape), std::span<const float>(data));
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Network& net) {
  container::ByteWriter w;
  w.header(static_cast<std::uint32_t>(net.layers().size()));
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    std::visit(Overloaded{
                   [&](const Conv2D& c) {
                     w.u8(static_cast<std::uint8_t>(RecordTag::kConv2D));
                     w.u32(static_cast<std::uint32_t>(c.out_channels));
                     w.u32(static_cast<std::uint32_t>(c.kernel));
                     w.u32(static_cast<std::uint32_t>(c.stride));
                     w.u32(static_cast<std::uint32_t>(c.padding));
                   },
                   [&](const MaxPool2D& p) {
                     w.u8(static_cast<std::uint8_t>(RecordTag::kMaxPool2D));
                     w.u32(static_cast<std::uint32_t>(p.window));
                   },
                   [&](const AdaptiveMaxPool2D& p) {
                     w.u8(static_cast<std::uint8_t>(RecordTag::kAdaptiveMaxPool2D));
                     w.u32(static_cast<std::uint32_t>(p.target_h));
                     w.u32(static_cast<std::uint32_t>(p.target_w));
                   },
                   [&](const ReLU&) { w.u8(static_cast<std::uint8_t>(RecordTag::kReLU)); },
                   [&](const Flatten&) { w.u8(static_cast<std::uint8_t>(RecordTag::kFlatten)); },
                   [&](const Dense& d) {
                     w.u8(static_cast<std::uint8_t>(RecordTag::kDense));
                     w.u32(static_cast<std::uint32_t>(d.out_features));
                   },
               },
               net.layers()[i]);
    for (const Tensor& t : net.params()[i]) write_tensor(w, t);
  }
  return w.take();
}

Network deserialize_model(std::span<const std::uint8_t> bytes) {
  container::ByteReader r(bytes);
  const std::uint32_t count = r.header();
  std::vector<LayerSpec> layers;
  Network::ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const auto tag = static_cast<RecordTag>(r.u8());
    auto& p = params.emplace_back();
    switch (tag) {
      case RecordTag::kConv2D: {
        Conv2D c;
        c.out_channels = r.u32();
        c.kernel = r.u32();
        c.stride = r.u32();
        c.padding = r.u32();
        layers.emplace_back(c);
        p.push_back(read_tensor(r));
        p.push_back(read_tensor(r));
        break;
      }
      case RecordTag::kMaxPool2D:
        layers.emplace_back(MaxPool2D{r.u32()});
        break;
      case RecordTag::kAdaptiveMaxPool2D: {
        AdaptiveMaxPool2D a;
        a.target_h = r.u32();
        a.target_w = r.u32();
        layers.emplace_back(a);
        break;
      }
      case RecordTag::kReLU:
        layers.emplace_back(ReLU{});
        break;
      case RecordTag::kFlatten:
        layers.emplace_back(Flatten{});
        break;
      case RecordTag::kDense:
        layers.emplace_back(Dense{r.u32()});
        p.push_back(read_tensor(r));
        p.push_back(read_tensor(r));
        break;
      default:
        throw Error(ErrorCode::kFormat, "unexpected record tag " +
                                            std::to_string(static_cast<int>(tag)) +
                                            " in model file at offset " + std::to_string(at));
    }
  }
  if (!r.at_end()) {
    throw Error(ErrorCode::kFormat,
                "trailing bytes after model records at offset " + std::to_string(r.offset()));
  }
  return Network(std::move(layers), std::move(params));
}

void save_model(const Network& net, const std::filesystem::path& path) {
  container::write_file(path, serialize_model(net));
}

Network load_model(const std::filesystem::path& path) {
  return deserialize_model(container::read_file(path));
}

}  // namespace advbench
