#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "advbench/dataset.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

struct Conv2D {
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Window w, stride w; trailing rows/cols that do not fill a window are dropped.
struct MaxPool2D {
  std::size_t window = 2;
};

// Cell i along an axis of extent H covers [floor(i*H/T), floor((i+1)*H/T)).
struct AdaptiveMaxPool2D {
  std::size_t target_h = 7;
  std::size_t target_w = 7;
};

struct ReLU {};
struct Flatten {};

struct Dense {
  std::size_t out_features = 1;
};

using LayerSpec = std::variant<Conv2D, MaxPool2D, AdaptiveMaxPool2D, ReLU, Flatten, Dense>;

std::string layer_name(const LayerSpec& layer);
void validate_layer(const LayerSpec& layer);

// Per-sample output shape of one layer. Throws with a structured error when
// the input does not fit (too small for a pool grid, wrong rank, ...).
Shape layer_output_shape(const LayerSpec& layer, const Shape& sample_in,
                         std::size_t dense_in_features = 0);

// Ordered layer stack with parameters. Conv weights are [O, C, k, k], dense
// weights [O, I]; biases are [O]. Parameter-free layers hold no tensors.
template <typename Scalar>
class BasicNetwork {
 public:
  using TensorT = BasicTensor<Scalar>;
  using ParamSet = std::vector<std::vector<TensorT>>;

  // Cached intermediate state of one forward pass.
  struct Tape {
    std::vector<TensorT> inputs;                      // inputs[i] feeds layer i
    std::vector<std::vector<std::uint32_t>> argmax;   // pooling winners (flat input index)
    TensorT logits;
  };

  BasicNetwork(std::vector<LayerSpec> layers, ParamSet params);

  // He-uniform fan-in weights, zero biases. Parameter shapes are inferred by
  // propagating `sample_shape` (C x H x W, or {D} for vector inputs).
  static BasicNetwork initialized(std::vector<LayerSpec> layers, const Shape& sample_shape,
                                  std::uint64_t seed);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t input_rank() const noexcept { return input_rank_; }
  std::size_t parameter_count() const;

  // Per-sample output shape; throws when the sample does not fit the network.
  Shape output_shape(const Shape& sample_shape) const;

  // batch: N x sample. Returns N x num_classes logits.
  TensorT forward(const TensorT& batch, Tape* tape = nullptr) const;

  // Reverse pass over a tape. Parameter gradients are accumulated into
  // *param_grads when non-null. Returns the input gradient if requested.
  std::optional<TensorT> backward(const Tape& tape, const TensorT& grad_logits,
                                  ParamSet* param_grads, bool want_input_grad) const;

  ParamSet zero_params() const;

  template <typename Other>
  BasicNetwork<Other> cast() const {
    typename BasicNetwork<Other>::ParamSet out;
    for (const auto& layer : params_) {
      auto& dst = out.emplace_back();
      for (const auto& t : layer) dst.push_back(t.template cast<Other>());
    }
    return BasicNetwork<Other>(layers_, std::move(out));
  }

 private:
  std::vector<LayerSpec> layers_;
  ParamSet params_;
  std::size_t num_classes_ = 0;
  std::size_t input_rank_ = 0;
};

extern template class BasicNetwork<float>;
extern template class BasicNetwork<double>;

using Network = BasicNetwork<float>;

// Conv(32,5x5,pad 2) -> ReLU -> MaxPool(2) -> Conv(64,5x5,pad 2) -> ReLU ->
// AdaptiveMaxPool(7,7) -> Flatten -> Dense(1024) -> ReLU -> Dense(classes).
// Accepts any H, W >= 14.
std::vector<LayerSpec> paper_cnn_layers(std::size_t num_classes);
Network build_paper_cnn(std::size_t in_channels, std::size_t num_classes, std::uint64_t seed = 0);

// Row-wise softmax of an N x K logits tensor.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits);

// Lowest index wins ties.
template <typename Scalar>
std::vector<int> argmax_rows(const BasicTensor<Scalar>& logits);

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  BasicTensor<Scalar> grad;
};

// Softmax cross-entropy of one sample (x has the sample shape, no batch axis)
// and its gradient with respect to x.
template <typename Scalar>
LossAndGrad<Scalar> loss_and_input_grad(const BasicNetwork<Scalar>& net,
                                        const BasicTensor<Scalar>& x, int label);

// Mean cross-entropy over the batch and its gradient w.r.t. every parameter.
template <typename Scalar>
struct ParamGradResult {
  Scalar loss;
  typename BasicNetwork<Scalar>::ParamSet grads;
};

template <typename Scalar>
ParamGradResult<Scalar> param_grads(const BasicNetwork<Scalar>& net,
                                    const BasicTensor<Scalar>& batch,
                                    std::span<const int> labels);

// Loss of one sample, no gradient.
template <typename Scalar>
Scalar sample_loss(const BasicNetwork<Scalar>& net, const BasicTensor<Scalar>& x, int label);

Tensor forward(const Network& net, const Tensor& batch);
std::vector<int> predict(const Network& net, const Tensor& batch);

// Fraction of argmax-correct predictions. Throws kEmptyDataset on empty input.
double evaluate(const Network& net, const LabeledDataset& ds, std::size_t batch_size = 256);

// Mean cross-entropy over a dataset.
double mean_loss(const Network& net, const LabeledDataset& ds, std::size_t batch_size = 256);

// Binary container (little-endian): "ADVB", u32 version, u32 layer count,
// then per layer: u8 kind tag, u32 extents, u32 tensor ranks/extents, f32 data.
void save_model(const Network& net, const std::filesystem::path& path);
Network load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const Network& net);
Network deserialize_model(std::span<const std::uint8_t> bytes);

}  // namespace advbench
