#include "advbench/train.hpp"

#include <cmath>
#include <numeric>

#include "advbench/rng.hpp"

namespace advbench {

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (const auto* a = std::get_if<AdamConfig>(&optimizer)) {
    if (!(a->lr > 0)) bad("learning rate must be > 0");
    if (!(a->beta1 >= 0 && a->beta1 < 1) || !(a->beta2 >= 0 && a->beta2 < 1)) {
      bad("Adam betas must lie in [0, 1)");
    }
  } else {
    const auto& s = std::get<SgdMomentumConfig>(optimizer);
    if (!(s.lr > 0)) bad("learning rate must be > 0");
    if (s.momentum < 0 || s.weight_decay < 0) bad("momentum and weight_decay must be >= 0");
  }
  if (lr_schedule && (!(lr_schedule->factor > 0 && lr_schedule->factor <= 1))) {
    bad("plateau factor must lie in (0, 1]");
  }
}

namespace {

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const Network& net)
      : cfg_(cfg), first_(net.zero_params()), second_(net.zero_params()) {
    lr_ = std::visit([](const auto& c) { return c.lr; }, cfg_);
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void step(Network& net, const Network::ParamSet& grads) {
    ++t_;
    auto& params = net.params();
    if (const auto* adam = std::get_if<AdamConfig>(&cfg_)) {
      const double bc1 = 1.0 - std::pow(adam->beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(adam->beta2, static_cast<double>(t_));
      const float step = static_cast<float>(lr_ / bc1);
      const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
      const float b1 = static_cast<float>(adam->beta1), b2 = static_cast<float>(adam->beta2);
      const float eps = static_cast<float>(adam->eps);
      for (std::size_t l = 0; l < params.size(); ++l) {
        for (std::size_t k = 0; k < params[l].size(); ++k) {
          auto m = first_[l][k].vec().array();
          auto v = second_[l][k].vec().array();
          const auto g = grads[l][k].vec().array();
          m = b1 * m + (1.0f - b1) * g;
          v = b2 * v + (1.0f - b2) * g.square();
          params[l][k].vec().array() -= step * m / (v.sqrt() * inv_sqrt_bc2 + eps);
        }
      }
    } else {
      const auto& sgd = std::get<SgdMomentumConfig>(cfg_);
      const float lr = static_cast<float>(lr_);
      const float mu = static_cast<float>(sgd.momentum);
      const float wd = static_cast<float>(sgd.weight_decay);
      for (std::size_t l = 0; l < params.size(); ++l) {
        for (std::size_t k = 0; k < params[l].size(); ++k) {
          auto buf = first_[l][k].vec().array();
          auto w = params[l][k].vec().array();
          buf = mu * buf + (grads[l][k].vec().array() + wd * w);
          w -= lr * buf;
        }
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  Network::ParamSet first_;
  Network::ParamSet second_;
  double lr_ = 0;
  std::uint64_t t_ = 0;
};

}  // namespace

TrainResult train(Network net, const LabeledDataset& train_set, const LabeledDataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (val_set.empty()) throw Error(ErrorCode::kEmptyDataset, "validation set is empty");
  train_set.validate();
  val_set.validate();

  TrainResult result{std::move(net), {}};
  Optimizer opt(cfg.optimizer, result.net);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  std::vector<std::size_t> order(train_set.size());
  std::vector<std::size_t> batch_idx;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(cfg.seed, 0x7368756666000000ULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }

    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor batch = gather_batch(train_set, batch_idx);
      const auto labels = gather_labels(train_set, batch_idx);
      auto pg = param_grads(result.net, batch, labels);
      if (!std::isfinite(pg.loss)) {
        throw Error(ErrorCode::kDivergence,
                    "training loss became non-finite in epoch " + std::to_string(epoch));
      }
      opt.step(result.net, pg.grads);
      loss_sum += static_cast<double>(pg.loss) * static_cast<double>(end - begin);
      seen += end - begin;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.val_loss = mean_loss(result.net, val_set);
    m.val_accuracy = evaluate(result.net, val_set);
    m.learning_rate = opt.learning_rate();
    if (!std::isfinite(m.val_loss)) {
      throw Error(ErrorCode::kDivergence,
                  "validation loss became non-finite in epoch " + std::to_string(epoch));
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);

    if (cfg.lr_schedule) {
      if (m.val_loss < best_val - cfg.lr_schedule->threshold) {
        best_val = m.val_loss;
        stale = 0;
      } else if (++stale >= cfg.lr_schedule->patience) {
        opt.set_learning_rate(opt.learning_rate() * cfg.lr_schedule->factor);
        stale = 0;
      }
    }
  }
  return result;
}

}  // namespace advbench
