#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "advbench/tensor.hpp"

namespace advbench {

// Images are C x H x W with pixels in [0, 1]. All images in one dataset
// share a shape.
struct LabeledDataset {
  std::string name;
  std::size_t num_classes = 0;
  std::vector<Tensor> images;
  std::vector<int> labels;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  const Shape& image_shape() const { return images.at(0).shape(); }

  // Throws when the invariants above are violated.
  void validate() const;
};

// Stacks images[indices] into an N x C x H x W batch.
Tensor gather_batch(const LabeledDataset& ds, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const LabeledDataset& ds, std::span<const std::size_t> indices);

// First `count` samples (or all, when fewer).
LabeledDataset take_prefix(const LabeledDataset& ds, std::size_t count);

// Contiguous split: [0, first_count) and [first_count, size).
std::pair<LabeledDataset, LabeledDataset> split_at(const LabeledDataset& ds,
                                                   std::size_t first_count);

}  // namespace advbench
