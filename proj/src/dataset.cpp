#include "advbench/dataset.hpp"

#include <algorithm>

namespace advbench {

void LabeledDataset::validate() const {
  if (images.size() != labels.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "dataset '" + name + "': " + std::to_string(images.size()) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) {
    throw Error(ErrorCode::kInvalidArgument, "dataset '" + name + "': num_classes must be >= 1");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != images[0].shape()) {
      throw Error(ErrorCode::kShapeMismatch, "dataset '" + name + "': image " +
                                                 std::to_string(i) + " has shape " +
                                                 shape_string(images[i].shape()) + ", expected " +
                                                 shape_string(images[0].shape()));
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "dataset '" + name + "': label " +
                                                   std::to_string(labels[i]) + " at index " +
                                                   std::to_string(i) + " out of range");
    }
  }
}

Tensor gather_batch(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<Tensor> items;
  items.reserve(indices.size());
  for (std::size_t i : indices) items.push_back(ds.images.at(i));
  return stack<float>(items);
}

std::vector<int> gather_labels(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(ds.labels.at(i));
  return out;
}

LabeledDataset take_prefix(const LabeledDataset& ds, std::size_t count) {
  LabeledDataset out{ds.name, ds.num_classes, {}, {}};
  count = std::min(count, ds.size());
  out.images.assign(ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(count));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_at(const LabeledDataset& ds,
                                                   std::size_t first_count) {
  first_count = std::min(first_count, ds.size());
  LabeledDataset head = take_prefix(ds, first_count);
  LabeledDataset tail{ds.name, ds.num_classes, {}, {}};
  tail.images.assign(ds.images.begin() + static_cast<std::ptrdiff_t>(first_count), ds.images.end());
  tail.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(first_count), ds.labels.end());
  return {std::move(head), std::move(tail)};
}

}  // namespace advbench
