#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "advbench/container.hpp"
#include "advbench/dataset.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

// One point on an intrinsic-property axis: a rescale of the input size or
// a contrast change, applied offline to every image of a dataset.
struct PropertySetting {
  enum class Kind { kSizeScale, kContrast };

  Kind kind = Kind::kSizeScale;
  double factor = 1.0;

  static PropertySetting size_scale(double factor) { return {Kind::kSizeScale, factor}; }
  static PropertySetting contrast(double factor) { return {Kind::kContrast, factor}; }

  void validate() const;
  // "size" or "contrast".
  std::string kind_name() const;
  // e.g. "size0.5", "contrast2"
  std::string label() const;
};

PropertySetting::Kind parse_property_kind(const std::string& name);

// Big-endian IDX pair: images magic 0x00000803 (u8, rank 3), labels magic
// 0x00000801. Pixels are scaled to [0, 1] by 1/255. Errors name the offset.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t num_classes = 10,
                        const std::string& name = "idx");

// Inverse of load_idx for single-channel datasets whose pixels sit on the
// 1/255 grid.
void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Deterministic renderer of class-distinct geometric patterns (square, disc,
// cross, stripes, triangle, ring, ...) with seeded jitter and noise. Up to
// ten classes; samples are interleaved by class.
LabeledDataset synth_shapes(std::uint64_t seed, std::size_t n_per_class, std::size_t num_classes,
                            std::size_t h, std::size_t w);

// Half-pixel-center bilinear resampling, borders clamped.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

// clamp(mu + factor * (x - mu), 0, 1) with mu the per-image mean.
Tensor adjust_contrast(const Tensor& image, double factor);

Tensor apply_property(const PropertySetting& setting, const Tensor& image);
LabeledDataset apply_property(const PropertySetting& setting, const LabeledDataset& ds);

// Dataset cache in the shared binary container (dataset record tag).
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

namespace container {
// Record body: tag, name, u32 classes, u32 count, u32 rank + extents of one
// image, u32 labels, f32 pixels.
void write_dataset_record(ByteWriter& w, const LabeledDataset& ds);
LabeledDataset read_dataset_record(ByteReader& r);
}  // namespace container

}  // namespace advbench
