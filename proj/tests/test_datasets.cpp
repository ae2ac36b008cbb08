#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include "advbench/datasets.hpp"
#include "advbench/rng.hpp"
#include "doctest.h"
#include "support/corpus.hpp"

using namespace advbench;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "advbench_test_datasets";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

std::vector<unsigned char> cat(std::initializer_list<std::vector<unsigned char>> parts) {
  std::vector<unsigned char> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::optional<ErrorCode> code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("canonical MNIST training files") {
  if (!testsupport::have_mnist()) {
    MESSAGE("MNIST not found under " << testsupport::mnist_dir() << ", skipping");
    return;
  }
  const auto dir = testsupport::mnist_dir();
  const LabeledDataset ds = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  CHECK(ds.size() == 60000);
  CHECK(ds.image_shape() == Shape{1, 28, 28});
  std::set<int> seen(ds.labels.begin(), ds.labels.end());
  CHECK(seen == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  for (const auto& img : ds.images) {
    REQUIRE(img.vec().minCoeff() >= 0.0f);
    REQUIRE(img.vec().maxCoeff() <= 1.0f);
  }
}

TEST_CASE("idx header errors") {
  const auto images = scratch("zero-images"), labels = scratch("zero-labels");
  write_bytes(images, cat({be32(0x803), be32(0), be32(28), be32(28)}));
  write_bytes(labels, cat({be32(0x801), be32(0)}));
  CHECK(code_of([&] { load_idx(images, labels); }) == ErrorCode::kEmptyDataset);

  const auto one = scratch("one-image");
  write_bytes(one, cat({be32(0x803), be32(1), be32(2), be32(2), {0, 1, 2, 3}}));
  const auto err = code_of([&] { load_idx(one, one); });
  CHECK(err == ErrorCode::kFormat);
  try {
    load_idx(one, one);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  const auto truncated = scratch("truncated");
  write_bytes(truncated, cat({be32(0x803), be32(2), be32(2), be32(2), {0, 1, 2}}));
  const auto lab2 = scratch("two-labels");
  write_bytes(lab2, cat({be32(0x801), be32(2), {0, 1}}));
  CHECK(code_of([&] { load_idx(truncated, lab2); }) == ErrorCode::kFormat);

  const auto lab3 = scratch("three-labels");
  write_bytes(lab3, cat({be32(0x801), be32(3), {0, 1, 2}}));
  const auto two = scratch("two-images");
  write_bytes(two, cat({be32(0x803), be32(2), be32(1), be32(1), {0, 255}}));
  CHECK(code_of([&] { load_idx(two, lab3); }) == ErrorCode::kFormat);
  CHECK(code_of([&] { load_idx(scratch("missing"), lab3); }) == ErrorCode::kIo);
}

TEST_CASE("idx write and load round-trip bitwise") {
  LabeledDataset ds{"tiny", 3, {}, {}};
  CounterRng rng(4);
  for (int i = 0; i < 7; ++i) {
    Tensor img = Tensor::zeros({1, 3, 5});
    for (auto& v : img.values()) v = static_cast<float>(rng.below(256)) / 255.0f;
    ds.images.push_back(img);
    ds.labels.push_back(i % 3);
  }
  const auto images = scratch("rt-images"), labels = scratch("rt-labels");
  write_idx(ds, images, labels);
  const LabeledDataset back = load_idx(images, labels, 3);
  REQUIRE(back.size() == ds.size());
  CHECK(back.labels == ds.labels);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.images[i] == ds.images[i]);
}

TEST_CASE("synthetic shapes are deterministic") {
  const LabeledDataset a = synth_shapes(5, 6, 10, 16, 20);
  const LabeledDataset b = synth_shapes(5, 6, 10, 16, 20);
  REQUIRE(a.size() == 60);
  CHECK(a.labels == b.labels);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.images[i] == b.images[i]);
  CHECK(a.image_shape() == Shape{1, 16, 20});
  CHECK(!(a.images[0] == synth_shapes(6, 6, 10, 16, 20).images[0]));
  CHECK(synth_shapes(5, 0, 4, 16, 16).empty());
  CHECK_THROWS_AS(synth_shapes(5, 1, 4, 7, 16), Error);
  CHECK_THROWS_AS(synth_shapes(5, 1, 11, 16, 16), Error);
}

TEST_CASE("bilinear resize examples") {
  const Tensor x = Tensor({1, 2, 2}, {0.0f, 1.0f, 0.0f, 1.0f});
  const Tensor y = resize_bilinear(x, 2, 4);
  REQUIRE(y.shape() == Shape{1, 2, 4});
  const float want[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(y[r * 4 + c] == doctest::Approx(want[c]).epsilon(1e-6));
  }
  for (const auto& [name, img] : testsupport::load_corpus()) {
    CAPTURE(name);
    CHECK(linf_distance(resize_bilinear(img, img.shape()[1], img.shape()[2]), img) <= 1e-6f);
    const Tensor half = resize_bilinear(img, img.shape()[1] / 2, img.shape()[2] / 2);
    CHECK(std::abs(half.vec().mean() - img.vec().mean()) <= 0.02f);
    const Tensor twice = resize_bilinear(img, img.shape()[1] * 2, img.shape()[2] * 2);
    CHECK(std::abs(twice.vec().mean() - img.vec().mean()) <= 0.02f);
  }
  const Tensor flat({3, 5, 5}, 0.37f);
  const Tensor big = resize_bilinear(flat, 11, 3);
  CHECK(big.shape() == Shape{3, 11, 3});
  CHECK(linf_distance(big, Tensor({3, 11, 3}, 0.37f)) <= 1e-6f);
  CHECK_THROWS_AS(resize_bilinear(flat, 0, 3), Error);
}

TEST_CASE("contrast examples") {
  const Tensor x({1, 1, 2}, {0.2f, 0.8f});
  const Tensor y = adjust_contrast(x, 2.0);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 1.0f);
  const Tensor flat({1, 4, 4}, 0.6f);
  CHECK(adjust_contrast(flat, 3.0) == flat);
  CHECK(adjust_contrast(y, 1.0) == y);
  CHECK_THROWS_AS(adjust_contrast(x, 0.0), Error);

  const Tensor mid({1, 1, 4}, {0.4f, 0.45f, 0.55f, 0.6f});
  const Tensor z = adjust_contrast(mid, 2.0);
  CHECK(z.vec().mean() == doctest::Approx(mid.vec().mean()).epsilon(1e-6));
  CHECK(z[0] == doctest::Approx(0.3f));
}

TEST_CASE("property transforms over a dataset") {
  const LabeledDataset ds = synth_shapes(3, 4, 5, 28, 28);
  const LabeledDataset half = apply_property(PropertySetting::size_scale(0.5), ds);
  CHECK(half.image_shape() == Shape{1, 14, 14});
  CHECK(half.labels == ds.labels);
  CHECK(apply_property(PropertySetting::size_scale(2), ds).image_shape() == Shape{1, 56, 56});
  const LabeledDataset same = apply_property(PropertySetting::size_scale(1), ds);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(linf_distance(same.images[i], ds.images[i]) <= 1e-6f);

  const auto c1 = PropertySetting::contrast(1);
  const LabeledDataset once = apply_property(c1, ds);
  const LabeledDataset twice = apply_property(c1, once);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(twice.images[i] == once.images[i]);

  const LabeledDataset low = apply_property(PropertySetting::contrast(0.5), ds);
  CHECK(low.labels == ds.labels);
  for (const auto& img : low.images) {
    CHECK(img.vec().minCoeff() >= 0.0f);
    CHECK(img.vec().maxCoeff() <= 1.0f);
  }

  CHECK(PropertySetting::size_scale(0.5).label() == "size0.5");
  CHECK(PropertySetting::contrast(2).label() == "contrast2");
  CHECK(parse_property_kind("contrast") == PropertySetting::Kind::kContrast);
  CHECK_THROWS_AS(PropertySetting::contrast(-1).validate(), Error);
  CHECK(apply_property(PropertySetting::size_scale(0.01), ds).image_shape() == Shape{1, 1, 1});
}

TEST_CASE("dataset cache round-trips bitwise") {
  const LabeledDataset ds = apply_property(PropertySetting::contrast(2), synth_shapes(9, 3, 4, 12, 10));
  const auto path = scratch("cache.advb");
  save_dataset(ds, path);
  const LabeledDataset back = load_dataset(path);
  CHECK(back.name == ds.name);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.labels == ds.labels);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.images[i] == ds.images[i]);

  auto bytes = container::read_file(path);
  bytes.resize(bytes.size() - 5);
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_dataset(path), Error);
}

}
