#include "advbench/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "advbench/rng.hpp"

namespace advbench {

void PropertySetting::validate() const {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw Error(ErrorCode::kInvalidArgument, "property factor must be finite and > 0");
  }
}

std::string PropertySetting::kind_name() const {
  return kind == Kind::kSizeScale ? "size" : "contrast";
}

std::string PropertySetting::label() const {
  std::ostringstream os;
  os << kind_name() << factor;
  return os.str();
}

PropertySetting::Kind parse_property_kind(const std::string& name) {
  if (name == "size") return PropertySetting::Kind::kSizeScale;
  if (name == "contrast") return PropertySetting::Kind::kContrast;
  throw Error(ErrorCode::kInvalidArgument, "unknown property kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct BigEndianReader {
  const std::vector<std::uint8_t>& bytes;
  std::string file;
  std::size_t offset = 0;

  std::uint32_t u32() {
    if (bytes.size() - offset < 4) {
      throw Error(ErrorCode::kFormat, file + ": truncated header at offset " + std::to_string(offset));
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[offset + static_cast<std::size_t>(i)];
    offset += 4;
    return v;
  }
};

void expect_magic(BigEndianReader& r, std::uint32_t expected) {
  const std::uint32_t magic = r.u32();
  if (magic != expected) {
    std::ostringstream os;
    os << r.file << ": magic 0x" << std::hex << magic << " at offset 0, expected 0x" << expected;
    throw Error(ErrorCode::kFormat, os.str());
  }
}

void expect_payload(const BigEndianReader& r, std::size_t needed) {
  if (r.bytes.size() - r.offset < needed) {
    throw Error(ErrorCode::kFormat, r.file + ": truncated payload at offset " +
                                        std::to_string(r.bytes.size()) + " (need " +
                                        std::to_string(r.offset + needed) + " bytes)");
  }
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, std::size_t num_classes,
                        const std::string& name) {
  const auto image_bytes = container::read_file(images_path);
  const auto label_bytes = container::read_file(labels_path);

  BigEndianReader ir{image_bytes, images_path.string()};
  expect_magic(ir, kIdxImagesMagic);
  const std::size_t count = ir.u32(), rows = ir.u32(), cols = ir.u32();

  BigEndianReader lr{label_bytes, labels_path.string()};
  expect_magic(lr, kIdxLabelsMagic);
  const std::size_t label_count = lr.u32();

  if (count != label_count) {
    throw Error(ErrorCode::kFormat, images_path.string() + " holds " + std::to_string(count) +
                                        " images but " + labels_path.string() + " holds " +
                                        std::to_string(label_count) + " labels (offset 4)");
  }
  if (count == 0) {
    throw Error(ErrorCode::kEmptyDataset, images_path.string() + ": zero items (offset 4)");
  }
  if (rows == 0 || cols == 0) {
    throw Error(ErrorCode::kFormat, images_path.string() + ": zero image extent at offset 8");
  }
  expect_payload(ir, count * rows * cols);
  expect_payload(lr, count);

  LabeledDataset ds{name, num_classes, {}, {}};
  ds.images.reserve(count);
  ds.labels.reserve(count);
  const std::size_t P = rows * cols;
  for (std::size_t n = 0; n < count; ++n) {
    Tensor img = Tensor::zeros({1, rows, cols});
    const std::uint8_t* src = image_bytes.data() + ir.offset + n * P;
    for (std::size_t i = 0; i < P; ++i) img[i] = static_cast<float>(src[i]) / 255.0f;
    ds.images.push_back(std::move(img));
    const int label = label_bytes[lr.offset + n];
    if (static_cast<std::size_t>(label) >= num_classes) {
      throw Error(ErrorCode::kFormat, labels_path.string() + ": label " + std::to_string(label) +
                                          " at offset " + std::to_string(lr.offset + n) +
                                          " exceeds class count " + std::to_string(num_classes));
    }
    ds.labels.push_back(label);
  }
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  ds.validate();
  if (ds.empty()) throw Error(ErrorCode::kEmptyDataset, "write_idx: dataset is empty");
  const Shape& s = ds.image_shape();
  if (s.size() != 3 || s[0] != 1) {
    throw Error(ErrorCode::kShapeMismatch, "write_idx needs single-channel images");
  }
  for (const auto& p : {images_path, labels_path}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw Error(ErrorCode::kIo, "write_idx: cannot open output files");
  put_be32(img, kIdxImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.size()));
  put_be32(img, static_cast<std::uint32_t>(s[1]));
  put_be32(img, static_cast<std::uint32_t>(s[2]));
  put_be32(lab, kIdxLabelsMagic);
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  std::vector<char> row(s[1] * s[2]);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const float v = std::clamp(ds.images[n][i], 0.0f, 1.0f);
      row[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
    img.write(row.data(), static_cast<std::streamsize>(row.size()));
    const char l = static_cast<char>(ds.labels[n]);
    lab.write(&l, 1);
  }
  if (!img || !lab) throw Error(ErrorCode::kIo, "write_idx: short write");
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

struct Canvas {
  std::size_t h, w;
  std::vector<float> px;
  void set(long y, long x, float v) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return;
    float& p = px[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    p = std::max(p, v);
  }
};

void render(std::size_t cls, Canvas& cv, double cy, double cx, double r, double ink) {
  const long H = static_cast<long>(cv.h), W = static_cast<long>(cv.w);
  const double thick = std::max(1.0, r / 3.5);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const double ady = std::abs(dy), adx = std::abs(dx);
      const double rad = std::hypot(dy, dx);
      bool on = false;
      switch (cls) {
        case 0:  // filled square
          on = ady <= r * 0.8 && adx <= r * 0.8;
          break;
        case 1:  // disc
          on = rad <= r;
          break;
        case 2:  // plus
          on = (ady <= thick / 2 && adx <= r) || (adx <= thick / 2 && ady <= r);
          break;
        case 3:  // horizontal stripes
          on = ady <= r && adx <= r && static_cast<long>(std::floor((dy + r) / thick)) % 2 == 0;
          break;
        case 4:  // vertical stripes
          on = ady <= r && adx <= r && static_cast<long>(std::floor((dx + r) / thick)) % 2 == 0;
          break;
        case 5:  // upward triangle
          on = dy <= r * 0.8 && dy >= -r && adx <= (dy + r) * 0.55;
          break;
        case 6:  // ring
          on = rad <= r && rad >= r - thick;
          break;
        case 7:  // diagonal bar
          on = std::abs(dy - dx) <= thick * 0.75 && ady <= r && adx <= r;
          break;
        case 8:  // hollow square
          on = std::max(ady, adx) <= r * 0.85 && std::max(ady, adx) >= r * 0.85 - thick;
          break;
        default:  // checkerboard
          on = ady <= r && adx <= r &&
               (static_cast<long>(std::floor((dy + r) / thick)) +
                static_cast<long>(std::floor((dx + r) / thick))) % 2 == 0;
          break;
      }
      if (on) cv.set(y, x, static_cast<float>(ink));
    }
  }
}

}  // namespace

LabeledDataset synth_shapes(std::uint64_t seed, std::size_t n_per_class, std::size_t num_classes,
                            std::size_t h, std::size_t w) {
  if (h < 8 || w < 8) throw Error(ErrorCode::kInvalidArgument, "synth_shapes extents must be >= 8");
  if (num_classes < 1 || num_classes > 10) {
    throw Error(ErrorCode::kInvalidArgument, "synth_shapes supports 1..10 classes");
  }
  LabeledDataset ds{"synth", num_classes, {}, {}};
  const std::size_t total = n_per_class * num_classes;
  ds.images.reserve(total);
  ds.labels.reserve(total);
  const double base = 0.3 * static_cast<double>(std::min(h, w));
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t cls = i % num_classes;
    CounterRng rng(seed, i);
    const double r = base * (0.75 + 0.25 * rng.uniform01());
    const double jitter_y = (rng.uniform01() - 0.5) * 0.25 * static_cast<double>(h);
    const double jitter_x = (rng.uniform01() - 0.5) * 0.25 * static_cast<double>(w);
    const double ink = 0.7 + 0.3 * rng.uniform01();
    Canvas cv{h, w, std::vector<float>(h * w, 0.0f)};
    render(cls, cv, static_cast<double>(h) / 2 + jitter_y, static_cast<double>(w) / 2 + jitter_x,
           r, ink);
    Tensor img = Tensor::zeros({1, h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      const float noise = 0.08f * (rng.uniform01() - 0.5f);
      img[p] = std::clamp(cv.px[p] + noise, 0.0f, 1.0f);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(static_cast<int>(cls));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Property transforms

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "resize_bilinear expects C x H x W, got " + shape_string(image.shape()));
  }
  if (out_h < 1 || out_w < 1) {
    throw Error(ErrorCode::kInvalidArgument, "resize_bilinear output extents must be >= 1");
  }
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  struct Tap {
    std::size_t i0, i1;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
      double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(H, out_h), tx = taps(W, out_w);
  Tensor out = Tensor::zeros({C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c) {
    const float* src = image.data() + c * H * W;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = src[a.i0 * W + b.i0] * (1 - b.frac) + src[a.i0 * W + b.i1] * b.frac;
        const double bot = src[a.i1 * W + b.i0] * (1 - b.frac) + src[a.i1 * W + b.i1] * b.frac;
        out[(c * out_h + y) * out_w + x] = static_cast<float>(top * (1 - a.frac) + bot * a.frac);
      }
    }
  }
  return out;
}

Tensor adjust_contrast(const Tensor& image, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw Error(ErrorCode::kInvalidArgument, "contrast factor must be finite and > 0");
  }
  if (factor == 1.0) return image;
  const double mu = image.vec().cast<double>().mean();
  Tensor out = Tensor::zeros(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(mu + factor * (image[i] - mu), 0.0, 1.0));
  }
  return out;
}

Tensor apply_property(const PropertySetting& setting, const Tensor& image) {
  setting.validate();
  if (setting.factor == 1.0) return image;
  if (setting.kind == PropertySetting::Kind::kContrast) {
    return adjust_contrast(image, setting.factor);
  }
  if (image.rank() != 3) {
    throw Error(ErrorCode::kShapeMismatch, "size property needs C x H x W images");
  }
  auto target = [&](std::size_t e) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(e) * setting.factor)));
  };
  return resize_bilinear(image, target(image.dim(1)), target(image.dim(2)));
}

LabeledDataset apply_property(const PropertySetting& setting, const LabeledDataset& ds) {
  setting.validate();
  LabeledDataset out{ds.name + "@" + setting.label(), ds.num_classes, {}, ds.labels};
  out.images.reserve(ds.size());
  for (const auto& img : ds.images) out.images.push_back(apply_property(setting, img));
  return out;
}

// ---------------------------------------------------------------------------
// Cache

namespace container {

void write_dataset_record(ByteWriter& w, const LabeledDataset& ds) {
  ds.validate();
  w.u8(static_cast<std::uint8_t>(RecordTag::kDataset));
  w.str(ds.name);
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  const Shape shape = ds.empty() ? Shape{1} : ds.image_shape();
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) w.u32(static_cast<std::uint32_t>(e));
  for (int l : ds.labels) w.u32(static_cast<std::uint32_t>(l));
  for (const auto& img : ds.images) w.f32s(img.values());
}

LabeledDataset read_dataset_record(ByteReader& r) {
  const std::size_t at = r.offset();
  if (r.u8() != static_cast<std::uint8_t>(RecordTag::kDataset)) {
    throw Error(ErrorCode::kFormat, "expected dataset record at offset " + std::to_string(at));
  }
  LabeledDataset ds;
  ds.name = r.str();
  ds.num_classes = r.u32();
  const std::size_t count = r.u32();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) {
    throw Error(ErrorCode::kFormat, "bad image rank at offset " + std::to_string(r.offset() - 4));
  }
  Shape shape(rank);
  for (auto& e : shape) e = r.u32();
  const std::size_t numel = checked_numel(shape);
  ds.labels.resize(count);
  for (auto& l : ds.labels) l = static_cast<int>(r.u32());
  std::vector<float> buf(numel);
  ds.images.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    r.f32s(buf);
    ds.images.emplace_back(shape, std::span<const float>(buf));
  }
  ds.validate();
  return ds;
}

}  // namespace container

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  container::ByteWriter w;
  w.header(1);
  container::write_dataset_record(w, ds);
  container::write_file(path, w.bytes());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = container::read_file(path);
  container::ByteReader r(bytes);
  if (r.header() != 1) throw Error(ErrorCode::kFormat, path.string() + ": expected one record");
  LabeledDataset ds = container::read_dataset_record(r);
  if (!r.at_end()) throw Error(ErrorCode::kFormat, path.string() + ": trailing bytes");
  return ds;
}

}  // namespace advbench
