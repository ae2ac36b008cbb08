#include "support/ref_jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include <jpeglib.h>

namespace testsupport {

advbench::Tensor reference_jpeg(const advbench::Tensor& image, int quality) {
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  std::vector<JSAMPLE> pixels(C * H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        const float v = image[(c * H + y) * W + x];
        pixels[(y * W + x) * C + c] = static_cast<JSAMPLE>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
  }

  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(W);
  cinfo.image_height = static_cast<JDIMENSION>(H);
  cinfo.input_components = static_cast<int>(C);
  cinfo.in_color_space = C == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  cinfo.dct_method = JDCT_FLOAT;
  for (int i = 0; i < cinfo.num_components; ++i) {
    cinfo.comp_info[i].h_samp_factor = 1;
    cinfo.comp_info[i].v_samp_factor = 1;
  }
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = &pixels[cinfo.next_scanline * W * C];
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  jpeg_decompress_struct dinfo{};
  dinfo.err = jpeg_std_error(&jerr);
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, buffer, size);
  jpeg_read_header(&dinfo, TRUE);
  dinfo.dct_method = JDCT_FLOAT;
  dinfo.do_fancy_upsampling = FALSE;
  jpeg_start_decompress(&dinfo);
  std::vector<JSAMPLE> decoded(C * H * W);
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW row = &decoded[dinfo.output_scanline * W * C];
    jpeg_read_scanlines(&dinfo, &row, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  std::free(buffer);

  auto out = advbench::Tensor::zeros(image.shape());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < C; ++c) out[(c * H + y) * W + x] = decoded[(y * W + x) * C + c] / 255.0f;
    }
  }
  return out;
}

}  // namespace testsupport
