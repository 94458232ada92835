#pragma once

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <future>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "xrseq/error.hpp"
#include "xrseq/labels.hpp"
#include "xrseq/samples.hpp"
#include "xrseq/tensor.hpp"

namespace xrseq {

inline constexpr int kInputSize = 128;

/// Decoded single-channel image, values in the source bit range.
struct RawImage {
  int height = 0;
  int width = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<uint16_t> pixels;

  uint16_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
  int max_value() const { return bit_depth == 16 ? 65535 : 255; }
};

namespace detail {

struct PngReadCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;
  ~PngReadCloser() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (file) std::fclose(file);
  }
};

struct PngWriteCloser {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;
  ~PngWriteCloser() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (file) std::fclose(file);
  }
};

}  // namespace detail

/// Decodes a PNG to a single-channel grid. Multi-channel sources are
/// reduced by averaging the color channels; 16-bit sources keep their
/// full range. Alpha, if present, is dropped.
inline RawImage load_grayscale(const std::string& path) {
  detail::PngReadCloser ctx;
  ctx.file = std::fopen(path.c_str(), "rb");
  if (!ctx.file) raise(ErrorKind::io_error, "cannot open image '" + path + "'");

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.file) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    raise(ErrorKind::decode_error, "'" + path + "' is not a PNG file");
  }

  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) raise(ErrorKind::decode_error, "png_create_read_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) raise(ErrorKind::decode_error, "png_create_info_struct failed");

  if (setjmp(png_jmpbuf(ctx.png))) {
    raise(ErrorKind::decode_error, "failed to decode '" + path + "'");
  }

  png_init_io(ctx.png, ctx.file);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  const png_uint_32 width = png_get_image_width(ctx.png, ctx.info);
  const png_uint_32 height = png_get_image_height(ctx.png, ctx.info);
  const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  const int color_type = png_get_color_type(ctx.png, ctx.info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  if (bit_depth == 16) png_set_swap(ctx.png);  // stream is big-endian; we want host order
  png_read_update_info(ctx.png, ctx.info);

  const int channels = png_get_channels(ctx.png, ctx.info);
  const int out_depth = png_get_bit_depth(ctx.png, ctx.info);
  const size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);

  std::vector<unsigned char> storage(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = storage.data() + y * rowbytes;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);

  RawImage img;
  img.height = static_cast<int>(height);
  img.width = static_cast<int>(width);
  img.bit_depth = out_depth == 16 ? 16 : 8;
  img.pixels.resize(static_cast<size_t>(width) * height);

  const int color_channels = (channels == 2 || channels == 4) ? channels - 1 : channels;
  for (png_uint_32 y = 0; y < height; ++y) {
    for (png_uint_32 x = 0; x < width; ++x) {
      uint32_t sum = 0;
      if (out_depth == 16) {
        const uint16_t* px = reinterpret_cast<const uint16_t*>(rows[y]) + x * channels;
        for (int c = 0; c < color_channels; ++c) sum += px[c];
      } else {
        const unsigned char* px = rows[y] + static_cast<size_t>(x) * channels;
        for (int c = 0; c < color_channels; ++c) sum += px[c];
      }
      img.pixels[static_cast<size_t>(y) * width + x] =
          static_cast<uint16_t>(sum / static_cast<uint32_t>(color_channels));
    }
  }
  return img;
}

/// Writes an 8-bit grayscale PNG.
inline void write_png8(const std::string& path, const std::vector<uint8_t>& pixels, int height,
                       int width) {
  detail::PngWriteCloser ctx;
  ctx.file = std::fopen(path.c_str(), "wb");
  if (!ctx.file) raise(ErrorKind::io_error, "cannot open '" + path + "' for writing");
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) raise(ErrorKind::io_error, "png_create_write_struct failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) raise(ErrorKind::io_error, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(ctx.png))) {
    raise(ErrorKind::io_error, "failed to encode '" + path + "'");
  }
  png_init_io(ctx.png, ctx.file);
  png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width);
  }
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

/// Bilinear resample to `out_size` x `out_size` (pixel centers aligned,
/// align-corners=false convention), then divide by the source bit-depth
/// maximum. Output shape is (out_size, out_size, 1), values in [0,1].
inline Tensor resize_normalize(const RawImage& raw, int out_size = kInputSize) {
  if (raw.width <= 0 || raw.height <= 0) raise(ErrorKind::decode_error, "empty raw image");
  Tensor out({out_size, out_size, 1});
  const float scale_y = static_cast<float>(raw.height) / static_cast<float>(out_size);
  const float scale_x = static_cast<float>(raw.width) / static_cast<float>(out_size);
  const float inv_max = 1.0f / static_cast<float>(raw.max_value());
  for (int oy = 0; oy < out_size; ++oy) {
    float sy = (static_cast<float>(oy) + 0.5f) * scale_y - 0.5f;
    sy = std::min(std::max(sy, 0.0f), static_cast<float>(raw.height - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, raw.height - 1);
    const float fy = sy - static_cast<float>(y0);
    for (int ox = 0; ox < out_size; ++ox) {
      float sx = (static_cast<float>(ox) + 0.5f) * scale_x - 0.5f;
      sx = std::min(std::max(sx, 0.0f), static_cast<float>(raw.width - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, raw.width - 1);
      const float fx = sx - static_cast<float>(x0);
      const float v = (1.0f - fy) * ((1.0f - fx) * raw.at(y0, x0) + fx * raw.at(y0, x1)) +
                      fy * ((1.0f - fx) * raw.at(y1, x0) + fx * raw.at(y1, x1));
      out[(static_cast<int64_t>(oy) * out_size + ox)] = v * inv_max;
    }
  }
  return out;
}

/// Replicates a single channel across `channels` (1 -> 3 for standard
/// backbone stems). Identity when channels == 1.
inline Tensor replicate_channels(const Tensor& hw1, int channels) {
  if (hw1.ndim() != 3 || hw1.dim(2) != 1) raise(ErrorKind::shape_mismatch, "expected (H,W,1) tensor");
  if (channels == 1) return hw1;
  const int h = hw1.dim(0), w = hw1.dim(1);
  Tensor out({h, w, channels});
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    for (int c = 0; c < channels; ++c) out[i * channels + c] = hw1[i];
  }
  return out;
}

/// Position-aligned arrays for a batch of triplet samples: the first
/// follow-ups of all samples in one tensor, the seconds in another, the
/// thirds in a third, plus one-hot targets.
struct TripletBatch {
  Tensor first, second, third;  // (batch, H, W, C)
  Tensor targets;               // (batch, kNumLabels), one-hot rows
  std::vector<int64_t> sample_ids;

  int batch_size() const { return targets.empty() ? 0 : targets.dim(0); }
  const Tensor& branch(int i) const { return i == 0 ? first : (i == 1 ? second : third); }
};

/// Resolves sample image references to decodable files.
class ImageSource {
 public:
  explicit ImageSource(std::filesystem::path root) : root_(std::move(root)) {}

  RawImage load(const std::string& ref) const {
    namespace fs = std::filesystem;
    fs::path p(ref);
    if (!p.is_absolute()) p = root_ / p;
    return load_grayscale(p.string());
  }

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

namespace detail {

inline void copy_image_into(Tensor& dst, int row, const Tensor& img) {
  const int64_t n = img.numel();
  std::copy(img.data(), img.data() + n, dst.data() + static_cast<int64_t>(row) * n);
}

}  // namespace detail

/// Loads, resizes, and stacks a batch. Decoding runs on a small worker
/// pool; output order always equals input order. IoError/DecodeError
/// are rethrown with the offending sample id attached.
// TODO: content-addressed on-disk cache of resized tensors, keyed by
// (path, kernel, size), once cohorts are large enough that re-decoding
// across training variants dominates.
inline TripletBatch assemble_batch(const std::vector<SampleSet>& samples, const ImageSource& source,
                                   int channels = 1, int input_size = kInputSize) {
  TripletBatch batch;
  const int n = static_cast<int>(samples.size());
  batch.first = Tensor({n, input_size, input_size, channels});
  batch.second = Tensor({n, input_size, input_size, channels});
  batch.third = Tensor({n, input_size, input_size, channels});
  batch.targets = Tensor({n, kNumLabels});
  batch.sample_ids.resize(static_cast<size_t>(n));

  auto load_one = [&](const std::string& ref) {
    return replicate_channels(resize_normalize(source.load(ref), input_size), channels);
  };

  const unsigned pool = std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()), 8);
  std::vector<std::future<void>> tasks;
  std::atomic<int> cursor{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  for (unsigned t = 0; t < pool; ++t) {
    tasks.push_back(std::async(std::launch::async, [&]() {
      for (int i = cursor.fetch_add(1); i < n; i = cursor.fetch_add(1)) {
        const SampleSet& s = samples[static_cast<size_t>(i)];
        try {
          detail::copy_image_into(batch.first, i, load_one(s.images[0]));
          detail::copy_image_into(batch.second, i, load_one(s.images[1]));
          detail::copy_image_into(batch.third, i, load_one(s.images[2]));
        } catch (const Error& e) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) {
            first_error = std::make_exception_ptr(
                Error(e.kind(), std::string(e.what()) + " (sample " + std::to_string(s.sample_id) + ")"));
          }
          return;
        }
        batch.targets[static_cast<int64_t>(i) * kNumLabels + s.target_label] = 1.0f;
        batch.sample_ids[static_cast<size_t>(i)] = s.sample_id;
      }
    }));
  }
  for (auto& task : tasks) task.get();
  if (first_error) std::rethrow_exception(first_error);
  return batch;
}

}  // namespace xrseq
