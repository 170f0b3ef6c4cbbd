#include "sense/tilestore/raster_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace sense::tiles {
namespace {

static_assert(std::endian::native == std::endian::little, "raster codecs assume a little-endian host");

struct PngWriteState {
  Bytes* out;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* state = static_cast<PngWriteState*>(png_get_io_ptr(png));
  state->out->insert(state->out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

struct PngReadState {
  const Bytes* in;
  std::size_t pos;
};

void png_read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* state = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (state->pos + len > state->in->size()) png_error(png, "truncated PNG");
  std::memcpy(data, state->in->data() + state->pos, len);
  state->pos += len;
}

struct PngErrorState {
  char message[256] = {0};
};

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* state = static_cast<PngErrorState*>(png_get_error_ptr(png));
  std::snprintf(state->message, sizeof state->message, "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

int color_type_for(std::size_t channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGBA;
    default: throw Error(ErrorKind::invalid_argument, "png: unsupported channel count");
  }
}

template <typename T>
void put(Bytes& out, T v) {
  auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const Bytes& in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

}  // namespace

Bytes encode_png(const Grid<std::uint8_t>& pixels) {
  int color = color_type_for(pixels.channels());
  Bytes out;
  PngErrorState err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  png_infop info = png_create_info_struct(png);
  PngWriteState state{&out};
  const std::size_t stride = pixels.width() * pixels.channels();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::io, std::string("png: ") + err.message);
  }
  {
    png_set_write_fn(png, &state, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(pixels.width()), static_cast<png_uint_32>(pixels.height()),
                 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < pixels.height(); ++r) {
      png_write_row(png, const_cast<png_bytep>(pixels.storage().data() + r * stride));
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Grid<std::uint8_t> decode_png(const Bytes& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(ErrorKind::io, "png: bad signature");
  }
  PngErrorState err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  png_infop info = png_create_info_struct(png);
  PngReadState state{&bytes, 0};
  Grid<std::uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::io, std::string("png: ") + err.message);
  }
  {
    png_set_read_fn(png, &state, png_read_cb);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const auto channels = png_get_channels(png, info);
    out = Grid<std::uint8_t>(h, w, channels);
    const std::size_t stride = static_cast<std::size_t>(w) * channels;
    for (std::size_t r = 0; r < h; ++r) png_read_row(png, out.storage().data() + r * stride, nullptr);
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels) {
  write_file(path, encode_png(pixels));
}

Grid<std::uint8_t> read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

Grid<std::uint8_t> to_rgb8(const Grid<float>& image) {
  Grid<std::uint8_t> out(image.height(), image.width(), image.channels());
  for (std::size_t i = 0; i < image.size(); ++i) {
    float v = std::clamp(image[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Grid<float> from_rgb8(const Grid<std::uint8_t>& image) {
  Grid<float> out(image.height(), image.width(), image.channels());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = static_cast<float>(image[i]) / 255.0f;
  return out;
}

Grid<std::uint8_t> mask_to_png_samples(const Grid<std::uint8_t>& mask) {
  Grid<std::uint8_t> out(mask.height(), mask.width(), mask.channels());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 255 : 0;
  return out;
}

Grid<std::uint8_t> mask_from_png_samples(const Grid<std::uint8_t>& samples) {
  Grid<std::uint8_t> out(samples.height(), samples.width(), samples.channels());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = samples[i] >= 128 ? 1 : 0;
  return out;
}

Bytes encode_float_raster(const Grid<float>& grid, LayerKind kind) {
  const auto raw_bytes = static_cast<uLong>(grid.size() * sizeof(float));
  uLongf packed_len = compressBound(raw_bytes);
  Bytes packed(packed_len);
  if (compress2(packed.data(), &packed_len, reinterpret_cast<const Bytef*>(grid.storage().data()), raw_bytes,
                Z_BEST_SPEED) != Z_OK) {
    throw Error(ErrorKind::io, "float raster: compression failed");
  }
  packed.resize(packed_len);

  Bytes out;
  out.reserve(kFloatRasterHeaderBytes + packed.size());
  out.insert(out.end(), kFloatRasterMagic, kFloatRasterMagic + 8);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.height()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.width()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.channels()));
  out.push_back(static_cast<std::uint8_t>(kind));
  out.insert(out.end(), 3, 0);
  put<std::uint64_t>(out, raw_bytes);
  put<std::uint64_t>(out, packed.size());
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

FloatRaster decode_float_raster(const Bytes& bytes) {
  if (bytes.size() < kFloatRasterHeaderBytes || std::memcmp(bytes.data(), kFloatRasterMagic, 8) != 0) {
    throw Error(ErrorKind::io, "float raster: bad magic");
  }
  if (get<std::uint32_t>(bytes, 8) != 1) throw Error(ErrorKind::io, "float raster: unsupported version");
  const auto h = get<std::uint32_t>(bytes, 12);
  const auto w = get<std::uint32_t>(bytes, 16);
  const auto c = get<std::uint32_t>(bytes, 20);
  const auto kind = static_cast<LayerKind>(bytes[24]);
  const auto raw_bytes = get<std::uint64_t>(bytes, 28);
  const auto packed_bytes = get<std::uint64_t>(bytes, 36);
  if (raw_bytes != static_cast<std::uint64_t>(h) * w * c * sizeof(float) ||
      kFloatRasterHeaderBytes + packed_bytes != bytes.size()) {
    throw Error(ErrorKind::io, "float raster: inconsistent header");
  }
  FloatRaster out{Grid<float>(h, w, c), kind};
  auto dest_len = static_cast<uLongf>(raw_bytes);
  if (uncompress(reinterpret_cast<Bytef*>(out.grid.storage().data()), &dest_len,
                 bytes.data() + kFloatRasterHeaderBytes, static_cast<uLong>(packed_bytes)) != Z_OK ||
      dest_len != raw_bytes) {
    throw Error(ErrorKind::io, "float raster: corrupt payload");
  }
  return out;
}

void write_float_raster(const std::filesystem::path& path, const Grid<float>& grid, LayerKind kind) {
  write_file(path, encode_float_raster(grid, kind));
}

FloatRaster read_float_raster(const std::filesystem::path& path) { return decode_float_raster(read_file(path)); }

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

}  // namespace sense::tiles
