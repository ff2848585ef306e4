#include "defectloop/image_io.hpp"

#include "defectloop/error.hpp"

#include <jpeglib.h>
#include <openssl/evp.h>
#include <png.h>

#include <atomic>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace defectloop {

namespace {

Image8 from_interleaved(const std::uint8_t* data, int width, int height, int channels) {
  Image8 image(width, height, channels);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto* px = data + (static_cast<std::size_t>(r) * width + c) * channels;
      for (int k = 0; k < channels; ++k) image[k](r, c) = px[k];
    }
  }
  return image;
}

std::vector<std::uint8_t> to_interleaved(const Image8& image) {
  const int w = image.width(), h = image.height(), n = image.channels();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * n);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      auto* px = out.data() + (static_cast<std::size_t>(r) * w + c) * n;
      for (int k = 0; k < n; ++k) px[k] = image[k](r, c);
    }
  }
  return out;
}

void check_encodable(const Image8& image) {
  if (image.empty() || (image.channels() != 1 && image.channels() != 3)) {
    throw Error(Errc::InvalidArgument, "only non-empty gray or RGB images can be encoded");
  }
}

Image8 finish_png_read(png_image& png) {
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw Error(Errc::UnreadableImage, msg);
  }
  return from_interleaved(buffer.data(), static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

[[noreturn]] void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  std::longjmp(err->jump, 1);
}

}  // namespace

Image8 decode_png(std::span<const std::uint8_t> data) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, data.data(), data.size())) {
    throw Error(Errc::UnreadableImage, png.message);
  }
  return finish_png_read(png);
}

Image8 read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw Error(Errc::UnreadableImage, path.string() + ": " + png.message);
  }
  return finish_png_read(png);
}

Bytes encode_png(const Image8& image) {
  check_encodable(image);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto pixels = to_interleaved(image);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::Io, std::string("png sizing failed: ") + png.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::Io, std::string("png encode failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  const auto bytes = encode_png(image);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Image8 jpeg_round_trip(const Image8& image, int quality) {
  check_encodable(image);
  if (quality < 1 || quality > 100) throw Error(Errc::InvalidArgument, "jpeg quality must be in 1..100");
  const int w = image.width(), h = image.height(), n = image.channels();
  auto pixels = to_interleaved(image);

  unsigned char* encoded = nullptr;
  unsigned long encoded_size = 0;
  {
    jpeg_compress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_compress(&cinfo);
      std::free(encoded);
      throw Error(Errc::Io, "jpeg encode failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &encoded, &encoded_size);
    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = n;
    cinfo.in_color_space = n == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * n;
      jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
  }

  std::vector<std::uint8_t> decoded(static_cast<std::size_t>(w) * h * n);
  {
    jpeg_decompress_struct dinfo{};
    JpegErrorManager err{};
    dinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_decompress(&dinfo);
      std::free(encoded);
      throw Error(Errc::Io, "jpeg decode failed");
    }
    jpeg_create_decompress(&dinfo);
    jpeg_mem_src(&dinfo, encoded, encoded_size);
    jpeg_read_header(&dinfo, TRUE);
    dinfo.out_color_space = n == 3 ? JCS_RGB : JCS_GRAYSCALE;
    jpeg_start_decompress(&dinfo);
    while (dinfo.output_scanline < dinfo.output_height) {
      JSAMPROW row = decoded.data() + static_cast<std::size_t>(dinfo.output_scanline) * w * n;
      jpeg_read_scanlines(&dinfo, &row, 1);
    }
    jpeg_finish_decompress(&dinfo);
    jpeg_destroy_decompress(&dinfo);
  }
  std::free(encoded);
  return from_interleaved(decoded.data(), w, h, n);
}

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int written = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                      static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::InvalidArgument, "base64 length must be a multiple of 4");
  Bytes out(3 * text.size() / 4);
  const int written = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                      static_cast<int>(text.size()));
  if (written < 0) throw Error(Errc::InvalidArgument, "malformed base64");
  std::size_t size = static_cast<std::size_t>(written);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  if (!text.empty() && text.back() == '=') --size;
  if (text.size() > 1 && text[text.size() - 2] == '=') --size;
  out.resize(size);
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::NotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000) + "_" +
         std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(Errc::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace defectloop
