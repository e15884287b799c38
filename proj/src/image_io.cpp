#include "defence/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include "defence/error.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "imagecore";

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// ---- PNM ----------------------------------------------------------------

class PnmReader {
 public:
  explicit PnmReader(const std::vector<unsigned char>& data) : data_(data) {}

  int next_int() {
    skip_space_and_comments();
    if (pos_ >= data_.size() || !std::isdigit(data_[pos_])) {
      throw FormatError(kModule, "malformed PNM header");
    }
    long v = 0;
    while (pos_ < data_.size() && std::isdigit(data_[pos_])) {
      v = v * 10 + (data_[pos_++] - '0');
      if (v > 1 << 24) throw FormatError(kModule, "PNM header value too large");
    }
    return static_cast<int>(v);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= data_.size() || !std::isspace(data_[pos_])) {
      throw FormatError(kModule, "malformed PNM header");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < data_.size()) {
      if (std::isspace(data_[pos_])) {
        ++pos_;
      } else if (data_[pos_] == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& data_;
  std::size_t pos_ = 2;
};

Image decode_pnm(const std::vector<unsigned char>& data) {
  const int channels = data[1] == '5' ? 1 : 3;
  PnmReader reader(data);
  const int width = reader.next_int();
  const int height = reader.next_int();
  const int maxval = reader.next_int();
  if (width <= 0 || height <= 0) throw FormatError(kModule, "zero-dimension image");
  if (maxval <= 0 || maxval > 65535) throw FormatError(kModule, "bad PNM maxval");
  const std::size_t start = reader.raster_start();
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (data.size() < start + n * channels * bytes_per) {
    throw FormatError(kModule, "truncated PNM raster");
  }
  std::vector<double> samples(n * channels);
  const unsigned char* p = data.data() + start;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      unsigned v = *p++;
      if (bytes_per == 2) v = (v << 8) | *p++;
      samples[c * n + i] = static_cast<double>(v) / maxval;
    }
  }
  return Image(width, height, channels, std::move(samples));
}

void encode_pnm(const Image& image, const std::filesystem::path& path) {
  const char* magic = image.channels() == 1 ? "P5" : "P6";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(kModule, "cannot write " + path.string());
  out << magic << "\n" << image.width() << " " << image.height() << "\n255\n";
  const std::size_t n = image.plane_size();
  std::vector<unsigned char> raster(n * image.channels());
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < image.channels(); ++c) {
      raster[i * image.channels() + c] = static_cast<unsigned char>(
          std::lround(image.plane(c)[i] * 255.0));
    }
  }
  out.write(reinterpret_cast<const char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

// ---- PNG ----------------------------------------------------------------

void png_error_handler(png_structp png, png_const_charp msg) {
  auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
  if (buffer) *buffer = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct PngDecodeState {
  std::string error;
  std::vector<unsigned char> raster;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int depth = 0;
  int channels = 0;
};

// Only heap state is touched between setjmp and a possible longjmp.
void read_png_into(std::FILE* file, PngDecodeState& st) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &st.error,
                                           png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(kModule, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(kModule, "PNG decode failed: " + st.error);
  }
  png_init_io(png, file);
  png_read_info(png, info);
  int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  st.width = png_get_image_width(png, info);
  st.height = png_get_image_height(png, info);
  st.depth = png_get_bit_depth(png, info);
  st.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  st.raster.resize(stride * st.height);
  st.rows.resize(st.height);
  for (png_uint_32 y = 0; y < st.height; ++y) st.rows[y] = st.raster.data() + y * stride;
  png_read_image(png, st.rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

Image decode_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError(kModule, "cannot open " + path.string());
  auto st = std::make_unique<PngDecodeState>();
  read_png_into(file.get(), *st);
  const png_uint_32 width = st->width, height = st->height;
  const int depth = st->depth, channels = st->channels;
  if (width == 0 || height == 0) throw FormatError(kModule, "zero-dimension image");
  if (channels != 1 && channels != 3) {
    throw FormatError(kModule, "unsupported PNG channel layout");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  const double maxval = depth == 16 ? 65535.0 : 255.0;
  std::vector<double> samples(n * channels);
  for (png_uint_32 y = 0; y < height; ++y) {
    const unsigned char* p = st->rows[y];
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        unsigned v = *p++;
        if (depth == 16) v = (v << 8) | *p++;
        samples[c * n + static_cast<std::size_t>(y) * width + x] = v / maxval;
      }
    }
  }
  return Image(static_cast<int>(width), static_cast<int>(height), channels,
               std::move(samples));
}

void encode_png(const Image& image, const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError(kModule, "cannot write " + path.string());
  const int channels = image.channels();
  const std::size_t n = image.plane_size();
  std::vector<unsigned char> raster(n * channels);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < channels; ++c) {
      raster[i * channels + c] =
          static_cast<unsigned char>(std::lround(image.plane(c)[i] * 255.0));
    }
  }
  std::vector<png_bytep> rows(image.height());
  for (int y = 0; y < image.height(); ++y) {
    rows[y] = raster.data() + static_cast<std::size_t>(y) * image.width() * channels;
  }
  auto error = std::make_unique<std::string>();
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, error.get(),
                                            png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError(kModule, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(kModule, "PNG encode failed: " + *error);
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.width(), image.height(), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  std::vector<unsigned char> head;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(kModule, "cannot open " + path.string());
    head.resize(8);
    in.read(reinterpret_cast<char*>(head.data()), 8);
    head.resize(static_cast<std::size_t>(in.gcount()));
  }
  if (head.size() >= 8 && png_sig_cmp(head.data(), 0, 8) == 0) {
    return decode_png(path);
  }
  if (head.size() >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '6')) {
    return decode_pnm(read_bytes(path));
  }
  throw FormatError(kModule, "unsupported image format: " + path.string());
}

void save_image(const Image& image, const std::filesystem::path& path) {
  if (image.empty()) throw ShapeError(kModule, "cannot save an empty image");
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    encode_png(image, path);
  } else if (ext == ".pgm" || ext == ".ppm") {
    if ((ext == ".pgm") != (image.channels() == 1)) {
      throw FormatError(kModule, "channel count does not match " + ext);
    }
    encode_pnm(image, path);
  } else {
    throw FormatError(kModule, "unsupported output extension: " + ext);
  }
}

void save_mask(const FenceMask& mask, const std::filesystem::path& path) {
  std::vector<double> samples(mask.size());
  auto bits = mask.bits();
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = bits[i] ? 1.0 : 0.0;
  save_image(Image(mask.width(), mask.height(), 1, std::move(samples)), path);
}

FenceMask load_mask(const std::filesystem::path& path) {
  const Image lum = to_luminance(load_image(path));
  FenceMask mask(lum.width(), lum.height());
  for (int y = 0; y < lum.height(); ++y)
    for (int x = 0; x < lum.width(); ++x) mask.set(x, y, lum.at(0, y, x) >= 0.5);
  return mask;
}

std::vector<Point2> read_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  std::vector<Point2> points;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    double x = 0, y = 0;
    char comma = 0;
    std::istringstream ss(line);
    if (!(ss >> x >> comma >> y) || comma != ',') {
      throw FormatError(kModule, path.string() + ":" + std::to_string(lineno) +
                                     ": expected x,y");
    }
    points.push_back({x, y});
  }
  return points;
}

void write_points(const std::vector<Point2>& points,
                  const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(kModule, "cannot write " + path.string());
  char buf[64];
  for (const Point2& p : points) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p.x, p.y);
    out << buf;
  }
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

}  // namespace defence
