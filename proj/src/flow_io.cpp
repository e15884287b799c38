#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "defence/error.hpp"
#include "defence/motion.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "motion";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

void put_float(std::ostream& out, float f) {
  const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(f));
  out.write(reinterpret_cast<const char*>(&bits), 4);
}

float get_float(const unsigned char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  return std::bit_cast<float>(to_little_endian(bits));
}

}  // namespace

void write_flow(const MotionField& flow, const std::filesystem::path& path) {
  if (flow.kind != MotionField::Kind::dense) {
    throw ShapeError(kModule, "only dense motion fields can be written as flow files");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(kModule, "cannot write " + path.string());
  out << "DEFLOW v1 " << flow.width << ' ' << flow.height << '\n';
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    put_float(out, static_cast<float>(flow.u[i]));
    put_float(out, static_cast<float>(flow.v[i]));
  }
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

MotionField load_flow(const std::filesystem::path& path, int expected_width,
                      int expected_height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw FormatError(kModule, "empty flow file");
  std::istringstream ss(header);
  std::string magic, version, extra;
  int width = 0, height = 0;
  if (!(ss >> magic >> version >> width >> height) || magic != "DEFLOW" ||
      version != "v1" || (ss >> extra) || width <= 0 || height <= 0) {
    throw FormatError(kModule, "malformed flow header '" + header + "'");
  }
  if ((expected_width > 0 && width != expected_width) ||
      (expected_height > 0 && height != expected_height)) {
    throw ShapeError(kModule, "flow dimensions do not match the frames");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<unsigned char> raw(n * 8);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError(kModule, "flow payload truncated");
  }
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = get_float(raw.data() + 8 * i);
    v[i] = get_float(raw.data() + 8 * i + 4);
  }
  return MotionField::dense(width, height, std::move(u), std::move(v));
}

}  // namespace defence
