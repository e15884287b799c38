#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "defence/cnn.hpp"
#include "defence/error.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "cnn";

int arch_field(const std::map<std::string, int>& fields, const std::string& key) {
  auto it = fields.find(key);
  if (it == fields.end()) throw FormatError(kModule, "arch line lacks '" + key + "'");
  return it->second;
}

}  // namespace

void save_model(const CnnModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(kModule, "cannot write " + path.string());
  out << kModelMagic << '\n';
  out << "arch " << model.arch().describe()
      << " params=" << model.parameters().size() << '\n';
  char buf[40];
  for (double w : model.parameters()) {
    std::snprintf(buf, sizeof buf, "%.17g\n", w);
    out << buf;
  }
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

CnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kModelMagic) {
    throw FormatError(kModule, path.string() + " is not a " + kModelMagic + " file");
  }
  if (!std::getline(in, line) || line.rfind("arch ", 0) != 0) {
    throw FormatError(kModule, "missing arch descriptor");
  }
  std::map<std::string, int> fields;
  std::istringstream ss(line.substr(5));
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    int value = 0;
    if (eq == std::string::npos ||
        std::from_chars(token.data() + eq + 1, token.data() + token.size(), value).ec !=
            std::errc{}) {
      throw FormatError(kModule, "malformed arch token '" + token + "'");
    }
    fields[token.substr(0, eq)] = value;
  }
  CnnArch arch;
  arch.input_side = arch_field(fields, "input");
  arch.conv1_maps = arch_field(fields, "conv1");
  arch.conv2_maps = arch_field(fields, "conv2");
  arch.kernel = arch_field(fields, "kernel");
  arch.pool = arch_field(fields, "pool");
  arch.classes = arch_field(fields, "classes");
  CnnModel model(arch);
  auto params = model.parameters();
  if (static_cast<std::size_t>(arch_field(fields, "params")) != params.size()) {
    throw FormatError(kModule, "declared parameter count does not match arch");
  }
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (n >= params.size()) throw FormatError(kModule, "more weights than the arch holds");
    double v = 0.0;
    const auto res = std::from_chars(line.data(), line.data() + line.size(), v);
    if (res.ec != std::errc{} || res.ptr != line.data() + line.size()) {
      throw FormatError(kModule, "malformed weight '" + line + "'");
    }
    params[n++] = v;
  }
  if (n != params.size()) {
    throw FormatError(kModule, "weight array truncated: " + std::to_string(n) + " of " +
                                   std::to_string(params.size()));
  }
  return model;
}

}  // namespace defence
