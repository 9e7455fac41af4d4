#include "fpemb/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fpemb {
namespace {

// Reads the next whitespace-delimited token, skipping `#` comment lines.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  FPEMB_CHECK(!tok.empty(), ErrorKind::kFormat,
              path + ": truncated PGM header");
  return tok;
}

int parse_int(const std::string& tok, const std::string& path) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    FPEMB_CHECK(pos == tok.size(), ErrorKind::kFormat,
                path + ": bad integer '" + tok + "' in PGM header");
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    fail(ErrorKind::kFormat, path + ": bad integer '" + tok + "' in PGM header");
  }
}

}  // namespace

FingerprintImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FPEMB_CHECK(in.good(), ErrorKind::kInput, "cannot open image " + path);
  FPEMB_CHECK(next_token(in, path) == "P5", ErrorKind::kFormat,
              path + ": not a binary PGM (P5) file");
  const int width = parse_int(next_token(in, path), path);
  const int height = parse_int(next_token(in, path), path);
  const int maxval = parse_int(next_token(in, path), path);
  FPEMB_CHECK(width >= 1 && height >= 1, ErrorKind::kFormat,
              path + ": nonpositive PGM dimensions");
  FPEMB_CHECK(maxval >= 1 && maxval <= 255, ErrorKind::kFormat,
              path + ": unsupported PGM maxval " + std::to_string(maxval));
  // Exactly one whitespace byte separates the header from the raster.
  FingerprintImage img(height, width);
  std::vector<unsigned char> raw(img.size());
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  FPEMB_CHECK(in.gcount() == static_cast<std::streamsize>(raw.size()),
              ErrorKind::kFormat, path + ": truncated PGM raster");
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.pixels[i] = static_cast<double>(raw[i]) / maxval;
  img.path = path;
  return img;
}

void write_pgm(const FingerprintImage& image, const std::string& path) {
  FPEMB_CHECK(image.width >= 1 && image.height >= 1, ErrorKind::kContract,
              "write_pgm: empty image");
  std::ofstream out(path, std::ios::binary);
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "cannot write image " + path);
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::clamp(image.pixels[i], 0.0, 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "short write to " + path);
}

}  // namespace fpemb
