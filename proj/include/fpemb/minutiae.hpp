#pragma once

#include <string>
#include <vector>

#include "fpemb/common.hpp"

namespace fpemb {

enum class MinutiaKind { kEnding, kBifurcation, kUnknown };

std::string minutia_kind_name(MinutiaKind kind);
MinutiaKind minutia_kind_from_name(const std::string& name);

struct Minutia {
  double x = 0.0;     // pixel column
  double y = 0.0;     // pixel row
  double theta = 0.0; // radians in [0, 2*pi)
  MinutiaKind kind = MinutiaKind::kUnknown;
};

struct MinutiaSet {
  std::vector<Minutia> items;
  std::string image_ref;
};

// Wraps any angle into [0, 2*pi).
double normalize_angle(double theta);

// Text format: one minutia per line, `x y theta kind`, `#` comments allowed.
MinutiaSet parse_minutiae_text(const std::string& content,
                               const std::string& ref);
MinutiaSet parse_minutiae_file(const std::string& path);
void write_minutiae_file(const MinutiaSet& set, const std::string& path);

}  // namespace fpemb
