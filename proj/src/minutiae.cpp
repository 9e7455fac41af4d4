#include "fpemb/minutiae.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fpemb {

std::string minutia_kind_name(MinutiaKind kind) {
  switch (kind) {
    case MinutiaKind::kEnding:
      return "ending";
    case MinutiaKind::kBifurcation:
      return "bifurcation";
    case MinutiaKind::kUnknown:
      return "unknown";
  }
  fail(ErrorKind::kContract, "bad minutia kind");
}

MinutiaKind minutia_kind_from_name(const std::string& name) {
  if (name == "ending") return MinutiaKind::kEnding;
  if (name == "bifurcation") return MinutiaKind::kBifurcation;
  if (name == "unknown") return MinutiaKind::kUnknown;
  fail(ErrorKind::kFormat, "unknown minutia kind '" + name + "'");
}

double normalize_angle(double theta) {
  const double tau = 2.0 * M_PI;
  double t = std::fmod(theta, tau);
  if (t < 0.0) t += tau;
  if (t >= tau) t = 0.0;  // fmod can round up to tau for tiny negatives
  return t;
}

MinutiaSet parse_minutiae_text(const std::string& content,
                               const std::string& ref) {
  MinutiaSet set;
  set.image_ref = ref;
  std::istringstream in(content);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    double x, y, theta;
    std::string kind;
    const std::string where = ref + " line " + std::to_string(line_no);
    FPEMB_CHECK(ls >> x >> y >> theta >> kind, ErrorKind::kFormat,
                "malformed minutia record at " + where);
    std::string extra;
    FPEMB_CHECK(!(ls >> extra), ErrorKind::kFormat,
                "trailing fields on minutia line at " + where);
    FPEMB_CHECK(std::isfinite(x) && std::isfinite(y) && std::isfinite(theta),
                ErrorKind::kFormat, "non-finite minutia field at " + where);
    FPEMB_CHECK(x >= 0.0 && y >= 0.0, ErrorKind::kRange,
                "negative minutia coordinates at " + where);
    Minutia m;
    m.x = x;
    m.y = y;
    m.theta = normalize_angle(theta);
    m.kind = minutia_kind_from_name(kind);
    for (const Minutia& prev : set.items)
      FPEMB_CHECK(!(prev.x == m.x && prev.y == m.y && prev.theta == m.theta),
                  ErrorKind::kFormat,
                  "duplicate minutia (x,y,theta) at " + where);
    set.items.push_back(m);
  }
  return set;
}

MinutiaSet parse_minutiae_file(const std::string& path) {
  std::ifstream in(path);
  FPEMB_CHECK(in.good(), ErrorKind::kInput, "cannot open minutiae " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_minutiae_text(buf.str(), path);
}

void write_minutiae_file(const MinutiaSet& set, const std::string& path) {
  std::ofstream out(path);
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "cannot write minutiae " + path);
  out << "# x y theta kind\n";
  out << std::setprecision(17);
  for (const Minutia& m : set.items)
    out << m.x << " " << m.y << " " << normalize_angle(m.theta) << " "
        << minutia_kind_name(m.kind) << "\n";
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "short write to " + path);
}

}  // namespace fpemb
