#include "fpemb/archive.hpp"

#include <cstring>
#include <fstream>

#include "fpemb/common.hpp"

namespace fpemb {
namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  FPEMB_CHECK(in.good(), ErrorKind::kFormat,
              std::string("archive truncated while reading ") + what);
  return v;
}

std::string read_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  FPEMB_CHECK(in.good() || (in.eof() && in.gcount() == static_cast<std::streamsize>(n)),
              ErrorKind::kFormat,
              std::string("archive truncated while reading ") + what);
  return s;
}

}  // namespace

void Archive::put_text(const std::string& name, const std::string& text) {
  Entry e;
  e.kind = 0;
  e.text = text;
  entries_[name] = std::move(e);
}

void Archive::put_array(const std::string& name, Tensor tensor) {
  Entry e;
  e.kind = 1;
  e.tensor = std::move(tensor);
  entries_[name] = std::move(e);
}

bool Archive::has(const std::string& name) const {
  return entries_.count(name) > 0;
}

const Archive::Entry& Archive::lookup(const std::string& name,
                                      int kind) const {
  auto it = entries_.find(name);
  FPEMB_CHECK(it != entries_.end(), ErrorKind::kLookup,
              "archive entry not found: " + name);
  FPEMB_CHECK(it->second.kind == kind, ErrorKind::kFormat,
              "archive entry has wrong kind: " + name);
  return it->second;
}

const std::string& Archive::text(const std::string& name) const {
  return lookup(name, 0).text;
}

const Tensor& Archive::array(const std::string& name) const {
  return lookup(name, 1).tensor;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, entry] : entries_) out.push_back(name);
  return out;
}

void Archive::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FPEMB_CHECK(out.good(), ErrorKind::kInput, "cannot write archive: " + path);
  out.write("FPCK", 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint64_t>(out, entries_.size());
  for (const auto& [name, entry] : entries_) {
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(entry.kind));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    if (entry.kind == 0) {
      write_pod<std::uint64_t>(out, entry.text.size());
      out.write(entry.text.data(),
                static_cast<std::streamsize>(entry.text.size()));
    } else {
      const auto& shape = entry.tensor.shape();
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
      for (int d : shape) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(entry.tensor.data()),
                static_cast<std::streamsize>(entry.tensor.size() *
                                             sizeof(double)));
    }
  }
  out.flush();
  FPEMB_CHECK(out.good(), ErrorKind::kInput,
              "failed while writing archive: " + path);
}

Archive Archive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FPEMB_CHECK(in.good(), ErrorKind::kInput, "cannot open archive: " + path);
  const std::string magic = read_bytes(in, 4, "magic");
  FPEMB_CHECK(magic == "FPCK", ErrorKind::kFormat,
              "not a checkpoint archive: " + path);
  const auto version = read_pod<std::uint32_t>(in, "version");
  FPEMB_CHECK(version == kVersion, ErrorKind::kFormat,
              "unsupported archive version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(in, "entry count");
  Archive archive;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto kind = read_pod<std::uint8_t>(in, "entry kind");
    FPEMB_CHECK(kind <= 1, ErrorKind::kFormat, "unknown archive entry kind");
    const auto name_len = read_pod<std::uint32_t>(in, "name length");
    const std::string name = read_bytes(in, name_len, "entry name");
    if (kind == 0) {
      const auto len = read_pod<std::uint64_t>(in, "text length");
      archive.put_text(name, read_bytes(in, len, "text payload"));
    } else {
      const auto ndim = read_pod<std::uint32_t>(in, "array rank");
      FPEMB_CHECK(ndim <= 8, ErrorKind::kFormat, "array rank too large");
      std::vector<int> shape(ndim);
      std::int64_t total = 1;
      for (auto& d : shape) {
        d = static_cast<int>(read_pod<std::uint32_t>(in, "array dim"));
        total *= d;
      }
      FPEMB_CHECK(total >= 0 && total < (1ll << 33), ErrorKind::kFormat,
                  "array size out of range");
      Tensor t(shape);
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      FPEMB_CHECK(in.good() || (in.eof() && in.gcount() ==
                                    static_cast<std::streamsize>(
                                        t.size() * sizeof(double))),
                  ErrorKind::kFormat, "archive truncated in array payload");
      archive.entries_[name] = Entry{1, "", std::move(t)};
    }
  }
  return archive;
}

}  // namespace fpemb
