#pragma once

#include <map>
#include <string>
#include <vector>

#include "fpemb/tensor.hpp"

namespace fpemb {

// Deterministic binary container for checkpoints: named text and f64-array
// entries, written sorted by name so equal contents give equal bytes.
// Layout: "FPCK", u32 version, u64 entry count, then per entry
// u8 kind (0 text, 1 array), u32 name length, name, payload
// (text: u64 length + bytes; array: u32 ndim, u32 dims..., f64 values).
class Archive {
 public:
  void put_text(const std::string& name, const std::string& text);
  void put_array(const std::string& name, Tensor tensor);

  bool has(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  const Tensor& array(const std::string& name) const;
  std::vector<std::string> names() const;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);

  static constexpr std::uint32_t kVersion = 1;

 private:
  struct Entry {
    int kind = 0;  // 0 text, 1 array
    std::string text;
    Tensor tensor;
  };
  const Entry& lookup(const std::string& name, int kind) const;
  std::map<std::string, Entry> entries_;
};

}  // namespace fpemb
