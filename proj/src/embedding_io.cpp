#include "fpemb/embedding_io.hpp"

#include <fstream>
#include <sstream>

#include "fpemb/common.hpp"

namespace fpemb {

void EmbeddingStore::add(const std::string& id,
                         const std::vector<double>& values) {
  if (ids.empty() && dim == 0) dim = static_cast<int>(values.size());
  FPEMB_CHECK(static_cast<int>(values.size()) == dim, ErrorKind::kContract,
              "embedding dimension mismatch for " + id);
  ids.push_back(id);
  data.reserve(data.size() + values.size());
  for (double v : values) data.push_back(static_cast<float>(v));
}

int EmbeddingStore::find(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return static_cast<int>(i);
  return -1;
}

std::vector<double> EmbeddingStore::row(int index) const {
  FPEMB_CHECK(index >= 0 && index < static_cast<int>(ids.size()),
              ErrorKind::kContract, "embedding index out of range");
  std::vector<double> out(dim);
  for (int j = 0; j < dim; ++j)
    out[j] = data[static_cast<std::size_t>(index) * dim + j];
  return out;
}

void write_embedding_file(const EmbeddingStore& store,
                          const std::string& path) {
  FPEMB_CHECK(store.data.size() == store.ids.size() * static_cast<std::size_t>(
                                                          store.dim),
              ErrorKind::kContract, "embedding store is inconsistent");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FPEMB_CHECK(out.good(), ErrorKind::kInput,
              "cannot write embedding file: " + path);
  out.write("FPE1", 4);
  const std::uint32_t dim = static_cast<std::uint32_t>(store.dim);
  const std::uint32_t count = static_cast<std::uint32_t>(store.ids.size());
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(store.data.data()),
            static_cast<std::streamsize>(store.data.size() * sizeof(float)));
  FPEMB_CHECK(out.good(), ErrorKind::kInput,
              "failed while writing embeddings: " + path);

  std::ofstream manifest(path + ".manifest", std::ios::trunc);
  FPEMB_CHECK(manifest.good(), ErrorKind::kInput,
              "cannot write embedding manifest for " + path);
  for (std::size_t i = 0; i < store.ids.size(); ++i)
    manifest << i << " " << store.ids[i] << "\n";
  FPEMB_CHECK(manifest.good(), ErrorKind::kInput,
              "failed while writing embedding manifest for " + path);
}

EmbeddingStore read_embedding_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FPEMB_CHECK(in.good(), ErrorKind::kInput,
              "cannot open embedding file: " + path);
  char magic[4];
  in.read(magic, 4);
  FPEMB_CHECK(in.good() && std::string(magic, 4) == "FPE1",
              ErrorKind::kFormat, "not an embedding file: " + path);
  std::uint32_t dim = 0, count = 0;
  in.read(reinterpret_cast<char*>(&dim), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  FPEMB_CHECK(in.good() && dim > 0, ErrorKind::kFormat,
              "bad embedding header: " + path);
  EmbeddingStore store;
  store.dim = static_cast<int>(dim);
  store.data.resize(static_cast<std::size_t>(dim) * count);
  in.read(reinterpret_cast<char*>(store.data.data()),
          static_cast<std::streamsize>(store.data.size() * sizeof(float)));
  FPEMB_CHECK(in.good() || (in.eof() && in.gcount() ==
                                static_cast<std::streamsize>(
                                    store.data.size() * sizeof(float))),
              ErrorKind::kFormat, "embedding file truncated: " + path);

  std::ifstream manifest(path + ".manifest");
  FPEMB_CHECK(manifest.good(), ErrorKind::kInput,
              "missing embedding manifest for " + path);
  store.ids.resize(count);
  std::vector<bool> seen(count, false);
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    std::string id;
    FPEMB_CHECK(static_cast<bool>(ls >> index), ErrorKind::kFormat,
                "bad manifest line: " + line);
    ls >> std::ws;
    std::getline(ls, id);
    FPEMB_CHECK(index < count && !id.empty(), ErrorKind::kFormat,
                "bad manifest line: " + line);
    store.ids[index] = id;
    seen[index] = true;
  }
  for (std::uint32_t i = 0; i < count; ++i)
    FPEMB_CHECK(seen[i], ErrorKind::kFormat,
                "manifest misses record " + std::to_string(i));
  return store;
}

}  // namespace fpemb
