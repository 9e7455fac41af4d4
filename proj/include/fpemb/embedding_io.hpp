#pragma once

#include <string>
#include <vector>

namespace fpemb {

// Flat store of fixed-dimension embeddings keyed by image id. On disk:
// "FPE1", u32 dim, u32 count, then count*dim float32 little-endian, with a
// sidecar <path>.manifest mapping record index to image id.
struct EmbeddingStore {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // ids.size() * dim floats

  void add(const std::string& id, const std::vector<double>& values);
  int find(const std::string& id) const;  // -1 when absent
  std::vector<double> row(int index) const;
};

void write_embedding_file(const EmbeddingStore& store,
                          const std::string& path);
EmbeddingStore read_embedding_file(const std::string& path);

}  // namespace fpemb
