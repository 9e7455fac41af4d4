#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fpemb/image.hpp"
#include "fpemb/minutiae.hpp"
#include "fpemb/synthetic.hpp"

namespace fpemb {

// fvc/flat: root holds label_impression.pgm files. molf: one subdirectory per
// DB, finger labels shared across DBs. synthetic: records carry seeds instead
// of paths and images are generated on demand.
enum class DatasetLayout { kFvc, kMolf, kFlat, kSynthetic };

std::string dataset_layout_name(DatasetLayout layout);
DatasetLayout dataset_layout_from_name(const std::string& name);

struct DatasetRecord {
  int finger_id = 0;  // contiguous class id in [0, class_count)
  int impression_id = 0;
  std::string label;          // finger label as written in the filename
  std::string source_tag;     // dataset or DB name
  std::string image_id;       // source_tag + "/" + file stem
  std::string path;           // empty for synthetic records
  std::string minutiae_path;  // sidecar .min file, empty when absent
  std::uint64_t finger_seed = 0;
  std::uint64_t impression_seed = 0;
};

struct DatasetIndex {
  DatasetLayout layout = DatasetLayout::kFlat;
  std::string root;
  std::vector<DatasetRecord> records;
  int class_count = 0;
  SynthSpec synth;  // used when layout == kSynthetic
};

DatasetIndex load_dataset(const std::string& root, DatasetLayout layout);

DatasetIndex make_synthetic_index(int fingers, int impressions,
                                  std::uint64_t base_seed,
                                  const SynthSpec& spec);

// Per (finger, source_tag) group the highest impressions_for_val impression
// ids go to validation; both halves keep the full class label space.
std::pair<DatasetIndex, DatasetIndex> split_train_val(const DatasetIndex& index,
                                                      int impressions_for_val);

FingerprintImage load_record_image(const DatasetIndex& index,
                                   const DatasetRecord& record);

bool record_has_minutiae(const DatasetIndex& index,
                         const DatasetRecord& record);

MinutiaSet load_record_minutiae(const DatasetIndex& index,
                                const DatasetRecord& record);

}  // namespace fpemb
