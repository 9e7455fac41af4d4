#include "fpemb/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <set>

#include "fpemb/common.hpp"
#include "fpemb/rng.hpp"

namespace fs = std::filesystem;

namespace fpemb {
namespace {

bool all_digits(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return true;
}

bool is_pgm(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm";
}

// Accepts <label>_<digits> stems only; stems containing '.' are sibling
// artifacts (such as pre-enhanced copies) and are skipped.
bool parse_stem(const std::string& stem, std::string* label,
                int* impression) {
  if (stem.find('.') != std::string::npos) return false;
  const auto pos = stem.rfind('_');
  if (pos == std::string::npos || pos == 0 || pos + 1 >= stem.size())
    return false;
  const std::string imp = stem.substr(pos + 1);
  if (!all_digits(imp) || imp.size() > 9) return false;
  *label = stem.substr(0, pos);
  *impression = std::stoi(imp);
  return true;
}

struct RawRecord {
  std::string label;
  int impression = 0;
  std::string source_tag;
  std::string stem;
  std::string path;
  std::string minutiae_path;
};

void scan_directory(const fs::path& dir, const std::string& tag,
                    std::vector<RawRecord>* out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& file : files) {
    if (!is_pgm(file)) continue;
    RawRecord rec;
    rec.stem = file.stem().string();
    if (!parse_stem(rec.stem, &rec.label, &rec.impression)) continue;
    rec.source_tag = tag;
    rec.path = file.string();
    fs::path sidecar = file;
    sidecar.replace_extension(".min");
    if (fs::exists(sidecar)) rec.minutiae_path = sidecar.string();
    out->push_back(std::move(rec));
  }
}

std::string dir_tag(const fs::path& p) {
  const std::string name = p.filename().string();
  return name.empty() ? p.parent_path().filename().string() : name;
}

}  // namespace

std::string dataset_layout_name(DatasetLayout layout) {
  switch (layout) {
    case DatasetLayout::kFvc: return "fvc";
    case DatasetLayout::kMolf: return "molf";
    case DatasetLayout::kFlat: return "flat";
    case DatasetLayout::kSynthetic: return "synthetic";
  }
  return "flat";
}

DatasetLayout dataset_layout_from_name(const std::string& name) {
  if (name == "fvc") return DatasetLayout::kFvc;
  if (name == "molf") return DatasetLayout::kMolf;
  if (name == "flat") return DatasetLayout::kFlat;
  if (name == "synthetic") return DatasetLayout::kSynthetic;
  fail(ErrorKind::kConfig, "unknown dataset layout '" + name + "'");
}

DatasetIndex load_dataset(const std::string& root, DatasetLayout layout) {
  FPEMB_CHECK(layout != DatasetLayout::kSynthetic, ErrorKind::kConfig,
              "synthetic datasets are built from seeds, not a directory");
  const fs::path root_path(root);
  FPEMB_CHECK(fs::exists(root_path) && fs::is_directory(root_path),
              ErrorKind::kInput, "dataset directory not found: " + root);

  std::vector<RawRecord> raw;
  if (layout == DatasetLayout::kMolf) {
    std::vector<fs::path> dbs;
    for (const auto& entry : fs::directory_iterator(root_path))
      if (entry.is_directory()) dbs.push_back(entry.path());
    std::sort(dbs.begin(), dbs.end());
    for (const fs::path& db : dbs) scan_directory(db, dir_tag(db), &raw);
  } else {
    scan_directory(root_path, dir_tag(fs::absolute(root_path)), &raw);
  }
  FPEMB_CHECK(!raw.empty(), ErrorKind::kEmptyDataset,
              "no fingerprint images found under " + root);

  std::set<std::string> dup_guard;
  std::set<std::string> labels;
  for (const RawRecord& rec : raw) {
    const std::string key =
        rec.source_tag + "\x1f" + rec.label + "\x1f" + std::to_string(rec.impression);
    FPEMB_CHECK(dup_guard.insert(key).second, ErrorKind::kFormat,
                "duplicate impression " + std::to_string(rec.impression) +
                    " for finger " + rec.label + " in " + rec.source_tag);
    labels.insert(rec.label);
  }

  // Contiguous relabeling: numeric order when every label is numeric,
  // otherwise lexicographic.
  std::vector<std::string> ordered(labels.begin(), labels.end());
  const bool numeric = std::all_of(ordered.begin(), ordered.end(), all_digits);
  if (numeric) {
    std::sort(ordered.begin(), ordered.end(),
              [](const std::string& a, const std::string& b) {
                const long av = std::stol(a), bv = std::stol(b);
                return av != bv ? av < bv : a < b;
              });
  }
  std::map<std::string, int> label_to_id;
  for (size_t i = 0; i < ordered.size(); ++i)
    label_to_id[ordered[i]] = static_cast<int>(i);

  DatasetIndex index;
  index.layout = layout;
  index.root = root;
  index.class_count = static_cast<int>(ordered.size());
  index.records.reserve(raw.size());
  for (RawRecord& rec : raw) {
    DatasetRecord out;
    out.finger_id = label_to_id.at(rec.label);
    out.impression_id = rec.impression;
    out.label = std::move(rec.label);
    out.source_tag = rec.source_tag;
    out.image_id = rec.source_tag + "/" + rec.stem;
    out.path = std::move(rec.path);
    out.minutiae_path = std::move(rec.minutiae_path);
    index.records.push_back(std::move(out));
  }
  std::sort(index.records.begin(), index.records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) {
              if (a.finger_id != b.finger_id) return a.finger_id < b.finger_id;
              if (a.impression_id != b.impression_id)
                return a.impression_id < b.impression_id;
              return a.source_tag < b.source_tag;
            });
  return index;
}

DatasetIndex make_synthetic_index(int fingers, int impressions,
                                  std::uint64_t base_seed,
                                  const SynthSpec& spec) {
  FPEMB_CHECK(fingers >= 1 && impressions >= 1, ErrorKind::kParameter,
              "synthetic index needs at least one finger and impression");
  validate_synth_spec(spec);
  DatasetIndex index;
  index.layout = DatasetLayout::kSynthetic;
  index.class_count = fingers;
  index.synth = spec;
  index.records.reserve(static_cast<size_t>(fingers) * impressions);
  for (int f = 0; f < fingers; ++f) {
    const std::uint64_t finger_seed = Rng::mix(base_seed, f + 1);
    for (int i = 1; i <= impressions; ++i) {
      DatasetRecord rec;
      rec.finger_id = f;
      rec.impression_id = i;
      rec.label = std::to_string(f + 1);
      rec.source_tag = "synthetic";
      rec.image_id =
          "synthetic/f" + rec.label + "_i" + std::to_string(i);
      rec.finger_seed = finger_seed;
      rec.impression_seed = Rng::mix(finger_seed, i);
      index.records.push_back(std::move(rec));
    }
  }
  return index;
}

std::pair<DatasetIndex, DatasetIndex> split_train_val(const DatasetIndex& index,
                                                      int impressions_for_val) {
  FPEMB_CHECK(impressions_for_val >= 0, ErrorKind::kParameter,
              "validation impression count must be nonnegative");
  DatasetIndex train = index, val = index;
  train.records.clear();
  val.records.clear();
  if (impressions_for_val == 0) {
    train.records = index.records;
    return {std::move(train), std::move(val)};
  }
  std::map<std::pair<int, std::string>, std::vector<DatasetRecord>> groups;
  for (const DatasetRecord& rec : index.records)
    groups[{rec.finger_id, rec.source_tag}].push_back(rec);
  for (auto& [key, recs] : groups) {
    FPEMB_CHECK(static_cast<int>(recs.size()) > impressions_for_val,
                ErrorKind::kSplit,
                "finger " + recs.front().label + " in " + key.second + " has " +
                    std::to_string(recs.size()) +
                    " impressions, too few to hold out " +
                    std::to_string(impressions_for_val));
    std::sort(recs.begin(), recs.end(),
              [](const DatasetRecord& a, const DatasetRecord& b) {
                return a.impression_id < b.impression_id;
              });
    const size_t cut = recs.size() - impressions_for_val;
    for (size_t i = 0; i < recs.size(); ++i)
      (i < cut ? train : val).records.push_back(recs[i]);
  }
  auto order = [](const DatasetRecord& a, const DatasetRecord& b) {
    if (a.finger_id != b.finger_id) return a.finger_id < b.finger_id;
    if (a.impression_id != b.impression_id)
      return a.impression_id < b.impression_id;
    return a.source_tag < b.source_tag;
  };
  std::sort(train.records.begin(), train.records.end(), order);
  std::sort(val.records.begin(), val.records.end(), order);
  return {std::move(train), std::move(val)};
}

FingerprintImage load_record_image(const DatasetIndex& index,
                                   const DatasetRecord& record) {
  FingerprintImage img(1, 1);
  if (index.layout == DatasetLayout::kSynthetic) {
    img = generate_synthetic_fingerprint(record.finger_seed,
                                         record.impression_seed, index.synth)
              .first;
  } else {
    img = read_pgm(record.path);
  }
  FPEMB_CHECK(img.height >= 32 && img.width >= 32, ErrorKind::kData,
              "image " + record.image_id + " is smaller than 32x32 (" +
                  std::to_string(img.width) + "x" + std::to_string(img.height) +
                  ")");
  img.finger_id = record.finger_id;
  img.impression_id = record.impression_id;
  img.source_tag = record.source_tag;
  img.image_id = record.image_id;
  return img;
}

bool record_has_minutiae(const DatasetIndex& index,
                         const DatasetRecord& record) {
  return index.layout == DatasetLayout::kSynthetic ||
         !record.minutiae_path.empty();
}

MinutiaSet load_record_minutiae(const DatasetIndex& index,
                                const DatasetRecord& record) {
  if (index.layout == DatasetLayout::kSynthetic) {
    MinutiaSet set = generate_synthetic_minutiae(
        record.finger_seed, record.impression_seed, index.synth);
    set.image_ref = record.image_id;
    return set;
  }
  FPEMB_CHECK(!record.minutiae_path.empty(), ErrorKind::kInput,
              "no minutia annotations for image " + record.image_id);
  MinutiaSet set = parse_minutiae_file(record.minutiae_path);
  set.image_ref = record.image_id;
  return set;
}

}  // namespace fpemb
