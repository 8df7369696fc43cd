#include "twins/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "twins/binary_io.hpp"
#include "twins/rng.hpp"

namespace twins {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

void collect_class_names(DatasetManifest& m) {
  std::set<std::string> labels;
  for (const ManifestEntry& e : m.entries)
    if (!e.label.empty()) labels.insert(e.label);
  m.class_names.assign(labels.begin(), labels.end());
}

DatasetManifest load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  bool first = true;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (first) {
      first = false;
      if (fields.size() >= 1 && fields[0] == "path") continue;  // header
    }
    if (fields.size() != 3)
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 3 fields (path,label,split), got " +
                      std::to_string(fields.size()));
    m.entries.push_back({fields[0], fields[1], fields[2]});
  }
  return m;
}

DatasetManifest load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
  DatasetManifest m;
  try {
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.path = je.at("path").get<std::string>();
      e.label = je.value("label", std::string{});
      e.split = je.at("split").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed manifest: " + e.what());
  }
  return m;
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  DatasetManifest m =
      path.extension() == ".json" ? load_json(path) : load_csv(path);
  m.base_dir = path.parent_path();
  m.id = path.stem().string();
  for (const ManifestEntry& e : m.entries) {
    if (e.path.empty()) throw DataError(path.string() + ": entry with empty path");
    if (e.split != "train" && e.split != "test")
      throw DataError(path.string() + ": unknown split '" + e.split +
                      "' (want train or test)");
  }
  collect_class_names(m);
  return m;
}

void DatasetManifest::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot create manifest " + path.string());
  out << "path,label,split\n";
  for (const ManifestEntry& e : entries)
    out << e.path << ',' << e.label << ',' << e.split << '\n';
  if (!out) throw DataError("short write to " + path.string());
}

int DatasetManifest::class_index(const std::string& label) const {
  auto it = std::lower_bound(class_names.begin(), class_names.end(), label);
  if (it == class_names.end() || *it != label)
    throw DataError("label '" + label + "' is not in the manifest's class set");
  return static_cast<int>(it - class_names.begin());
}

std::vector<size_t> DatasetManifest::split_indices(const std::string& split) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

void DatasetManifest::validate(bool require_labels) const {
  if (entries.empty()) throw DataError("manifest is empty");
  std::set<std::pair<std::string, std::string>> seen;
  for (const ManifestEntry& e : entries) {
    if (!seen.insert({e.split, e.path}).second)
      throw DataError("duplicate path in split '" + e.split + "': " + e.path);
    if (require_labels && e.label.empty())
      throw DataError("unlabeled entry in a labeled dataset: " + e.path);
  }
  if (split_indices("train").empty()) throw DataError("manifest has no train entries");
  if (require_labels && split_indices("test").empty())
    throw DataError("labeled manifest has no test entries");
}

int64_t subsample_count(int64_t class_count, double fraction) {
  if (class_count <= 0) return 0;
  const auto k =
      static_cast<int64_t>(std::floor(fraction * static_cast<double>(class_count) + 0.5));
  return std::max<int64_t>(int64_t{1}, std::min(k, class_count));
}

DatasetManifest subsample(const DatasetManifest& manifest, double fraction, uint64_t seed,
                          SubsampleMode mode) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw SubsampleError("fraction must be in (0, 1], got " + std::to_string(fraction));

  // Group train entries by label, in manifest order.
  std::map<std::string, std::vector<size_t>> by_class;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    if (e.split != "train") continue;
    if (e.label.empty())
      throw SubsampleError("cannot stratify: unlabeled train entry " + e.path);
    by_class[e.label].push_back(i);
  }
  if (by_class.empty()) throw SubsampleError("no labeled train entries to subsample");

  std::set<size_t> keep;
  for (auto& [label, idxs] : by_class) {
    const int64_t k = subsample_count(static_cast<int64_t>(idxs.size()), fraction);
    if (k <= 0)
      throw SubsampleError("class '" + label + "' would be empty after subsampling");
    // Nested mode keys each class stream by label only, so smaller fractions
    // select a prefix of what larger fractions select. Independent mode also
    // mixes the fraction into the stream, decoupling the draws.
    uint64_t fraction_bits = 0;
    std::memcpy(&fraction_bits, &fraction, sizeof(fraction));
    const uint64_t stream =
        mode == SubsampleMode::kNested
            ? mix_seed({seed, io::fnv1a64(label)})
            : mix_seed({seed, io::fnv1a64(label), fraction_bits});
    Rng rng(stream);
    std::vector<size_t> order = idxs;
    // Fisher-Yates prefix of length k.
    for (size_t i = 0; i < static_cast<size_t>(k); ++i) {
      const size_t j = i + static_cast<size_t>(rng.below(order.size() - i));
      std::swap(order[i], order[j]);
    }
    order.resize(static_cast<size_t>(k));
    keep.insert(order.begin(), order.end());
  }

  DatasetManifest out;
  out.base_dir = manifest.base_dir;
  out.id = manifest.id;
  out.class_names = manifest.class_names;
  for (size_t i = 0; i < manifest.entries.size(); ++i) {
    if (manifest.entries[i].split != "train" || keep.count(i))
      out.entries.push_back(manifest.entries[i]);
  }
  return out;
}

}  // namespace twins
