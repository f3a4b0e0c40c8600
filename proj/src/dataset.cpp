#include "cite/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cite/binary_io.hpp"
#include "cite/error.hpp"

namespace cite {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'I', 'T', 'E', 'F', 'E', 'A', 'T'};

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

BBox parse_box(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 4) throw DataError(ctx + ": box must be [x1,y1,x2,y2]");
  for (const auto& v : j) {
    if (!v.is_number()) throw DataError(ctx + ": box coordinates must be numbers");
  }
  BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  try {
    validate_box(b);
  } catch (const ValidationError& e) {
    throw ValidationError(ctx + ": " + e.what());
  }
  return b;
}

template <typename T>
T field(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(ctx + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError(ctx + ": field '" + key + "' has the wrong type");
  }
}

// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError(where(path, line) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where(path, line) + ": expected a JSON object");
    fn(j, line);
  }
}

void write_json_line(std::ostream& out, const json& j) { out << j.dump() << "\n"; }

json box_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

}  // namespace

void FeatureStore::rebuild_index() {
  index.clear();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!index.emplace(ids[i], i).second) throw IntegrityError("duplicate feature id " + ids[i]);
  }
}

fs::path feature_ids_path(const fs::path& bin_path) {
  fs::path p = bin_path;
  p.replace_extension(".ids.json");
  return p;
}

void save_features(const FeatureStore& store, const fs::path& path) {
  if (store.ids.size() != store.size()) {
    throw DimensionError("feature store has " + std::to_string(store.size()) + " rows but " +
                         std::to_string(store.ids.size()) + " ids");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 8);
  binio::write<std::uint32_t>(out, kFeatureVersion);
  binio::write<std::uint64_t>(out, store.rows.rows());
  binio::write<std::uint64_t>(out, store.rows.cols());
  for (double v : store.rows.data()) binio::write<float>(out, static_cast<float>(v));
  if (!out) throw DataError("failed writing " + path.string());

  std::ofstream ids(feature_ids_path(path), std::ios::trunc);
  if (!ids) throw DataError("cannot write " + feature_ids_path(path).string());
  ids << json(store.ids).dump() << "\n";
}

FeatureStore load_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  binio::Reader r(in, "feature file " + path.string(), fs::file_size(path));
  if (r.read_string(8) != std::string(kMagic, 8)) {
    throw CorruptionError("feature file " + path.string() + ": bad magic");
  }
  const auto version = r.read<std::uint32_t>();
  if (version != kFeatureVersion) {
    throw CorruptionError("feature file " + path.string() + ": unsupported version " +
                          std::to_string(version));
  }
  const auto rows = r.read<std::uint64_t>();
  const auto cols = r.read<std::uint64_t>();
  if (cols == 0) throw CorruptionError("feature file " + path.string() + ": dimension 0");
  const std::uint64_t payload = rows * cols * sizeof(float);
  if (r.offset() + payload != r.total()) {
    throw CorruptionError("feature file " + path.string() + ": expected " +
                          std::to_string(r.offset() + payload) + " bytes, file has " +
                          std::to_string(r.total()));
  }
  FeatureStore store;
  store.rows = Matrix(rows, cols);
  for (double& v : store.rows.data()) v = r.read<float>();

  const fs::path ids_path = feature_ids_path(path);
  std::ifstream ids_in(ids_path);
  if (!ids_in) throw DataError("cannot open feature ids " + ids_path.string());
  json ids;
  try {
    ids_in >> ids;
    store.ids = ids.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(ids_path.string() + ": " + e.what());
  }
  if (store.ids.size() != rows) {
    throw IntegrityError(ids_path.string() + ": " + std::to_string(store.ids.size()) +
                         " ids for " + std::to_string(rows) + " rows");
  }
  store.rebuild_index();
  return store;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<AnnotationRecord> load_annotations(const fs::path& path) {
  std::vector<AnnotationRecord> out;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    const std::string ctx = where(path, line);
    AnnotationRecord rec;
    rec.line = line;
    rec.image_id = field<std::string>(j, "image_id", ctx);
    rec.size = {field<double>(j, "W", ctx), field<double>(j, "H", ctx)};
    if (!(rec.size.width > 0 && rec.size.height > 0)) {
      throw ValidationError(ctx + ": image size must be positive");
    }
    rec.phrase_id = field<std::string>(j, "phrase_id", ctx);
    rec.phrase_text = field<std::string>(j, "phrase_text", ctx);
    if (j.contains("category")) rec.category = field<std::string>(j, "category", ctx);
    if (j.contains("concept")) rec.latent_concept = field<int>(j, "concept", ctx);
    const auto row = field<long long>(j, "feature_row", ctx);
    if (row < 0) throw DataError(ctx + ": negative feature_row");
    rec.feature_row = static_cast<std::size_t>(row);
    const json boxes = field<json>(j, "gt_boxes", ctx);
    if (!boxes.is_array() || boxes.empty()) throw DataError(ctx + ": gt_boxes must be a non-empty list");
    for (const auto& b : boxes) rec.gt_boxes.push_back(parse_box(b, ctx));
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<ProposalRecord> load_proposals(const fs::path& path) {
  std::vector<ProposalRecord> out;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    const std::string ctx = where(path, line);
    ProposalRecord rec;
    rec.line = line;
    rec.image_id = field<std::string>(j, "image_id", ctx);
    const json boxes = field<json>(j, "boxes", ctx);
    const json rows = field<json>(j, "feature_rows", ctx);
    if (!boxes.is_array() || !rows.is_array() || boxes.size() != rows.size()) {
      throw DataError(ctx + ": boxes and feature_rows must be lists of equal length");
    }
    for (const auto& b : boxes) rec.boxes.push_back(parse_box(b, ctx));
    for (const auto& r : rows) {
      if (!r.is_number_unsigned()) throw DataError(ctx + ": feature_rows must be non-negative integers");
      rec.feature_rows.push_back(r.get<std::size_t>());
    }
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<std::size_t> GroundingDataset::split_indices(Split s) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    if (phrases[i].split == s) idx.push_back(i);
  }
  return idx;
}

void GroundingDataset::validate() const {
  if (region_features.ids.size() != region_features.size() ||
      phrase_features.ids.size() != phrase_features.size()) {
    throw IntegrityError("feature store ids do not match row counts");
  }
  for (const auto& img : images) {
    if (img.proposals.size() != img.proposal_rows.size()) {
      throw IntegrityError("image " + img.id + ": proposal/feature row count mismatch");
    }
    for (std::size_t row : img.proposal_rows) {
      if (row >= region_features.size()) {
        throw IntegrityError("image " + img.id + ": region feature row " + std::to_string(row) +
                             " out of range (" + std::to_string(region_features.size()) + " rows)");
      }
    }
  }
  std::set<std::string> phrase_ids;
  std::map<std::size_t, Split> image_split;
  for (const auto& p : phrases) {
    if (!phrase_ids.insert(p.phrase_id).second) throw IntegrityError("duplicate phrase id " + p.phrase_id);
    if (p.image_index >= images.size() || images[p.image_index].id != p.image_id) {
      throw IntegrityError("phrase " + p.phrase_id + ": unknown image " + p.image_id);
    }
    if (p.feature_row >= phrase_features.size()) {
      throw IntegrityError("phrase " + p.phrase_id + ": phrase feature row " +
                           std::to_string(p.feature_row) + " out of range (" +
                           std::to_string(phrase_features.size()) + " rows)");
    }
    if (p.gt_boxes.empty()) throw IntegrityError("phrase " + p.phrase_id + ": no ground-truth boxes");
    auto [it, fresh] = image_split.emplace(p.image_index, p.split);
    if (!fresh && it->second != p.split) {
      throw IntegrityError("image " + p.image_id + " appears in both " + split_name(it->second) +
                           " and " + split_name(p.split));
    }
  }
}

GroundingDataset assemble_dataset(FeatureStore regions, FeatureStore phrases,
                                  const std::vector<ProposalRecord>& proposals,
                                  const std::map<Split, std::vector<AnnotationRecord>>& annotations) {
  GroundingDataset ds;
  ds.region_features = std::move(regions);
  ds.phrase_features = std::move(phrases);

  auto image_for = [&](const std::string& id) -> std::size_t {
    auto [it, fresh] = ds.image_index.emplace(id, ds.images.size());
    if (fresh) ds.images.push_back(ImageRecord{id, {}, {}, {}});
    return it->second;
  };

  for (const auto& [split, records] : annotations) {
    for (const auto& rec : records) {
      const std::size_t ii = image_for(rec.image_id);
      ImageRecord& img = ds.images[ii];
      if (img.size.width == 0) {
        img.size = rec.size;
      } else if (img.size.width != rec.size.width || img.size.height != rec.size.height) {
        throw IntegrityError("phrase " + rec.phrase_id + ": image " + rec.image_id +
                             " has inconsistent size");
      }
      if (rec.feature_row >= ds.phrase_features.size()) {
        throw IntegrityError("phrase " + rec.phrase_id + " (line " + std::to_string(rec.line) +
                             "): dangling phrase feature row " + std::to_string(rec.feature_row));
      }
      PhraseSample p;
      p.phrase_id = rec.phrase_id;
      p.image_id = rec.image_id;
      p.image_index = ii;
      p.text = rec.phrase_text;
      p.category = rec.category;
      p.latent_concept = rec.latent_concept;
      p.feature_row = rec.feature_row;
      p.gt_boxes = rec.gt_boxes;
      p.gt_union = union_box(p.gt_boxes);
      p.split = split;
      ds.phrases.push_back(std::move(p));
    }
  }
  for (const auto& rec : proposals) {
    auto it = ds.image_index.find(rec.image_id);
    // Proposals for images without phrases are not needed.
    if (it == ds.image_index.end()) continue;
    ImageRecord& img = ds.images[it->second];
    if (!img.proposals.empty()) {
      throw IntegrityError("proposals for image " + rec.image_id + " listed twice (line " +
                           std::to_string(rec.line) + ")");
    }
    for (std::size_t row : rec.feature_rows) {
      if (row >= ds.region_features.size()) {
        throw IntegrityError("proposals line " + std::to_string(rec.line) +
                             ": dangling region feature row " + std::to_string(row));
      }
    }
    img.proposals = rec.boxes;
    img.proposal_rows = rec.feature_rows;
  }
  ds.validate();
  return ds;
}

namespace {

const std::array<Split, 3> kSplits = {Split::kTrain, Split::kVal, Split::kTest};

}  // namespace

GroundingDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  FeatureStore regions = load_features(dir / "region_features.bin");
  FeatureStore phrases = load_features(dir / "phrase_features.bin");
  const fs::path prop_path = dir / "proposals.jsonl";
  if (!fs::exists(prop_path)) throw DataError("missing proposals file " + prop_path.string());
  auto proposals = load_proposals(prop_path);
  std::map<Split, std::vector<AnnotationRecord>> annotations;
  for (Split s : kSplits) {
    const fs::path p = dir / (std::string(split_name(s)) + ".jsonl");
    if (fs::exists(p)) annotations[s] = load_annotations(p);
  }
  GroundingDataset ds = assemble_dataset(std::move(regions), std::move(phrases), proposals, annotations);
  const fs::path dict = dir / "coarse_dictionary.json";
  if (fs::exists(dict)) {
    std::ifstream in(dict);
    try {
      ds.coarse_dictionary = json::parse(in).get<std::map<std::string, std::vector<std::string>>>();
    } catch (const json::exception& e) {
      throw DataError(dict.string() + ": " + e.what());
    }
  }
  return ds;
}

void save_dataset(const GroundingDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  save_features(ds.region_features, dir / "region_features.bin");
  save_features(ds.phrase_features, dir / "phrase_features.bin");
  {
    std::ofstream out(dir / "proposals.jsonl", std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "proposals.jsonl").string());
    for (const auto& img : ds.images) {
      json boxes = json::array();
      for (const auto& b : img.proposals) boxes.push_back(box_json(b));
      write_json_line(out, {{"image_id", img.id}, {"boxes", boxes}, {"feature_rows", img.proposal_rows}});
    }
  }
  for (Split s : kSplits) {
    const fs::path path = dir / (std::string(split_name(s)) + ".jsonl");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& p : ds.phrases) {
      if (p.split != s) continue;
      const ImageRecord& img = ds.images[p.image_index];
      json boxes = json::array();
      for (const auto& b : p.gt_boxes) boxes.push_back(box_json(b));
      json j = {{"image_id", p.image_id}, {"W", img.size.width}, {"H", img.size.height},
                {"phrase_id", p.phrase_id}, {"phrase_text", p.text}};
      if (!p.category.empty()) j["category"] = p.category;
      if (p.latent_concept) j["concept"] = *p.latent_concept;
      j["feature_row"] = p.feature_row;
      j["gt_boxes"] = boxes;
      write_json_line(out, j);
    }
  }
  if (!ds.coarse_dictionary.empty()) {
    std::ofstream out(dir / "coarse_dictionary.json", std::ios::trunc);
    out << json(ds.coarse_dictionary).dump(1) << "\n";
  }
}

Matrix region_inputs(const GroundingDataset& ds, std::size_t image, SpatialEncoding enc,
                     std::size_t max_proposals) {
  const ImageRecord& img = ds.images.at(image);
  const std::size_t n = proposal_budget(img, max_proposals);
  const std::size_t d = ds.region_features.dim();
  const std::size_t s = spatial_dims(enc);
  Matrix out(n, d + s);
  for (std::size_t i = 0; i < n; ++i) {
    auto src = ds.region_features.rows.row(img.proposal_rows[i]);
    auto dst = out.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    if (enc == SpatialEncoding::kFlickr) {
      const auto e = encode_spatial_flickr(img.proposals[i], img.size);
      std::copy(e.begin(), e.end(), dst.begin() + static_cast<std::ptrdiff_t>(d));
    } else if (enc == SpatialEncoding::kReferIt) {
      const auto e = encode_spatial_referit(img.proposals[i], img.size);
      std::copy(e.begin(), e.end(), dst.begin() + static_cast<std::ptrdiff_t>(d));
    }
  }
  return out;
}

}  // namespace cite
