#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cite/geometry.hpp"
#include "cite/matrix.hpp"

namespace cite {

// Feature rows plus their ids. On disk: "CITEFEAT", u32 version, u64 rows,
// u64 cols, row-major little-endian f32 payload; ids in a sidecar JSON
// array (<stem>.ids.json) ordered by row.
struct FeatureStore {
  Matrix rows;
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;

  std::size_t dim() const { return rows.cols(); }
  std::size_t size() const { return rows.rows(); }
  void rebuild_index();
};

inline constexpr std::uint32_t kFeatureVersion = 1;

std::filesystem::path feature_ids_path(const std::filesystem::path& bin_path);
// Values are rounded to f32 on write.
void save_features(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore load_features(const std::filesystem::path& path);

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);

struct PhraseSample {
  std::string phrase_id;
  std::string image_id;
  std::size_t image_index = 0;
  std::string text;
  std::string category;        // empty when unknown
  std::optional<int> latent_concept;  // latent concept (synthetic data only)
  std::size_t feature_row = 0;
  std::vector<BBox> gt_boxes;
  BBox gt_union;
  Split split = Split::kTrain;
};

struct ImageRecord {
  std::string id;
  ImageSize size;
  std::vector<BBox> proposals;
  std::vector<std::size_t> proposal_rows;  // rows of the region feature store
};

// One line of an annotation file.
struct AnnotationRecord {
  std::string image_id;
  ImageSize size;
  std::string phrase_id;
  std::string phrase_text;
  std::string category;
  std::optional<int> latent_concept;
  std::size_t feature_row = 0;
  std::vector<BBox> gt_boxes;
  std::size_t line = 0;
};

struct ProposalRecord {
  std::string image_id;
  std::vector<BBox> boxes;
  std::vector<std::size_t> feature_rows;
  std::size_t line = 0;
};

// JSON lines {image_id, W, H, phrase_id, phrase_text, category?, concept?,
// feature_row, gt_boxes: [[x1,y1,x2,y2],...]}. DataError with the line
// number on malformed input, ValidationError-derived message on bad boxes.
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
// JSON lines {image_id, boxes: [...], feature_rows: [...]}.
std::vector<ProposalRecord> load_proposals(const std::filesystem::path& path);

struct GroundingDataset {
  FeatureStore region_features;
  FeatureStore phrase_features;
  std::vector<ImageRecord> images;
  std::map<std::string, std::size_t> image_index;
  std::vector<PhraseSample> phrases;
  // Coarse dictionary shipped with the data (category -> phrases), if any.
  std::map<std::string, std::vector<std::string>> coarse_dictionary;

  std::vector<std::size_t> split_indices(Split s) const;
  bool has_split(Split s) const { return !split_indices(s).empty(); }
  // IntegrityError on dangling references, inconsistent image sizes,
  // duplicate phrase ids or images shared between splits.
  void validate() const;
};

// Builds a dataset from parsed records and validates it.
GroundingDataset assemble_dataset(FeatureStore regions, FeatureStore phrases,
                                  const std::vector<ProposalRecord>& proposals,
                                  const std::map<Split, std::vector<AnnotationRecord>>& annotations);

// Directory layout: region_features.bin, phrase_features.bin (+ ids
// sidecars), proposals.jsonl, {train,val,test}.jsonl, optional
// coarse_dictionary.json. Missing split files mean an empty split.
GroundingDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const GroundingDataset& ds, const std::filesystem::path& dir);

// Region feature row of every proposal of an image with the spatial
// encoding appended.
Matrix region_inputs(const GroundingDataset& ds, std::size_t image, SpatialEncoding enc,
                     std::size_t max_proposals = 0);

// Number of proposals considered for an image under a per-image cap (0 = all).
inline std::size_t proposal_budget(const ImageRecord& img, std::size_t max_proposals) {
  return max_proposals == 0 ? img.proposals.size() : std::min(img.proposals.size(), max_proposals);
}

}  // namespace cite
