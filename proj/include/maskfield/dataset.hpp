#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskfield/camera.hpp"
#include "maskfield/grid_field.hpp"
#include "maskfield/losses.hpp"

namespace maskfield {

/// One supervision mask: binary H*W plus its pooled unit embedding.
struct MaskRecord {
  std::vector<std::uint8_t> mask;
  std::vector<float> embedding;

  bool operator==(const MaskRecord&) const = default;
};

struct ViewRecord {
  int view_id = 0;
  int camera = 0;
  std::string split = "train";  // "train" or "test"
  int channels = 3;             // 3 = RGB, 4 = RGB + coverage alpha
  std::vector<float> image;     // H*W*channels
  std::vector<MaskRecord> masks;
  std::vector<std::int32_t> gt_labels;     // optional, H*W class ids, -1 background
  std::vector<std::int32_t> gt_instances;  // optional
  std::vector<std::int32_t> gt_parts;      // optional

  bool operator==(const ViewRecord&) const = default;
};

/// Named unit embeddings (rows) of one dimension.
struct EmbeddingTable {
  std::vector<std::string> names;
  std::vector<float> values;  // names.size() * d_s

  std::size_t rows() const { return names.size(); }
  bool operator==(const EmbeddingTable&) const = default;
};

struct SceneDataset {
  std::string name = "scene";
  int d_s = 0;
  int width = 0;
  int height = 0;
  Aabb bounds;
  std::vector<CameraModel> cameras;
  std::vector<ViewRecord> views;
  EmbeddingTable classes;
  EmbeddingTable canonicals;

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  std::vector<int> views_in_split(const std::string& split) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < views.size(); ++i)
      if (views[i].split == split) out.push_back(static_cast<int>(i));
    return out;
  }

  /// Supervision for view `v` in the loss-ready layout.
  MaskSet mask_set(int v) const {
    const ViewRecord& rec = views[static_cast<std::size_t>(v)];
    MaskSet ms;
    ms.view_id = rec.view_id;
    ms.height = height;
    ms.width = width;
    ms.d_s = d_s;
    for (const MaskRecord& m : rec.masks) {
      ms.masks.insert(ms.masks.end(), m.mask.begin(), m.mask.end());
      ms.embeddings.insert(ms.embeddings.end(), m.embedding.begin(), m.embedding.end());
    }
    return ms;
  }
};

inline bool operator==(const CameraModel& a, const CameraModel& b) {
  return a.rotation == b.rotation && a.translation == b.translation && a.focal_px == b.focal_px &&
         a.width == b.width && a.height == b.height && a.near == b.near && a.far == b.far;
}

inline bool operator==(const SceneDataset& a, const SceneDataset& b) {
  return a.name == b.name && a.d_s == b.d_s && a.width == b.width && a.height == b.height && a.bounds == b.bounds &&
         a.cameras == b.cameras && a.views == b.views && a.classes == b.classes && a.canonicals == b.canonicals;
}

}  // namespace maskfield
