#pragma once

#include <array>
#include <bit>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "maskfield/dataset.hpp"
#include "maskfield/field.hpp"
#include "maskfield/trainer.hpp"

namespace maskfield {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- bytes

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

/// Bounds-checked little-endian reader over a byte buffer. `context` (a path
/// usually) prefixes every error.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context) : data_(data), ctx_(std::move(context)) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ValidationError(ctx_ + ": file is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    const std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  const std::string& context() const { return ctx_; }

 private:
  std::string_view data_;
  std::string ctx_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

// ---------------------------------------------------------------- tensors

/// "MFT1" tensor files: magic, u32 dtype tag, u32 rank, rank x u32 dims,
/// row-major little-endian payload.
enum class DType : std::uint32_t { kF32 = 0, kF64 = 1, kI32 = 2, kU8 = 3 };

inline constexpr char kTensorMagic[4] = {'M', 'F', 'T', '1'};

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kF32;
  else if constexpr (std::is_same_v<T, double>) return DType::kF64;
  else if constexpr (std::is_same_v<T, std::int32_t>) return DType::kI32;
  else {
    static_assert(std::is_same_v<T, std::uint8_t>, "unsupported tensor element type");
    return DType::kU8;
  }
}

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::kF32: return "float32";
    case DType::kF64: return "float64";
    case DType::kI32: return "int32";
    case DType::kU8: return "uint8";
  }
  return "unknown";
}

using Dims = std::vector<std::uint32_t>;

inline std::size_t dims_count(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

inline std::string dims_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

template <class T>
void append_tensor(std::string& out, std::span<const T> data, const Dims& dims) {
  require(dims_count(dims) == data.size(), "tensor: dims " + dims_string(dims) + " do not match " +
                                               std::to_string(data.size()) + " elements");
  out.append(kTensorMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(dtype_of<T>()));
  detail::put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) detail::put_u32(out, d);
  for (const T& x : data) {
    if constexpr (sizeof(T) == 1) {
      out.push_back(static_cast<char>(x));
    } else if constexpr (sizeof(T) == 4) {
      detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
    } else {
      detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
    }
  }
}

template <class T>
std::vector<T> read_tensor(detail::ByteReader& in, Dims* dims_out = nullptr) {
  const std::string& ctx = in.context();
  if (in.bytes(4) != std::string_view(kTensorMagic, 4)) throw ValidationError(ctx + ": not an MFT1 tensor");
  const auto tag = static_cast<DType>(in.u32());
  if (tag != dtype_of<T>())
    throw ValidationError(ctx + ": tensor dtype is " + dtype_name(tag) + ", expected " + dtype_name(dtype_of<T>()));
  const std::uint32_t rank = in.u32();
  if (rank > 8) throw ValidationError(ctx + ": tensor rank " + std::to_string(rank) + " is unsupported");
  Dims dims(rank);
  for (auto& d : dims) d = in.u32();
  const std::size_t n = dims_count(dims);
  in.need(n * sizeof(T));
  std::vector<T> out(n);
  for (auto& x : out) {
    if constexpr (sizeof(T) == 1) {
      x = static_cast<T>(static_cast<unsigned char>(in.bytes(1)[0]));
    } else if constexpr (sizeof(T) == 4) {
      x = std::bit_cast<T>(in.u32());
    } else {
      x = std::bit_cast<T>(in.u64());
    }
  }
  if (dims_out) *dims_out = std::move(dims);
  return out;
}

template <class T>
void save_tensor(const fs::path& path, std::span<const T> data, const Dims& dims) {
  std::string buf;
  append_tensor<T>(buf, data, dims);
  write_file(path, buf);
}

/// Loads a tensor file; if `expected` is given the dims must match exactly.
template <class T>
std::vector<T> load_tensor(const fs::path& path, Dims* dims_out = nullptr, const Dims* expected = nullptr) {
  const std::string data = read_file(path);
  detail::ByteReader in(data, path.string());
  Dims dims;
  std::vector<T> out = read_tensor<T>(in, &dims);
  if (!in.done()) throw ValidationError(path.string() + ": trailing bytes after tensor payload");
  if (expected && dims != *expected)
    throw ValidationError(path.string() + ": tensor dims " + dims_string(dims) + ", expected " +
                          dims_string(*expected));
  if (dims_out) *dims_out = std::move(dims);
  return out;
}

// ---------------------------------------------------------------- RLE masks

/// Row-major run-length code: u32 H, u32 W, then run lengths alternating
/// 0-run, 1-run, ... starting with a (possibly empty) 0-run.
inline std::string encode_mask_rle(std::span<const std::uint8_t> mask, int height, int width) {
  require(height >= 0 && width >= 0 && mask.size() == static_cast<std::size_t>(height) * width,
          "encode_mask_rle: mask size does not match H*W");
  std::string out;
  detail::put_u32(out, static_cast<std::uint32_t>(height));
  detail::put_u32(out, static_cast<std::uint32_t>(width));
  std::uint8_t cur = 0;
  std::uint32_t run = 0;
  for (std::uint8_t v : mask) {
    require(v <= 1, "encode_mask_rle: mask is not binary");
    if (v != cur) {
      detail::put_u32(out, run);
      cur = v;
      run = 0;
    }
    ++run;
  }
  if (run > 0 || mask.empty()) detail::put_u32(out, run);
  return out;
}

/// Run lengths of an encoded mask (header stripped).
inline std::vector<std::uint32_t> rle_runs(std::string_view bytes, const std::string& context = "rle") {
  detail::ByteReader in(bytes, context);
  in.u32();
  in.u32();
  std::vector<std::uint32_t> runs;
  while (!in.done()) runs.push_back(in.u32());
  return runs;
}

struct DecodedMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;
};

inline DecodedMask decode_mask_rle(std::string_view bytes, const std::string& context = "rle") {
  detail::ByteReader in(bytes, context);
  DecodedMask d;
  const std::uint32_t h = in.u32(), w = in.u32();
  if (h > (1u << 16) || w > (1u << 16)) throw ValidationError(context + ": mask size out of range");
  d.height = static_cast<int>(h);
  d.width = static_cast<int>(w);
  const std::size_t total = static_cast<std::size_t>(h) * w;
  if ((bytes.size() - 8) % 4 != 0) throw ValidationError(context + ": run table is not a multiple of 4 bytes");
  d.mask.reserve(total);
  std::uint8_t cur = 0;
  while (!in.done()) {
    const std::uint32_t run = in.u32();
    if (d.mask.size() + run > total)
      throw ValidationError(context + ": runs exceed H*W = " + std::to_string(total));
    d.mask.insert(d.mask.end(), run, cur);
    cur ^= 1u;
  }
  if (d.mask.size() != total)
    throw ValidationError(context + ": runs sum to " + std::to_string(d.mask.size()) + ", expected H*W = " +
                          std::to_string(total));
  return d;
}

// ---------------------------------------------------------------- JSON pieces

inline json camera_to_json(const CameraModel& c) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(c.rotation(i, j));
  return {{"rotation", r},
          {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
          {"focal_px", c.focal_px},
          {"width", c.width},
          {"height", c.height},
          {"near", c.near},
          {"far", c.far}};
}

inline CameraModel camera_from_json(const json& j) {
  CameraModel c;
  const auto& r = j.at("rotation");
  require(r.size() == 9, "camera: rotation needs 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c.rotation(i, k) = r.at(static_cast<std::size_t>(3 * i + k)).get<double>();
  const auto& t = j.at("translation");
  require(t.size() == 3, "camera: translation needs 3 entries");
  c.translation = Vec3(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
  c.focal_px = j.at("focal_px").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.near = j.at("near").get<double>();
  c.far = j.at("far").get<double>();
  c.validate();
  return c;
}

inline json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline Vec3 vec3_from(const json& j) {
  require(j.is_array() && j.size() == 3, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json config_to_json(const TrainConfig& c) {
  return {{"backend", to_string(c.backend)},
          {"d_m", c.d_m},
          {"d_s", c.d_s},
          {"n_k", c.n_k},
          {"stage1_steps", c.stage1_steps},
          {"stage2_steps", c.stage2_steps},
          {"learning_rate", c.learning_rate},
          {"geometry_learning_rate", c.geometry_learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"seed", c.seed},
          {"n_samples", c.n_samples},
          {"view_fraction", c.view_fraction},
          {"grid_resolution", c.grid_resolution},
          {"splat_count", c.splat_count},
          {"splat_radius", c.splat_radius},
          {"ray_batch", c.ray_batch},
          {"num_freqs", c.num_freqs},
          {"hidden", c.hidden},
          {"lambda_dice", c.loss.lambda_dice},
          {"gamma", c.loss.gamma},
          {"alpha_focal", c.loss.alpha_focal},
          {"w_extra", c.loss.w_extra},
          {"threads", c.threads}};
}

/// Unknown keys are rejected; missing keys keep their defaults.
inline TrainConfig config_from_json(const json& j, const std::string& context = "config") {
  TrainConfig c;
  require(j.is_object(), context + ": expected an object");
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "backend") c.backend = parse_backend(val.get<std::string>());
      else if (key == "d_m") c.d_m = val.get<int>();
      else if (key == "d_s") c.d_s = val.get<int>();
      else if (key == "n_k") c.n_k = val.get<int>();
      else if (key == "stage1_steps") c.stage1_steps = val.get<int>();
      else if (key == "stage2_steps") c.stage2_steps = val.get<int>();
      else if (key == "learning_rate") c.learning_rate = val.get<double>();
      else if (key == "geometry_learning_rate") c.geometry_learning_rate = val.get<double>();
      else if (key == "beta1") c.beta1 = val.get<double>();
      else if (key == "beta2") c.beta2 = val.get<double>();
      else if (key == "epsilon") c.epsilon = val.get<double>();
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "n_samples") c.n_samples = val.get<int>();
      else if (key == "view_fraction") c.view_fraction = val.get<double>();
      else if (key == "grid_resolution") c.grid_resolution = val.get<int>();
      else if (key == "splat_count") c.splat_count = val.get<int>();
      else if (key == "splat_radius") c.splat_radius = val.get<double>();
      else if (key == "ray_batch") c.ray_batch = val.get<int>();
      else if (key == "num_freqs") c.num_freqs = val.get<int>();
      else if (key == "hidden") c.hidden = val.get<int>();
      else if (key == "lambda_dice") c.loss.lambda_dice = val.get<double>();
      else if (key == "gamma") c.loss.gamma = val.get<double>();
      else if (key == "alpha_focal") c.loss.alpha_focal = val.get<double>();
      else if (key == "w_extra") c.loss.w_extra = val.get<double>();
      else if (key == "threads") c.threads = val.get<int>();
      else throw ValidationError(context + ": unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw ValidationError(context + ": bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- datasets

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline std::string view_tag(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03d", id);
  return buf;
}

inline void save_table(const fs::path& dir, const std::string& rel, const EmbeddingTable& t, int d_s, json& out) {
  out = {{"names", t.names}, {"file", rel}};
  save_tensor<float>(dir / rel, t.values, {static_cast<std::uint32_t>(t.rows()), static_cast<std::uint32_t>(d_s)});
}

inline EmbeddingTable load_table(const fs::path& dir, const json& j, int d_s) {
  EmbeddingTable t;
  t.names = j.at("names").get<std::vector<std::string>>();
  const fs::path path = dir / j.at("file").get<std::string>();
  const Dims expected{static_cast<std::uint32_t>(t.names.size()), static_cast<std::uint32_t>(d_s)};
  t.values = load_tensor<float>(path, nullptr, &expected);
  return t;
}

}  // namespace detail

/// Writes `dir/manifest.json` plus one tensor or RLE file per array.
inline void save_dataset(const SceneDataset& ds, const fs::path& dir) {
  require(ds.d_s >= 1 && ds.width >= 1 && ds.height >= 1, "save_dataset: dataset dims must be positive");
  fs::create_directories(dir);
  const auto H = static_cast<std::uint32_t>(ds.height), W = static_cast<std::uint32_t>(ds.width);
  json m;
  m["format_version"] = kDatasetFormatVersion;
  m["name"] = ds.name;
  m["d_s"] = ds.d_s;
  m["width"] = ds.width;
  m["height"] = ds.height;
  m["bounds"] = {{"lo", vec3_json(ds.bounds.lo)}, {"hi", vec3_json(ds.bounds.hi)}};
  m["cameras"] = json::array();
  for (const auto& c : ds.cameras) m["cameras"].push_back(camera_to_json(c));
  m["views"] = json::array();
  for (const ViewRecord& v : ds.views) {
    const std::string tag = detail::view_tag(v.view_id);
    json jv = {{"view_id", v.view_id}, {"camera", v.camera}, {"split", v.split}, {"channels", v.channels}};
    jv["image"] = "images/" + tag + ".mft";
    save_tensor<float>(dir / jv["image"].get<std::string>(), v.image, {H, W, static_cast<std::uint32_t>(v.channels)});
    jv["masks"] = json::array();
    for (std::size_t j = 0; j < v.masks.size(); ++j) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "_%03zu", j);
      const std::string rle = "masks/" + tag + buf + ".rle";
      const std::string emb = "masks/" + tag + buf + "_emb.mft";
      write_file(dir / rle, encode_mask_rle(v.masks[j].mask, ds.height, ds.width));
      save_tensor<float>(dir / emb, v.masks[j].embedding, {static_cast<std::uint32_t>(v.masks[j].embedding.size())});
      jv["masks"].push_back({{"rle", rle}, {"embedding", emb}});
    }
    auto gt = [&](const char* key, const std::vector<std::int32_t>& data) {
      if (data.empty()) return;
      const std::string rel = std::string("gt/") + tag + "_" + key + ".mft";
      save_tensor<std::int32_t>(dir / rel, data, {H, W});
      jv[key] = rel;
    };
    gt("gt_labels", v.gt_labels);
    gt("gt_instances", v.gt_instances);
    gt("gt_parts", v.gt_parts);
    m["views"].push_back(jv);
  }
  json text;
  if (ds.classes.rows() > 0) detail::save_table(dir, "text/classes.mft", ds.classes, ds.d_s, text["classes"]);
  if (ds.canonicals.rows() > 0) detail::save_table(dir, "text/canonicals.mft", ds.canonicals, ds.d_s, text["canonicals"]);
  if (!text.is_null()) m["text_embeddings"] = text;
  write_file(dir / "manifest.json", m.dump(1));
}

/// Loads and validates a dataset directory. Every error names the file and,
/// for per-view records, the view id and mask index.
inline SceneDataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  json m;
  try {
    m = json::parse(read_file(mpath));
  } catch (const json::parse_error& e) {
    throw ValidationError(mpath.string() + ": malformed manifest: " + e.what());
  }
  SceneDataset ds;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kDatasetFormatVersion)
      throw ValidationError(mpath.string() + ": unknown format_version " + std::to_string(version));
    ds.name = m.at("name").get<std::string>();
    ds.d_s = m.at("d_s").get<int>();
    ds.width = m.at("width").get<int>();
    ds.height = m.at("height").get<int>();
    require(ds.d_s >= 1 && ds.width >= 1 && ds.height >= 1, mpath.string() + ": d_s, width and height must be positive");
    ds.bounds.lo = vec3_from(m.at("bounds").at("lo"));
    ds.bounds.hi = vec3_from(m.at("bounds").at("hi"));
    for (const auto& jc : m.at("cameras")) {
      ds.cameras.push_back(camera_from_json(jc));
      const CameraModel& c = ds.cameras.back();
      require(c.width == ds.width && c.height == ds.height,
              mpath.string() + ": camera " + std::to_string(ds.cameras.size() - 1) + " size differs from image size");
    }
    const auto H = static_cast<std::uint32_t>(ds.height), W = static_cast<std::uint32_t>(ds.width);
    for (const auto& jv : m.at("views")) {
      ViewRecord v;
      v.view_id = jv.at("view_id").get<int>();
      const std::string where = mpath.string() + ": view " + std::to_string(v.view_id);
      v.camera = jv.at("camera").get<int>();
      require(v.camera >= 0 && v.camera < static_cast<int>(ds.cameras.size()), where + ": camera index out of range");
      v.split = jv.at("split").get<std::string>();
      require(v.split == "train" || v.split == "test", where + ": split must be train or test");
      v.channels = jv.at("channels").get<int>();
      require(v.channels == 3 || v.channels == 4, where + ": channels must be 3 or 4");
      const Dims img{H, W, static_cast<std::uint32_t>(v.channels)};
      v.image = load_tensor<float>(dir / jv.at("image").get<std::string>(), nullptr, &img);
      std::size_t j = 0;
      for (const auto& jm : jv.at("masks")) {
        const fs::path rle = dir / jm.at("rle").get<std::string>();
        DecodedMask dm = decode_mask_rle(read_file(rle), rle.string());
        require(dm.height == ds.height && dm.width == ds.width,
                rle.string() + ": view " + std::to_string(v.view_id) + " mask " + std::to_string(j) + " is " +
                    std::to_string(dm.height) + "x" + std::to_string(dm.width) + ", image is " +
                    std::to_string(ds.height) + "x" + std::to_string(ds.width));
        const fs::path emb = dir / jm.at("embedding").get<std::string>();
        Dims ed;
        MaskRecord rec{std::move(dm.mask), load_tensor<float>(emb, &ed)};
        require(ed.size() == 1 && ed[0] == static_cast<std::uint32_t>(ds.d_s),
                emb.string() + ": view " + std::to_string(v.view_id) + " mask " + std::to_string(j) +
                    ": embedding dims " + dims_string(ed) + ", expected [" + std::to_string(ds.d_s) + "]");
        v.masks.push_back(std::move(rec));
        ++j;
      }
      const Dims lab{H, W};
      if (jv.contains("gt_labels")) v.gt_labels = load_tensor<std::int32_t>(dir / jv["gt_labels"].get<std::string>(), nullptr, &lab);
      if (jv.contains("gt_instances"))
        v.gt_instances = load_tensor<std::int32_t>(dir / jv["gt_instances"].get<std::string>(), nullptr, &lab);
      if (jv.contains("gt_parts")) v.gt_parts = load_tensor<std::int32_t>(dir / jv["gt_parts"].get<std::string>(), nullptr, &lab);
      ds.views.push_back(std::move(v));
    }
    if (m.contains("text_embeddings")) {
      const auto& t = m["text_embeddings"];
      if (t.contains("classes")) ds.classes = detail::load_table(dir, t["classes"], ds.d_s);
      if (t.contains("canonicals")) ds.canonicals = detail::load_table(dir, t["canonicals"], ds.d_s);
    }
  } catch (const json::exception& e) {
    throw ValidationError(mpath.string() + ": " + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[4] = {'M', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

namespace detail {

struct NamedTensor {
  std::string name;
  std::vector<double> values;
};

inline std::vector<NamedTensor> state_tensors(const TrainState& st) {
  std::vector<NamedTensor> t;
  if (const auto* g = std::get_if<GridField>(&st.model.field)) {
    t.push_back({"field.density", g->density});
    t.push_back({"field.color", g->color});
    t.push_back({"field.mask_feature", g->mask_feature});
  } else {
    const auto& s = std::get<SplatCloud>(st.model.field);
    t.push_back({"field.positions", s.positions});
    t.push_back({"field.radii", s.radii});
    t.push_back({"field.opacities_raw", s.opacities_raw});
    t.push_back({"field.colors", s.colors});
    t.push_back({"field.mask_features", s.mask_features});
  }
  t.push_back({"bank.query_mlp", st.model.bank.query_mlp.params});
  t.push_back({"bank.semantic_mlp", st.model.bank.semantic_mlp.params});
  const std::pair<const char*, const OptimizerState*> opts[] = {{"geometry", &st.opt_geometry},
                                                                {"color", &st.opt_color},
                                                                {"feature", &st.opt_feature},
                                                                {"query", &st.opt_query},
                                                                {"semantic", &st.opt_semantic}};
  for (const auto& [name, o] : opts) {
    t.push_back({std::string("opt.") + name + ".m", o->m});
    t.push_back({std::string("opt.") + name + ".v", o->v});
  }
  return t;
}

}  // namespace detail

inline std::string encode_checkpoint(const TrainConfig& cfg, const TrainState& st) {
  json h;
  h["config"] = config_to_json(cfg);
  h["backend"] = to_string(backend_of(st.model.field));
  if (const auto* g = std::get_if<GridField>(&st.model.field)) {
    h["field"] = {{"resolution", g->resolution},
                  {"lo", vec3_json(g->bounds.lo)},
                  {"hi", vec3_json(g->bounds.hi)},
                  {"d_m", g->d_m}};
  } else {
    const auto& s = std::get<SplatCloud>(st.model.field);
    h["field"] = {{"count", s.count()}, {"d_m", s.d_m}};
  }
  const TokenBank& b = st.model.bank;
  h["bank"] = {{"n_k", b.n_k}, {"num_freqs", b.num_freqs}, {"d_m", b.d_m}, {"d_s", b.d_s}, {"hidden", b.query_mlp.hidden}};
  std::ostringstream rng;
  rng << st.rng;
  h["rng"] = rng.str();
  h["stage1_step"] = st.stage1_step;
  h["stage2_step"] = st.stage2_step;
  const std::pair<const char*, const OptimizerState*> opts[] = {{"geometry", &st.opt_geometry},
                                                                {"color", &st.opt_color},
                                                                {"feature", &st.opt_feature},
                                                                {"query", &st.opt_query},
                                                                {"semantic", &st.opt_semantic}};
  for (const auto& [name, o] : opts) h["optimizers"][name] = {{"step", o->step}, {"skipped", o->skipped}};

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const std::string header = h.dump();
  detail::put_u64(out, header.size());
  out += header;
  const auto tensors = detail::state_tensors(st);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    append_tensor<double>(out, t.values, {static_cast<std::uint32_t>(t.values.size())});
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view data, const std::string& context = "checkpoint") {
  detail::ByteReader in(data, context);
  if (in.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw ValidationError(context + ": not a checkpoint file");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw ValidationError(context + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t hlen = in.u64();
  in.need(static_cast<std::size_t>(hlen));
  json h;
  try {
    h = json::parse(in.bytes(static_cast<std::size_t>(hlen)));
  } catch (const json::parse_error& e) {
    throw ValidationError(context + ": corrupt header: " + e.what());
  }
  Checkpoint ck;
  try {
    ck.config = config_from_json(h.at("config"), context + ": config");
    TrainState& st = ck.state;
    const Backend backend = parse_backend(h.at("backend").get<std::string>());
    const auto& jf = h.at("field");
    if (backend == Backend::kGrid) {
      GridField g;
      g.resolution = jf.at("resolution").get<std::array<int, 3>>();
      g.bounds.lo = vec3_from(jf.at("lo"));
      g.bounds.hi = vec3_from(jf.at("hi"));
      g.d_m = jf.at("d_m").get<int>();
      st.model.field = std::move(g);
    } else {
      SplatCloud s;
      s.d_m = jf.at("d_m").get<int>();
      st.model.field = std::move(s);
    }
    const auto& jb = h.at("bank");
    TokenBank& b = st.model.bank;
    b.n_k = jb.at("n_k").get<int>();
    b.num_freqs = jb.at("num_freqs").get<int>();
    b.d_m = jb.at("d_m").get<int>();
    b.d_s = jb.at("d_s").get<int>();
    const int hidden = jb.at("hidden").get<int>();
    b.query_mlp = {2 * b.num_freqs, hidden, b.d_m, {}};
    b.semantic_mlp = {2 * b.num_freqs, hidden, b.d_s, {}};
    std::istringstream rng(h.at("rng").get<std::string>());
    rng >> st.rng;
    if (!rng) throw ValidationError(context + ": corrupt rng state");
    st.stage1_step = h.at("stage1_step").get<std::int64_t>();
    st.stage2_step = h.at("stage2_step").get<std::int64_t>();
    const std::pair<const char*, OptimizerState*> opts[] = {{"geometry", &st.opt_geometry},
                                                            {"color", &st.opt_color},
                                                            {"feature", &st.opt_feature},
                                                            {"query", &st.opt_query},
                                                            {"semantic", &st.opt_semantic}};
    for (const auto& [name, o] : opts) {
      o->step = h.at("optimizers").at(name).at("step").get<std::int64_t>();
      o->skipped = h.at("optimizers").at(name).at("skipped").get<std::int64_t>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(context + ": bad header: " + e.what());
  }

  std::map<std::string, std::vector<double>*> slots;
  TrainState& st = ck.state;
  if (auto* g = std::get_if<GridField>(&st.model.field)) {
    slots["field.density"] = &g->density;
    slots["field.color"] = &g->color;
    slots["field.mask_feature"] = &g->mask_feature;
  } else {
    auto& s = std::get<SplatCloud>(st.model.field);
    slots["field.positions"] = &s.positions;
    slots["field.radii"] = &s.radii;
    slots["field.opacities_raw"] = &s.opacities_raw;
    slots["field.colors"] = &s.colors;
    slots["field.mask_features"] = &s.mask_features;
  }
  slots["bank.query_mlp"] = &st.model.bank.query_mlp.params;
  slots["bank.semantic_mlp"] = &st.model.bank.semantic_mlp.params;
  const std::pair<const char*, OptimizerState*> opts[] = {{"geometry", &st.opt_geometry},
                                                          {"color", &st.opt_color},
                                                          {"feature", &st.opt_feature},
                                                          {"query", &st.opt_query},
                                                          {"semantic", &st.opt_semantic}};
  for (const auto& [name, o] : opts) {
    slots[std::string("opt.") + name + ".m"] = &o->m;
    slots[std::string("opt.") + name + ".v"] = &o->v;
  }
  const std::uint32_t count = in.u32();
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t nlen = in.u32();
    const std::string name(in.bytes(nlen));
    auto it = slots.find(name);
    if (it == slots.end()) throw ValidationError(context + ": unexpected tensor '" + name + "'");
    *it->second = read_tensor<double>(in);
    ++filled;
  }
  if (filled != slots.size()) throw ValidationError(context + ": missing tensors");
  if (!in.done()) throw ValidationError(context + ": trailing bytes");
  try {
    validate(st.model.field);
    st.model.bank.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  }
  return ck;
}

inline void save_checkpoint(const fs::path& path, const TrainConfig& cfg, const TrainState& st) {
  write_file(path, encode_checkpoint(cfg, st));
}

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

/// Loads a checkpoint for a run configured by `run`; the model shape must agree.
inline Checkpoint load_checkpoint(const fs::path& path, const TrainConfig& run) {
  Checkpoint ck = load_checkpoint(path);
  auto mismatch = [&](const char* what, auto a, auto b) {
    if (a != b)
      throw ValidationError(path.string() + ": checkpoint " + what + " " + std::to_string(a) + " does not match run " +
                            what + " " + std::to_string(b));
  };
  mismatch("d_m", ck.config.d_m, run.d_m);
  mismatch("d_s", ck.config.d_s, run.d_s);
  mismatch("n_k", ck.config.n_k, run.n_k);
  if (ck.config.backend != run.backend)
    throw ValidationError(path.string() + ": checkpoint backend " + to_string(ck.config.backend) +
                          " does not match run backend " + to_string(run.backend));
  return ck;
}

}  // namespace maskfield
