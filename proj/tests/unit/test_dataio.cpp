#include <gtest/gtest.h>

#include <unistd.h>

#include <random>

#include "maskfield/dataio.hpp"
#include "maskfield/synthetic.hpp"

using namespace maskfield;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("maskfield_dataio_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::vector<std::uint32_t> runs_of(std::vector<std::uint8_t> m, int h, int w) {
  return rle_runs(encode_mask_rle(m, h, w));
}

std::string raw_u32s(std::initializer_list<std::uint32_t> v) {
  std::string s;
  for (auto x : v) detail::put_u32(s, x);
  return s;
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

SceneDataset small_dataset(bool parts = true) {
  SceneOptions so;
  so.width = so.height = 24;
  so.num_views = 8;
  return make_dataset(generate_scene(3, 2, parts, so), {}, "small");
}

}  // namespace

TEST(Rle, Examples) {
  EXPECT_EQ(runs_of({0, 0, 0, 0}, 2, 2), (std::vector<std::uint32_t>{4}));
  EXPECT_EQ(runs_of({1, 1, 1, 1}, 2, 2), (std::vector<std::uint32_t>{0, 4}));
  EXPECT_EQ(runs_of({0, 1, 1, 0}, 1, 4), (std::vector<std::uint32_t>{1, 2, 1}));
  EXPECT_EQ(encode_mask_rle(std::vector<std::uint8_t>{0, 1, 1, 0}, 1, 4), raw_u32s({1, 4, 1, 2, 1}));
}

TEST(Rle, RoundTripRandom) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const int h = 1 + static_cast<int>(rng() % 17), w = 1 + static_cast<int>(rng() % 23);
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w);
    for (auto& x : m) x = static_cast<std::uint8_t>(rng() % 3 == 0);
    const DecodedMask d = decode_mask_rle(encode_mask_rle(m, h, w));
    EXPECT_EQ(d.height, h);
    EXPECT_EQ(d.width, w);
    EXPECT_EQ(d.mask, m);
  }
}

TEST(Rle, RejectsMalformedInput) {
  EXPECT_NE(error_of([] { decode_mask_rle(raw_u32s({2, 2, 3})); }).find("expected H*W = 4"), std::string::npos);
  EXPECT_NE(error_of([] { decode_mask_rle(raw_u32s({2, 2, 3, 3})); }).find("runs exceed"), std::string::npos);
  EXPECT_NE(error_of([] { decode_mask_rle(raw_u32s({2})); }).find("truncated"), std::string::npos);
  EXPECT_THROW(decode_mask_rle(raw_u32s({1, 2, 2}) + "x"), ValidationError);
  EXPECT_THROW(encode_mask_rle(std::vector<std::uint8_t>{0, 2}, 1, 2), ValidationError);
}

TEST(Tensor, ByteLayoutOracle) {
  std::string b;
  append_tensor<float>(b, std::vector<float>{1.0f}, {1});
  EXPECT_EQ(b, std::string("MFT1") + raw_u32s({0, 1, 1, 0x3f800000u}));
}

TEST(Tensor, RoundTripAllTypes) {
  const fs::path dir = scratch("tensor");
  const std::vector<float> f{1.5f, -2.0f, 3.25f, 0.0f, 7.0f, 8.0f};
  const std::vector<double> d{1e-300, -0.1};
  const std::vector<std::int32_t> i{-1, 0, 2147483647, -7};
  const std::vector<std::uint8_t> u{0, 255, 7};
  save_tensor<float>(dir / "f.mft", f, {2, 3});
  save_tensor<double>(dir / "d.mft", d, {2});
  save_tensor<std::int32_t>(dir / "i.mft", i, {2, 2});
  save_tensor<std::uint8_t>(dir / "u.mft", u, {3});
  Dims dims;
  EXPECT_EQ(load_tensor<float>(dir / "f.mft", &dims), f);
  EXPECT_EQ(dims, (Dims{2, 3}));
  EXPECT_EQ(load_tensor<double>(dir / "d.mft"), d);
  EXPECT_EQ(load_tensor<std::int32_t>(dir / "i.mft"), i);
  EXPECT_EQ(load_tensor<std::uint8_t>(dir / "u.mft"), u);
  fs::remove_all(dir);
}

TEST(Tensor, ErrorsNameTheProblem) {
  const fs::path dir = scratch("tensor_err");
  save_tensor<float>(dir / "f.mft", std::vector<float>{1, 2}, {2});
  EXPECT_NE(error_of([&] { load_tensor<double>(dir / "f.mft"); }).find("dtype is float32, expected float64"),
            std::string::npos);
  const Dims want{3};
  EXPECT_NE(error_of([&] { load_tensor<float>(dir / "f.mft", nullptr, &want); }).find("dims [2], expected [3]"),
            std::string::npos);
  std::string bytes = read_file(dir / "f.mft");
  write_file(dir / "t.mft", bytes.substr(0, bytes.size() - 1));
  EXPECT_NE(error_of([&] { load_tensor<float>(dir / "t.mft"); }).find("truncated"), std::string::npos);
  write_file(dir / "x.mft", bytes + "z");
  EXPECT_NE(error_of([&] { load_tensor<float>(dir / "x.mft"); }).find("trailing"), std::string::npos);
  write_file(dir / "m.mft", "NOPE" + bytes.substr(4));
  EXPECT_NE(error_of([&] { load_tensor<float>(dir / "m.mft"); }).find("not an MFT1"), std::string::npos);
  EXPECT_NE(error_of([&] { load_tensor<float>(dir / "missing.mft"); }).find("cannot open"), std::string::npos);
  EXPECT_THROW(save_tensor<float>(dir / "bad.mft", std::vector<float>{1, 2}, {3}), ValidationError);
  // a regular file in place of a directory makes the write fail
  EXPECT_THROW(write_file(dir / "f.mft" / "child", "x"), std::exception);
  fs::remove_all(dir);
}

TEST(Tensor, WriteFailureIsIoError) {
  const fs::path dir = scratch("ioerr");
  fs::create_directories(dir / "sub");
  EXPECT_THROW(write_file(dir / "sub", "x"), IoError);  // target is a directory
  fs::remove_all(dir);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.backend = Backend::kSplat;
  c.d_m = 8;
  c.seed = 123456789012345ULL;
  c.loss.w_extra = 0.25;
  c.view_fraction = 0.5;
  const TrainConfig r = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(r), config_to_json(c));
  json j = config_to_json(c);
  j["bogus"] = 1;
  EXPECT_NE(error_of([&] { config_from_json(j); }).find("unknown key 'bogus'"), std::string::npos);
  json k = config_to_json(c);
  k["d_m"] = "eight";
  EXPECT_THROW(config_from_json(k), ValidationError);
  json v = config_to_json(c);
  v["view_fraction"] = 0.0;
  EXPECT_THROW(config_from_json(v), ValidationError);
}

TEST(Dataset, RoundTripIsExact) {
  const SceneDataset ds = small_dataset();
  const fs::path dir = scratch("ds");
  save_dataset(ds, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "images" / "view_000.mft"));
  EXPECT_TRUE(fs::exists(dir / "masks" / "view_000_000.rle"));
  EXPECT_TRUE(fs::exists(dir / "gt" / "view_003_gt_labels.mft"));
  EXPECT_TRUE(fs::exists(dir / "text" / "classes.mft"));
  const SceneDataset back = load_dataset(dir);
  EXPECT_TRUE(back == ds);
  fs::remove_all(dir);
}

TEST(Dataset, ValidationMessagesNameViewAndMask) {
  const SceneDataset ds = small_dataset(false);
  const fs::path dir = scratch("ds_bad");
  save_dataset(ds, dir);
  // mask of the wrong size
  write_file(dir / "masks" / "view_001_000.rle", encode_mask_rle(std::vector<std::uint8_t>(6, 0), 2, 3));
  std::string e = error_of([&] { load_dataset(dir); });
  EXPECT_NE(e.find("view_001_000.rle"), std::string::npos) << e;
  EXPECT_NE(e.find("view 1 mask 0 is 2x3, image is 24x24"), std::string::npos) << e;
  save_dataset(ds, dir);
  // embedding with the wrong length
  save_tensor<float>(dir / "masks" / "view_002_001_emb.mft", std::vector<float>(5, 0.f), {5});
  e = error_of([&] { load_dataset(dir); });
  EXPECT_NE(e.find("view 2 mask 1: embedding dims [5], expected [32]"), std::string::npos) << e;
  save_dataset(ds, dir);
  json m = json::parse(read_file(dir / "manifest.json"));
  m["format_version"] = 7;
  write_file(dir / "manifest.json", m.dump());
  EXPECT_NE(error_of([&] { load_dataset(dir); }).find("unknown format_version 7"), std::string::npos);
  m["format_version"] = 1;
  m["views"][0]["split"] = "val";
  write_file(dir / "manifest.json", m.dump());
  EXPECT_NE(error_of([&] { load_dataset(dir); }).find("view 0: split must be train or test"), std::string::npos);
  m["views"][0].erase("split");
  write_file(dir / "manifest.json", m.dump());
  EXPECT_THROW(load_dataset(dir), ValidationError);
  write_file(dir / "manifest.json", "{ not json");
  EXPECT_NE(error_of([&] { load_dataset(dir); }).find("malformed manifest"), std::string::npos);
  EXPECT_NE(error_of([&] { load_dataset(dir / "nowhere"); }).find("cannot open"), std::string::npos);
  fs::remove_all(dir);
}

namespace {

void expect_same_state(const TrainState& a, const TrainState& b) {
  EXPECT_TRUE(a.model.field == b.model.field);
  EXPECT_TRUE(a.model.bank == b.model.bank);
  EXPECT_EQ(a.opt_geometry, b.opt_geometry);
  EXPECT_EQ(a.opt_color, b.opt_color);
  EXPECT_EQ(a.opt_feature, b.opt_feature);
  EXPECT_EQ(a.opt_query, b.opt_query);
  EXPECT_EQ(a.opt_semantic, b.opt_semantic);
  EXPECT_EQ(a.stage1_step, b.stage1_step);
  EXPECT_EQ(a.stage2_step, b.stage2_step);
  EXPECT_TRUE(a.rng == b.rng);
}

}  // namespace

TEST(Checkpoint, RoundTripBothBackends) {
  const SceneDataset ds = small_dataset(false);
  for (Backend b : {Backend::kGrid, Backend::kSplat}) {
    TrainConfig cfg;
    cfg.backend = b;
    cfg.grid_resolution = 6;
    cfg.splat_count = 50;
    cfg.n_k = 8;
    cfg.hidden = 8;
    TrainState st = init_state(ds, cfg);
    st.opt_query.m.assign(st.model.bank.query_mlp.params.size(), 0.5);
    st.opt_query.v.assign(st.model.bank.query_mlp.params.size(), 0.25);
    st.opt_query.step = 17;
    st.opt_query.skipped = 2;
    st.stage1_step = 40;
    st.rng.discard(13);
    const Checkpoint ck = decode_checkpoint(encode_checkpoint(cfg, st));
    expect_same_state(ck.state, st);
    EXPECT_EQ(config_to_json(ck.config), config_to_json(cfg));
  }
}

TEST(Checkpoint, RejectsCorruptOrMismatchedFiles) {
  const SceneDataset ds = small_dataset(false);
  TrainConfig cfg;
  cfg.grid_resolution = 5;
  cfg.n_k = 4;
  cfg.hidden = 4;
  const TrainState st = init_state(ds, cfg);
  const std::string good = encode_checkpoint(cfg, st);
  EXPECT_NE(error_of([&] { decode_checkpoint("XXXX" + good.substr(4)); }).find("not a checkpoint"), std::string::npos);
  std::string v2 = good;
  v2[4] = 2;
  EXPECT_NE(error_of([&] { decode_checkpoint(v2); }).find("version 2 is not supported"), std::string::npos);
  EXPECT_NE(error_of([&] { decode_checkpoint(good.substr(0, good.size() - 3)); }).find("truncated"), std::string::npos);
  EXPECT_NE(error_of([&] { decode_checkpoint(good + "!"); }).find("trailing"), std::string::npos);

  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "a.ckpt", cfg, st);
  TrainConfig other = cfg;
  other.d_m = 8;
  EXPECT_NE(error_of([&] { load_checkpoint(dir / "a.ckpt", other); }).find("checkpoint d_m 16 does not match run d_m 8"),
            std::string::npos);
  other = cfg;
  other.backend = Backend::kSplat;
  EXPECT_NE(error_of([&] { load_checkpoint(dir / "a.ckpt", other); }).find("backend grid"), std::string::npos);
  EXPECT_NO_THROW(load_checkpoint(dir / "a.ckpt", cfg));
  fs::remove_all(dir);
}
