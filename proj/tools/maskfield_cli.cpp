// maskfield command line: gen | train-geo | train-mask | segment | query | eval | gradcheck | bench
//
// Every command works inside one --out directory:
//   <out>/dataset/            generated or adapter-written SceneDataset
//   <out>/checkpoints/        geometry.ckpt (stage 1), maskfield.ckpt (stage 2)
//   <out>/logs/               loss CSVs
//   <out>/segment, query, eval, bench outputs
//   <out>/run_<command>.json  run manifest, written even on failure
// Exit codes: 0 ok, 1 invalid input, 2 runtime failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "maskfield/maskfield.hpp"

namespace mf = maskfield;
namespace fs = std::filesystem;
using mf::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Paths {
  fs::path out;
  fs::path dataset() const { return out / "dataset"; }
  fs::path geometry_ckpt() const { return out / "checkpoints" / "geometry.ckpt"; }
  fs::path mask_ckpt() const { return out / "checkpoints" / "maskfield.ckpt"; }
};

// Shared flags; which ones a subcommand exposes is decided at registration.
struct Options {
  std::string out;
  std::string data;
  std::string checkpoint;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string backend = "grid";
  int dm = 16;
  int nk = 64;
  double view_fraction = 1.0;
  int steps = 2000;
  double lr = 5e-3;
  double geo_lr = 1e-1;
  int grid_res = 64;
  int splats = 20000;
  int samples = 64;
  int ray_batch = 4096;
  bool resume = false;
  // gen
  int objects = 3;
  bool parts = false;
  int views = 16;
  int size = 128;
  double embed_noise = 0.0;
  int jitter = 0;
  // inference
  std::string split = "test";
  std::vector<int> view_list;
  double iou_thresh = 0.8;
  int smooth_k = 10;
  std::string query_class;
  std::string query_file;
  std::optional<std::uint64_t> orthogonal_seed;
  double rel_thresh = 0.9;
  double act_thresh = 0.5;
  double min_relevance = 0.55;
  // gradcheck / bench
  int coords = 60;
  double eps = 1e-4;
  std::vector<int> dm_list{4, 8, 16, 32};
  int steps1 = 2000;
  int steps2 = 2000;
};

fs::path data_dir(const Options& o) { return o.data.empty() ? Paths{o.out}.dataset() : fs::path(o.data); }

std::string fmt(double x) {
  char b[64];
  std::snprintf(b, sizeof b, "%.9g", x);
  return b;
}

mf::TrainConfig base_config(const Options& o, const mf::SceneDataset& ds) {
  mf::TrainConfig c;
  c.backend = mf::parse_backend(o.backend);
  c.d_m = o.dm;
  c.d_s = ds.d_s;
  c.n_k = o.nk;
  c.stage1_steps = o.steps;
  c.learning_rate = o.lr;
  c.geometry_learning_rate = o.geo_lr;
  c.seed = o.seed;
  c.n_samples = o.samples;
  c.view_fraction = o.view_fraction;
  c.grid_resolution = o.grid_res;
  c.splat_count = o.splats;
  c.ray_batch = o.ray_batch;
  c.threads = o.threads;
  c.validate();
  return c;
}

std::vector<int> selected_views(const Options& o, const mf::SceneDataset& ds) {
  if (!o.view_list.empty()) {
    for (int v : o.view_list)
      mf::require(v >= 0 && v < static_cast<int>(ds.views.size()), "--views: index " + std::to_string(v) + " out of range");
    return o.view_list;
  }
  auto v = ds.views_in_split(o.split);
  mf::require(!v.empty(), "--split: dataset has no '" + o.split + "' views");
  return v;
}

void write_text(const fs::path& p, const std::string& s) { mf::write_file(p, s); }

void write_pgm(const fs::path& p, const std::vector<std::int32_t>& labels, int h, int w) {
  std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::int32_t l : labels) {
    mf::require(l < 255, "label " + std::to_string(l) + " does not fit an 8-bit PGM");
    s.push_back(static_cast<char>(l < 0 ? 255 : l));
  }
  write_text(p, s);
}

void write_pbm(const fs::path& p, const std::vector<std::uint8_t>& mask, int h, int w) {
  std::string s = "P4\n" + std::to_string(w) + " " + std::to_string(h) + "\n";
  const int row_bytes = (w + 7) / 8;
  for (int r = 0; r < h; ++r)
    for (int b = 0; b < row_bytes; ++b) {
      unsigned char byte = 0;
      for (int k = 0; k < 8; ++k) {
        const int c = 8 * b + k;
        if (c < w && mask[static_cast<std::size_t>(r) * w + c]) byte |= static_cast<unsigned char>(0x80u >> k);
      }
      s.push_back(static_cast<char>(byte));
    }
  write_text(p, s);
}

std::string view_name(int id) {
  char b[32];
  std::snprintf(b, sizeof b, "view_%03d", id);
  return b;
}

json report_json(const mf::EvalReport& r, const mf::SceneDataset& ds) {
  json pc = json::object(), pb = json::object();
  auto name = [&](int c) {
    return c >= 0 && c < static_cast<int>(ds.classes.rows()) ? ds.classes.names[static_cast<std::size_t>(c)]
                                                               : std::to_string(c);
  };
  for (auto [c, v] : r.per_class_iou) pc[name(c)] = v;
  for (auto [c, v] : r.per_class_biou) pb[name(c)] = v;
  return {{"scene", ds.name},        {"miou", r.miou},         {"mbiou", r.mbiou},
          {"acc", r.acc},            {"n_views", r.n_views},   {"per_class_iou", pc},
          {"per_class_biou", pb},    {"gt_all_background", r.gt_all_background}};
}

// ---------------------------------------------------------------- commands

int cmd_gen(const Options& o, json& info) {
  mf::SceneOptions so;
  so.num_views = o.views;
  so.width = so.height = o.size;
  const mf::GroundTruthScene scene = mf::generate_scene(o.seed, o.objects, o.parts, so);
  mf::SyntheticDatasetOptions dopt;
  dopt.masks.embed_noise = o.embed_noise;
  dopt.masks.boundary_jitter_px = o.jitter;
  dopt.masks.seed = o.seed;
  const mf::SceneDataset ds = mf::make_dataset(scene, dopt, "synthetic_seed" + std::to_string(o.seed));
  const fs::path dir = data_dir(o);
  mf::save_dataset(ds, dir);
  std::size_t masks = 0;
  for (const auto& v : ds.views) masks += v.masks.size();
  info["outputs"] = {{"dataset", dir.string()}, {"views", ds.views.size()}, {"masks", masks}};
  std::cout << "wrote dataset " << dir << " (" << ds.views.size() << " views, " << masks << " masks)\n";
  return 0;
}

int cmd_train_geo(const Options& o, json& info) {
  const Paths P{o.out};
  const mf::SceneDataset ds = mf::load_dataset(data_dir(o));
  mf::TrainConfig cfg = base_config(o, ds);
  mf::TrainState st;
  if (o.resume && fs::exists(P.geometry_ckpt())) {
    mf::Checkpoint ck = mf::load_checkpoint(P.geometry_ckpt(), cfg);
    st = std::move(ck.state);
  } else {
    st = mf::init_state(ds, cfg);
  }
  info["config"] = mf::config_to_json(cfg);
  std::ofstream log;
  fs::create_directories(o.out + "/logs");
  log.open(fs::path(o.out) / "logs" / "geometry_loss.csv", o.resume ? std::ios::app : std::ios::trunc);
  if (!o.resume) log << "step,l_photometric,wall_ms\n";
  const auto t0 = std::chrono::steady_clock::now();
  mf::GeometryResult res = mf::train_geometry(ds, cfg, st, [&](std::int64_t step, double loss) {
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log << step << "," << fmt(loss) << "," << fmt(ms) << "\n";
  });
  mf::save_checkpoint(P.geometry_ckpt(), cfg, st);
  info["outputs"] = {{"checkpoint", P.geometry_ckpt().string()}, {"final_mse", res.final_mse}};
  std::cout << "stage 1 done: photometric MSE " << fmt(res.final_mse) << ", checkpoint " << P.geometry_ckpt() << "\n";
  return 0;
}

int cmd_train_mask(const Options& o, json& info, const CLI::App& sub) {
  const Paths P{o.out};
  const mf::SceneDataset ds = mf::load_dataset(data_dir(o));
  const bool resume = o.resume && fs::exists(P.mask_ckpt());
  const fs::path src = resume ? P.mask_ckpt() : (o.checkpoint.empty() ? P.geometry_ckpt() : fs::path(o.checkpoint));
  mf::Checkpoint ck = mf::load_checkpoint(src);
  mf::TrainConfig cfg = ck.config;
  if (sub.count("--dm") && o.dm != cfg.d_m)
    throw mf::ValidationError(src.string() + ": checkpoint d_m " + std::to_string(cfg.d_m) + " does not match --dm " +
                              std::to_string(o.dm));
  if (sub.count("--nk") && o.nk != cfg.n_k)
    throw mf::ValidationError(src.string() + ": checkpoint n_k " + std::to_string(cfg.n_k) + " does not match --nk " +
                              std::to_string(o.nk));
  cfg.stage2_steps = o.steps;
  if (sub.count("--view-fraction")) cfg.view_fraction = o.view_fraction;
  if (sub.count("--lr")) cfg.learning_rate = o.lr;
  cfg.threads = o.threads;
  cfg.validate();
  mf::require(cfg.d_s == ds.d_s, "dataset d_s " + std::to_string(ds.d_s) + " does not match checkpoint d_s " +
                                     std::to_string(cfg.d_s));
  info["config"] = mf::config_to_json(cfg);
  fs::create_directories(fs::path(o.out) / "logs");
  std::ofstream log(fs::path(o.out) / "logs" / "mask_loss.csv", resume ? std::ios::app : std::ios::trunc);
  if (!resume) log << "step,l_focal,l_dice,l_feature,l_extra,l_total,wall_ms\n";
  const auto res = mf::train_maskfield(ds, cfg, ck.state, [&](const mf::MaskStepLog& s) {
    log << s.step << "," << fmt(s.loss.l_focal) << "," << fmt(s.loss.l_dice) << "," << fmt(s.loss.l_feature) << ","
        << fmt(s.loss.l_extra) << "," << fmt(s.loss.l_total) << "," << fmt(s.wall_ms) << "\n";
  });
  mf::save_checkpoint(P.mask_ckpt(), cfg, ck.state);
  info["outputs"] = {{"checkpoint", P.mask_ckpt().string()}, {"supervised_views", res.supervised_views}};
  std::cout << "stage 2 done: " << res.supervised_views.size() << " supervised views, checkpoint " << P.mask_ckpt()
            << "\n";
  return 0;
}

mf::Checkpoint load_trained(const Options& o) {
  const fs::path p = o.checkpoint.empty() ? Paths{o.out}.mask_ckpt() : fs::path(o.checkpoint);
  if (!fs::exists(p)) throw mf::ValidationError(p.string() + ": no checkpoint found (run train-mask first)");
  mf::Checkpoint ck = mf::load_checkpoint(p);
  ck.config.threads = o.threads;
  return ck;
}

int cmd_segment(const Options& o, json& info) {
  mf::Checkpoint ck = load_trained(o);
  const mf::SceneDataset ds = mf::load_dataset(data_dir(o));
  const auto views = selected_views(o, ds);
  const mf::TextEmbeddingSet texts = mf::dataset_texts(ds);
  const mf::Tokens tokens = mf::compute_tokens(ck.state.model.bank);
  const mf::RenderOptions ro = mf::inference_render_options(ck.config);
  mf::SegmentOptions so{o.iou_thresh, o.smooth_k};
  const fs::path dir = fs::path(o.out) / "segment";
  json outs = json::array();
  for (int v : views) {
    const auto& rec = ds.views[static_cast<std::size_t>(v)];
    const mf::RenderedView rv = mf::render_dataset_view(ds, ck.state.model.field, v, ro);
    const mf::SegmentationMap seg = mf::segment(rv, tokens, texts, so);
    const std::string base = view_name(rec.view_id);
    write_pgm(dir / (base + "_labels.pgm"), seg.labels, seg.height, seg.width);
    std::ostringstream csv;
    csv << "row,col,label,score\n";
    for (int r = 0; r < seg.height; ++r)
      for (int c = 0; c < seg.width; ++c) {
        const std::size_t p = static_cast<std::size_t>(r) * seg.width + c;
        if (seg.labels[p] >= 0) csv << r << "," << c << "," << seg.labels[p] << "," << fmt(seg.scores[p]) << "\n";
      }
    write_text(dir / (base + "_scores.csv"), csv.str());
    outs.push_back({{"view", rec.view_id}, {"no_masks_kept", seg.no_masks_kept}});
  }
  info["outputs"] = {{"dir", dir.string()}, {"views", outs}};
  std::cout << "segmented " << views.size() << " views into " << dir << "\n";
  return 0;
}

int cmd_query(const Options& o, json& info) {
  mf::Checkpoint ck = load_trained(o);
  const mf::SceneDataset ds = mf::load_dataset(data_dir(o));
  const int sources = !o.query_class.empty() + !o.query_file.empty() + o.orthogonal_seed.has_value();
  mf::require(sources == 1, "query: give exactly one of --class, --embedding, --orthogonal");
  std::vector<double> q;
  std::string name;
  if (!o.query_class.empty()) {
    q = mf::class_embedding(ds, o.query_class);
    name = o.query_class;
  } else if (!o.query_file.empty()) {
    mf::Dims d;
    const auto f = mf::load_tensor<float>(o.query_file, &d);
    mf::require(d.size() == 1 && static_cast<int>(d[0]) == ds.d_s,
                o.query_file + ": query embedding dims " + mf::dims_string(d) + ", expected [" + std::to_string(ds.d_s) + "]");
    q.assign(f.begin(), f.end());
    name = fs::path(o.query_file).stem().string();
  } else {
    q = mf::orthogonal_query(ds, *o.orthogonal_seed);
    name = "orthogonal";
  }
  const auto views = selected_views(o, ds);
  const mf::Tokens tokens = mf::compute_tokens(ck.state.model.bank);
  const std::vector<double> canon = mf::dataset_canonicals(ds);
  const mf::RenderOptions ro = mf::inference_render_options(ck.config);
  mf::QueryOptions qo{o.rel_thresh, o.act_thresh, o.min_relevance, o.smooth_k};
  const fs::path dir = fs::path(o.out) / "query";
  std::ostringstream csv;
  csv << "view,pixels_on,survivors\n";
  for (int v : views) {
    const auto& rec = ds.views[static_cast<std::size_t>(v)];
    const mf::RenderedView rv = mf::render_dataset_view(ds, ck.state.model.field, v, ro);
    const mf::QueryResult r = mf::query_object(rv, tokens, q, canon, qo);
    write_pbm(dir / (name + "_" + view_name(rec.view_id) + ".pbm"), r.mask, ds.height, ds.width);
    std::size_t on = 0;
    for (auto m : r.mask) on += m;
    csv << rec.view_id << "," << on << "," << r.survivors.size() << "\n";
  }
  write_text(dir / (name + ".csv"), csv.str());
  info["outputs"] = {{"dir", dir.string()}, {"query", name}};
  std::cout << "query '" << name << "' over " << views.size() << " views written to " << dir << "\n";
  return 0;
}

int cmd_eval(const Options& o, json& info) {
  mf::Checkpoint ck = load_trained(o);
  const mf::SceneDataset ds = mf::load_dataset(data_dir(o));
  const auto views = selected_views(o, ds);
  mf::EvalOptions eo;
  eo.segment = {o.iou_thresh, o.smooth_k};
  const mf::EvalReport r = mf::evaluate(ds, ck.state.model, views, mf::inference_render_options(ck.config), eo);
  const json j = report_json(r, ds);
  const fs::path dir = fs::path(o.out) / "eval";
  write_text(dir / "report.json", j.dump(2) + "\n");
  write_text(dir / "report.csv", "scene,miou,mbiou,acc,n_views\n" + ds.name + "," + fmt(r.miou) + "," + fmt(r.mbiou) +
                                     "," + fmt(r.acc) + "," + std::to_string(r.n_views) + "\n");
  info["outputs"] = j;
  std::cout << "mIoU " << fmt(r.miou) << "  mBIoU " << fmt(r.mbiou) << "  Acc " << fmt(r.acc) << "  (" << r.n_views
            << " views)\n";
  return 0;
}

int cmd_gradcheck(const Options& o, json& info) {
  const mf::Backend b = mf::parse_backend(o.backend);
  mf::PipelineProblem pb = mf::make_pipeline_problem(b, o.seed);
  const mf::PipelineGradcheckReport r = mf::pipeline_gradcheck(pb, static_cast<std::size_t>(o.coords), o.eps, o.seed);
  const json j = {{"backend", o.backend}, {"max_rel_error", r.max_rel_error}, {"coords_checked", r.coords_checked},
                  {"per_group",
                   {{"geometry", r.geometry}, {"color", r.color}, {"feature", r.feature},
                    {"query_mlp", r.query_mlp}, {"semantic_mlp", r.semantic_mlp}}}, {"tolerance", 1e-4}, {"pass", r.max_rel_error < 1e-4}};
  write_text(fs::path(o.out) / "gradcheck.json", j.dump(2) + "\n");
  info["outputs"] = j;
  std::cout << "gradcheck " << o.backend << ": max relative error " << fmt(r.max_rel_error) << " over "
            << r.coords_checked << " coordinates\n";
  return r.max_rel_error < 1e-4 ? 0 : 2;
}

int cmd_bench(const Options& o, json& info) {
  mf::SceneDataset ds;
  if (!o.data.empty()) {
    ds = mf::load_dataset(o.data);
  } else {
    mf::SceneOptions so;
    so.width = so.height = o.size;
    ds = mf::make_dataset(mf::generate_scene(o.seed, o.objects, false, so), {}, "bench_seed" + std::to_string(o.seed));
  }
  mf::require(!o.dm_list.empty(), "--dm: need at least one dimension");
  Options base = o;
  base.dm = o.dm_list.front();
  mf::TrainConfig geo_cfg = base_config(base, ds);
  geo_cfg.stage1_steps = o.steps1;
  geo_cfg.stage2_steps = o.steps2;
  // Stage 1 does not touch mask features, so one geometry run serves every d_m.
  mf::TrainState geo = mf::init_state(ds, geo_cfg);
  const auto g0 = std::chrono::steady_clock::now();
  mf::train_geometry(ds, geo_cfg, geo);
  const double geo_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - g0).count();
  const auto test = ds.views_in_split("test");
  mf::require(!test.empty(), "bench: dataset has no test views");
  std::ostringstream csv;
  csv << "dm,miou,train_seconds,render_ms_per_view\n";
  json rows = json::array();
  for (int dm : o.dm_list) {
    mf::TrainConfig cfg = geo_cfg;
    cfg.d_m = dm;
    mf::TrainState st = mf::with_feature_dim(ds, geo, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    mf::train_maskfield(ds, cfg, st);
    const double secs = geo_s + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const mf::RenderOptions ro = mf::inference_render_options(cfg);
    const mf::EvalReport r = mf::evaluate(ds, st.model, test, ro);
    const double ms = mf::render_ms_per_view(ds, st.model.field, test, ro);
    csv << dm << "," << fmt(r.miou) << "," << fmt(secs) << "," << fmt(ms) << "\n";
    rows.push_back({{"dm", dm}, {"miou", r.miou}, {"train_seconds", secs}, {"render_ms_per_view", ms}});
    std::cout << "d_m " << dm << ": mIoU " << fmt(r.miou) << ", train " << fmt(secs) << " s, render " << fmt(ms)
              << " ms/view\n";
  }
  write_text(fs::path(o.out) / "bench.csv", csv.str());
  info["outputs"] = {{"rows", rows}, {"geometry_seconds", geo_s}};
  return 0;
}

// ---------------------------------------------------------------- plumbing

json resolved_flags(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name(false, true);
    const std::string key = opt->get_lnames().empty() ? name : opt->get_lnames().front();
    if (key.empty() || key == "help") continue;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      j[key] = res.size() == 1 ? json(res.front()) : json(res);
    } else if (opt->get_expected_max() == 0) {
      j[key] = false;
    } else {
      j[key] = opt->get_default_str();
    }
  }
  return j;
}

std::string scan_out(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--out=", 0) == 0) return a.substr(6);
  }
  return {};
}

void write_manifest(const std::string& out, const std::string& command, int argc, char** argv, const json& flags,
                    const json& info, double seconds, int code, const std::string& error) {
  if (out.empty()) return;
  json j;
  j["command"] = command;
  j["argv"] = std::vector<std::string>(argv, argv + argc);
  j["flags"] = flags;
  if (info.contains("config")) j["config"] = info["config"];
  if (flags.contains("seed")) j["seed"] = flags["seed"];
  j["versions"] = {{"maskfield", kVersion},
                   {"compiler", __VERSION__},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"cli11", CLI11_VERSION}};
  j["wall_seconds"] = seconds;
  j["exit_code"] = code;
  if (!error.empty()) j["error"] = error;
  if (info.contains("outputs")) j["outputs"] = info["outputs"];
  try {
    mf::write_file(fs::path(out) / ("run_" + (command.empty() ? std::string("unknown") : command) + ".json"),
                   j.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "warning: could not write run manifest: " << e.what() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  Options o;
  CLI::App app{"maskfield: two-stage mask-field training, open-vocabulary segmentation and queries"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.option_defaults()->always_capture_default();

  auto add_common = [&](CLI::App* s) {
    s->add_option("--out", o.out, "Working directory for all outputs")->required();
    s->add_option("--threads", o.threads, "Worker threads (1 = bit-reproducible)")->check(CLI::Range(1, 256));
  };
  auto add_data = [&](CLI::App* s) { s->add_option("--data", o.data, "Dataset directory (default <out>/dataset)"); };
  auto add_ckpt = [&](CLI::App* s) { s->add_option("--checkpoint", o.checkpoint, "Checkpoint to read"); };
  auto add_views = [&](CLI::App* s) {
    s->add_option("--split", o.split, "Views to process when --views is absent")->check(CLI::IsMember({"train", "test"}));
    s->add_option("--views", o.view_list, "Explicit view indices")->delimiter(',');
  };
  auto add_model = [&](CLI::App* s) {
    s->add_option("--backend", o.backend, "Scene field: grid or splat")->check(CLI::IsMember({"grid", "splat"}));
    s->add_option("--dm", o.dm, "Mask feature dimension D_m")->check(CLI::PositiveNumber);
    s->add_option("--nk", o.nk, "Number of mask tokens N_K")->check(CLI::PositiveNumber);
    s->add_option("--seed", o.seed, "Random seed");
    s->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    s->add_option("--geo-lr", o.geo_lr, "Adam learning rate for density / opacity")->check(CLI::PositiveNumber);
    s->add_option("--grid-res", o.grid_res, "Grid nodes per axis")->check(CLI::Range(2, 1024));
    s->add_option("--splats", o.splats, "Splat count")->check(CLI::PositiveNumber);
    s->add_option("--samples", o.samples, "Samples per ray")->check(CLI::PositiveNumber);
    s->add_option("--ray-batch", o.ray_batch, "Rays per stage-1 step")->check(CLI::PositiveNumber);
  };

  CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic oracle dataset");
  add_common(gen);
  add_data(gen);
  gen->add_option("--seed", o.seed, "Scene seed");
  gen->add_option("--objects", o.objects, "Number of objects (1-8)")->check(CLI::Range(1, 8));
  gen->add_flag("--parts", o.parts, "Add a nested top part to every object");
  gen->add_option("--num-views", o.views, "Ring cameras (8-16)")->check(CLI::Range(8, 16));
  gen->add_option("--size", o.size, "Image width and height in pixels")->check(CLI::Range(8, 4096));
  gen->add_option("--embed-noise", o.embed_noise, "Expected norm of embedding noise")->check(CLI::NonNegativeNumber);
  gen->add_option("--jitter", o.jitter, "Max mask boundary jitter in pixels")->check(CLI::NonNegativeNumber);

  CLI::App* tg = app.add_subcommand("train-geo", "Stage 1: fit geometry and color to the images");
  add_common(tg);
  add_data(tg);
  add_model(tg);
  tg->add_option("--steps", o.steps, "Stage-1 steps")->check(CLI::NonNegativeNumber);
  tg->add_option("--view-fraction", o.view_fraction, "Fraction of training views with mask supervision")
      ->check(CLI::Range(1e-9, 1.0));
  tg->add_flag("--resume", o.resume, "Continue from <out>/checkpoints/geometry.ckpt");

  CLI::App* tm = app.add_subcommand("train-mask", "Stage 2: distill masks into the mask field");
  add_common(tm);
  add_data(tm);
  add_ckpt(tm);
  tm->add_option("--steps", o.steps, "Stage-2 steps")->check(CLI::NonNegativeNumber);
  tm->add_option("--view-fraction", o.view_fraction, "Fraction of training views with mask supervision")
      ->check(CLI::Range(1e-9, 1.0));
  tm->add_option("--dm", o.dm, "Expected D_m (must match the checkpoint)")->check(CLI::PositiveNumber);
  tm->add_option("--nk", o.nk, "Expected N_K (must match the checkpoint)")->check(CLI::PositiveNumber);
  tm->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  tm->add_flag("--resume", o.resume, "Continue from <out>/checkpoints/maskfield.ckpt");

  CLI::App* sg = app.add_subcommand("segment", "Open-vocabulary segmentation of rendered views");
  add_common(sg);
  add_data(sg);
  add_ckpt(sg);
  add_views(sg);
  sg->add_option("--iou-thresh", o.iou_thresh, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  sg->add_option("--smooth-k", o.smooth_k, "Mean filter size")->check(CLI::PositiveNumber);

  CLI::App* qy = app.add_subcommand("query", "Open-vocabulary object query");
  add_common(qy);
  add_data(qy);
  add_ckpt(qy);
  add_views(qy);
  qy->add_option("--class", o.query_class, "Query by class name from the dataset");
  qy->add_option("--embedding", o.query_file, "Query embedding tensor file (D_S float32)");
  qy->add_option("--orthogonal", o.orthogonal_seed, "Query orthogonal to every known embedding (seed)");
  qy->add_option("--rel-thresh", o.rel_thresh, "Normalised relevance threshold")->check(CLI::Range(0.0, 1.0));
  qy->add_option("--act-thresh", o.act_thresh, "Minimum peak mask probability")->check(CLI::Range(0.0, 1.0));
  qy->add_option("--min-relevance", o.min_relevance, "Minimum raw relevance")->check(CLI::Range(0.0, 1.0));
  qy->add_option("--smooth-k", o.smooth_k, "Mean filter size")->check(CLI::PositiveNumber);

  CLI::App* ev = app.add_subcommand("eval", "Segment held-out views and score them against GT");
  add_common(ev);
  add_data(ev);
  add_ckpt(ev);
  add_views(ev);
  ev->add_option("--iou-thresh", o.iou_thresh, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--smooth-k", o.smooth_k, "Mean filter size")->check(CLI::PositiveNumber);

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  add_common(gc);
  gc->add_option("--backend", o.backend, "grid or splat")->check(CLI::IsMember({"grid", "splat"}));
  gc->add_option("--seed", o.seed, "Problem seed");
  gc->add_option("--coords", o.coords, "Coordinates per parameter group")->check(CLI::PositiveNumber);
  gc->add_option("--eps", o.eps, "Central difference step")->check(CLI::PositiveNumber);

  CLI::App* bn = app.add_subcommand("bench", "Sweep D_m: accuracy, training time and render time");
  add_common(bn);
  bn->add_option("--data", o.data, "Dataset directory (default: generate the seed scene)");
  bn->add_option("--dm", o.dm_list, "Comma-separated D_m values")->delimiter(',')->check(CLI::PositiveNumber);
  bn->add_option("--seed", o.seed, "Scene and training seed");
  bn->add_option("--objects", o.objects, "Objects in the generated scene")->check(CLI::Range(1, 8));
  bn->add_option("--size", o.size, "Generated image size")->check(CLI::Range(8, 4096));
  bn->add_option("--backend", o.backend, "grid or splat")->check(CLI::IsMember({"grid", "splat"}));
  bn->add_option("--nk", o.nk, "Number of mask tokens")->check(CLI::PositiveNumber);
  bn->add_option("--steps1", o.steps1, "Stage-1 steps")->check(CLI::NonNegativeNumber);
  bn->add_option("--steps2", o.steps2, "Stage-2 steps")->check(CLI::NonNegativeNumber);

  std::string command;
  json flags = json::object(), info = json::object();
  int code = 0;
  std::string error;
  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();
    flags = resolved_flags(sub);
    std::cout << "config " << flags.dump() << "\n";
    if (command == "gen") code = cmd_gen(o, info);
    else if (command == "train-geo") code = cmd_train_geo(o, info);
    else if (command == "train-mask") code = cmd_train_mask(o, info, *sub);
    else if (command == "segment") code = cmd_segment(o, info);
    else if (command == "query") code = cmd_query(o, info);
    else if (command == "eval") code = cmd_eval(o, info);
    else if (command == "gradcheck") code = cmd_gradcheck(o, info);
    else if (command == "bench") code = cmd_bench(o, info);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    error = e.what();
    code = 1;
  } catch (const mf::ValidationError& e) {
    error = e.what();
    code = 1;
  } catch (const std::exception& e) {
    error = e.what();
    code = 2;
  }
  if (!error.empty()) std::cerr << "error: " << error << "\n";
  if (command.empty() && argc > 1) command = argv[1][0] == '-' ? "" : argv[1];
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(o.out.empty() ? scan_out(argc, argv) : o.out, command, argc, argv, flags, info, secs, code, error);
  return code;
}
