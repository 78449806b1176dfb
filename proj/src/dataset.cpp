#include "qareid/dataset.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "qareid/errors.hpp"

namespace fs = std::filesystem;

namespace qareid {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "query") return Split::kQuery;
  if (name == "gallery") return Split::kGallery;
  throw ValidationError("unknown split name: " + name);
}

namespace {

int data_worker_count() {
  int n = omp_get_max_threads();
  if (const char* env = std::getenv("QARED_NUM_WORKERS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError(std::string("QARED_NUM_WORKERS must be a positive integer, got '") +
                        env + "'");
    }
    n = std::min<long>(n, v);
  }
  return n;
}

}  // namespace

void validate_manifest(const DatasetManifest& m) {
  if (m.num_classes < 1) throw ConfigError("manifest: number of classes must be >= 1");
  if (m.identity_labels.labels.empty())
    throw ConfigError("manifest: identity label set must not be empty");
  for (int l : m.identity_labels.labels) {
    if (l < 1 || l > m.num_classes) {
      throw ConfigError("manifest: identity label " + std::to_string(l) +
                        " outside 1.." + std::to_string(m.num_classes));
    }
  }
  for (const auto& e : m.entries) {
    if (e.path.empty() || e.seg_path.empty())
      throw ValidationError("manifest: entry with empty path");
    if (e.person_id < 0 || e.clothes_id < 0 || e.camera_id < 0)
      throw ValidationError("manifest: negative id in entry " + e.path);
  }
}

void write_manifest(const DatasetManifest& m, const std::string& manifest_path) {
  validate_manifest(m);
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError("cannot open manifest for writing: " + manifest_path);
  out << "classes\t" << m.num_classes << "\n";
  out << "identity_labels";
  for (int l : m.identity_labels.labels) out << "\t" << l;
  out << "\n";
  for (const auto& e : m.entries) {
    out << e.path << "\t" << e.seg_path << "\t" << e.person_id << "\t" << e.clothes_id << "\t"
        << e.camera_id << "\t" << split_name(e.split) << "\n";
  }
  if (!out) throw IoError("failed writing manifest: " + manifest_path);
}

DatasetManifest read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  DatasetManifest m;
  m.root = fs::path(manifest_path).parent_path().string();
  if (m.root.empty()) m.root = ".";

  std::string line;
  int lineno = 0;
  bool have_classes = false, have_labels = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string first;
    std::getline(ls, first, '\t');
    if (first == "classes") {
      ls >> m.num_classes;
      have_classes = true;
      continue;
    }
    if (first == "identity_labels") {
      std::vector<int> labels;
      std::string tok;
      while (std::getline(ls, tok, '\t')) {
        if (!tok.empty()) labels.push_back(std::stoi(tok));
      }
      m.identity_labels = LabelSet::from_ints(std::move(labels));
      have_labels = true;
      continue;
    }
    ManifestEntry e;
    e.path = first;
    std::string pid, cid, cam, split;
    if (!std::getline(ls, e.seg_path, '\t') || !std::getline(ls, pid, '\t') ||
        !std::getline(ls, cid, '\t') || !std::getline(ls, cam, '\t') ||
        !std::getline(ls, split, '\t')) {
      throw ValidationError("manifest line " + std::to_string(lineno) + " is malformed: " + line);
    }
    try {
      e.person_id = std::stoi(pid);
      e.clothes_id = std::stoi(cid);
      e.camera_id = std::stoi(cam);
    } catch (const std::exception&) {
      throw ValidationError("manifest line " + std::to_string(lineno) + " has non-numeric ids");
    }
    e.split = split_from_name(split);
    m.entries.push_back(std::move(e));
  }
  if (!have_classes || !have_labels)
    throw ValidationError("manifest missing classes/identity_labels header: " + manifest_path);
  validate_manifest(m);
  return m;
}

std::vector<SampleRecord> load_dataset(const DatasetManifest& m) {
  validate_manifest(m);
  const int64_t n = static_cast<int64_t>(m.entries.size());
  std::vector<SampleRecord> records(n);
  std::vector<std::string> errors(n);
  std::vector<int> kinds(n, 0);  // 1 = io, 2 = validation

  const int workers = data_worker_count();
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (int64_t i = 0; i < n; ++i) {
    const ManifestEntry& e = m.entries[i];
    try {
      SampleRecord rec;
      fs::path img_path = fs::path(m.root) / e.path;
      fs::path seg_path = fs::path(m.root) / e.seg_path;
      rec.image = read_image_png(img_path);
      rec.seg = read_seg_png(seg_path);
      if (rec.image.h != rec.seg.h || rec.image.w != rec.seg.w) {
        throw ValidationError("image/seg size mismatch for " + e.path + ": image " +
                              std::to_string(rec.image.h) + "x" + std::to_string(rec.image.w) +
                              ", seg " + std::to_string(rec.seg.h) + "x" +
                              std::to_string(rec.seg.w));
      }
      for (uint8_t l : rec.seg.labels) {
        if (l > m.num_classes) {
          throw ValidationError("seg label " + std::to_string(int(l)) + " exceeds class count in " +
                                e.seg_path);
        }
      }
      rec.orig_person_id = e.person_id;
      rec.clothes_id = e.clothes_id;
      rec.camera_id = e.camera_id;
      rec.split = e.split;
      records[i] = std::move(rec);
    } catch (const ValidationError& ex) {
      kinds[i] = 2;
      errors[i] = ex.what();
    } catch (const std::exception& ex) {
      kinds[i] = 1;
      errors[i] = ex.what();
    }
  }
  for (int64_t i = 0; i < n; ++i) {
    if (kinds[i] == 1) throw IoError(errors[i]);
    if (kinds[i] == 2) throw ValidationError(errors[i]);
  }

  std::vector<int> ids;
  ids.reserve(records.size());
  for (const auto& r : records) ids.push_back(r.orig_person_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::map<int, int> remap;
  for (size_t k = 0; k < ids.size(); ++k) remap[ids[k]] = static_cast<int>(k);
  for (auto& r : records) r.person_id = remap[r.orig_person_id];
  return records;
}

void validate_synthetic_config(const SyntheticGenConfig& cfg) {
  if (cfg.n_identities < 1 || cfg.outfits_per_identity < 1 || cfg.images_per_outfit < 1 ||
      cfg.cameras < 1) {
    throw ConfigError("synthetic config: all counts must be >= 1");
  }
  if (cfg.height < 24 || cfg.width < 12) {
    throw ConfigError("synthetic config: image size " + std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width) + " too small to rasterize a silhouette (min 24x12)");
  }
  if (cfg.noise < 0.0) throw ConfigError("synthetic config: noise must be >= 0");
}

namespace {

// stream tags for keyed sub-generators
constexpr uint64_t kGeomTag = 0x01000000;
constexpr uint64_t kColorTag = 0x02000000;
constexpr uint64_t kImageTag = 0x03000000;
constexpr uint64_t kCameraTag = 0x04000000;
constexpr uint64_t kSkinTag = 0x05000000;

std::vector<SyntheticTruth::Geometry> draw_geometries(const SyntheticGenConfig& cfg) {
  Rng rng(Rng::mix(cfg.seed, kGeomTag));
  std::vector<SyntheticTruth::Geometry> out;
  std::vector<std::array<double, 8>> units;
  const double H = cfg.height, W = cfg.width;
  for (int p = 0; p < cfg.n_identities; ++p) {
    std::array<double, 8> u{};
    // keep identities apart in parameter space so body shape stays a usable
    // cue, and apart in the skin-visible head/arm dimensions specifically so
    // outfits can change without erasing identity
    double min_sep = 0.30;
    double min_skin_sep = 0.28;
    for (int attempt = 0;; ++attempt) {
      for (double& x : u) x = rng.uniform();
      bool ok = true;
      for (const auto& prev : units) {
        double d = 0.0, ds = 0.0;
        for (int k = 0; k < 8; ++k) d = std::max(d, std::abs(u[k] - prev[k]));
        for (int k : {0, 3, 4}) ds = std::max(ds, std::abs(u[k] - prev[k]));
        if (d < min_sep || ds < min_skin_sep) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      if (attempt > 0 && attempt % 64 == 0) {
        min_sep *= 0.8;
        min_skin_sep *= 0.8;
      }
    }
    units.push_back(u);
    SyntheticTruth::Geometry g;
    // ranges chosen so each parameter spans several pixels even at the 64x32
    // minimum frame, keeping shape discriminable after downsampling
    g.head_r = (0.040 + 0.055 * u[0]) * H;
    g.torso_h = (0.24 + 0.12 * u[1]) * H;
    g.torso_w = (0.34 + 0.16 * u[2]) * W;
    g.arm_w = (0.05 + 0.12 * u[3]) * W;
    g.arm_len = (0.65 + 0.33 * u[4]) * g.torso_h;
    g.leg_len = (0.23 + 0.13 * u[5]) * H;
    g.leg_w = (0.07 + 0.12 * u[6]) * W;
    g.leg_gap = (0.02 + 0.08 * u[7]) * W;
    out.push_back(g);
  }
  return out;
}

// Head/arm tones are an identity property like the silhouette: drawn once per
// person, shared by both outfits, and kept apart across people so exposed-skin
// regions stay a clothes-independent cue.
std::vector<std::array<double, 3>> draw_skin_tones(const SyntheticGenConfig& cfg) {
  Rng rng(Rng::mix(cfg.seed, kSkinTag));
  std::vector<std::array<double, 3>> out;
  double min_d = 0.45;
  for (int p = 0; p < cfg.n_identities; ++p) {
    std::array<double, 3> c{};
    for (int attempt = 0;; ++attempt) {
      for (double& x : c) x = rng.uniform(0.15, 0.95);
      bool ok = true;
      for (const auto& q : out) {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += std::abs(c[k] - q[k]);
        if (d < min_d) {
          ok = false;
          break;
        }
      }
      if (ok) break;
      if (attempt > 0 && attempt % 64 == 0) min_d *= 0.8;
    }
    out.push_back(c);
  }
  return out;
}

std::array<double, 6> draw_outfit_colors(Rng& rng, const std::vector<std::array<double, 6>>& prev) {
  std::array<double, 6> c{};
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (double& x : c) x = rng.uniform(0.08, 0.95);
    double min_d = 1e9;
    for (const auto& q : prev) {
      double d = 0.0;
      for (int k = 0; k < 6; ++k) d += std::abs(c[k] - q[k]);
      min_d = std::min(min_d, d);
    }
    if (min_d >= 0.8) return c;
  }
  // exhausted: shift deterministically until distinct
  for (double& x : c) x = 0.08 + std::fmod(x - 0.08 + 0.31, 0.87);
  return c;
}

struct RenderSpec {
  const SyntheticGenConfig* cfg;
  const SyntheticTruth::Geometry* geom;
  const std::array<double, 3>* skin;
  const std::array<double, 6>* colors;
  std::array<double, 3> cam_gain;
  uint64_t img_key;
};

void fill_rect(SegMap& seg, int r0, int r1, int c0, int c1, uint8_t label) {
  r0 = std::max(r0, 0);
  c0 = std::max(c0, 0);
  r1 = std::min(r1, seg.h);
  c1 = std::min(c1, seg.w);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) seg.at(r, c) = label;
}

// Rasterizes one sample to 8-bit RGB plus a label grid.
void render_sample(const RenderSpec& rs, std::vector<uint8_t>& rgb, SegMap& seg) {
  const SyntheticGenConfig& cfg = *rs.cfg;
  const SyntheticTruth::Geometry& g = *rs.geom;
  const int H = cfg.height, W = cfg.width;
  Rng rng(rs.img_key);

  const int jx_max = std::max(1, static_cast<int>(std::lround(0.09 * W)));
  const int jy_max = std::max(1, static_cast<int>(std::lround(0.03 * H)));
  const int jx = static_cast<int>(rng.uniform_int(-jx_max, jx_max));
  const int jy = static_cast<int>(rng.uniform_int(-jy_max, jy_max));
  const double illum = rng.uniform(0.85, 1.15);
  const double bg_base = rng.uniform(0.12, 0.25);
  const double bg_grad = rng.uniform(-0.06, 0.06);

  std::vector<double> img(static_cast<size_t>(H) * W * 3);
  for (int r = 0; r < H; ++r) {
    double v = bg_base + bg_grad * (static_cast<double>(r) / H);
    for (int c = 0; c < W; ++c)
      for (int ch = 0; ch < 3; ++ch) img[(static_cast<size_t>(r) * W + c) * 3 + ch] = v;
  }
  // background clutter rectangles; they stay labelled background
  const int n_clutter = static_cast<int>(rng.uniform_int(2, 5));
  for (int b = 0; b < n_clutter; ++b) {
    int bw = static_cast<int>(rng.uniform_int(2, std::max(2, W / 3)));
    int bh = static_cast<int>(rng.uniform_int(2, std::max(2, H / 3)));
    int r0 = static_cast<int>(rng.uniform_int(0, std::max(0, H - bh)));
    int c0 = static_cast<int>(rng.uniform_int(0, std::max(0, W - bw)));
    double col[3] = {rng.uniform(0.0, 0.9), rng.uniform(0.0, 0.9), rng.uniform(0.0, 0.9)};
    for (int r = r0; r < std::min(H, r0 + bh); ++r)
      for (int c = c0; c < std::min(W, c0 + bw); ++c)
        for (int ch = 0; ch < 3; ++ch) img[(static_cast<size_t>(r) * W + c) * 3 + ch] = col[ch];
  }

  seg = SegMap(H, W);
  const double cx = W / 2.0 + jx;
  const int top = static_cast<int>(std::lround(0.03 * H)) + jy;
  const int head_cy = top + static_cast<int>(std::lround(g.head_r));
  const int shoulder = top + static_cast<int>(std::lround(2.0 * g.head_r)) + 1;
  const int hip = shoulder + static_cast<int>(std::lround(g.torso_h));

  fill_rect(seg, shoulder, hip, static_cast<int>(std::lround(cx - g.torso_w / 2)),
            static_cast<int>(std::lround(cx + g.torso_w / 2)), kTorso);
  const int arm_bot = shoulder + static_cast<int>(std::lround(g.arm_len));
  const int tl = static_cast<int>(std::lround(cx - g.torso_w / 2));
  const int tr = static_cast<int>(std::lround(cx + g.torso_w / 2));
  const int aw = std::max(1, static_cast<int>(std::lround(g.arm_w)));
  fill_rect(seg, shoulder, arm_bot, tl - aw, tl, kArms);
  fill_rect(seg, shoulder, arm_bot, tr, tr + aw, kArms);
  const int leg_bot = hip + static_cast<int>(std::lround(g.leg_len));
  const int lw = std::max(1, static_cast<int>(std::lround(g.leg_w)));
  const int half_gap = std::max(1, static_cast<int>(std::lround(g.leg_gap / 2)));
  fill_rect(seg, hip, leg_bot, static_cast<int>(std::lround(cx)) - half_gap - lw,
            static_cast<int>(std::lround(cx)) - half_gap, kLegs);
  fill_rect(seg, hip, leg_bot, static_cast<int>(std::lround(cx)) + half_gap,
            static_cast<int>(std::lround(cx)) + half_gap + lw, kLegs);
  // head last so it wins any overlap with shoulders
  const int ri = static_cast<int>(std::ceil(g.head_r));
  for (int r = head_cy - ri; r <= head_cy + ri; ++r) {
    if (r < 0 || r >= H) continue;
    for (int c = static_cast<int>(cx) - ri; c <= static_cast<int>(cx) + ri; ++c) {
      if (c < 0 || c >= W) continue;
      double dr = r - head_cy, dc = c + 0.5 - cx;
      if (dr * dr + dc * dc <= g.head_r * g.head_r) seg.at(r, c) = kHead;
    }
  }

  const std::array<double, 6>& col = *rs.colors;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const double* body = nullptr;
      switch (seg.at(r, c)) {
        case kHead:
        case kArms: body = rs.skin->data(); break;
        case kTorso: body = &col[0]; break;
        case kLegs: body = &col[3]; break;
        default: break;
      }
      if (body) {
        for (int ch = 0; ch < 3; ++ch) img[(static_cast<size_t>(r) * W + c) * 3 + ch] = body[ch];
      }
    }
  }

  rgb.assign(static_cast<size_t>(H) * W * 3, 0);
  const double sigma = 0.03 * cfg.noise;
  for (size_t i = 0; i < img.size(); ++i) {
    double v = img[i] * rs.cam_gain[i % 3] * illum;
    if (sigma > 0.0) v += rng.normal(0.0, sigma);
    v = std::clamp(v, 0.0, 1.0);
    rgb[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
}

struct PlannedSample {
  int pid, outfit, img_idx, cam;
  Split split;
  std::string rel_img, rel_seg;
};

std::vector<PlannedSample> plan_samples(const SyntheticGenConfig& cfg) {
  std::vector<PlannedSample> plan;
  const int O = cfg.outfits_per_identity, M = cfg.images_per_outfit, NC = cfg.cameras;
  for (int p = 0; p < cfg.n_identities; ++p) {
    for (int o = 0; o < O; ++o) {
      for (int i = 0; i < M; ++i) {
        PlannedSample s;
        s.pid = p;
        s.outfit = o;
        s.img_idx = i;
        if (o < O - 1) {
          // seen outfit: most images train, last one goes to the gallery
          if (M == 1 || i < M - 1) {
            s.split = Split::kTrain;
          } else {
            s.split = Split::kGallery;
          }
        } else {
          // held-out outfit: first image queries, the rest populate the gallery
          s.split = (i == 0) ? Split::kQuery : Split::kGallery;
        }
        switch (s.split) {
          case Split::kQuery: s.cam = 0; break;
          case Split::kGallery: s.cam = NC > 1 ? 1 + (p + o + i) % (NC - 1) : 0; break;
          case Split::kTrain: s.cam = (p + o + i) % NC; break;
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%04d/o%d_i%d_c%d.png", p, o, i, s.cam);
        s.rel_img = std::string(split_name(s.split)) + "/" + buf;
        s.rel_seg = std::string(split_name(s.split)) + "_seg/" + buf;
        plan.push_back(std::move(s));
      }
    }
  }
  return plan;
}

struct RenderedDataset {
  std::vector<PlannedSample> plan;
  std::vector<std::vector<uint8_t>> rgb;
  std::vector<SegMap> seg;
  SyntheticTruth truth;
};

RenderedDataset render_dataset(const SyntheticGenConfig& cfg) {
  validate_synthetic_config(cfg);
  RenderedDataset out;
  out.truth.identities = draw_geometries(cfg);
  out.truth.skin_tones = draw_skin_tones(cfg);
  out.truth.outfit_colors.reserve(static_cast<size_t>(cfg.n_identities) *
                                  cfg.outfits_per_identity);
  for (int p = 0; p < cfg.n_identities; ++p) {
    Rng crng(Rng::mix(cfg.seed, kColorTag + static_cast<uint64_t>(p)));
    std::vector<std::array<double, 6>> mine;
    for (int o = 0; o < cfg.outfits_per_identity; ++o) {
      mine.push_back(draw_outfit_colors(crng, mine));
      out.truth.outfit_colors.push_back(mine.back());
    }
  }
  std::vector<std::array<double, 3>> cam_gains(cfg.cameras);
  for (int c = 0; c < cfg.cameras; ++c) {
    Rng crng(Rng::mix(cfg.seed, kCameraTag + static_cast<uint64_t>(c)));
    for (int ch = 0; ch < 3; ++ch) cam_gains[c][ch] = crng.uniform(0.85, 1.15);
  }

  out.plan = plan_samples(cfg);
  const int64_t n = static_cast<int64_t>(out.plan.size());
  out.rgb.resize(n);
  out.seg.resize(n);
  const int workers = data_worker_count();
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (int64_t i = 0; i < n; ++i) {
    const PlannedSample& s = out.plan[i];
    RenderSpec rs;
    rs.cfg = &cfg;
    rs.geom = &out.truth.identities[s.pid];
    rs.skin = &out.truth.skin_tones[s.pid];
    rs.colors = &out.truth.outfit_colors[static_cast<size_t>(s.pid) * cfg.outfits_per_identity +
                                         s.outfit];
    rs.cam_gain = cam_gains[s.cam];
    uint64_t sample_key = (static_cast<uint64_t>(s.pid) << 20) |
                          (static_cast<uint64_t>(s.outfit) << 10) |
                          static_cast<uint64_t>(s.img_idx);
    rs.img_key = Rng::mix(cfg.seed, kImageTag + sample_key);
    render_sample(rs, out.rgb[i], out.seg[i]);
  }
  return out;
}

LabelSet default_identity_labels() { return LabelSet::from_ints({kHead, kArms, kLegs}); }

}  // namespace

std::vector<SampleRecord> generate_synthetic_samples(const SyntheticGenConfig& cfg,
                                                     SyntheticTruth* truth) {
  RenderedDataset ds = render_dataset(cfg);
  std::vector<SampleRecord> records(ds.plan.size());
  for (size_t i = 0; i < ds.plan.size(); ++i) {
    const PlannedSample& s = ds.plan[i];
    SampleRecord& r = records[i];
    r.image = Image(cfg.height, cfg.width);
    for (size_t k = 0; k < ds.rgb[i].size(); ++k) r.image.px[k] = ds.rgb[i][k] / 255.0;
    r.seg = std::move(ds.seg[i]);
    r.person_id = s.pid;
    r.orig_person_id = s.pid;
    r.clothes_id = s.outfit;
    r.camera_id = s.cam;
    r.split = s.split;
  }
  if (truth) *truth = std::move(ds.truth);
  return records;
}

DatasetManifest generate_synthetic(const SyntheticGenConfig& cfg, const std::string& out_root) {
  RenderedDataset ds = render_dataset(cfg);
  DatasetManifest m;
  m.root = out_root;
  m.num_classes = kNumSynthClasses;
  m.identity_labels = default_identity_labels();

  for (size_t i = 0; i < ds.plan.size(); ++i) {
    const PlannedSample& s = ds.plan[i];
    fs::path img_path = fs::path(out_root) / s.rel_img;
    fs::path seg_path = fs::path(out_root) / s.rel_seg;
    fs::create_directories(img_path.parent_path());
    fs::create_directories(seg_path.parent_path());

    Image img(cfg.height, cfg.width);
    for (size_t k = 0; k < ds.rgb[i].size(); ++k) img.px[k] = ds.rgb[i][k] / 255.0;
    write_image_png(img_path, img);
    write_gray_png(seg_path, ds.seg[i].labels.data(), cfg.height, cfg.width);

    ManifestEntry e;
    e.path = s.rel_img;
    e.seg_path = s.rel_seg;
    e.person_id = s.pid;
    e.clothes_id = s.outfit;
    e.camera_id = s.cam;
    e.split = s.split;
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, (fs::path(out_root) / "manifest.txt").string());
  return m;
}

void validate_augmentation_config(const AugmentationConfig& cfg) {
  if (cfg.flip_prob < 0.0 || cfg.flip_prob > 1.0)
    throw ConfigError("augmentation: flip_prob outside [0,1]");
  if (cfg.erase_prob < 0.0 || cfg.erase_prob > 1.0)
    throw ConfigError("augmentation: erase_prob outside [0,1]");
  if (cfg.crop_pad < 0) throw ConfigError("augmentation: crop_pad must be >= 0");
  if (cfg.crop_h < 0 || cfg.crop_w < 0)
    throw ConfigError("augmentation: crop size must be >= 0");
  if (cfg.erase_lo < 0.0 || cfg.erase_hi > 1.0 || cfg.erase_lo > cfg.erase_hi)
    throw ConfigError("augmentation: erase area ratios must satisfy 0 <= lo <= hi <= 1");
  if (cfg.erase_aspect_lo <= 0.0 || cfg.erase_aspect_lo > cfg.erase_aspect_hi)
    throw ConfigError("augmentation: erase aspect range must satisfy 0 < lo <= hi");
}

namespace {

void flip_horizontal(Image& img, SegMap& seg) {
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w / 2; ++c) {
      int cm = img.w - 1 - c;
      for (int ch = 0; ch < 3; ++ch) std::swap(img.at(r, c, ch), img.at(r, cm, ch));
      std::swap(seg.at(r, c), seg.at(r, cm));
    }
  }
}

}  // namespace

SampleRecord augment(const SampleRecord& sample, const AugmentationConfig& cfg, Rng& rng) {
  validate_augmentation_config(cfg);
  SampleRecord out = sample;

  if (rng.bernoulli(cfg.flip_prob)) flip_horizontal(out.image, out.seg);

  const int h = out.image.h, w = out.image.w;
  int out_h = cfg.crop_h > 0 ? cfg.crop_h : h;
  int out_w = cfg.crop_w > 0 ? cfg.crop_w : w;
  if (cfg.crop_pad > 0 || out_h != h || out_w != w) {
    const int ph = h + 2 * cfg.crop_pad, pw = w + 2 * cfg.crop_pad;
    out_h = std::min(out_h, ph);  // degenerate requests clamp instead of erroring
    out_w = std::min(out_w, pw);
    const int r0 = static_cast<int>(rng.uniform_int(0, ph - out_h));
    const int c0 = static_cast<int>(rng.uniform_int(0, pw - out_w));
    Image cropped(out_h, out_w);
    SegMap cseg(out_h, out_w);
    for (int r = 0; r < out_h; ++r) {
      const int sr = r0 + r - cfg.crop_pad;
      if (sr < 0 || sr >= h) continue;
      for (int c = 0; c < out_w; ++c) {
        const int sc = c0 + c - cfg.crop_pad;
        if (sc < 0 || sc >= w) continue;
        for (int ch = 0; ch < 3; ++ch) cropped.at(r, c, ch) = out.image.at(sr, sc, ch);
        cseg.at(r, c) = out.seg.at(sr, sc);
      }
    }
    out.image = std::move(cropped);
    out.seg = std::move(cseg);
  }

  if (rng.bernoulli(cfg.erase_prob)) {
    const int H = out.image.h, W = out.image.w;
    const double S = static_cast<double>(H) * W;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double area = rng.uniform(cfg.erase_lo, cfg.erase_hi) * S;
      const double aspect = rng.uniform(cfg.erase_aspect_lo, cfg.erase_aspect_hi);
      const int eh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
      const int ew = static_cast<int>(std::lround(std::sqrt(area / aspect)));
      if (eh < 1 || ew < 1 || eh >= H || ew >= W) continue;
      const double a = static_cast<double>(eh) * ew;
      if (a < cfg.erase_lo * S || a > cfg.erase_hi * S) continue;  // rounding pushed it out
      const int r0 = static_cast<int>(rng.uniform_int(0, H - eh));
      const int c0 = static_cast<int>(rng.uniform_int(0, W - ew));
      for (int r = r0; r < r0 + eh; ++r) {
        for (int c = c0; c < c0 + ew; ++c) {
          for (int ch = 0; ch < 3; ++ch) out.image.at(r, c, ch) = 0.0;
          out.seg.at(r, c) = kBackground;
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace qareid
