#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qareid/checkpoint.hpp"
#include "qareid/config.hpp"
#include "qareid/errors.hpp"
#include "qareid/eval.hpp"
#include "qareid/image.hpp"
#include "qareid/train.hpp"

namespace {

using namespace qareid;

struct Args {
  std::string config;
  std::string checkpoint;
  std::string protocol;
  std::string out;
  uint64_t seed = 0;
  bool has_seed = false;
  std::string img1, seg1, img2, seg2;
  std::string image, seg;
};

std::vector<SampleRecord> load_samples(const RunConfig& cfg) {
  if (!cfg.manifest.empty()) {
    const DatasetManifest m = read_manifest(cfg.manifest);
    return load_dataset(m);
  }
  return generate_synthetic_samples(cfg.synth);
}

void split_dataset(std::vector<SampleRecord>&& all, std::vector<SampleRecord>& train,
                   std::vector<SampleRecord>& query, std::vector<SampleRecord>& gallery) {
  for (SampleRecord& s : all) {
    switch (s.split) {
      case Split::kTrain: train.push_back(std::move(s)); break;
      case Split::kQuery: query.push_back(std::move(s)); break;
      case Split::kGallery: gallery.push_back(std::move(s)); break;
    }
  }
}

void check_resolution(const std::vector<SampleRecord>& samples, const ModelConfig& mc,
                      const char* which) {
  for (const SampleRecord& s : samples) {
    if (s.image.h != mc.backbone.input_h || s.image.w != mc.backbone.input_w)
      throw ValidationError(std::string(which) + " sample is " + std::to_string(s.image.h) + "x" +
                            std::to_string(s.image.w) + ", the model expects " +
                            std::to_string(mc.backbone.input_h) + "x" +
                            std::to_string(mc.backbone.input_w));
  }
}

int fail(int status, const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return status;
}

int cmd_generate(const Args& a) {
  RunConfig cfg;
  std::string out;
  try {
    cfg = load_run_config(a.config);
    if (a.has_seed) override_seed(cfg, a.seed);
    if (!cfg.synthetic) throw ConfigError("generate needs a synthetic dataset config");
    out = a.out.empty() ? cfg.out_dir : a.out;
    std::filesystem::create_directories(out);
  } catch (const std::exception& e) {
    return fail(2, e);
  }
  try {
    const DatasetManifest m = generate_synthetic(cfg.synth, out);
    std::cout << "wrote " << m.entries.size() << " images under " << out << "\n"
              << "manifest: " << out << "/manifest.txt\n";
  } catch (const std::exception& e) {
    return fail(3, e);
  }
  return 0;
}

int cmd_train(const Args& a) {
  RunConfig cfg;
  std::vector<SampleRecord> train, query, gallery;
  std::optional<QAReidModel> model;
  std::optional<Trainer> trainer;
  try {
    cfg = load_run_config(a.config);
    if (a.has_seed) override_seed(cfg, a.seed);
    if (!a.out.empty()) cfg.out_dir = a.out;
    split_dataset(load_samples(cfg), train, query, gallery);
    if (train.empty()) throw ValidationError("dataset has no training split");

    ModelConfig mc = cfg.model;
    int max_id = 0;
    for (const SampleRecord& s : train) max_id = std::max(max_id, s.person_id);
    mc.num_classes = max_id + 1;
    check_resolution(train, mc, "train");

    model.emplace(mc, cfg.seed);
    trainer.emplace(*model, train, cfg.train, cfg.out_dir);
    if (!a.checkpoint.empty()) trainer->restore(load_checkpoint(a.checkpoint));
    std::filesystem::create_directories(cfg.out_dir);
  } catch (const std::exception& e) {
    return fail(2, e);
  }
  try {
    const int start = trainer->completed_epochs();
    if (start >= cfg.train.epochs) {
      std::cout << "checkpoint already covers all " << cfg.train.epochs << " epochs\n";
      return 0;
    }
    trainer->run();
    std::cout << "trained epochs " << start << ".." << cfg.train.epochs - 1 << " ("
              << trainer->iters_per_epoch() << " iters/epoch)\n"
              << "checkpoint: " << trainer->checkpoint_path() << "\n"
              << "loss log: " << trainer->log_path() << "\n";
  } catch (const std::exception& e) {
    return fail(3, e);
  }
  return 0;
}

int cmd_eval(const Args& a) {
  RunConfig cfg;
  std::vector<SampleRecord> train, query, gallery;
  std::optional<QAReidModel> model;
  Protocol proto = Protocol::kCc;
  try {
    cfg = load_run_config(a.config);
    if (a.has_seed) override_seed(cfg, a.seed);
    if (!a.out.empty()) cfg.out_dir = a.out;
    proto = a.protocol.empty() ? cfg.protocol : protocol_from_name(a.protocol);
    model.emplace(model_from_checkpoint(load_checkpoint(a.checkpoint)));
    split_dataset(load_samples(cfg), train, query, gallery);
    if (query.empty() || gallery.empty())
      throw ValidationError("dataset needs non-empty query and gallery splits");
    check_resolution(query, model->config(), "query");
    check_resolution(gallery, model->config(), "gallery");
    std::filesystem::create_directories(cfg.out_dir);
  } catch (const std::exception& e) {
    return fail(2, e);
  }
  try {
    const EvalResult res = evaluate_model(*model, query, gallery, proto);
    const nlohmann::json out = {{"protocol", protocol_name(proto)},
                                {"top1", res.top1},
                                {"mAP", res.mAP},
                                {"num_queries", res.num_queries},
                                {"excluded_queries", res.excluded_queries}};
    const std::string path = cfg.out_dir + "/eval_result.json";
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << out.dump(2) << "\n";
    std::printf("protocol %s: top1 %.2f mAP %.2f (queries %d, excluded %d)\n",
                protocol_name(proto), res.top1, res.mAP, res.num_queries, res.excluded_queries);
    std::cout << "result: " << path << "\n";
  } catch (const std::exception& e) {
    return fail(3, e);
  }
  return 0;
}

int cmd_score_pair(const Args& a) {
  std::optional<QAReidModel> model;
  SampleRecord s1, s2;
  try {
    model.emplace(model_from_checkpoint(load_checkpoint(a.checkpoint)));
    if (model->config().mode != AblationMode::kFull)
      throw ConfigError("score-pair needs a full-model checkpoint, this one is " +
                        std::string(ablation_name(model->config().mode)));
    s1.image = read_image_png(a.img1);
    s1.seg = read_seg_png(a.seg1);
    s2.image = read_image_png(a.img2);
    s2.seg = read_seg_png(a.seg2);
    if (s1.image.h != s2.image.h || s1.image.w != s2.image.w)
      throw ValidationError("images differ in resolution");
    check_resolution({s1, s2}, model->config(), "input");
  } catch (const std::exception& e) {
    return fail(2, e);
  }
  try {
    const Batch b1 = make_batch({&s1}, model->config().identity_labels);
    const Batch b2 = make_batch({&s2}, model->config().identity_labels);
    const Tensor scores = model->score(model->extract(b1), model->extract(b2));
    std::printf("%.6f\n", scores[0]);
  } catch (const std::exception& e) {
    return fail(3, e);
  }
  return 0;
}

int cmd_heatmap(const Args& a) {
  std::optional<QAReidModel> model;
  SampleRecord s;
  try {
    model.emplace(model_from_checkpoint(load_checkpoint(a.checkpoint)));
    s.image = read_image_png(a.image);
    s.seg = read_seg_png(a.seg);
    check_resolution({s}, model->config(), "input");
    if (a.out.empty()) throw ConfigError("heatmap needs --out");
  } catch (const std::exception& e) {
    return fail(2, e);
  }
  try {
    const Batch b = make_batch({&s}, model->config().identity_labels);
    const Tensor sal = model->saliency(b);
    Tensor grid({sal.dim(1), sal.dim(2)});
    for (int64_t i = 0; i < grid.numel(); ++i) grid[i] = sal[i];
    const Tensor up = upsample_nearest(grid, s.image.h, s.image.w);
    std::vector<uint8_t> gray(up.numel());
    for (int64_t i = 0; i < up.numel(); ++i)
      gray[i] = static_cast<uint8_t>(std::lround(up[i] * 255.0));
    write_gray_png(a.out, gray.data(), s.image.h, s.image.w);
    std::cout << "wrote " << a.out << "\n";
  } catch (const std::exception& e) {
    return fail(3, e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clothes-changing person re-identification: synthetic benchmarks, training, "
               "retrieval evaluation, pair scoring and saliency export"};
  app.require_subcommand(1);
  Args a;

  CLI::App* generate = app.add_subcommand("generate", "Render a synthetic dataset to disk");
  generate->add_option("--config", a.config, "run config JSON")->required();
  CLI::Option* gen_seed = generate->add_option("--seed", a.seed, "override the config seed");
  generate->add_option("--out", a.out, "output directory (default: config out_dir)");

  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", a.config, "run config JSON")->required();
  train->add_option("--checkpoint", a.checkpoint, "resume from this checkpoint");
  CLI::Option* train_seed = train->add_option("--seed", a.seed, "override the config seed");
  train->add_option("--out", a.out, "output directory (default: config out_dir)");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate retrieval on query/gallery splits");
  eval->add_option("--config", a.config, "run config JSON")->required();
  eval->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required();
  eval->add_option("--protocol", a.protocol, "general, sc or cc")
      ->check(CLI::IsMember({"general", "sc", "cc"}));
  CLI::Option* eval_seed = eval->add_option("--seed", a.seed, "override the config seed");
  eval->add_option("--out", a.out, "output directory (default: config out_dir)");

  CLI::App* score = app.add_subcommand("score-pair", "Match probability of two images");
  score->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required();
  score->add_option("img1", a.img1, "first image PNG")->required();
  score->add_option("seg1", a.seg1, "first segmentation PNG")->required();
  score->add_option("img2", a.img2, "second image PNG")->required();
  score->add_option("seg2", a.seg2, "second segmentation PNG")->required();

  CLI::App* heatmap = app.add_subcommand("heatmap", "Export a saliency map for one image");
  heatmap->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required();
  heatmap->add_option("image", a.image, "input image PNG")->required();
  heatmap->add_option("seg", a.seg, "segmentation PNG")->required();
  heatmap->add_option("--out", a.out, "output PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  a.has_seed = gen_seed->count() > 0 || train_seed->count() > 0 || eval_seed->count() > 0;
  if (app.got_subcommand(generate)) return cmd_generate(a);
  if (app.got_subcommand(train)) return cmd_train(a);
  if (app.got_subcommand(eval)) return cmd_eval(a);
  if (app.got_subcommand(score)) return cmd_score_pair(a);
  return cmd_heatmap(a);
}
