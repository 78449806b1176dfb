#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "qareid/dataset.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path work_root() {
  static const fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "qareid_cli_work";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

struct Cmd {
  int status = -1;
  std::string out, err;
};

Cmd run(const std::string& args) {
  static int counter = 0;
  const fs::path so = work_root() / ("out" + std::to_string(counter));
  const fs::path se = work_root() / ("err" + std::to_string(counter));
  ++counter;
  const std::string cmd =
      std::string(QAREID_CLI_PATH) + " " + args + " >" + so.string() + " 2>" + se.string();
  const int rc = std::system(cmd.c_str());
  Cmd r;
  r.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json base_config(const std::string& out_dir, int epochs) {
  return json{
      {"seed", 7},
      {"out_dir", out_dir},
      {"dataset",
       {{"synthetic",
         {{"identities", 4},
          {"outfits_per_identity", 2},
          {"images_per_outfit", 3},
          {"height", 64},
          {"width", 32},
          {"cameras", 3},
          {"noise", 1.0}}}}},
      {"model", {{"backbone", "toy"}, {"input", json::array({64, 32})}, {"mode", "full"}}},
      {"train",
       {{"epochs", epochs},
        {"batch_size", 8},
        {"p", 4},
        {"k", 2},
        {"lr", 3.5e-4},
        {"margin", 0.3}}},
      {"protocol", "cc"},
  };
}

fs::path write_config(const std::string& name, const json& j) {
  const fs::path p = work_root() / name;
  std::ofstream os(p);
  os << j.dump(2) << "\n";
  return p;
}

}  // namespace

TEST_CASE("help and argument errors") {
  CHECK(run("--help").status == 0);
  CHECK(run("train").status == 2);          // missing --config
  CHECK(run("").status == 2);               // a subcommand is required
  CHECK(run("frobnicate").status == 2);     // unknown subcommand
  const Cmd r = run("train --config " + (work_root() / "nope.json").string());
  CHECK(r.status == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("generate is deterministic at the file level") {
  const fs::path cfg = write_config("gen.json", base_config((work_root() / "unused").string(), 1));
  const fs::path d1 = work_root() / "gen1";
  const fs::path d2 = work_root() / "gen2";
  const Cmd a = run("generate --config " + cfg.string() + " --out " + d1.string());
  REQUIRE(a.status == 0);
  CHECK(a.out.find("wrote 24 images") != std::string::npos);
  REQUIRE(fs::exists(d1 / "manifest.txt"));
  const Cmd b = run("generate --config " + cfg.string() + " --out " + d2.string());
  REQUIRE(b.status == 0);
  CHECK(slurp_file(d1 / "manifest.txt") == slurp_file(d2 / "manifest.txt"));

  // a different seed produces different images
  const fs::path d3 = work_root() / "gen3";
  const Cmd c = run("generate --config " + cfg.string() + " --seed 8 --out " + d3.string());
  REQUIRE(c.status == 0);
  const auto m = qareid::read_manifest((d1 / "manifest.txt").string());
  REQUIRE(!m.entries.empty());
  CHECK(slurp_file(d1 / m.entries[0].path) != slurp_file(d3 / m.entries[0].path));
}

TEST_CASE("invalid configurations exit with status 2") {
  json bad = base_config((work_root() / "r_bad").string(), 1);
  bad["train"]["p"] = 3;  // 3*2 != 8
  const fs::path cfg = write_config("bad.json", bad);
  const Cmd r = run("train --config " + cfg.string());
  CHECK(r.status == 2);
  CHECK(r.err.find("error:") != std::string::npos);

  json unknown = base_config((work_root() / "r_unknown").string(), 1);
  unknown["training"] = json::object();
  const Cmd u = run("train --config " + write_config("unknown.json", unknown).string());
  CHECK(u.status == 2);

  json mismatched = base_config((work_root() / "r_mis").string(), 1);
  mismatched["model"]["input"] = json::array({32, 16});  // dataset renders 64x32
  const Cmd m = run("train --config " + write_config("mis.json", mismatched).string());
  CHECK(m.status == 2);
}

TEST_CASE("training, resuming and evaluating through the command line") {
  const std::string run_dir = (work_root() / "run").string();
  const fs::path cfg1 = write_config("train1.json", base_config(run_dir, 1));
  const fs::path cfg2 = write_config("train2.json", base_config(run_dir, 2));

  const Cmd t1 = run("train --config " + cfg1.string());
  REQUIRE(t1.status == 0);
  CHECK(t1.out.find("trained epochs 0..0") != std::string::npos);
  const std::string ckpt = run_dir + "/checkpoint.bin";
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(run_dir + "/loss_log.jsonl"));

  // resuming onto a config that asks for no additional epochs is a no-op
  const Cmd noop = run("train --config " + cfg1.string() + " --checkpoint " + ckpt);
  REQUIRE(noop.status == 0);
  CHECK(noop.out.find("already covers") != std::string::npos);

  // extend the run to a second epoch
  const Cmd t2 = run("train --config " + cfg2.string() + " --checkpoint " + ckpt);
  REQUIRE(t2.status == 0);
  CHECK(t2.out.find("trained epochs 1..1") != std::string::npos);
  {
    std::ifstream log(run_dir + "/loss_log.jsonl");
    std::string line;
    int epoch0 = 0, epoch1 = 0;
    while (std::getline(log, line)) {
      const auto j = json::parse(line);
      const int e = j.at("epoch").get<int>();
      epoch0 += e == 0;
      epoch1 += e == 1;
      CHECK(std::isfinite(j.at("total").get<double>()));
    }
    CHECK(epoch0 > 0);
    CHECK(epoch0 == epoch1);
  }

  // the resumed trajectory is byte-identical to an uninterrupted one
  const std::string straight_dir = (work_root() / "straight").string();
  const fs::path cfg_straight = write_config("straight.json", base_config(straight_dir, 2));
  const Cmd ts = run("train --config " + cfg_straight.string());
  REQUIRE(ts.status == 0);
  CHECK(slurp_file(straight_dir + "/loss_log.jsonl") == slurp_file(run_dir + "/loss_log.jsonl"));

  // evaluation under both clothes protocols
  const std::string eval_cc = (work_root() / "eval_cc").string();
  const Cmd ec = run("eval --config " + cfg2.string() + " --checkpoint " + ckpt + " --out " + eval_cc);
  REQUIRE(ec.status == 0);
  const json jc = json::parse(slurp_file(eval_cc + "/eval_result.json"));
  CHECK(jc.at("protocol") == "cc");
  CHECK(jc.at("top1").get<double>() >= 0.0);
  CHECK(jc.at("top1").get<double>() <= 100.0);
  CHECK(jc.at("mAP").get<double>() >= 0.0);
  CHECK(jc.at("mAP").get<double>() <= 100.0);
  CHECK(jc.at("num_queries").get<int>() > 0);

  const std::string eval_sc = (work_root() / "eval_sc").string();
  const Cmd es = run("eval --config " + cfg2.string() + " --checkpoint " + ckpt +
                     " --protocol sc --out " + eval_sc);
  REQUIRE(es.status == 0);
  const json js = json::parse(slurp_file(eval_sc + "/eval_result.json"));
  CHECK(js.at("protocol") == "sc");

  const Cmd egen = run("eval --config " + cfg2.string() + " --checkpoint " + ckpt +
                       " --protocol general --out " + (work_root() / "eval_gen").string());
  REQUIRE(egen.status == 0);

  // protocol names are validated by the parser
  CHECK(run("eval --config " + cfg2.string() + " --checkpoint " + ckpt + " --protocol open").status ==
        2);
  // missing checkpoint fails during setup
  CHECK(run("eval --config " + cfg2.string() + " --checkpoint " + run_dir + "/nope.bin").status == 2);

  // pair scoring against rendered images
  const fs::path data_dir = work_root() / "gen1";
  if (!fs::exists(data_dir / "manifest.txt")) {
    const fs::path gcfg = write_config("gen_wf.json", base_config(run_dir, 1));
    REQUIRE(run("generate --config " + gcfg.string() + " --out " + data_dir.string()).status == 0);
  }
  const auto m = qareid::read_manifest((data_dir / "manifest.txt").string());
  REQUIRE(m.entries.size() >= 2);
  const std::string i1 = (data_dir / m.entries[0].path).string();
  const std::string s1 = (data_dir / m.entries[0].seg_path).string();
  const std::string i2 = (data_dir / m.entries[1].path).string();
  const std::string s2 = (data_dir / m.entries[1].seg_path).string();
  const Cmd sp = run("score-pair --checkpoint " + ckpt + " " + i1 + " " + s1 + " " + i2 + " " + s2);
  REQUIRE(sp.status == 0);
  CHECK(std::regex_match(sp.out, std::regex("0\\.[0-9]{6}\n")));
  const double p = std::stod(sp.out);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  // scoring is symmetric enough to be deterministic: same invocation, same value
  const Cmd sp2 = run("score-pair --checkpoint " + ckpt + " " + i1 + " " + s1 + " " + i2 + " " + s2);
  CHECK(sp2.out == sp.out);

  // saliency export keeps the input resolution
  const std::string hm = (work_root() / "saliency.png").string();
  const Cmd h = run("heatmap --checkpoint " + ckpt + " " + i1 + " " + s1 + " --out " + hm);
  REQUIRE(h.status == 0);
  REQUIRE(fs::exists(hm));
  const qareid::SegMap gray = qareid::read_seg_png(hm);
  CHECK(gray.h == 64);
  CHECK(gray.w == 32);

  // unreadable segmentation input fails during setup
  CHECK(run("heatmap --checkpoint " + ckpt + " " + i1 + " " + (work_root() / "no_seg.png").string() +
            " --out " + hm)
            .status == 2);
}

TEST_CASE("runtime failures exit with status 3") {
  json diverge = base_config((work_root() / "r_div").string(), 2);
  diverge["train"]["lr"] = 1e200;
  const fs::path cfg = write_config("diverge.json", diverge);
  const Cmd r = run("train --config " + cfg.string());
  CHECK(r.status == 3);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(r.err.find("non-finite") != std::string::npos);
}
