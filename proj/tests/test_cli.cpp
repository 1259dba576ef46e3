#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Exit status of the CLI with stderr/stdout silenced.
int run(const std::string& args) {
  const std::string cmd = std::string("QUADFIT_LOG=error ") + QUADFIT_CLI + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream is(p);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

// Shared fixture: a toy model and 5 rasterized scenes.
const fs::path& workspace() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "quadfit_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    const std::string w = d.string();
    REQUIRE(run("make-toy --out " + w + "/toy") == 0);
    REQUIRE(run("--seed 3 sample --in " + w + "/toy --out " + w + "/scenes --n 5") == 0);
    REQUIRE(run("rasterize --in " + w + "/scenes/scenes.jsonl --model " + w + "/toy --out " + w + "/ras") == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("self evaluation gives zero error") {
  const std::string w = workspace().string();
  REQUIRE(run("eval --pred " + w + "/ras/manifest.jsonl --gt " + w + "/ras/manifest.jsonl --model " + w +
              "/toy --out " + w + "/self.json --csv " + w + "/self.csv") == 0);
  const json m = read_json(w + "/self.json");
  CHECK(m["n_instances"] == 5);
  CHECK(m["pa_mpjpe"].get<double>() <= 1e-12);
  CHECK(m["pa_mpvpe"].get<double>() <= 1e-12);
  CHECK(m["pck"]["0.1"].get<double>() == 1.0);
  std::ifstream csv(w + "/self.csv");
  int lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == 6);
}

TEST_CASE("filter accepts identical masks") {
  const std::string w = workspace().string();
  REQUIRE(run("filter --in " + w + "/ras/manifest.jsonl --candidates " + w + "/ras --out " + w + "/filt") == 0);
  CHECK(jsonl(w + "/filt/accept.jsonl").size() == 5);
  CHECK(jsonl(w + "/filt/uncertain.jsonl").empty());
  CHECK(jsonl(w + "/filt/reject.jsonl").empty());
  for (const json& r : jsonl(w + "/filt/filter.jsonl")) CHECK(r["iou"].get<double>() == 1.0);
}

TEST_CASE("reruns are byte-identical") {
  const std::string w = workspace().string();
  REQUIRE(run("--seed 3 sample --in " + w + "/toy --out " + w + "/scenes2 --n 5") == 0);
  REQUIRE(run("--threads 3 rasterize --in " + w + "/scenes2/scenes.jsonl --model " + w + "/toy --out " + w +
              "/ras2") == 0);
  for (const auto& e : fs::directory_iterator(w + "/ras")) {
    const fs::path other = fs::path(w) / "ras2" / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK_MESSAGE(slurp(e.path()) == slurp(other), e.path().filename().string());
  }
  REQUIRE(run("make-toy --out " + w + "/toy2") == 0);
  for (const char* f : {"template.json", "prior.json", "poses.json"})
    CHECK(slurp(fs::path(w) / "toy" / f) == slurp(fs::path(w) / "toy2" / f));
}

TEST_CASE("exit codes") {
  const std::string w = workspace().string();
  CHECK(run("make-toy --out " + w + "/x --bogus") == 1);
  CHECK(run("") == 1);
  CHECK(run("sample --in " + w + "/missing --out " + w + "/x") == 2);
  CHECK(run("eval --pred " + w + "/nope.jsonl --gt " + w + "/nope.jsonl --model " + w + "/toy --out " + w +
            "/x.json") == 2);

  std::ofstream(w + "/bad.json") << R"({"camera": {"focal": 1000, "zoom": 2}})";
  CHECK(run("--config " + w + "/bad.json make-toy --out " + w + "/x") == 1);
  std::ofstream(w + "/typed.json") << R"({"fit": {"restarts": "four"}})";
  CHECK(run("--config " + w + "/typed.json make-toy --out " + w + "/x") == 1);
  std::ofstream(w + "/good.json") << R"({"toy": {"pose_count": 4}})";
  CHECK(run("--config " + w + "/good.json make-toy --out " + w + "/x") == 0);
  CHECK(run("--threads 0 make-toy --out " + w + "/x") == 1);
}

TEST_CASE("aggregate writes the table, split and batches") {
  const std::string w = workspace().string();
  std::ofstream(w + "/sources.json") << R"({"sources": [
      {"id": "CtrlAni3D", "manifest": "ras/manifest.jsonl", "kind": "full_3d"},
      {"id": "Extra", "manifest": "ras/manifest.jsonl", "kind": "full_3d", "weight": 0.0}]})";
  // The manifest tags every line CtrlAni3D, so "Extra" picks up all lines too.
  REQUIRE(run("--seed 2 aggregate --in " + w + "/sources.json --out " + w + "/agg --batches 3") == 0);
  const json table = read_json(w + "/agg/aggregate.json");
  REQUIRE(table["sources"].size() == 2);
  CHECK(table["sources"][0]["id"] == "CtrlAni3D");
  CHECK(table["sources"][0]["weight"].get<double>() == 0.5);
  CHECK(table["sources"][0]["mass"].get<double>() == doctest::Approx(1.0));
  CHECK(table["sources"][1]["mass"].get<double>() == 0.0);
  // round(0.15 * 5) = 1 per source.
  CHECK(jsonl(w + "/agg/val.jsonl").size() == 2);
  CHECK(jsonl(w + "/agg/train.jsonl").size() == 8);
  const auto batches = jsonl(w + "/agg/batches.jsonl");
  REQUIRE(batches.size() == 3);
  for (const json& b : batches) {
    CHECK(b["records"].size() == 16);
    CHECK(b["families"].size() == 16);
  }

  std::ofstream(w + "/zero.json") << R"({"sources": [{"id": "A", "manifest": "ras/manifest.jsonl", "weight": 0}]})";
  CHECK(run("aggregate --in " + w + "/zero.json --out " + w + "/agg0") == 1);
  std::ofstream(w + "/twod.json") << R"({"sources": [{"id": "A", "manifest": "ras/manifest.jsonl", "kind": "kp2d_only", "weight": 1}]})";
  CHECK(run("aggregate --in " + w + "/twod.json --out " + w + "/agg1") == 1);
}

TEST_CASE("sample, rasterize, fit, eval on 20 scenes") {
  const std::string w = workspace().string();
  REQUIRE(run("--seed 1 sample --in " + w + "/toy --out " + w + "/s20 --n 20") == 0);
  REQUIRE(run("rasterize --in " + w + "/s20/scenes.jsonl --model " + w + "/toy --out " + w + "/r20") == 0);

  // Records below the fitter's 6-visible precondition must fail, and only those.
  int eligible = 0;
  double hth = 0.0;
  for (const json& line : jsonl(w + "/r20/manifest.jsonl")) {
    const json r = read_json(fs::path(w) / "r20" / line["record"].get<std::string>());
    int vis = 0;
    for (const json& kp : r["keypoints2d"]) vis += kp[2].get<double>() == 1.0;
    if (vis < 6) continue;
    ++eligible;
    const auto& k = r["keypoints3d"];
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = k[0][c].get<double>() - k[7][c].get<double>();
      d2 += d * d;
    }
    hth += std::sqrt(d2);
  }
  REQUIRE(eligible > 0);
  hth /= eligible;

  const int fit_rc = run("--threads 2 fit --in " + w + "/r20/manifest.jsonl --model " + w + "/toy --out " + w + "/f20");
  CHECK(fit_rc == (eligible == 20 ? 0 : 1));
  CHECK(jsonl(w + "/f20/fits.jsonl").size() == static_cast<std::size_t>(eligible));
  REQUIRE(run("eval --pred " + w + "/f20/fits.jsonl --gt " + w + "/f20/targets.jsonl --model " + w + "/toy --out " +
              w + "/f20/metrics.json") == 0);
  const json m = read_json(w + "/f20/metrics.json");
  CHECK(m["n_instances"] == eligible);
  CHECK(m["pa_mpjpe"].get<double>() <= 0.02 * hth);
  MESSAGE("pa_mpjpe " << m["pa_mpjpe"].get<double>() << " vs 2% hth " << 0.02 * hth);

  // Thread count does not change the bytes.
  REQUIRE(run("--threads 1 fit --in " + w + "/r20/manifest.jsonl --model " + w + "/toy --out " + w + "/f20b") == fit_rc);
  for (const json& line : jsonl(w + "/f20/fits.jsonl")) {
    const std::string name = line["record"].get<std::string>();
    CHECK(slurp(fs::path(w) / "f20" / name) == slurp(fs::path(w) / "f20b" / name));
  }
}
