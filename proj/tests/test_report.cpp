#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "udit/common.hpp"
#include "udit/metrics.hpp"
#include "udit/report.hpp"

using namespace udit;
using namespace udit::report;

namespace {

namespace fs = std::filesystem;

std::string temp_root(const std::string& tag) {
  return cat("/tmp/udit_report_", ::getpid(), "_", tag);
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& tag) : path(temp_root(tag)) {
    fs::remove_all(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

metrics::BiasReport make_report(const std::string& direction, double mis,
                                double dic, double fd, double div) {
  metrics::BiasReport r;
  r.direction = direction;
  r.misclassification_rate = mis;
  r.drop_in_confidence = dic;
  r.feature_distance = fd;
  r.diversity = div;
  r.n_inputs = 100;
  r.n_samples_per_input = 4;
  r.seed = 7;
  r.model_checksum = "abc123";
  return r;
}

std::vector<LabeledReport> two_by_two() {
  return {
      {"baseline", make_report("A->B", 0.40, 0.22, 0.91, 3.5)},
      {"udit", make_report("A->B", 0.12, 0.05, 0.33, 3.1)},
      {"baseline", make_report("B->A", 0.35, 0.18, 0.84, 2.9)},
      {"udit", make_report("B->A", 0.10, -0.02, 0.28, 2.7)},
  };
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("render writes the four pinned files and returns their paths") {
  TempDir dir("four_files");
  const std::vector<std::string> files =
      render_report(two_by_two(), dir.path);
  REQUIRE(files.size() == 4);
  CHECK(files[0] ==
        (fs::path(dir.path) / "chart_misclassification_rate.svg").string());
  CHECK(files[1] ==
        (fs::path(dir.path) / "chart_drop_in_confidence.svg").string());
  CHECK(files[2] ==
        (fs::path(dir.path) / "chart_feature_distance.svg").string());
  CHECK(files[3] == (fs::path(dir.path) / "diversity_table.svg").string());
  for (const std::string& f : files) CHECK(fs::exists(f));
}

TEST_CASE("charts carry the expected structure and labels") {
  TempDir dir("structure");
  const auto files = render_report(two_by_two(), dir.path);

  const std::string mis = slurp(files[0]);
  CHECK(mis.find("<svg") != std::string::npos);
  CHECK(mis.find("Misclassification rate") != std::string::npos);
  CHECK(mis.find("baseline") != std::string::npos);
  CHECK(mis.find("udit") != std::string::npos);
  CHECK(mis.find("A-&gt;B") != std::string::npos);
  CHECK(mis.find("B-&gt;A") != std::string::npos);
  CHECK(mis.find("0.4") != std::string::npos);  // bar value label

  const std::string dic = slurp(files[1]);
  CHECK(dic.find("Drop in confidence") != std::string::npos);
  CHECK(dic.find("-0.02") != std::string::npos);  // negative bar renders

  const std::string table = slurp(files[3]);
  CHECK(table.find("Translation diversity") != std::string::npos);
  CHECK(table.find("3.5") != std::string::npos);
  CHECK(table.find("100") != std::string::npos);
}

TEST_CASE("re-rendering the same input is byte-identical") {
  TempDir a("bytes_a");
  TempDir b("bytes_b");
  const auto fa = render_report(two_by_two(), a.path);
  const auto fb = render_report(two_by_two(), b.path);
  REQUIRE(fa.size() == fb.size());
  for (size_t i = 0; i < fa.size(); ++i) CHECK(slurp(fa[i]) == slurp(fb[i]));
}

TEST_CASE("a single report still renders all four files") {
  TempDir dir("single");
  const auto files = render_report(
      {{"identity", make_report("A->B", 0.0, 0.0, 0.0, 0.0)}}, dir.path);
  REQUIRE(files.size() == 4);
  for (const std::string& f : files) {
    const std::string body = slurp(f);
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("identity") != std::string::npos);
  }
}

TEST_CASE("bad inputs raise config errors") {
  TempDir dir("bad");
  CHECK_THROWS_AS(render_report({}, dir.path), ConfigError);
  CHECK_THROWS_AS(
      render_report({{"", make_report("A->B", 0.1, 0.1, 0.1, 0.1)}}, dir.path),
      ConfigError);
  CHECK_THROWS_AS(
      render_report({{"m", make_report("A->B", 0.1, 0.1, 0.1, 0.1)},
                     {"m", make_report("A->B", 0.2, 0.2, 0.2, 0.2)}},
                    dir.path),
      ConfigError);
}

}  // TEST_SUITE
