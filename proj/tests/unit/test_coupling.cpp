#include <cmath>
#include <filesystem>
#include <random>

#include "../common/oracle.hpp"
#include "ctxrisk/coupling.hpp"
#include "doctest.h"

using namespace ctxrisk;
using namespace oracle;

namespace {

const FactorId p1 = person("p1"), p2 = person("p2"), p3 = person("p3");
const FactorId dev1 = device("dev1");
const FactorId doc1 = document("doc1"), doc2 = document("doc2");
const FactorId loc1 = location("loc1"), loc2 = location("loc2"), loc3 = location("loc3");

CouplingMatrix make_matrix(CouplingType type, std::vector<std::vector<double>> raw,
                           std::vector<FactorId> a, std::vector<FactorId> b) {
  CouplingMatrix m;
  m.type = type;
  m.flavor = CouplingFlavor::Duration;
  m.a_ids = std::move(a);
  m.b_ids = std::move(b);
  m.raw = DenseMatrix(raw.size(), raw.empty() ? 0 : raw[0].size());
  for (std::size_t r = 0; r < raw.size(); ++r) {
    for (std::size_t c = 0; c < raw[r].size(); ++c) m.raw(r, c) = raw[r][c];
  }
  return normalize(std::move(m));
}

std::vector<FactorId> numbered(FactorKind kind, const std::string& prefix, int n) {
  std::vector<FactorId> out;
  for (int i = 1; i <= n; ++i) out.push_back({kind, prefix + std::to_string(i)});
  return out;
}

}  // namespace

TEST_CASE("pair stats on hand-built traces") {
  SUBCASE("never together") {
    ActionLog log;
    log.records = {enter(0, p1, loc1), enter(5, p2, loc2), exit(50, p1, loc1)};
    auto index = build_event_index(log);
    CHECK(accumulate_pair_stats(index, p1, p2) == PairStats{0, std::chrono::seconds{0}});
  }
  SUBCASE("one episode from 10 to 70") {
    ActionLog log;
    log.records = {enter(0, p1, loc1), enter(10, p2, loc1), enter(40, p3, loc1),
                   exit(70, p2, loc1), exit(90, p1, loc1)};
    auto index = build_event_index(log);
    CHECK(accumulate_pair_stats(index, p1, p2) == PairStats{1, std::chrono::seconds{60}});
    CHECK(accumulate_pair_stats(index, p2, p1) == PairStats{1, std::chrono::seconds{60}});
  }
  SUBCASE("two episodes of 30 and 45 seconds") {
    ActionLog log;
    log.records = {enter(0, p1, loc1),  enter(10, p2, loc1), exit(40, p2, loc1),
                   enter(100, p2, loc1), exit(145, p2, loc1), exit(200, p1, loc1)};
    auto index = build_event_index(log);
    CHECK(accumulate_pair_stats(index, p1, p2) == PairStats{2, std::chrono::seconds{75}});
  }
  SUBCASE("unknown and self pairs") {
    ActionLog log;
    log.records = {enter(0, p1, loc1)};
    auto index = build_event_index(log);
    CHECK_THROWS_AS(accumulate_pair_stats(index, p1, p3), Error);
    CHECK_THROWS_AS(accumulate_pair_stats(index, p1, p1), Error);
  }
}

TEST_CASE("pair and row stats equal the per-second scan") {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 150; ++round) {
    auto log = random_log(rng);
    auto index = build_event_index(log);
    auto trace = replay(log);
    std::vector<FactorId> all;
    for (auto kind : kAllFactorKinds) {
      for (const auto& f : index.elements(kind)) all.push_back(f);
    }
    for (const auto& a : all) {
      auto row = accumulate_row_stats(index, a);
      for (const auto& b : all) {
        if (a == b) continue;
        auto expected = brute_pair_stats(trace, a, b);
        auto got = accumulate_pair_stats(index, a, b);
        CHECK(got == expected);
        auto it = row.find(b);
        CHECK((it == row.end() ? PairStats{} : it->second) == expected);
      }
    }
  }
}

TEST_CASE("normalization examples") {
  auto dev_loc = make_matrix({FactorKind::Device, FactorKind::Location},
                             {{335384.62, 0, 0, 56341.15, 0, 0, 0}}, {device("Device1")},
                             numbered(FactorKind::Location, "Location", 7));
  CHECK(dev_loc.normalized(0, 0) == 1.0);
  CHECK(dev_loc.normalized(0, 3) == doctest::Approx(0.17).epsilon(0.03));
  CHECK(dev_loc.normalized(0, 1) == 0.0);

  auto doc_loc = make_matrix({FactorKind::Document, FactorKind::Location},
                             {{51227, 0, 0, 7827, 0, 0, 0}}, {document("Doc1")},
                             numbered(FactorKind::Location, "Loc", 7));
  CHECK(std::abs(doc_loc.normalized(0, 3) - 0.15) <= 0.005);

  CHECK(std::abs(222.0 / 231.0 - 0.96) <= 0.005);
  auto ppl = make_matrix({FactorKind::Person, FactorKind::Person},
                         {{0, 222, 231}, {222, 0, 1}, {231, 1, 0}},
                         {person("Ppl5"), person("Ppl1"), person("Ppl2")},
                         {person("Ppl5"), person("Ppl1"), person("Ppl2")});
  CHECK(std::abs(ppl.normalized(0, 1) - 0.96) <= 0.005);
  CHECK_FALSE(ppl.defined(0, 0));
  CHECK(ppl.coupling(person("Ppl5"), person("Ppl5")) == std::nullopt);
}

TEST_CASE("normalization properties") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int round = 0; round < 50; ++round) {
    std::vector<std::vector<double>> raw(4, std::vector<double>(5));
    for (auto& row : raw) {
      for (auto& v : row) v = u(rng) < 30 ? 0.0 : u(rng);
    }
    raw[2].assign(5, 0.0);
    auto m = make_matrix({FactorKind::Document, FactorKind::Location}, raw,
                         numbered(FactorKind::Document, "d", 4),
                         numbered(FactorKind::Location, "l", 5));
    for (double v : m.normalized.data()) CHECK((v >= 0.0 && v <= 1.0));
    for (std::size_t c = 0; c < 5; ++c) CHECK(m.normalized(2, c) == 0.0);

    auto again = m;
    again.raw = m.normalized;
    CHECK(normalize(again).normalized == m.normalized);

    auto scaled = m;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 5; ++c) scaled.raw(r, c) *= 7.5;
    }
    scaled = normalize(scaled);
    for (std::size_t i = 0; i < 20; ++i) {
      CHECK(scaled.normalized.data()[i] == doctest::Approx(m.normalized.data()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("orientation") {
  auto m = make_matrix({FactorKind::Location, FactorKind::Document}, {{5, 1}, {0, 3}, {2, 2}},
                       numbered(FactorKind::Location, "l", 3),
                       numbered(FactorKind::Document, "d", 2));
  auto c = orient_pair(m, OrientationMode::Canonical);
  CHECK(c.type == CouplingType{FactorKind::Document, FactorKind::Location});
  CHECK(c.raw == m.raw.transposed());
  CHECK(c.normalized(0, 0) == 1.0);

  SUBCASE("single element side becomes A") {
    auto one = make_matrix({FactorKind::Location, FactorKind::Device}, {{5}, {1}, {0}},
                           numbered(FactorKind::Location, "l", 3), {dev1});
    auto o = orient_pair(one, OrientationMode::ByVariance);
    CHECK(o.type == CouplingType{FactorKind::Device, FactorKind::Location});
  }
  SUBCASE("equal variances fall back to canonical order") {
    auto flat = make_matrix({FactorKind::Location, FactorKind::Document}, {{1, 1}, {1, 1}},
                            numbered(FactorKind::Location, "l", 2),
                            numbered(FactorKind::Document, "d", 2));
    CHECK(orient_pair(flat, OrientationMode::ByVariance).type.a == FactorKind::Document);
  }
  SUBCASE("larger total variance becomes A") {
    auto skew = make_matrix({FactorKind::Location, FactorKind::Document},
                            {{9, 9}, {1, 0}, {0, 1}}, numbered(FactorKind::Location, "l", 3),
                            numbered(FactorKind::Document, "d", 2));
    CHECK(orient_pair(skew, OrientationMode::ByVariance).type.a == FactorKind::Location);
  }
}

TEST_CASE("build_all_couplings") {
  SUBCASE("empty index") {
    auto set = build_all_couplings(EventIndex{});
    CHECK(set.empty());
  }
  SUBCASE("toy log keeps only pairs with two B elements") {
    ActionLog log;
    log.records = {enter(0, p1, loc1), enter(0, p2, loc1), enter(0, dev1, loc1),
                   read(10, dev1, doc1), exit(100, p2, loc1)};
    auto set = build_all_couplings(build_event_index(log));
    REQUIRE(set.matrices.size() == 2);
    const auto* pp = set.find({FactorKind::Person, FactorKind::Person}, CouplingFlavor::Frequency);
    REQUIRE(pp);
    CHECK(pp->raw.rows() == 2);
    CHECK(pp->raw.cols() == 2);
    CHECK(pp->raw(0, 1) == 1.0);
    CHECK(pp->raw(1, 0) == 1.0);
    CHECK(set.skipped.size() == 6);
  }
  SUBCASE("shapes, symmetry and single device") {
    ActionLog log;
    log.records = {enter(0, p1, loc1),    enter(0, dev1, loc1),   enter(5, p2, loc1),
                   read(10, dev1, doc1),  release(60, dev1, doc1), exit(70, p2, loc1),
                   enter(75, p2, loc2),   read(80, dev1, doc2),    enter(90, p3, loc1),
                   exit(100, dev1, loc1), enter(110, dev1, loc2),  read(120, dev1, doc1),
                   exit(300, p1, loc1),   enter(301, p1, loc2),    exit(400, p2, loc2)};
    auto index = build_event_index(log);
    auto set = build_all_couplings(index);
    std::vector<std::string> names;
    for (const auto& m : set.matrices) {
      if (m.flavor == CouplingFlavor::Frequency) names.push_back(m.type.name());
      CHECK(m.raw.rows() == m.a_ids.size());
      CHECK(m.raw.cols() == m.b_ids.size());
    }
    CHECK(names ==
          std::vector<std::string>{"Ppl-Doc", "Ppl-Loc", "Dev-Loc", "Doc-Loc", "Ppl-Ppl"});
    for (auto flavor : {CouplingFlavor::Frequency, CouplingFlavor::Duration}) {
      const auto* pp = set.find({FactorKind::Person, FactorKind::Person}, flavor);
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(pp->raw(r, c) == pp->raw(c, r));
      }
    }
    const auto* dev_loc = set.find({FactorKind::Device, FactorKind::Location},
                                   CouplingFlavor::Duration);
    REQUIRE(dev_loc);
    CHECK(dev_loc->raw(0, 0) == 100.0);
    CHECK(dev_loc->raw(0, 1) == 290.0);

    // doc1: read at loc1 (p1, p2 present), then at loc2 with p2 present
    CHECK(set.triple.coupling(p2, doc1, loc1) == 1.0);
    CHECK(set.triple.coupling(p2, doc1, loc2) == 1.0);
    CHECK(set.triple.coupling(p3, doc2, loc2) == 0.0);
    CHECK(set.triple.coupling(person("nobody"), doc1, loc1) == std::nullopt);
    CHECK(set.doc_time.coupling(doc1, at(10)) == 1.0);
  }
}

TEST_CASE("matrix csv round trip") {
  auto m = make_matrix({FactorKind::Person, FactorKind::Person}, {{0, 3, 1}, {3, 0, 2}, {1, 2, 0}},
                       numbered(FactorKind::Person, "q", 3), numbered(FactorKind::Person, "q", 3));
  auto dir = std::filesystem::temp_directory_path() / "ctxrisk_matrix_test";
  std::filesystem::create_directories(dir);
  auto path = dir / matrix_file_name(m, MatrixContent::Raw);
  CHECK(path.filename() == "dur_Ppl_Ppl.csv");
  save_matrix_csv(path, m, MatrixContent::Raw);
  auto back = load_matrix_csv(path);
  CHECK(back.type == m.type);
  CHECK(back.a_ids == m.a_ids);
  CHECK(back.raw == m.raw);
  CHECK(back.normalized == m.normalized);
  std::filesystem::remove_all(dir);
}

TEST_CASE("reference fixtures load in file order independent form") {
  auto m = load_matrix_csv(std::filesystem::path(CTXRISK_DATA_DIR) / "reference" / "freq_Ppl_Ppl.csv");
  CHECK(m.a_ids.size() == 8);
  auto c = m.coupling(person("Ppl5"), person("Ppl1"));
  REQUIRE(c);
  CHECK(std::abs(*c - 0.96) <= 0.005);
  auto dev = load_matrix_csv(std::filesystem::path(CTXRISK_DATA_DIR) / "reference" / "dur_Dev_Loc.csv");
  CHECK(dev.type == CouplingType{FactorKind::Device, FactorKind::Location});
  CHECK(std::abs(*dev.coupling(device("Device1"), location("Location4")) - 0.17) <= 0.005);
}
