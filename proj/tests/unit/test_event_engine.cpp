#include <random>
#include <sstream>

#include "../common/oracle.hpp"
#include "ctxrisk/event_engine.hpp"
#include "doctest.h"

using namespace ctxrisk;
using namespace oracle;

namespace {

const FactorId p1 = person("p1"), p2 = person("p2");
const FactorId dev1 = device("dev1");
const FactorId doc1 = document("doc1");
const FactorId loc1 = location("loc1"), loc2 = location("loc2");

ActionLog three_line_log() {
  ActionLog log;
  log.records = {enter(0, p1, loc1), enter(10, p2, loc1), enter(20, dev1, loc1),
                 read(30, dev1, doc1)};
  return log;
}

}  // namespace

TEST_CASE("single enter creates an event") {
  ActionLog log;
  log.records = {enter(0, p1, loc1)};
  auto index = build_event_index(log);
  REQUIRE(index.events().size() == 1);
  const auto& ev = index.events()[0];
  CHECK(ev.location == loc1);
  CHECK(ev.members == std::vector<FactorId>{p1});
  CHECK(ev.start == at(0));
  CHECK(current_event(index, loc1).id == ev.id);
}

TEST_CASE("enter then exit yields occupied then empty event") {
  ActionLog log;
  log.records = {enter(0, p1, loc1), exit(25, p1, loc1)};
  auto index = build_event_index(log);
  REQUIRE(index.events().size() == 2);
  CHECK(index.events()[0].members == std::vector<FactorId>{p1});
  CHECK(index.events()[0].duration() == std::chrono::seconds{25});
  CHECK(index.events()[1].members.empty());
}

TEST_CASE("read places the document with the device") {
  auto index = build_event_index(three_line_log());
  const auto& cur = current_event(index, loc1);
  CHECK(cur.members == std::vector<FactorId>{p1, p2, dev1, doc1});
  REQUIRE(index.reads().size() == 1);
  CHECK(index.reads()[0].event == cur.id);
  CHECK(index.reads()[0].location == loc1);
  CHECK(event_samples(index, SampleSelector::AllEvents).size() == 4);
  CHECK(event_samples(index, SampleSelector::EventsWithDocument).size() == 1);
  CHECK(event_samples(EventIndex{}, SampleSelector::AllEvents).empty());
}

TEST_CASE("unknown location") {
  auto index = build_event_index(three_line_log());
  try {
    current_event(index, location("loc9"));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownLocation);
  }
}

TEST_CASE("dwell expiry and device exit close documents") {
  ActionLog log;
  log.records = {enter(0, dev1, loc1), read(10, dev1, doc1), enter(400, p1, loc1),
                 read(500, dev1, doc1), exit(600, dev1, loc1)};
  auto index = build_event_index(log);
  // doc1 expires at 310, is re-read at 500, and leaves with the device at 600
  std::vector<std::pair<long long, std::vector<FactorId>>> expect{
      {0, {dev1}}, {10, {dev1, doc1}}, {310, {dev1}}, {400, {p1, dev1}},
      {500, {p1, dev1, doc1}}, {600, {p1}}};
  REQUIRE(index.events().size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(index.events()[i].start == at(expect[i].first));
    CHECK(index.events()[i].members == expect[i].second);
  }
}

TEST_CASE("warnings for inconsistent actions") {
  ActionLog log;
  log.records = {exit(0, p1, loc1),        enter(1, p1, loc1), enter(2, p1, loc1),
                 enter(3, p1, loc2),       read(4, dev1, doc1), release(5, dev1, doc1)};
  auto index = build_event_index(log);
  std::vector<WarningCode> codes;
  for (const auto& w : index.warnings()) codes.push_back(w.code);
  CHECK(codes == std::vector<WarningCode>{WarningCode::ExitWithoutPresence,
                                          WarningCode::DuplicateEnter, WarningCode::ImplicitMove,
                                          WarningCode::ReadWithUnplacedDevice,
                                          WarningCode::ExitWithoutPresence});
  CHECK(current_event(index, loc1).members.empty());
  CHECK(current_event(index, loc2).members == std::vector<FactorId>{p1});
}

TEST_CASE("builder matches batch construction and the per-second replay") {
  std::mt19937_64 rng(42);
  for (int round = 0; round < 200; ++round) {
    auto log = random_log(rng);
    auto batch = build_event_index(log);

    EventBuilder builder;
    for (std::size_t i = 0; i < log.records.size(); ++i) builder.apply(log.records[i], i);
    auto incremental = std::move(builder).finish();
    CHECK(incremental == batch);

    // conservation: every event at a location is contiguous with the next
    for (const auto& [loc, kind] : {std::pair{location("l1"), 0}, {location("l2"), 0}}) {
      (void)kind;
      const auto& ids = batch.events_at(loc);
      for (std::size_t i = 1; i < ids.size(); ++i) {
        CHECK(batch.event(ids[i - 1]).end == batch.event(ids[i]).start);
      }
    }

    auto trace = replay(log);
    for (std::size_t s = 0; s < trace.at.size(); ++s) {
      auto t = at(trace.start - 1600000000 + static_cast<long long>(s));
      for (const auto& ev : batch.events()) {
        if (ev.start <= t && t < ev.end) {
          for (const auto& m : ev.members) {
            auto it = trace.at[s].find(m);
            CHECK((it != trace.at[s].end() && it->second == ev.location));
          }
        }
      }
    }
  }
}

TEST_CASE("event trace is json lines") {
  auto index = build_event_index(three_line_log());
  std::ostringstream out;
  write_event_trace(out, index);
  std::string first = out.str().substr(0, out.str().find('\n'));
  CHECK(first ==
        R"({"location":"loc:loc1","members":["actor:p1"],"start":"2020-09-13T12:26:40Z","end":"2020-09-13T12:26:50Z"})");
}
