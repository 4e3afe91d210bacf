#include <sstream>

#include "ctxrisk/action_log.hpp"
#include "doctest.h"

using namespace ctxrisk;

TEST_CASE("parse enter record with monitor") {
  auto r = parse_record(
      R"({"time":"2021-06-26T19:00:00Z","act":"enter","agent":"actor:35ab9d","location":"loc:fe01fb","monitor":"dev:bd0077"})",
      LogFormat::JsonLines);
  CHECK(r.act == ActionKind::Enter);
  CHECK(r.agent == FactorId{FactorKind::Person, "35ab9d"});
  CHECK(r.location == FactorId{FactorKind::Location, "fe01fb"});
  CHECK(r.monitor == FactorId{FactorKind::Device, "bd0077"});
  CHECK_FALSE(r.device.has_value());
  CHECK(format_timestamp(r.time) == "2021-06-26T19:00:00Z");
}

TEST_CASE("parse read record without location") {
  auto r = parse_record(
      R"({"time":"2021-06-26T19:31:00Z","act":"read","device":"dev:ae2e","document":"doc:9ade"})",
      LogFormat::JsonLines);
  CHECK(r.act == ActionKind::Read);
  CHECK(r.device->id == "ae2e");
  CHECK(r.document->id == "9ade");
  CHECK_FALSE(r.location.has_value());
}

TEST_CASE("enter without location is a missing field") {
  try {
    parse_record(R"({"time":"2021-06-26T19:00:00Z","act":"enter","agent":"actor:x"})",
                 LogFormat::JsonLines);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingField);
  }
}

TEST_CASE("malformed input codes") {
  auto code_of = [](std::string_view line, ParseMode mode = ParseMode::Strict) {
    try {
      parse_record(line, LogFormat::JsonLines, mode);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of("{not json") == ErrorCode::MalformedLine);
  CHECK(code_of(R"({"time":"2021-06-26T19:00:00Z","act":"jump","agent":"actor:x","location":"loc:a"})") ==
        ErrorCode::UnknownAction);
  CHECK(code_of(R"({"time":"yesterday","act":"enter","agent":"actor:x","location":"loc:a"})") ==
        ErrorCode::MalformedLine);
  CHECK(code_of(R"({"time":"2021-06-26T19:00:00Z","act":"enter","agent":"doc:x","location":"loc:a"})") ==
        ErrorCode::MalformedLine);
  const char* extra =
      R"({"time":"2021-06-26T19:00:00Z","act":"enter","agent":"actor:x","location":"loc:a","note":1})";
  CHECK(code_of(extra) == ErrorCode::MalformedLine);
  CHECK(code_of(extra, ParseMode::Lenient) == ErrorCode::InvalidArgument);  // parses fine
}

TEST_CASE("json and csv round trip") {
  ActionRecord r;
  r.time = parse_timestamp("2021-06-26T19:00:05Z");
  r.act = ActionKind::Exit;
  r.agent = FactorId{FactorKind::Device, "d,1"};
  r.location = FactorId{FactorKind::Location, "ward \"A\""};
  for (auto fmt : {LogFormat::JsonLines, LogFormat::Csv}) {
    CHECK(parse_record(serialize_record(r, fmt), fmt) == r);
  }
  CHECK(serialize_record(r, LogFormat::JsonLines) ==
        R"({"time":"2021-06-26T19:00:05Z","act":"exit","agent":"dev:d,1","location":"loc:ward \"A\""})");
}

TEST_CASE("load_log sorts and counts") {
  SUBCASE("empty") {
    std::istringstream in("");
    auto loaded = read_log(in, LogFormat::JsonLines);
    CHECK(loaded.log.empty());
    CHECK(loaded.report.total == 0);
  }
  SUBCASE("out of order lines are reordered") {
    std::istringstream in(
        R"({"time":"2021-06-26T19:10:00Z","act":"enter","agent":"actor:b","location":"loc:x"})"
        "\n"
        R"({"time":"2021-06-26T19:00:00Z","act":"enter","agent":"actor:a","location":"loc:x"})"
        "\n");
    auto loaded = read_log(in, LogFormat::JsonLines);
    REQUIRE(loaded.log.size() == 2);
    CHECK(loaded.log.records[0].agent->id == "a");
    CHECK(loaded.log.records[1].agent->id == "b");
    CHECK(loaded.report.count(ActionKind::Enter) == 2);
  }
  SUBCASE("equal timestamps keep input order") {
    std::istringstream in(
        "time,act,agent,device,document,location,monitor\n"
        "2021-06-26T19:00:00Z,enter,actor:a,,,loc:x,\n"
        "2021-06-26T19:00:00Z,exit,actor:a,,,loc:x,\n"
        "2021-06-26T19:00:00Z,read,,dev:d,doc:q,,\n");
    auto loaded = read_log(in, LogFormat::Csv);
    REQUIRE(loaded.log.size() == 3);
    CHECK(loaded.log.records[0].act == ActionKind::Enter);
    CHECK(loaded.log.records[1].act == ActionKind::Exit);
    CHECK(loaded.log.records[2].act == ActionKind::Read);
  }
  SUBCASE("errors carry the line number") {
    std::istringstream in(
        R"({"time":"2021-06-26T19:10:00Z","act":"enter","agent":"actor:b","location":"loc:x"})"
        "\n\n"
        R"({"time":"2021-06-26T19:10:00Z","act":"enter"})"
        "\n");
    try {
      read_log(in, LogFormat::JsonLines);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingField);
      CHECK(e.line() == 3);
    }
  }
}

TEST_CASE("write_log then read_log is identity on sorted logs") {
  ActionLog log;
  for (int i = 0; i < 5; ++i) {
    ActionRecord r;
    r.time = parse_timestamp("2021-06-26T19:00:00Z") + std::chrono::seconds{i * 7};
    r.act = i % 2 ? ActionKind::Read : ActionKind::Release;
    r.device = FactorId{FactorKind::Device, "dev1"};
    r.document = FactorId{FactorKind::Document, "doc" + std::to_string(i)};
    log.records.push_back(r);
  }
  for (auto fmt : {LogFormat::JsonLines, LogFormat::Csv}) {
    std::stringstream io;
    write_log(io, log, fmt);
    auto back = read_log(io, fmt);
    CHECK(back.log.records == log.records);
  }
}

TEST_CASE("timestamp format is strict") {
  CHECK_THROWS_AS(parse_timestamp("2021-06-26 19:00:00"), Error);
  CHECK_THROWS_AS(parse_timestamp("2021-13-26T19:00:00Z"), Error);
  CHECK_THROWS_AS(parse_timestamp("2021-02-30T19:00:00Z"), Error);
  CHECK(format_timestamp(parse_timestamp("2024-02-29T23:59:59Z")) == "2024-02-29T23:59:59Z");
}
