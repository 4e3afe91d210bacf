#include "ctxrisk/action_log.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctxrisk/csv.hpp"
#include "ctxrisk/error.hpp"
#include "json.hpp"

namespace ctxrisk {

namespace {

using std::chrono::day;
using std::chrono::month;
using std::chrono::year;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int read_int(std::string_view text, std::size_t pos, std::size_t len) {
  int value = 0;
  auto first = text.data() + pos;
  auto res = std::from_chars(first, first + len, value);
  if (res.ec != std::errc{} || res.ptr != first + len) {
    throw Error(ErrorCode::MalformedLine, "bad timestamp '" + std::string(text) + "'");
  }
  return value;
}

constexpr std::array<std::string_view, 7> kFieldNames = {
    "time", "act", "agent", "device", "document", "location", "monitor"};

void require_kind(const std::optional<FactorId>& f, std::string_view field,
                  std::initializer_list<FactorKind> allowed) {
  if (!f) return;
  if (std::find(allowed.begin(), allowed.end(), f->kind) == allowed.end()) {
    throw Error(ErrorCode::MalformedLine,
                std::string(field) + " has wrong factor kind: " + f->token());
  }
}

ActionRecord build_record(std::string_view time, std::string_view act,
                          const std::array<std::optional<std::string>, 5>& factors) {
  ActionRecord r;
  r.time = parse_timestamp(time);
  r.act = action_from_string(act);
  auto factor = [&](std::size_t i) -> std::optional<FactorId> {
    if (!factors[i]) return std::nullopt;
    return FactorId::parse(*factors[i]);
  };
  r.agent = factor(0);
  r.device = factor(1);
  r.document = factor(2);
  r.location = factor(3);
  r.monitor = factor(4);
  require_kind(r.agent, "agent", {FactorKind::Person, FactorKind::Device});
  require_kind(r.device, "device", {FactorKind::Device});
  require_kind(r.document, "document", {FactorKind::Document});
  require_kind(r.location, "location", {FactorKind::Location});
  require_kind(r.monitor, "monitor", {FactorKind::Device});
  validate(r);
  return r;
}

ActionRecord parse_json(std::string_view line, ParseMode mode) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedLine, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::MalformedLine, "record is not a JSON object");
  if (mode == ParseMode::Strict) {
    for (const auto& item : j.items()) {
      if (std::find(kFieldNames.begin(), kFieldNames.end(), item.key()) == kFieldNames.end()) {
        throw Error(ErrorCode::MalformedLine, "unknown field '" + item.key() + "'");
      }
    }
  }
  auto text_field = [&](const char* key) -> std::optional<std::string> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) {
      throw Error(ErrorCode::MalformedLine, std::string("field '") + key + "' is not a string");
    }
    return it->get<std::string>();
  };
  auto time = text_field("time");
  if (!time) throw Error(ErrorCode::MissingField, "missing time");
  auto act = text_field("act");
  if (!act) throw Error(ErrorCode::MissingField, "missing act");
  return build_record(*time, *act,
                      {text_field("agent"), text_field("device"), text_field("document"),
                       text_field("location"), text_field("monitor")});
}

ActionRecord parse_csv(std::string_view line, ParseMode mode) {
  auto fields = csv::split(line);
  if (fields.size() < kFieldNames.size() ||
      (mode == ParseMode::Strict && fields.size() != kFieldNames.size())) {
    throw Error(ErrorCode::MalformedLine,
                "expected 7 CSV columns, got " + std::to_string(fields.size()));
  }
  auto opt = [&](std::size_t i) -> std::optional<std::string> {
    auto v = trim(fields[i]);
    if (v.empty()) return std::nullopt;
    return std::string(v);
  };
  if (trim(fields[0]).empty()) throw Error(ErrorCode::MissingField, "missing time");
  if (trim(fields[1]).empty()) throw Error(ErrorCode::MissingField, "missing act");
  return build_record(trim(fields[0]), trim(fields[1]),
                      {opt(2), opt(3), opt(4), opt(5), opt(6)});
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  text = trim(text);
  // YYYY-MM-DDTHH:MM:SSZ
  if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' ||
      text[13] != ':' || text[16] != ':' || text[19] != 'Z') {
    throw Error(ErrorCode::MalformedLine,
                "timestamp must be YYYY-MM-DDTHH:MM:SSZ, got '" + std::string(text) + "'");
  }
  std::chrono::year_month_day ymd{year{read_int(text, 0, 4)},
                                  month{static_cast<unsigned>(read_int(text, 5, 2))},
                                  day{static_cast<unsigned>(read_int(text, 8, 2))}};
  int hh = read_int(text, 11, 2), mm = read_int(text, 14, 2), ss = read_int(text, 17, 2);
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 59) {
    throw Error(ErrorCode::MalformedLine, "timestamp out of range '" + std::string(text) + "'");
  }
  Timestamp t = std::chrono::sys_days{ymd} + std::chrono::hours{hh} +
                std::chrono::minutes{mm} + Seconds{ss};
  if (t.time_since_epoch().count() < 0) {
    throw Error(ErrorCode::MalformedLine, "timestamp before 1970 '" + std::string(text) + "'");
  }
  return t;
}

std::string format_timestamp(Timestamp t) {
  auto days = std::chrono::floor<std::chrono::days>(t);
  std::chrono::year_month_day ymd{days};
  std::chrono::hh_mm_ss hms{t - days};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::Person: return "Person";
    case FactorKind::Device: return "Device";
    case FactorKind::Document: return "Document";
    case FactorKind::Location: return "Location";
  }
  return "?";
}

std::string_view kind_tag(FactorKind kind) {
  switch (kind) {
    case FactorKind::Person: return "Ppl";
    case FactorKind::Device: return "Dev";
    case FactorKind::Document: return "Doc";
    case FactorKind::Location: return "Loc";
  }
  return "?";
}

FactorKind kind_from_tag(std::string_view tag) {
  auto t = lower(tag);
  if (t == "ppl" || t == "person") return FactorKind::Person;
  if (t == "dev" || t == "device") return FactorKind::Device;
  if (t == "doc" || t == "document") return FactorKind::Document;
  if (t == "loc" || t == "location") return FactorKind::Location;
  throw Error(ErrorCode::InvalidArgument, "unknown factor kind '" + std::string(tag) + "'");
}

namespace {
constexpr std::array<std::pair<std::string_view, FactorKind>, 4> kPrefixes = {{
    {"actor", FactorKind::Person},
    {"dev", FactorKind::Device},
    {"doc", FactorKind::Document},
    {"loc", FactorKind::Location},
}};
}  // namespace

std::string FactorId::token() const {
  for (const auto& [prefix, k] : kPrefixes) {
    if (k == kind) return std::string(prefix) + ":" + id;
  }
  return id;
}

FactorId FactorId::parse(std::string_view token) {
  auto colon = token.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::MalformedLine, "factor token without kind prefix: '" +
                                              std::string(token) + "'");
  }
  auto prefix = lower(trim(token.substr(0, colon)));
  auto id = trim(token.substr(colon + 1));
  if (id.empty()) {
    throw Error(ErrorCode::MalformedLine, "empty factor id in '" + std::string(token) + "'");
  }
  for (const auto& [p, k] : kPrefixes) {
    if (p == prefix) return FactorId{k, std::string(id)};
  }
  throw Error(ErrorCode::MalformedLine, "unknown factor prefix '" + prefix + "'");
}

std::string_view to_string(ActionKind act) {
  switch (act) {
    case ActionKind::Enter: return "enter";
    case ActionKind::Exit: return "exit";
    case ActionKind::Read: return "read";
    case ActionKind::Release: return "release";
  }
  return "?";
}

ActionKind action_from_string(std::string_view text) {
  auto t = lower(trim(text));
  for (auto act : kAllActionKinds) {
    if (to_string(act) == t) return act;
  }
  throw Error(ErrorCode::UnknownAction, "unknown action '" + std::string(text) + "'");
}

void validate(const ActionRecord& r) {
  switch (r.act) {
    case ActionKind::Enter:
    case ActionKind::Exit:
      if (!r.agent) throw Error(ErrorCode::MissingField, std::string(to_string(r.act)) + " without agent");
      if (!r.location) {
        throw Error(ErrorCode::MissingField, std::string(to_string(r.act)) + " without location");
      }
      break;
    case ActionKind::Read:
    case ActionKind::Release:
      if (!r.device) throw Error(ErrorCode::MissingField, std::string(to_string(r.act)) + " without device");
      if (!r.document) {
        throw Error(ErrorCode::MissingField, std::string(to_string(r.act)) + " without document");
      }
      break;
  }
}

LogFormat format_from_path(const std::filesystem::path& path) {
  auto ext = lower(path.extension().string());
  return ext == ".csv" ? LogFormat::Csv : LogFormat::JsonLines;
}

ActionRecord parse_record(std::string_view line, LogFormat format, ParseMode mode) {
  return format == LogFormat::JsonLines ? parse_json(line, mode) : parse_csv(line, mode);
}

std::string serialize_record(const ActionRecord& r, LogFormat format) {
  const std::array<const std::optional<FactorId>*, 5> factors = {&r.agent, &r.device, &r.document,
                                                                 &r.location, &r.monitor};
  if (format == LogFormat::JsonLines) {
    nlohmann::ordered_json j;
    j["time"] = format_timestamp(r.time);
    j["act"] = std::string(to_string(r.act));
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (*factors[i]) j[std::string(kFieldNames[i + 2])] = (*factors[i])->token();
    }
    return j.dump();
  }
  std::vector<std::string> fields{format_timestamp(r.time), std::string(to_string(r.act))};
  for (const auto* f : factors) fields.push_back(*f ? (*f)->token() : std::string());
  return csv::join(fields);
}

void sort_chronologically(ActionLog& log) {
  std::stable_sort(log.records.begin(), log.records.end(),
                   [](const ActionRecord& a, const ActionRecord& b) { return a.time < b.time; });
}

LoadedLog read_log(std::istream& in, LogFormat format, ParseMode mode) {
  LoadedLog out;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = format == LogFormat::JsonLines;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      auto cols = csv::split(line);
      if (cols.size() < kFieldNames.size()) {
        throw Error(ErrorCode::MalformedLine, "bad CSV header", lineno);
      }
      for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
        if (trim(cols[i]) != kFieldNames[i]) {
          throw Error(ErrorCode::MalformedLine, "bad CSV header column '" + cols[i] + "'", lineno);
        }
      }
      continue;
    }
    try {
      out.log.records.push_back(parse_record(line, format, mode));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), lineno);
    }
    const auto& r = out.log.records.back();
    ++out.report.per_action[static_cast<std::size_t>(r.act)];
  }
  out.report.total = out.log.records.size();
  sort_chronologically(out.log);
  return out;
}

LoadedLog load_log(const std::filesystem::path& path, LogFormat format, ParseMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return read_log(in, format, mode);
}

void write_log(std::ostream& out, const ActionLog& log, LogFormat format) {
  if (format == LogFormat::Csv) out << kCsvHeader << '\n';
  for (const auto& r : log.records) out << serialize_record(r, format) << '\n';
}

void save_log(const std::filesystem::path& path, const ActionLog& log, LogFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_log(out, log, format);
}

}  // namespace ctxrisk
