#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctxrisk/error.hpp"

namespace ctxrisk {

using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

enum class FactorKind { Person, Device, Document, Location };

inline constexpr std::array<FactorKind, 4> kAllFactorKinds = {
    FactorKind::Person, FactorKind::Device, FactorKind::Document, FactorKind::Location};

std::string_view to_string(FactorKind kind);
/// Short tag used in coupling names and fixture metadata: Ppl, Dev, Doc, Loc.
std::string_view kind_tag(FactorKind kind);
FactorKind kind_from_tag(std::string_view tag);

struct FactorId {
  FactorKind kind = FactorKind::Person;
  std::string id;

  auto operator<=>(const FactorId&) const = default;
  bool operator==(const FactorId&) const = default;

  /// Token form used in logs: "actor:<id>", "dev:<id>", "doc:<id>", "loc:<id>".
  std::string token() const;
  static FactorId parse(std::string_view token);
};

struct FactorIdHash {
  std::size_t operator()(const FactorId& f) const noexcept {
    return std::hash<std::string>{}(f.id) * 31u + static_cast<std::size_t>(f.kind);
  }
};

enum class ActionKind { Enter, Exit, Read, Release };

inline constexpr std::array<ActionKind, 4> kAllActionKinds = {
    ActionKind::Enter, ActionKind::Exit, ActionKind::Read, ActionKind::Release};

std::string_view to_string(ActionKind act);
ActionKind action_from_string(std::string_view text);

struct ActionRecord {
  Timestamp time{};
  ActionKind act = ActionKind::Enter;
  std::optional<FactorId> agent;
  std::optional<FactorId> device;
  std::optional<FactorId> document;
  std::optional<FactorId> location;
  std::optional<FactorId> monitor;

  bool operator==(const ActionRecord&) const = default;
};

/// Throws Error(MissingField) when the act's required fields are absent.
void validate(const ActionRecord& record);

struct ActionLog {
  std::vector<ActionRecord> records;

  bool empty() const noexcept { return records.empty(); }
  std::size_t size() const noexcept { return records.size(); }
};

enum class LogFormat { JsonLines, Csv };
enum class ParseMode { Strict, Lenient };

LogFormat format_from_path(const std::filesystem::path& path);

inline constexpr std::string_view kCsvHeader = "time,act,agent,device,document,location,monitor";

ActionRecord parse_record(std::string_view line, LogFormat format,
                          ParseMode mode = ParseMode::Strict);
std::string serialize_record(const ActionRecord& record, LogFormat format);

struct LoadReport {
  std::size_t total = 0;
  std::array<std::size_t, 4> per_action{};  // indexed by ActionKind

  std::size_t count(ActionKind act) const { return per_action[static_cast<std::size_t>(act)]; }
};

struct LoadedLog {
  ActionLog log;
  LoadReport report;
};

/// Stable sort by time; equal timestamps keep input order.
void sort_chronologically(ActionLog& log);

LoadedLog read_log(std::istream& in, LogFormat format, ParseMode mode = ParseMode::Strict);
LoadedLog load_log(const std::filesystem::path& path, LogFormat format,
                   ParseMode mode = ParseMode::Strict);

void write_log(std::ostream& out, const ActionLog& log, LogFormat format);
void save_log(const std::filesystem::path& path, const ActionLog& log, LogFormat format);

}  // namespace ctxrisk
