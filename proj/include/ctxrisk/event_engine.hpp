#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "ctxrisk/action_log.hpp"
#include "ctxrisk/error.hpp"

namespace ctxrisk {

using EventId = std::size_t;

/// Immutable snapshot of the factors co-present at one location.
struct Event {
  EventId id = 0;
  FactorId location;
  std::vector<FactorId> members;  // sorted, never contains a Location
  Timestamp start{};
  Timestamp end{};

  Seconds duration() const { return end - start; }
  bool contains(const FactorId& f) const;
  std::size_t count(FactorKind kind) const;
  bool has_kind(FactorKind kind) const { return count(kind) > 0; }
};

struct DwellConfig {
  Seconds document_dwell{300};
  bool close_on_device_exit = true;
};

/// A Read that was placed into an event.
struct ReadObservation {
  std::size_t record_index = 0;
  Timestamp time{};
  FactorId device;
  FactorId document;
  FactorId location;
  EventId event = 0;
};

class EventBuilder;

class EventIndex {
 public:
  const std::vector<Event>& events() const noexcept { return events_; }
  const Event& event(EventId id) const { return events_.at(id); }

  /// Chronological events containing the element (a location maps to its own events).
  const std::vector<EventId>& events_of(const FactorId& element) const;
  const std::vector<EventId>& events_at(const FactorId& location) const;
  bool knows(const FactorId& element) const { return by_element_.count(element) > 0; }

  /// Sorted element ids of one kind that appear in at least one event.
  std::vector<FactorId> elements(FactorKind kind) const;

  const std::vector<ReadObservation>& reads() const noexcept { return reads_; }
  const Warnings& warnings() const noexcept { return warnings_; }

  std::optional<Timestamp> log_start() const { return log_start_; }
  std::optional<Timestamp> log_end() const { return log_end_; }

  bool operator==(const EventIndex& other) const;

 private:
  friend class EventBuilder;

  std::vector<Event> events_;
  std::map<FactorId, std::vector<EventId>> by_element_;
  std::map<FactorId, std::vector<EventId>> by_location_;
  std::vector<ReadObservation> reads_;
  Warnings warnings_;
  std::optional<Timestamp> log_start_;
  std::optional<Timestamp> log_end_;
};

/// Incremental event reconstruction. Feeding records in time order and then
/// calling finish() yields the same index as build_event_index().
class EventBuilder {
 public:
  explicit EventBuilder(DwellConfig dwell = {});

  /// Records must arrive in non-decreasing time order.
  void apply(const ActionRecord& record, std::size_t record_index);

  /// Fires pending document-dwell expiries strictly before `t`.
  void advance_to(Timestamp t);

  /// Current event at a location, if it has one.
  const Event* current_event(const FactorId& location) const;
  std::optional<FactorId> location_of(const FactorId& factor) const;

  /// Event id produced for the most recent placed Read, if any.
  std::optional<EventId> last_read_event() const { return last_read_event_; }

  const EventIndex& index() const noexcept { return index_; }
  EventIndex finish() &&;

 private:
  struct DocPlacement {
    FactorId location;
    FactorId device;
    Timestamp expiry{};
  };

  void change(const FactorId& location, Timestamp t, const std::vector<FactorId>& add,
              const std::vector<FactorId>& remove);
  void remove_from(const FactorId& factor, Timestamp t, bool cascade_docs);
  void warn(WarningCode code, std::string detail);

  DwellConfig dwell_;
  EventIndex index_;
  std::map<FactorId, EventId> current_;      // location -> current event
  std::map<FactorId, FactorId> where_;       // person/device/document -> location
  std::map<FactorId, DocPlacement> docs_;    // documents placed by a Read
  std::set<std::pair<Timestamp, FactorId>> expiries_;
  std::optional<EventId> last_read_event_;
};

EventIndex build_event_index(const ActionLog& log, const DwellConfig& dwell = {});

/// Throws Error(UnknownLocation) for a location with no events.
const Event& current_event(const EventIndex& index, const FactorId& location);

enum class SampleSelector { AllEvents, EventsWithDocument };

std::vector<EventId> event_samples(const EventIndex& index, SampleSelector selector);

/// JSON Lines trace of {location, members, start, end}.
void write_event_trace(std::ostream& out, const EventIndex& index);

}  // namespace ctxrisk
