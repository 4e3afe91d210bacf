#include "ctxrisk/event_engine.hpp"

#include <algorithm>
#include <ostream>

#include "json.hpp"

namespace ctxrisk {

bool Event::contains(const FactorId& f) const {
  if (f == location) return true;
  return std::binary_search(members.begin(), members.end(), f);
}

std::size_t Event::count(FactorKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      members.begin(), members.end(), [kind](const FactorId& m) { return m.kind == kind; }));
}

const std::vector<EventId>& EventIndex::events_of(const FactorId& element) const {
  static const std::vector<EventId> kEmpty;
  auto it = by_element_.find(element);
  return it == by_element_.end() ? kEmpty : it->second;
}

const std::vector<EventId>& EventIndex::events_at(const FactorId& location) const {
  static const std::vector<EventId> kEmpty;
  auto it = by_location_.find(location);
  return it == by_location_.end() ? kEmpty : it->second;
}

std::vector<FactorId> EventIndex::elements(FactorKind kind) const {
  std::vector<FactorId> out;
  for (const auto& [f, ids] : by_element_) {
    if (f.kind == kind) out.push_back(f);
  }
  return out;
}

bool EventIndex::operator==(const EventIndex& o) const {
  auto same_event = [](const Event& a, const Event& b) {
    return a.id == b.id && a.location == b.location && a.members == b.members &&
           a.start == b.start && a.end == b.end;
  };
  if (events_.size() != o.events_.size()) return false;
  for (std::size_t i = 0; i < events_.size(); ++i) {
    if (!same_event(events_[i], o.events_[i])) return false;
  }
  auto same_read = [](const ReadObservation& a, const ReadObservation& b) {
    return a.record_index == b.record_index && a.time == b.time && a.device == b.device &&
           a.document == b.document && a.location == b.location && a.event == b.event;
  };
  return by_element_ == o.by_element_ && by_location_ == o.by_location_ &&
         reads_.size() == o.reads_.size() &&
         std::equal(reads_.begin(), reads_.end(), o.reads_.begin(), same_read) &&
         log_start_ == o.log_start_ && log_end_ == o.log_end_;
}

EventBuilder::EventBuilder(DwellConfig dwell) : dwell_(dwell) {
  if (dwell_.document_dwell.count() <= 0) {
    throw Error(ErrorCode::InvalidConfig, "document_dwell must be positive");
  }
}

void EventBuilder::warn(WarningCode code, std::string detail) {
  index_.warnings_.push_back({code, std::move(detail)});
}

void EventBuilder::change(const FactorId& location, Timestamp t, const std::vector<FactorId>& add,
                          const std::vector<FactorId>& remove) {
  auto cur = current_.find(location);
  std::vector<FactorId> members;
  if (cur != current_.end()) members = index_.events_[cur->second].members;
  std::vector<FactorId> next = members;
  for (const auto& f : add) {
    auto it = std::lower_bound(next.begin(), next.end(), f);
    if (it == next.end() || *it != f) next.insert(it, f);
  }
  for (const auto& f : remove) {
    auto it = std::lower_bound(next.begin(), next.end(), f);
    if (it != next.end() && *it == f) next.erase(it);
  }
  if (next == members && cur != current_.end()) return;
  if (next.empty() && cur == current_.end()) return;

  if (cur != current_.end()) index_.events_[cur->second].end = t;
  EventId id = index_.events_.size();
  Event ev{id, location, std::move(next), t, t};
  index_.by_location_[location].push_back(id);
  index_.by_element_[location].push_back(id);
  for (const auto& m : ev.members) index_.by_element_[m].push_back(id);
  index_.events_.push_back(std::move(ev));
  current_[location] = id;

  for (const auto& f : add) where_[f] = location;
  for (const auto& f : remove) {
    auto it = where_.find(f);
    if (it != where_.end() && it->second == location) where_.erase(it);
  }
}

void EventBuilder::remove_from(const FactorId& factor, Timestamp t, bool cascade_docs) {
  auto w = where_.find(factor);
  if (w == where_.end()) return;
  FactorId location = w->second;
  std::vector<FactorId> removes{factor};
  auto drop_doc = [this](std::map<FactorId, DocPlacement>::iterator it) {
    expiries_.erase({it->second.expiry, it->first});
    return docs_.erase(it);
  };
  if (factor.kind == FactorKind::Document) {
    auto d = docs_.find(factor);
    if (d != docs_.end()) drop_doc(d);
  } else if (factor.kind == FactorKind::Device && cascade_docs && dwell_.close_on_device_exit) {
    for (auto it = docs_.begin(); it != docs_.end();) {
      if (it->second.device == factor && it->second.location == location) {
        removes.push_back(it->first);
        it = drop_doc(it);
      } else {
        ++it;
      }
    }
  }
  change(location, t, {}, removes);
}

void EventBuilder::advance_to(Timestamp t) {
  while (!expiries_.empty() && expiries_.begin()->first < t) {
    auto [when, doc] = *expiries_.begin();
    remove_from(doc, when, false);
  }
}

const Event* EventBuilder::current_event(const FactorId& location) const {
  auto it = current_.find(location);
  return it == current_.end() ? nullptr : &index_.events_[it->second];
}

std::optional<FactorId> EventBuilder::location_of(const FactorId& factor) const {
  auto it = where_.find(factor);
  if (it == where_.end()) return std::nullopt;
  return it->second;
}

void EventBuilder::apply(const ActionRecord& r, std::size_t record_index) {
  if (index_.log_end_ && r.time < *index_.log_end_) {
    throw Error(ErrorCode::InvalidArgument, "records must be in non-decreasing time order");
  }
  if (!index_.log_start_) index_.log_start_ = r.time;
  index_.log_end_ = r.time;
  advance_to(r.time);
  last_read_event_.reset();

  switch (r.act) {
    case ActionKind::Enter: {
      const auto& agent = *r.agent;
      const auto& loc = *r.location;
      auto w = where_.find(agent);
      if (w != where_.end() && w->second == loc) {
        warn(WarningCode::DuplicateEnter, agent.token() + " already at " + loc.token());
        return;
      }
      if (w != where_.end()) {
        warn(WarningCode::ImplicitMove,
             agent.token() + " entered " + loc.token() + " while at " + w->second.token());
        remove_from(agent, r.time, true);
      }
      change(loc, r.time, {agent}, {});
      return;
    }
    case ActionKind::Exit: {
      const auto& agent = *r.agent;
      auto w = where_.find(agent);
      if (w == where_.end() || w->second != *r.location) {
        warn(WarningCode::ExitWithoutPresence,
             agent.token() + " not present at " + r.location->token());
        return;
      }
      remove_from(agent, r.time, true);
      return;
    }
    case ActionKind::Read: {
      const auto& dev = *r.device;
      const auto& doc = *r.document;
      auto w = where_.find(dev);
      if (w == where_.end()) {
        warn(WarningCode::ReadWithUnplacedDevice, dev.token() + " has no current location");
        return;
      }
      FactorId loc = w->second;
      auto placed = docs_.find(doc);
      if (placed != docs_.end() && placed->second.location != loc) {
        remove_from(doc, r.time, false);
        placed = docs_.end();
      }
      if (placed == docs_.end()) {
        change(loc, r.time, {doc}, {});
      } else {
        expiries_.erase({placed->second.expiry, doc});
      }
      DocPlacement p{loc, dev, r.time + dwell_.document_dwell};
      expiries_.insert({p.expiry, doc});
      docs_[doc] = std::move(p);
      EventId ev = current_.at(loc);
      index_.reads_.push_back({record_index, r.time, dev, doc, loc, ev});
      last_read_event_ = ev;
      return;
    }
    case ActionKind::Release: {
      const auto& doc = *r.document;
      if (docs_.find(doc) == docs_.end()) {
        warn(WarningCode::ExitWithoutPresence, doc.token() + " is not open");
        return;
      }
      remove_from(doc, r.time, false);
      return;
    }
  }
}

EventIndex EventBuilder::finish() && {
  if (index_.log_end_) {
    advance_to(*index_.log_end_);
    for (const auto& [loc, id] : current_) index_.events_[id].end = *index_.log_end_;
  }
  return std::move(index_);
}

EventIndex build_event_index(const ActionLog& log, const DwellConfig& dwell) {
  EventBuilder builder(dwell);
  for (std::size_t i = 0; i < log.records.size(); ++i) builder.apply(log.records[i], i);
  return std::move(builder).finish();
}

const Event& current_event(const EventIndex& index, const FactorId& location) {
  const auto& ids = index.events_at(location);
  if (ids.empty()) throw Error(ErrorCode::UnknownLocation, "unknown location " + location.token());
  return index.event(ids.back());
}

std::vector<EventId> event_samples(const EventIndex& index, SampleSelector selector) {
  std::vector<EventId> out;
  for (const auto& ev : index.events()) {
    if (selector == SampleSelector::AllEvents || ev.has_kind(FactorKind::Document)) {
      out.push_back(ev.id);
    }
  }
  return out;
}

void write_event_trace(std::ostream& out, const EventIndex& index) {
  for (const auto& ev : index.events()) {
    nlohmann::ordered_json j;
    j["location"] = ev.location.token();
    auto members = nlohmann::json::array();
    for (const auto& m : ev.members) members.push_back(m.token());
    j["members"] = std::move(members);
    j["start"] = format_timestamp(ev.start);
    j["end"] = format_timestamp(ev.end);
    out << j.dump() << '\n';
  }
}

}  // namespace ctxrisk
