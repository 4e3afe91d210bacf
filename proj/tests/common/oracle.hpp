// Independent reference implementations used by the unit and acceptance tests.
#pragma once

#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ctxrisk/action_log.hpp"
#include "ctxrisk/coupling.hpp"

namespace oracle {

using ctxrisk::ActionKind;
using ctxrisk::ActionLog;
using ctxrisk::ActionRecord;
using ctxrisk::FactorId;
using ctxrisk::FactorKind;
using ctxrisk::Timestamp;

inline FactorId person(const std::string& id) { return {FactorKind::Person, id}; }
inline FactorId device(const std::string& id) { return {FactorKind::Device, id}; }
inline FactorId document(const std::string& id) { return {FactorKind::Document, id}; }
inline FactorId location(const std::string& id) { return {FactorKind::Location, id}; }

inline Timestamp at(long long seconds) {
  return Timestamp{std::chrono::seconds{1600000000 + seconds}};
}

inline ActionRecord enter(long long t, const FactorId& agent, const FactorId& loc) {
  ActionRecord r;
  r.time = at(t);
  r.act = ActionKind::Enter;
  r.agent = agent;
  r.location = loc;
  return r;
}

inline ActionRecord exit(long long t, const FactorId& agent, const FactorId& loc) {
  ActionRecord r = enter(t, agent, loc);
  r.act = ActionKind::Exit;
  return r;
}

inline ActionRecord read(long long t, const FactorId& dev, const FactorId& doc) {
  ActionRecord r;
  r.time = at(t);
  r.act = ActionKind::Read;
  r.device = dev;
  r.document = doc;
  return r;
}

inline ActionRecord release(long long t, const FactorId& dev, const FactorId& doc) {
  ActionRecord r = read(t, dev, doc);
  r.act = ActionKind::Release;
  return r;
}

/// Position of every placed factor for each second of the log, replayed record by
/// record with no event bookkeeping.
struct SecondTrace {
  long long start = 0;  // seconds since epoch of the first record
  std::vector<std::map<FactorId, FactorId>> at;  // one map per second
};

inline SecondTrace replay(const ActionLog& log, long long dwell = 300) {
  SecondTrace trace;
  if (log.records.empty()) return trace;
  std::map<FactorId, FactorId> where;
  struct Open {
    FactorId dev;
    long long expiry;
  };
  std::map<FactorId, Open> open;
  std::vector<std::pair<long long, std::map<FactorId, FactorId>>> snaps;
  auto secs = [](Timestamp t) { return static_cast<long long>(t.time_since_epoch().count()); };
  auto snap = [&](long long t) {
    if (!snaps.empty() && snaps.back().first == t) {
      snaps.back().second = where;
    } else {
      snaps.emplace_back(t, where);
    }
  };
  auto close_docs_of = [&](const FactorId& dev, const FactorId& loc) {
    for (auto it = open.begin(); it != open.end();) {
      auto w = where.find(it->first);
      if (it->second.dev == dev && w != where.end() && w->second == loc) {
        where.erase(w);
        it = open.erase(it);
      } else {
        ++it;
      }
    }
  };
  auto fire_before = [&](long long t) {
    for (;;) {
      const FactorId* first = nullptr;
      long long best = 0;
      for (const auto& [doc, o] : open) {
        if (o.expiry < t && (!first || o.expiry < best)) {
          first = &doc;
          best = o.expiry;
        }
      }
      if (!first) return;
      FactorId doc = *first;
      where.erase(doc);
      open.erase(doc);
      snap(best);
    }
  };

  const long long t0 = secs(log.records.front().time);
  long long t_end = t0;
  for (const auto& r : log.records) {
    const long long t = secs(r.time);
    t_end = t;
    fire_before(t);
    switch (r.act) {
      case ActionKind::Enter: {
        auto w = where.find(*r.agent);
        if (w != where.end() && w->second == *r.location) break;
        if (w != where.end()) {
          FactorId old = w->second;
          where.erase(w);
          if (r.agent->kind == FactorKind::Device) close_docs_of(*r.agent, old);
        }
        where[*r.agent] = *r.location;
        break;
      }
      case ActionKind::Exit: {
        auto w = where.find(*r.agent);
        if (w == where.end() || w->second != *r.location) break;
        where.erase(w);
        if (r.agent->kind == FactorKind::Device) close_docs_of(*r.agent, *r.location);
        break;
      }
      case ActionKind::Read: {
        auto w = where.find(*r.device);
        if (w == where.end()) break;
        where[*r.document] = w->second;
        open[*r.document] = Open{*r.device, t + dwell};
        break;
      }
      case ActionKind::Release: {
        if (!open.count(*r.document)) break;
        open.erase(*r.document);
        where.erase(*r.document);
        break;
      }
    }
    snap(t);
  }
  fire_before(t_end);

  trace.start = t0;
  std::size_t k = 0;
  std::map<FactorId, FactorId> current;
  for (long long s = t0; s < t_end; ++s) {
    while (k < snaps.size() && snaps[k].first <= s) current = snaps[k++].second;
    trace.at.push_back(current);
  }
  return trace;
}

/// Episodes = maximal runs of seconds in which b is co-present with a; duration =
/// number of such seconds.
inline ctxrisk::PairStats brute_pair_stats(const SecondTrace& trace, const FactorId& a,
                                           const FactorId& b) {
  ctxrisk::PairStats out;
  bool prev = false;
  for (const auto& pos : trace.at) {
    bool now = false;
    auto pa = pos.find(a);
    if (a.kind == FactorKind::Location) {
      auto pb = pos.find(b);
      now = pb != pos.end() && pb->second == a;
    } else if (pa != pos.end()) {
      if (b.kind == FactorKind::Location) {
        now = pa->second == b;
      } else {
        auto pb = pos.find(b);
        now = pb != pos.end() && pb->second == pa->second;
      }
    }
    if (now) {
      out.dur += std::chrono::seconds{1};
      if (!prev) ++out.freq;
    }
    prev = now;
  }
  return out;
}

/// Random log over a small universe. Includes invalid transitions (exits without
/// presence, reads from unplaced devices) and same-second records.
inline ActionLog random_log(std::mt19937_64& rng, std::size_t max_records = 50) {
  std::uniform_int_distribution<std::size_t> n_dist(1, max_records);
  std::uniform_int_distribution<int> step_dist(0, 200);
  std::uniform_int_distribution<int> pick3(0, 2);
  std::uniform_int_distribution<int> pick2(0, 1);
  std::uniform_int_distribution<int> act_dist(0, 9);
  const std::size_t n = n_dist(rng);
  ActionLog log;
  long long t = 0;
  const std::vector<FactorId> people{person("p1"), person("p2"), person("p3")};
  const std::vector<FactorId> devices{device("d1"), device("d2")};
  const std::vector<FactorId> docs{document("x1"), document("x2"), document("x3")};
  const std::vector<FactorId> locs{location("l1"), location("l2"), location("l3")};
  for (std::size_t i = 0; i < n; ++i) {
    int step = step_dist(rng);
    t += step < 40 ? 0 : step;
    int a = act_dist(rng);
    if (a < 4) {
      const auto& agent = pick2(rng) ? people[pick3(rng)] : devices[pick2(rng)];
      log.records.push_back(enter(t, agent, locs[pick3(rng)]));
    } else if (a < 6) {
      const auto& agent = pick2(rng) ? people[pick3(rng)] : devices[pick2(rng)];
      log.records.push_back(exit(t, agent, locs[pick3(rng)]));
    } else if (a < 9) {
      log.records.push_back(read(t, devices[pick2(rng)], docs[pick3(rng)]));
    } else {
      log.records.push_back(release(t, devices[pick2(rng)], docs[pick3(rng)]));
    }
  }
  return log;
}

}  // namespace oracle

namespace oracle {

/// Greedy agglomeration recomputing every cluster distance from the raw points.
/// Returns labels numbered by first appearance.
inline std::vector<int> brute_agglomerative(const std::vector<std::vector<double>>& pts,
                                            std::size_t k, int linkage /*0 ward,1 avg,2 complete*/) {
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < pts.size(); ++i) clusters.push_back({i});
  auto sq = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t d = 0; d < pts[a].size(); ++d) s += (pts[a][d] - pts[b][d]) * (pts[a][d] - pts[b][d]);
    return s;
  };
  auto cdist = [&](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    if (linkage == 0) {
      std::vector<double> cx(pts[0].size(), 0.0), cy(pts[0].size(), 0.0);
      for (auto i : x) for (std::size_t d = 0; d < cx.size(); ++d) cx[d] += pts[i][d] / x.size();
      for (auto i : y) for (std::size_t d = 0; d < cy.size(); ++d) cy[d] += pts[i][d] / y.size();
      double s = 0;
      for (std::size_t d = 0; d < cx.size(); ++d) s += (cx[d] - cy[d]) * (cx[d] - cy[d]);
      double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
      return nx * ny / (nx + ny) * s;
    }
    double acc = linkage == 1 ? 0.0 : -1.0;
    for (auto i : x) {
      for (auto j : y) {
        double d = std::sqrt(sq(i, j));
        acc = linkage == 1 ? acc + d : std::max(acc, d);
      }
    }
    return linkage == 1 ? acc / static_cast<double>(x.size() * y.size()) : acc;
  };
  while (clusters.size() > k) {
    std::size_t bi = 0, bj = 1;
    double best = cdist(clusters[0], clusters[1]);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double d = cdist(clusters[i], clusters[j]);
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<long>(bj));
  }
  std::vector<int> labels(pts.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (auto i : clusters[c]) labels[i] = static_cast<int>(c);
  }
  std::map<int, int> remap;
  for (int& l : labels) l = remap.emplace(l, static_cast<int>(remap.size())).first->second;
  return labels;
}

}  // namespace oracle
