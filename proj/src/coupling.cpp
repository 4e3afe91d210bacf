#include "ctxrisk/coupling.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "ctxrisk/csv.hpp"
#include "ctxrisk/error.hpp"
#include "json.hpp"

namespace ctxrisk {

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

std::string_view to_string(CouplingFlavor flavor) {
  return flavor == CouplingFlavor::Frequency ? "Frequency" : "Duration";
}

CouplingFlavor flavor_from_string(std::string_view text) {
  if (text == "Frequency" || text == "frequency" || text == "freq") return CouplingFlavor::Frequency;
  if (text == "Duration" || text == "duration" || text == "dur") return CouplingFlavor::Duration;
  throw Error(ErrorCode::InvalidArgument, "unknown coupling flavor '" + std::string(text) + "'");
}

std::string CouplingType::name() const {
  return std::string(kind_tag(a)) + "-" + std::string(kind_tag(b));
}

bool CouplingMatrix::defined(std::size_t r, std::size_t c) const {
  return !self_pair() || a_ids[r] != b_ids[c];
}

namespace {
std::optional<std::size_t> find_id(const std::vector<FactorId>& ids, const FactorId& f) {
  auto it = std::lower_bound(ids.begin(), ids.end(), f);
  if (it == ids.end() || *it != f) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}
}  // namespace

std::optional<std::size_t> CouplingMatrix::a_index(const FactorId& f) const {
  return find_id(a_ids, f);
}

std::optional<std::size_t> CouplingMatrix::b_index(const FactorId& f) const {
  return find_id(b_ids, f);
}

std::optional<double> CouplingMatrix::coupling(const FactorId& a, const FactorId& b) const {
  auto r = a_index(a);
  auto c = b_index(b);
  if (!r || !c || !defined(*r, *c)) return std::nullopt;
  return normalized(*r, *c);
}

PairStats accumulate_pair_stats(const EventIndex& index, const FactorId& a, const FactorId& b) {
  if (a == b) throw Error(ErrorCode::InvalidArgument, "self pair " + a.token());
  if (!index.knows(a)) throw Error(ErrorCode::UnknownFactor, "unknown factor " + a.token());
  if (!index.knows(b)) throw Error(ErrorCode::UnknownFactor, "unknown factor " + b.token());
  PairStats stats;
  bool coupled = false;
  std::optional<Timestamp> prev_end;
  for (EventId id : index.events_of(a)) {
    const Event& ev = index.event(id);
    if (ev.duration().count() == 0) continue;
    bool contiguous = prev_end && *prev_end == ev.start;
    if (ev.contains(b)) {
      if (!coupled || !contiguous) ++stats.freq;
      stats.dur += ev.duration();
      coupled = true;
    } else {
      coupled = false;
    }
    prev_end = ev.end;
  }
  return stats;
}

std::map<FactorId, PairStats> accumulate_row_stats(const EventIndex& index, const FactorId& a) {
  std::map<FactorId, PairStats> out;
  const Event* prev = nullptr;
  auto tally = [&](const FactorId& x, const Event& ev, bool contiguous) {
    if (x == a) return;
    auto& s = out[x];
    s.dur += ev.duration();
    if (!contiguous || !prev->contains(x)) ++s.freq;
  };
  for (EventId id : index.events_of(a)) {
    const Event& ev = index.event(id);
    if (ev.duration().count() == 0) continue;
    bool contiguous = prev && prev->end == ev.start;
    tally(ev.location, ev, contiguous);
    for (const auto& m : ev.members) tally(m, ev, contiguous);
    prev = &ev;
  }
  return out;
}

CouplingMatrix normalize(CouplingMatrix m) {
  m.normalized = DenseMatrix(m.raw.rows(), m.raw.cols());
  for (std::size_t r = 0; r < m.raw.rows(); ++r) {
    double row_max = 0.0;
    for (std::size_t c = 0; c < m.raw.cols(); ++c) {
      if (m.defined(r, c)) row_max = std::max(row_max, m.raw(r, c));
    }
    if (row_max <= 0.0) continue;
    for (std::size_t c = 0; c < m.raw.cols(); ++c) {
      if (m.defined(r, c)) m.normalized(r, c) = m.raw(r, c) / row_max;
    }
  }
  return m;
}

int canonical_rank(FactorKind kind) {
  switch (kind) {
    case FactorKind::Person: return 0;
    case FactorKind::Document: return 1;
    case FactorKind::Device: return 2;
    case FactorKind::Location: return 3;
  }
  return 4;
}

namespace {

double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size());
}

CouplingMatrix transpose(const CouplingMatrix& m) {
  CouplingMatrix t;
  t.type = {m.type.b, m.type.a};
  t.flavor = m.flavor;
  t.a_ids = m.b_ids;
  t.b_ids = m.a_ids;
  t.raw = m.raw.transposed();
  return t;
}

bool keep_orientation(const CouplingMatrix& m, OrientationMode mode) {
  bool canonical = canonical_rank(m.type.a) <= canonical_rank(m.type.b);
  if (mode == OrientationMode::Canonical || m.self_pair()) return canonical;
  if (m.a_ids.size() == 1 && m.b_ids.size() != 1) return true;
  if (m.b_ids.size() == 1 && m.a_ids.size() != 1) return false;
  std::vector<double> a_tot(m.raw.rows(), 0.0), b_tot(m.raw.cols(), 0.0);
  for (std::size_t r = 0; r < m.raw.rows(); ++r) {
    for (std::size_t c = 0; c < m.raw.cols(); ++c) {
      a_tot[r] += m.raw(r, c);
      b_tot[c] += m.raw(r, c);
    }
  }
  double va = variance(a_tot), vb = variance(b_tot);
  if (va == vb) return canonical;
  return va > vb;
}

}  // namespace

CouplingMatrix orient_pair(const CouplingMatrix& stats, OrientationMode mode) {
  if (keep_orientation(stats, mode)) return normalize(stats);
  return normalize(transpose(stats));
}

std::optional<double> TripleCoupling::coupling(const FactorId& person, const FactorId& document,
                                               const FactorId& location) const {
  auto p = by_person.find(person);
  if (p == by_person.end()) return std::nullopt;
  auto c = p->second.find({document, location});
  return c == p->second.end() ? 0.0 : c->second.normalized;
}

std::vector<double> TripleCoupling::all_values(const std::vector<FactorId>& documents,
                                               const std::vector<FactorId>& locations) const {
  std::vector<double> out;
  for (const auto& [person, cells] : by_person) {
    for (const auto& d : documents) {
      for (const auto& l : locations) {
        auto it = cells.find({d, l});
        out.push_back(it == cells.end() ? 0.0 : it->second.normalized);
      }
    }
  }
  return out;
}

std::size_t DocTimeCoupling::bucket_of(Timestamp t) const {
  auto secs = t.time_since_epoch().count() % 86400;
  return static_cast<std::size_t>(secs) * buckets / 86400;
}

std::optional<double> DocTimeCoupling::coupling(const FactorId& document, Timestamp t) const {
  auto it = normalized.find(document);
  if (it == normalized.end()) return std::nullopt;
  return it->second[bucket_of(t)];
}

const CouplingMatrix* CouplingSet::find(CouplingType type, CouplingFlavor flavor) const {
  for (const auto& m : matrices) {
    if (m.type == type && m.flavor == flavor) return &m;
  }
  return nullptr;
}

namespace {

TripleCoupling build_triple(const EventIndex& index) {
  TripleCoupling triple;
  for (const auto& person : index.elements(FactorKind::Person)) {
    auto& cells = triple.by_person[person];
    const Event* prev = nullptr;
    for (EventId id : index.events_of(person)) {
      const Event& ev = index.event(id);
      if (ev.duration().count() == 0) continue;
      bool contiguous = prev && prev->end == ev.start && prev->location == ev.location;
      for (const auto& m : ev.members) {
        if (m.kind != FactorKind::Document) continue;
        if (!contiguous || !prev->contains(m)) cells[{m, ev.location}].raw += 1.0;
      }
      prev = &ev;
    }
    double row_max = 0.0;
    for (const auto& [key, cell] : cells) row_max = std::max(row_max, cell.raw);
    if (row_max > 0.0) {
      for (auto& [key, cell] : cells) cell.normalized = cell.raw / row_max;
    }
  }
  return triple;
}

DocTimeCoupling build_doc_time(const EventIndex& index, std::size_t buckets) {
  DocTimeCoupling dt;
  dt.buckets = buckets;
  for (const auto& doc : index.elements(FactorKind::Document)) {
    dt.raw[doc].assign(buckets, 0.0);
  }
  for (const auto& read : index.reads()) {
    auto& row = dt.raw[read.document];
    row.resize(buckets, 0.0);
    row[dt.bucket_of(read.time)] += 1.0;
  }
  for (const auto& [doc, row] : dt.raw) {
    double mx = *std::max_element(row.begin(), row.end());
    auto& out = dt.normalized[doc];
    out.assign(buckets, 0.0);
    if (mx > 0.0) {
      for (std::size_t i = 0; i < buckets; ++i) out[i] = row[i] / mx;
    }
  }
  return dt;
}

}  // namespace

CouplingSet build_all_couplings(const EventIndex& index, const CouplingOptions& options) {
  if (options.time_buckets == 0 || 86400 % options.time_buckets != 0) {
    throw Error(ErrorCode::InvalidConfig, "time_buckets must divide 86400");
  }
  CouplingSet set;
  for (auto kind : kAllFactorKinds) set.elements[kind] = index.elements(kind);
  if (index.events().empty()) return set;

  std::map<FactorId, std::map<FactorId, PairStats>> rows;
  for (auto kind : kAllFactorKinds) {
    for (const auto& a : set.elements[kind]) rows[a] = accumulate_row_stats(index, a);
  }

  std::vector<CouplingType> pairs;
  for (std::size_t i = 0; i < kAllFactorKinds.size(); ++i) {
    for (std::size_t j = i + 1; j < kAllFactorKinds.size(); ++j) {
      pairs.push_back({kAllFactorKinds[i], kAllFactorKinds[j]});
    }
  }
  pairs.push_back({FactorKind::Person, FactorKind::Person});

  for (const auto& pair : pairs) {
    const auto& xs = set.elements[pair.a];
    const auto& ys = set.elements[pair.b];
    if (xs.empty() || ys.empty()) {
      set.skipped.push_back({pair, "no elements on one side"});
      continue;
    }
    CouplingMatrix freq, dur;
    freq.type = dur.type = pair;
    freq.flavor = CouplingFlavor::Frequency;
    dur.flavor = CouplingFlavor::Duration;
    freq.a_ids = dur.a_ids = xs;
    freq.b_ids = dur.b_ids = ys;
    freq.raw = dur.raw = DenseMatrix(xs.size(), ys.size());
    for (std::size_t r = 0; r < xs.size(); ++r) {
      const auto& row = rows[xs[r]];
      for (std::size_t c = 0; c < ys.size(); ++c) {
        auto it = row.find(ys[c]);
        if (it == row.end() || xs[r] == ys[c]) continue;
        freq.raw(r, c) = static_cast<double>(it->second.freq);
        dur.raw(r, c) = static_cast<double>(it->second.dur.count());
      }
    }
    bool keep = keep_orientation(freq, options.orientation);
    auto oriented_freq = keep ? normalize(freq) : normalize(transpose(freq));
    auto oriented_dur = keep ? normalize(dur) : normalize(transpose(dur));
    if (oriented_freq.b_ids.size() < 2) {
      set.skipped.push_back({oriented_freq.type, "B side has fewer than two elements"});
      continue;
    }
    set.matrices.push_back(std::move(oriented_freq));
    set.matrices.push_back(std::move(oriented_dur));
  }
  set.triple = build_triple(index);
  set.doc_time = build_doc_time(index, options.time_buckets);
  return set;
}

std::string matrix_file_name(const CouplingMatrix& m, MatrixContent content) {
  std::string name = m.flavor == CouplingFlavor::Frequency ? "freq_" : "dur_";
  name += std::string(kind_tag(m.type.a)) + "_" + std::string(kind_tag(m.type.b));
  if (content == MatrixContent::Normalized) name += "_norm";
  return name + ".csv";
}

void save_matrix_csv(const std::filesystem::path& path, const CouplingMatrix& m,
                     MatrixContent content) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  std::vector<std::string> header{""};
  for (const auto& b : m.b_ids) header.push_back(b.id);
  out << csv::join(header) << '\n';
  const DenseMatrix& values = content == MatrixContent::Raw ? m.raw : m.normalized;
  for (std::size_t r = 0; r < m.a_ids.size(); ++r) {
    std::vector<std::string> row{m.a_ids[r].id};
    for (std::size_t c = 0; c < m.b_ids.size(); ++c) {
      row.push_back(m.defined(r, c) ? csv::format_double(values(r, c)) : std::string());
    }
    out << csv::join(row) << '\n';
  }
  nlohmann::ordered_json meta;
  meta["a_kind"] = std::string(kind_tag(m.type.a));
  meta["b_kind"] = std::string(kind_tag(m.type.b));
  meta["flavor"] = std::string(to_string(m.flavor));
  meta["content"] = content == MatrixContent::Raw ? "raw" : "normalized";
  std::ofstream mo(std::filesystem::path(path).replace_extension(".meta.json"));
  if (!mo) throw Error(ErrorCode::Io, "cannot write metadata for " + path.string());
  mo << meta.dump(2) << '\n';
}

CouplingMatrix load_matrix_csv(const std::filesystem::path& path) {
  auto meta_path = std::filesystem::path(path).replace_extension(".meta.json");
  std::ifstream mi(meta_path);
  if (!mi) throw Error(ErrorCode::Io, "cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mi);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedLine, meta_path.string() + ": " + e.what());
  }
  CouplingMatrix m;
  m.type = {kind_from_tag(meta.at("a_kind").get<std::string>()),
            kind_from_tag(meta.at("b_kind").get<std::string>())};
  m.flavor = flavor_from_string(meta.at("flavor").get<std::string>());
  bool raw_content = meta.value("content", "raw") == "raw";

  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  auto rows = csv::read_rows(in);
  if (rows.empty()) throw Error(ErrorCode::MalformedLine, path.string() + ": empty matrix file");
  std::vector<FactorId> b_ids;
  for (std::size_t c = 1; c < rows[0].size(); ++c) b_ids.push_back({m.type.b, rows[0][c]});
  std::vector<FactorId> a_ids;
  for (std::size_t r = 1; r < rows.size(); ++r) a_ids.push_back({m.type.a, rows[r].at(0)});

  // Internal storage keeps ids sorted; remember the file order for the permutation.
  std::vector<std::size_t> a_perm(a_ids.size()), b_perm(b_ids.size());
  std::iota(a_perm.begin(), a_perm.end(), 0);
  std::iota(b_perm.begin(), b_perm.end(), 0);
  std::sort(a_perm.begin(), a_perm.end(), [&](auto x, auto y) { return a_ids[x] < a_ids[y]; });
  std::sort(b_perm.begin(), b_perm.end(), [&](auto x, auto y) { return b_ids[x] < b_ids[y]; });
  for (std::size_t i = 0; i < a_perm.size(); ++i) m.a_ids.push_back(a_ids[a_perm[i]]);
  for (std::size_t i = 0; i < b_perm.size(); ++i) m.b_ids.push_back(b_ids[b_perm[i]]);

  m.raw = DenseMatrix(m.a_ids.size(), m.b_ids.size());
  for (std::size_t r = 0; r < m.a_ids.size(); ++r) {
    const auto& row = rows[a_perm[r] + 1];
    if (row.size() != b_ids.size() + 1) {
      throw Error(ErrorCode::MalformedLine, path.string() + ": ragged row", a_perm[r] + 2);
    }
    for (std::size_t c = 0; c < m.b_ids.size(); ++c) {
      const auto& cell = row[b_perm[c] + 1];
      if (!m.defined(r, c) || cell.empty()) continue;
      double v = csv::parse_double(cell);
      if (v < 0.0) throw Error(ErrorCode::MalformedLine, path.string() + ": negative value");
      m.raw(r, c) = v;
    }
  }
  if (raw_content) return normalize(std::move(m));
  m.normalized = m.raw;
  return m;
}

}  // namespace ctxrisk
