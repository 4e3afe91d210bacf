#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctxrisk/action_log.hpp"
#include "ctxrisk/event_engine.hpp"

namespace ctxrisk {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  const std::vector<double>& data() const noexcept { return data_; }

  DenseMatrix transposed() const;
  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class CouplingFlavor { Frequency, Duration };

std::string_view to_string(CouplingFlavor flavor);
CouplingFlavor flavor_from_string(std::string_view text);

/// An ordered factor-set pair (A, B); C_{A,B} normalizes over B for each A element.
struct CouplingType {
  FactorKind a = FactorKind::Person;
  FactorKind b = FactorKind::Person;

  auto operator<=>(const CouplingType&) const = default;
  std::string name() const;  // e.g. "Doc-Loc"
};

/// The four coupling types used as features, in canonical feature order.
inline constexpr std::array<CouplingType, 4> kFeatureCouplings = {{
    {FactorKind::Document, FactorKind::Location},
    {FactorKind::Person, FactorKind::Document},
    {FactorKind::Person, FactorKind::Location},
    {FactorKind::Person, FactorKind::Person},
}};

struct CouplingMatrix {
  CouplingType type;
  CouplingFlavor flavor = CouplingFlavor::Frequency;
  std::vector<FactorId> a_ids;
  std::vector<FactorId> b_ids;
  DenseMatrix raw;         // Freq counts or Dur seconds, rows = A
  DenseMatrix normalized;  // in [0, 1]

  bool self_pair() const noexcept { return type.a == type.b; }
  /// False only for the diagonal of a self-pair matrix.
  bool defined(std::size_t r, std::size_t c) const;
  std::optional<std::size_t> a_index(const FactorId& f) const;
  std::optional<std::size_t> b_index(const FactorId& f) const;
  /// Normalized C_{a,b}; nullopt when either element is not in the matrix.
  std::optional<double> coupling(const FactorId& a, const FactorId& b) const;
};

struct PairStats {
  std::size_t freq = 0;
  Seconds dur{0};

  bool operator==(const PairStats&) const = default;
};

/// Co-presence episodes and total co-presence time of b within a's event list.
/// Zero-length events are transparent; an episode ends when b is absent or when
/// a's list has a time gap (a was nowhere).
PairStats accumulate_pair_stats(const EventIndex& index, const FactorId& a, const FactorId& b);

/// Stats of a against every element co-present with it, in one pass over a's list.
std::map<FactorId, PairStats> accumulate_row_stats(const EventIndex& index, const FactorId& a);

/// Recomputes `normalized` from `raw`: each A row divided by its maximum over B.
/// All-zero rows stay zero; undefined diagonal cells are zero.
CouplingMatrix normalize(CouplingMatrix matrix);

enum class OrientationMode { Canonical, ByVariance };

/// Position in the canonical order Ppl, Doc, Dev, Loc.
int canonical_rank(FactorKind kind);

/// Returns the matrix in the chosen orientation (transposing raw when needed) and
/// re-normalized. Canonical: A is the kind ranked earlier. ByVariance: A is the side
/// whose per-element raw totals have the larger variance; a one-element side is
/// always A; ties fall back to canonical.
CouplingMatrix orient_pair(const CouplingMatrix& stats, OrientationMode mode);

/// Person-document-location co-occurrence episodes, normalized per person.
struct TripleCoupling {
  struct Cell {
    double raw = 0.0;
    double normalized = 0.0;
  };
  using Key = std::pair<FactorId, FactorId>;  // (document, location)
  std::map<FactorId, std::map<Key, Cell>> by_person;

  std::optional<double> coupling(const FactorId& person, const FactorId& document,
                                 const FactorId& location) const;
  /// Normalized values over every (person, doc, loc) cell, zeros included.
  std::vector<double> all_values(const std::vector<FactorId>& documents,
                                 const std::vector<FactorId>& locations) const;
};

/// Per-document read counts over hour-of-day buckets, normalized per document.
struct DocTimeCoupling {
  std::size_t buckets = 24;
  std::map<FactorId, std::vector<double>> raw;
  std::map<FactorId, std::vector<double>> normalized;

  std::size_t bucket_of(Timestamp t) const;
  std::optional<double> coupling(const FactorId& document, Timestamp t) const;
};

struct CouplingOptions {
  OrientationMode orientation = OrientationMode::Canonical;
  std::size_t time_buckets = 24;
};

struct SkippedPair {
  CouplingType type;
  std::string reason;
};

struct CouplingSet {
  std::vector<CouplingMatrix> matrices;
  TripleCoupling triple;
  DocTimeCoupling doc_time;
  std::vector<SkippedPair> skipped;
  std::map<FactorKind, std::vector<FactorId>> elements;

  const CouplingMatrix* find(CouplingType type, CouplingFlavor flavor) const;
  bool empty() const { return matrices.empty(); }
};

/// Frequency and duration matrices for each of the six cross-kind pairs whose B side
/// has at least two elements, plus Ppl-Ppl; triple and doc-time couplings.
CouplingSet build_all_couplings(const EventIndex& index, const CouplingOptions& options = {});

// CSV interchange: header row = B ids, first column = A ids; kinds and flavor in a
// "<file>.meta.json" sidecar.
enum class MatrixContent { Raw, Normalized };

void save_matrix_csv(const std::filesystem::path& path, const CouplingMatrix& m,
                     MatrixContent content);
/// Loads a matrix saved with save_matrix_csv. Raw content is normalized on load.
CouplingMatrix load_matrix_csv(const std::filesystem::path& path);

std::string matrix_file_name(const CouplingMatrix& m, MatrixContent content);

}  // namespace ctxrisk
