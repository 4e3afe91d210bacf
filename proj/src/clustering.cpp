#include "ctxrisk/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "ctxrisk/csv.hpp"

namespace ctxrisk {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Dbscan: return "Dbscan";
    case Algorithm::Agglomerative: return "Agglomerative";
    case Algorithm::Gmm: return "Gmm";
  }
  return "?";
}

Algorithm algorithm_from_string(std::string_view text) {
  if (text == "Dbscan" || text == "dbscan") return Algorithm::Dbscan;
  if (text == "Agglomerative" || text == "agglomerative") return Algorithm::Agglomerative;
  if (text == "Gmm" || text == "gmm") return Algorithm::Gmm;
  throw Error(ErrorCode::InvalidArgument, "unknown algorithm: " + std::string(text));
}

std::string_view to_string(Linkage l) {
  switch (l) {
    case Linkage::Ward: return "Ward";
    case Linkage::Average: return "Average";
    case Linkage::Complete: return "Complete";
  }
  return "?";
}

Linkage linkage_from_string(std::string_view text) {
  if (text == "Ward" || text == "ward") return Linkage::Ward;
  if (text == "Average" || text == "average") return Linkage::Average;
  if (text == "Complete" || text == "complete") return Linkage::Complete;
  throw Error(ErrorCode::InvalidArgument, "unknown linkage: " + std::string(text));
}

std::string_view to_string(CovarianceType c) {
  return c == CovarianceType::Diagonal ? "Diagonal" : "Spherical";
}

CovarianceType covariance_from_string(std::string_view text) {
  if (text == "Diagonal" || text == "diagonal") return CovarianceType::Diagonal;
  if (text == "Spherical" || text == "spherical") return CovarianceType::Spherical;
  throw Error(ErrorCode::InvalidArgument, "unknown covariance type: " + std::string(text));
}

namespace {

double dist2(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s;
}

void check_points(const std::vector<Point>& points) {
  if (points.empty()) throw Error(ErrorCode::EmptyInput, "no samples to cluster");
  const std::size_t d = points.front().size();
  for (const auto& p : points) {
    if (p.size() != d) throw Error(ErrorCode::DimensionMismatch, "samples differ in dimension");
    for (double v : p) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite feature value");
    }
  }
}

// Identical points collapse into one weighted group; groups are sorted
// lexicographically, so the first coordinate is non-decreasing.
struct Groups {
  std::vector<Point> unique;
  std::vector<double> weight;
  std::vector<std::size_t> of_sample;
};

Groups group_points(const std::vector<Point>& points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return points[a] < points[b]; });
  Groups g;
  g.of_sample.resize(points.size());
  for (std::size_t i : order) {
    if (g.unique.empty() || g.unique.back() != points[i]) {
      g.unique.push_back(points[i]);
      g.weight.push_back(0.0);
    }
    g.weight.back() += 1.0;
    g.of_sample[i] = g.unique.size() - 1;
  }
  return g;
}

std::vector<int> expand(const Groups& g, const std::vector<int>& group_labels) {
  std::vector<int> labels(g.of_sample.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = group_labels[g.of_sample[i]];
  return labels;
}

std::size_t count_clusters(const std::vector<int>& labels) {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

// Uniform double in [0, 1) with a fixed recipe so seeds give the same stream everywhere.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

std::size_t draw(std::mt19937_64& rng, const std::vector<double>& weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = uniform01(rng) * total;
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

}  // namespace

void canonicalize_labels(std::vector<int>& labels) {
  std::map<int, int> remap;
  for (int& l : labels) {
    if (l < 0) continue;
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
}

int DbscanModel::predict(std::span<const double> point) const {
  const double eps2 = config.eps * config.eps;
  int label = -1;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < core_points.size(); ++i) {
    if (core_points[i].size() != point.size()) {
      throw Error(ErrorCode::DimensionMismatch, "point dimension differs from the model");
    }
    double d = dist2(core_points[i], point);
    if (d <= eps2 && d < best) {
      best = d;
      label = core_labels[i];
    }
  }
  return label;
}

DbscanResult fit_dbscan(const std::vector<Point>& points, const DbscanConfig& cfg) {
  check_points(points);
  if (!(cfg.eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "eps must be > 0");
  if (cfg.min_pts < 1) throw Error(ErrorCode::InvalidConfig, "min_pts must be >= 1");
  const Groups g = group_points(points);
  const std::size_t u = g.unique.size();
  const double eps2 = cfg.eps * cfg.eps;

  std::vector<std::vector<std::size_t>> nb(u);
  std::vector<double> density(g.weight);
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = i + 1; j < u; ++j) {
      if (!g.unique[i].empty() && g.unique[j][0] - g.unique[i][0] > cfg.eps) break;
      if (dist2(g.unique[i], g.unique[j]) <= eps2) {
        nb[i].push_back(j);
        nb[j].push_back(i);
        density[i] += g.weight[j];
        density[j] += g.weight[i];
      }
    }
  }
  std::vector<bool> core(u);
  for (std::size_t i = 0; i < u; ++i) core[i] = density[i] >= static_cast<double>(cfg.min_pts);

  std::vector<int> group_label(u, -1);
  int next = 0;
  for (std::size_t i = 0; i < u; ++i) {
    if (!core[i] || group_label[i] >= 0) continue;
    std::vector<std::size_t> stack{i};
    group_label[i] = next;
    while (!stack.empty()) {
      std::size_t x = stack.back();
      stack.pop_back();
      for (std::size_t y : nb[x]) {
        if (core[y] && group_label[y] < 0) {
          group_label[y] = next;
          stack.push_back(y);
        }
      }
    }
    ++next;
  }
  for (std::size_t i = 0; i < u; ++i) {
    if (core[i]) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j : nb[i]) {  // ascending, so ties keep the lowest index
      if (!core[j]) continue;
      double d = dist2(g.unique[i], g.unique[j]);
      if (d < best) {
        best = d;
        group_label[i] = group_label[j];
      }
    }
  }

  DbscanResult out;
  out.assignment.algorithm = Algorithm::Dbscan;
  out.assignment.config.dbscan = cfg;
  out.assignment.labels = expand(g, group_label);
  std::map<int, int> remap;
  for (int& l : out.assignment.labels) {
    if (l < 0) continue;
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  out.assignment.cluster_count = remap.size();
  out.model.config = cfg;
  for (std::size_t i = 0; i < u; ++i) {
    if (!core[i]) continue;
    out.model.core_points.push_back(g.unique[i]);
    out.model.core_labels.push_back(remap.at(group_label[i]));
  }
  return out;
}

ClusterAssignment dbscan(const std::vector<Point>& points, double eps, std::size_t min_pts) {
  return fit_dbscan(points, DbscanConfig{eps, min_pts}).assignment;
}

ClusterAssignment agglomerative(const std::vector<Point>& points, std::size_t k, Linkage linkage) {
  check_points(points);
  const std::size_t n = points.size();
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (k > n) {
    throw Error(ErrorCode::KTooLarge,
                "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " samples");
  }
  ClusterAssignment out;
  out.algorithm = Algorithm::Agglomerative;
  out.config.agglomerative = {k, linkage};
  out.merges = n - k;
  const Groups g = group_points(points);
  const std::size_t u = g.unique.size();

  if (k >= u) {
    // Only zero-distance merges happen: fold duplicates in sample order until k remain.
    std::vector<int> labels(n, -1);
    std::vector<int> group_first(u, -1);
    std::size_t merges_left = n - k;
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      int& first = group_first[g.of_sample[i]];
      if (first >= 0 && merges_left > 0) {
        labels[i] = first;
        --merges_left;
      } else {
        labels[i] = next++;
        if (first < 0) first = labels[i];
      }
    }
    canonicalize_labels(labels);
    out.labels = std::move(labels);
    out.cluster_count = k;
    return out;
  }

  // NN-chain over the weighted groups with Lance-Williams updates.
  auto at = [u](std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return i * u - i * (i + 1) / 2 + (j - i - 1);
  };
  std::vector<double> d(u * (u - 1) / 2);
  std::vector<double> size(g.weight);
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = i + 1; j < u; ++j) {
      double sq = dist2(g.unique[i], g.unique[j]);
      switch (linkage) {
        case Linkage::Ward:
          d[at(i, j)] = 2.0 * size[i] * size[j] / (size[i] + size[j]) * sq;
          break;
        case Linkage::Average:
        case Linkage::Complete:
          d[at(i, j)] = std::sqrt(sq);
          break;
      }
    }
  }
  struct Merge {
    std::size_t a, b;
    double dist;
  };
  std::vector<Merge> merges;
  std::vector<bool> active(u, true);
  std::vector<std::size_t> chain;
  std::size_t remaining = u;
  while (remaining > 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < u; ++i) {
        if (active[i]) {
          chain.push_back(i);
          break;
        }
      }
    }
    std::size_t a = 0, b = 0;
    for (;;) {
      a = chain.back();
      const bool has_prev = chain.size() >= 2;
      std::size_t best = has_prev ? chain[chain.size() - 2] : u;
      double best_d = has_prev ? d[at(a, best)] : std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < u; ++c) {
        if (c == a || !active[c]) continue;
        double dc = d[at(a, c)];
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      if (has_prev && best == chain[chain.size() - 2]) {
        b = best;
        break;
      }
      chain.push_back(best);
    }
    chain.pop_back();
    chain.pop_back();
    const std::size_t keep = std::min(a, b), drop = std::max(a, b);
    const double dab = d[at(a, b)];
    merges.push_back({keep, drop, dab});
    for (std::size_t c = 0; c < u; ++c) {
      if (!active[c] || c == a || c == b) continue;
      double dac = d[at(a, c)], dbc = d[at(b, c)];
      double nd = 0.0;
      switch (linkage) {
        case Linkage::Ward:
          nd = ((size[a] + size[c]) * dac + (size[b] + size[c]) * dbc - size[c] * dab) /
               (size[a] + size[b] + size[c]);
          break;
        case Linkage::Average:
          nd = (size[a] * dac + size[b] * dbc) / (size[a] + size[b]);
          break;
        case Linkage::Complete:
          nd = std::max(dac, dbc);
          break;
      }
      d[at(keep, c)] = nd;
    }
    size[keep] += size[drop];
    active[drop] = false;
    --remaining;
  }

  std::stable_sort(merges.begin(), merges.end(),
                   [](const Merge& x, const Merge& y) { return x.dist < y.dist; });
  std::vector<std::size_t> parent(u);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < u - k; ++i) {
    std::size_t ra = find(merges[i].a), rb = find(merges[i].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> group_label(u);
  for (std::size_t i = 0; i < u; ++i) group_label[i] = static_cast<int>(find(i));
  out.labels = expand(g, group_label);
  canonicalize_labels(out.labels);
  out.cluster_count = k;
  return out;
}

GmmResult gmm_em(const std::vector<Point>& points, std::size_t k, const GmmConfig& cfg) {
  check_points(points);
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (k > points.size()) {
    throw Error(ErrorCode::KTooLarge,
                "k = " + std::to_string(k) + " exceeds " + std::to_string(points.size()) + " samples");
  }
  if (!(cfg.variance_floor > 0.0)) throw Error(ErrorCode::InvalidConfig, "variance_floor must be > 0");
  const Groups g = group_points(points);
  const std::size_t u = g.unique.size();
  const std::size_t dim = g.unique.front().size();
  const double total = static_cast<double>(points.size());
  const bool spherical = cfg.covariance == CovarianceType::Spherical;

  GmmResult res;
  bool floored_warned = false;
  auto floor_var = [&](double v) {
    if (v < cfg.variance_floor) {
      if (!floored_warned) {
        res.warnings.push_back({WarningCode::CollapsedComponent, "variance floored"});
        floored_warned = true;
      }
      return cfg.variance_floor;
    }
    return v;
  };

  // data statistics
  Point mean(dim, 0.0), var(dim, 0.0);
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = 0; j < dim; ++j) mean[j] += g.weight[i] * g.unique[i][j];
  }
  for (double& m : mean) m /= total;
  for (std::size_t i = 0; i < u; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      var[j] += g.weight[i] * (g.unique[i][j] - mean[j]) * (g.unique[i][j] - mean[j]);
    }
  }
  for (double& v : var) v /= total;
  if (spherical) {
    double avg = dim ? std::accumulate(var.begin(), var.end(), 0.0) / static_cast<double>(dim) : 0.0;
    std::fill(var.begin(), var.end(), avg);
  }

  // k-means++ seeding over samples (groups weighted by multiplicity)
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> chosen{draw(rng, g.weight)};
  std::vector<double> nearest(u, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    for (std::size_t i = 0; i < u; ++i) {
      nearest[i] = std::min(nearest[i], dist2(g.unique[i], g.unique[chosen.back()]));
    }
    std::vector<double> w(u);
    double sum = 0.0;
    for (std::size_t i = 0; i < u; ++i) sum += (w[i] = g.weight[i] * nearest[i]);
    chosen.push_back(sum > 0.0 ? draw(rng, w) : draw(rng, g.weight));
  }
  for (std::size_t c : chosen) res.means.push_back(g.unique[c]);
  res.weights.assign(k, 1.0 / static_cast<double>(k));
  for (std::size_t c = 0; c < k; ++c) {
    Point v(dim);
    for (std::size_t j = 0; j < dim; ++j) v[j] = floor_var(var[j]);
    res.variances.push_back(std::move(v));
  }

  const double log2pi = std::log(2.0 * std::acos(-1.0));
  std::vector<double> resp(u * k);
  auto e_step = [&]() {
    double ll = 0.0;
    std::vector<double> lp(k);
    for (std::size_t i = 0; i < u; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        if (res.weights[c] <= 0.0) {
          lp[c] = -std::numeric_limits<double>::infinity();
          continue;
        }
        double s = std::log(res.weights[c]);
        for (std::size_t j = 0; j < dim; ++j) {
          double diff = g.unique[i][j] - res.means[c][j];
          s -= 0.5 * (log2pi + std::log(res.variances[c][j]) + diff * diff / res.variances[c][j]);
        }
        lp[c] = s;
        mx = std::max(mx, s);
      }
      double acc = 0.0;
      for (std::size_t c = 0; c < k; ++c) acc += std::exp(lp[c] - mx);
      double lse = mx + std::log(acc);
      ll += g.weight[i] * lse;
      for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(lp[c] - lse);
    }
    return ll;
  };

  res.log_likelihood.push_back(e_step());
  std::vector<bool> collapsed_warned(k, false);
  for (std::size_t iter = 0; iter < cfg.max_iter; ++iter) {
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t i = 0; i < u; ++i) nk += g.weight[i] * resp[i * k + c];
      if (nk <= 1e-12) {
        res.weights[c] = 0.0;
        if (!collapsed_warned[c]) {
          res.warnings.push_back({WarningCode::CollapsedComponent,
                                  "component " + std::to_string(c) + " lost all mass"});
          collapsed_warned[c] = true;
        }
        continue;
      }
      res.weights[c] = nk / total;
      Point m(dim, 0.0);
      for (std::size_t i = 0; i < u; ++i) {
        double r = g.weight[i] * resp[i * k + c];
        for (std::size_t j = 0; j < dim; ++j) m[j] += r * g.unique[i][j];
      }
      for (double& x : m) x /= nk;
      Point v(dim, 0.0);
      for (std::size_t i = 0; i < u; ++i) {
        double r = g.weight[i] * resp[i * k + c];
        for (std::size_t j = 0; j < dim; ++j) {
          v[j] += r * (g.unique[i][j] - m[j]) * (g.unique[i][j] - m[j]);
        }
      }
      if (spherical) {
        double avg = dim ? std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(dim) : 0.0;
        std::fill(v.begin(), v.end(), avg);
      }
      for (double& x : v) x = floor_var(x / nk);
      res.means[c] = std::move(m);
      res.variances[c] = std::move(v);
    }
    double ll = e_step();
    double prev = res.log_likelihood.back();
    res.log_likelihood.push_back(ll);
    if (ll - prev < cfg.tolerance) break;
  }

  std::vector<int> group_label(u);
  for (std::size_t i = 0; i < u; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (resp[i * k + c] > resp[i * k + best]) best = c;
    }
    group_label[i] = static_cast<int>(best);
  }
  res.assignment.algorithm = Algorithm::Gmm;
  res.assignment.seed = cfg.seed;
  res.assignment.config.gmm = cfg;
  res.assignment.config.gmm.k = k;
  res.assignment.labels = expand(g, group_label);
  canonicalize_labels(res.assignment.labels);
  res.assignment.cluster_count = count_clusters(res.assignment.labels);
  return res;
}

std::vector<double> k_distance(const std::vector<Point>& points, std::size_t k) {
  check_points(points);
  if (k == 0 || k >= points.size()) {
    throw Error(ErrorCode::KTooLarge, "k must be in [1, n-1]");
  }
  std::vector<double> out;
  out.reserve(points.size());
  std::vector<double> ds(points.size() - 1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) ds[w++] = dist2(points[i], points[j]);
    }
    std::nth_element(ds.begin(), ds.begin() + static_cast<long>(k - 1), ds.end());
    out.push_back(std::sqrt(ds[k - 1]));
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

std::string_view to_string(ClusterLevel level) {
  switch (level) {
    case ClusterLevel::L: return "L";
    case ClusterLevel::LM: return "LM";
    case ClusterLevel::ML: return "ML";
    case ClusterLevel::M: return "M";
    case ClusterLevel::MH: return "MH";
    case ClusterLevel::HM: return "HM";
    case ClusterLevel::H: return "H";
  }
  return "?";
}

ClusterLevel cluster_level_from_string(std::string_view text) {
  for (auto l : {ClusterLevel::L, ClusterLevel::LM, ClusterLevel::ML, ClusterLevel::M,
                 ClusterLevel::MH, ClusterLevel::HM, ClusterLevel::H}) {
    if (to_string(l) == text) return l;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown cluster level: " + std::string(text));
}

ClusterLevel level_for_crv(double crv) {
  constexpr double eps = 1e-9;
  if (!(crv >= 1.0 - eps && crv <= 3.0 + eps)) {
    throw Error(ErrorCode::InvalidArgument, "cluster risk value outside [1, 3]");
  }
  if (crv <= 1.0 + eps) return ClusterLevel::L;
  if (crv <= 1.5 + eps) return ClusterLevel::LM;
  if (crv < 2.0 - eps) return ClusterLevel::ML;
  if (crv <= 2.0 + eps) return ClusterLevel::M;
  if (crv <= 2.5 + eps) return ClusterLevel::MH;
  if (crv < 3.0 - eps) return ClusterLevel::HM;
  return ClusterLevel::H;
}

double RiskCounts::crv() const {
  const std::size_t n = total();
  if (n == 0) return 1.0;
  return static_cast<double>(3 * high + 2 * medium + low) / static_cast<double>(n);
}

RiskCounts count_risks(std::span<const FeatureVector> vectors) {
  RiskCounts counts;
  for (const auto& v : vectors) {
    for (std::size_t i = 0; i < v.codes.size(); ++i) {
      if (!v.present[i]) continue;
      switch (v.codes[i]) {
        case RiskLevel::High: ++counts.high; break;
        case RiskLevel::Medium: ++counts.medium; break;
        case RiskLevel::Low: ++counts.low; break;
      }
    }
  }
  return counts;
}

std::vector<ClusterRiskSummary> summarize_clusters(const ClusterAssignment& assignment,
                                                   std::span<const FeatureVector> vectors) {
  if (assignment.labels.size() != vectors.size()) {
    throw Error(ErrorCode::LengthMismatch, "labels and feature vectors differ in length");
  }
  std::map<int, std::vector<FeatureVector>> members;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    members[assignment.labels[i]].push_back(vectors[i]);
  }
  std::vector<ClusterRiskSummary> out;
  for (const auto& [label, vs] : members) {
    ClusterRiskSummary s;
    s.cluster = label;
    s.counts = count_risks(vs);
    s.crv = s.counts.crv();
    s.level = level_for_crv(s.crv);
    s.samples = vs.size();
    out.push_back(s);
  }
  return out;
}

DatasetRisk dataset_risk(std::span<const FeatureVector> vectors) {
  if (vectors.empty()) throw Error(ErrorCode::EmptyInput, "no samples");
  DatasetRisk r;
  r.value = count_risks(vectors).crv();
  r.level = level_for_crv(r.value);
  return r;
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::Permit: return "Permit";
    case Decision::Deny: return "Deny";
    case Decision::Escalate: return "Escalate";
  }
  return "?";
}

Decision decision_from_string(std::string_view text) {
  if (text == "Permit") return Decision::Permit;
  if (text == "Deny") return Decision::Deny;
  if (text == "Escalate") return Decision::Escalate;
  throw Error(ErrorCode::InvalidArgument, "unknown decision: " + std::string(text));
}

Decision decide_cluster(ClusterLevel level, const FeatureVector& sample, bool outlier) {
  if (outlier) return Decision::Escalate;
  switch (level) {
    case ClusterLevel::H:
    case ClusterLevel::HM:
      return Decision::Deny;
    case ClusterLevel::MH:
    case ClusterLevel::M:
      return sample.any_high() ? Decision::Deny : Decision::Permit;
    default:
      return Decision::Permit;
  }
}

std::vector<Decision> decide_samples(const ClusterAssignment& assignment,
                                     const std::vector<ClusterRiskSummary>& summaries,
                                     std::span<const FeatureVector> vectors) {
  if (assignment.labels.size() != vectors.size()) {
    throw Error(ErrorCode::LengthMismatch, "labels and feature vectors differ in length");
  }
  std::map<int, ClusterLevel> level;
  for (const auto& s : summaries) level[s.cluster] = s.level;
  std::vector<Decision> out;
  out.reserve(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    int l = assignment.labels[i];
    bool outlier = l < 0 && assignment.algorithm == Algorithm::Dbscan;
    out.push_back(decide_cluster(level.at(l), vectors[i], outlier));
  }
  return out;
}

void write_cluster_report(std::ostream& out, const std::vector<ClusterRiskSummary>& summaries) {
  out << "index,risk_value,risk_level,samples,pct_high,pct_medium,pct_low\n";
  for (const auto& s : summaries) {
    const double n = static_cast<double>(s.counts.total());
    auto pct = [n](std::size_t x) {
      return csv::format_fixed(n > 0 ? 100.0 * static_cast<double>(x) / n : 0.0, 2);
    };
    out << s.cluster << ',' << csv::format_fixed(s.crv, 2) << ',' << to_string(s.level) << ','
        << s.samples << ',' << pct(s.counts.high) << ',' << pct(s.counts.medium) << ','
        << pct(s.counts.low) << '\n';
  }
}

}  // namespace ctxrisk
