#include "ctxrisk/supervised.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "ctxrisk/csv.hpp"
#include "json.hpp"

namespace ctxrisk {

const std::string& TrainedTree::predict(std::span<const double> x) const {
  if (x.size() != dims) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(dims) +
                                                  " features, got " + std::to_string(x.size()));
  }
  int id = 0;
  while (!nodes[id].leaf()) {
    const auto& n = nodes[id];
    id = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return classes[nodes[id].label];
}

std::size_t TrainedTree::depth() const {
  std::size_t d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

std::size_t TrainedTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.leaf(); }));
}

namespace {

double gini_mass(const std::vector<std::size_t>& counts, std::size_t n) {
  if (n == 0) return 0.0;
  double sq = 0.0;
  for (auto c : counts) sq += static_cast<double>(c) * static_cast<double>(c);
  return static_cast<double>(n) - sq / static_cast<double>(n);
}

struct Builder {
  const std::vector<Point>& x;
  const std::vector<int>& y;
  std::size_t n_classes;
  TreeConfig cfg;
  TrainedTree& tree;

  int build(std::vector<std::size_t>& idx, std::size_t depth) {
    TreeNode node;
    node.depth = depth;
    node.samples = idx.size();
    node.class_counts.assign(n_classes, 0);
    for (auto i : idx) ++node.class_counts[y[i]];
    node.label = static_cast<int>(
        std::max_element(node.class_counts.begin(), node.class_counts.end()) -
        node.class_counts.begin());
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);

    const bool pure = node.class_counts[node.label] == idx.size();
    const bool depth_cap = cfg.max_depth > 0 && depth >= cfg.max_depth;
    const std::size_t leaf_min = std::max<std::size_t>(1, cfg.min_samples_leaf);
    if (pure || depth_cap || idx.size() < 2 * leaf_min) return id;

    const double parent = gini_mass(node.class_counts, idx.size());
    int best_f = -1;
    double best_t = 0.0, best_gain = -1.0;
    std::vector<std::size_t> order(idx);
    for (std::size_t f = 0; f < tree.dims; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a][f] < x[b][f] || (x[a][f] == x[b][f] && a < b);
      });
      std::vector<std::size_t> left(n_classes, 0), right(node.class_counts);
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        ++left[y[order[k]]];
        --right[y[order[k]]];
        const double v = x[order[k]][f], next = x[order[k + 1]][f];
        if (v == next) continue;
        const std::size_t nl = k + 1, nr = order.size() - nl;
        if (nl < leaf_min || nr < leaf_min) continue;
        double gain = parent - gini_mass(left, nl) - gini_mass(right, nr);
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_t = v + (next - v) / 2.0;
          if (!(best_t > v && best_t < next)) best_t = v;
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<std::size_t> li, ri;
    for (auto i : idx) (x[i][best_f] <= best_t ? li : ri).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const int l = build(li, depth + 1);
    const int r = build(ri, depth + 1);
    tree.nodes[id].feature = best_f;
    tree.nodes[id].threshold = best_t;
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }
};

std::string feature_name(const std::vector<std::string>& names, int f) {
  if (f >= 0 && static_cast<std::size_t>(f) < names.size()) return names[f];
  return "x[" + std::to_string(f) + "]";
}

}  // namespace

TrainedTree train_tree(const std::vector<Point>& x, const std::vector<std::string>& labels,
                       const TreeConfig& cfg) {
  if (x.empty()) throw Error(ErrorCode::EmptyInput, "no training samples");
  if (x.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "samples and labels differ in length");
  }
  TrainedTree tree;
  tree.config = cfg;
  tree.dims = x.front().size();
  for (const auto& p : x) {
    if (p.size() != tree.dims) throw Error(ErrorCode::DimensionMismatch, "ragged samples");
  }
  tree.classes = labels;
  std::sort(tree.classes.begin(), tree.classes.end());
  tree.classes.erase(std::unique(tree.classes.begin(), tree.classes.end()), tree.classes.end());
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i] = static_cast<int>(
        std::lower_bound(tree.classes.begin(), tree.classes.end(), labels[i]) - tree.classes.begin());
  }
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  Builder b{x, y, tree.classes.size(), cfg, tree};
  b.build(idx, 0);
  return tree;
}

double accuracy(const TrainedTree& tree, const std::vector<Point>& x,
                const std::vector<std::string>& labels) {
  if (x.empty()) throw Error(ErrorCode::EmptyInput, "no samples to score");
  if (x.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "samples and labels differ in length");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < x.size(); ++i) hit += tree.predict(x[i]) == labels[i];
  return static_cast<double>(hit) / static_cast<double>(x.size());
}

double cross_dataset_accuracy(const TrainedTree& tree, const std::vector<Point>& x,
                              const std::vector<std::string>& labels) {
  return accuracy(tree, x, labels);
}

std::string export_tree_text(const TrainedTree& tree, const std::vector<std::string>& names) {
  std::ostringstream out;
  auto walk = [&](auto&& self, int id, int indent) -> void {
    const auto& n = tree.nodes[id];
    std::string pad;
    for (int i = 0; i < indent; ++i) pad += "|   ";
    if (n.leaf()) {
      out << pad << "|--- class: " << tree.classes[n.label] << " (n=" << n.samples << ")\n";
      return;
    }
    const std::string f = feature_name(names, n.feature);
    const std::string t = csv::format_fixed(n.threshold, 4);
    out << pad << "|--- " << f << " <= " << t << '\n';
    self(self, n.left, indent + 1);
    out << pad << "|--- " << f << " >  " << t << '\n';
    self(self, n.right, indent + 1);
  };
  walk(walk, 0, 0);
  return out.str();
}

std::string export_tree_json(const TrainedTree& tree, const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["classes"] = tree.classes;
  j["dims"] = tree.dims;
  j["features"] = names;
  j["config"] = {{"max_depth", tree.config.max_depth},
                 {"min_samples_leaf", tree.config.min_samples_leaf},
                 {"impurity", "Gini"}};
  auto nodes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    nlohmann::ordered_json o;
    o["id"] = i;
    o["depth"] = n.depth;
    o["samples"] = n.samples;
    o["counts"] = n.class_counts;
    if (n.leaf()) {
      o["label"] = tree.classes[n.label];
    } else {
      o["feature"] = n.feature;
      o["feature_name"] = feature_name(names, n.feature);
      o["threshold"] = n.threshold;
      o["left"] = n.left;
      o["right"] = n.right;
    }
    nodes.push_back(std::move(o));
  }
  j["nodes"] = std::move(nodes);
  return j.dump(2);
}

TrainedTree tree_from_json(const std::string& text) {
  TrainedTree tree;
  try {
    auto j = nlohmann::json::parse(text);
    tree.classes = j.at("classes").get<std::vector<std::string>>();
    tree.dims = j.at("dims").get<std::size_t>();
    tree.config.max_depth = j.at("config").at("max_depth").get<std::size_t>();
    tree.config.min_samples_leaf = j.at("config").at("min_samples_leaf").get<std::size_t>();
    for (const auto& o : j.at("nodes")) {
      TreeNode n;
      n.depth = o.at("depth").get<std::size_t>();
      n.samples = o.at("samples").get<std::size_t>();
      n.class_counts = o.at("counts").get<std::vector<std::size_t>>();
      if (o.contains("label")) {
        auto label = o.at("label").get<std::string>();
        auto it = std::find(tree.classes.begin(), tree.classes.end(), label);
        if (it == tree.classes.end()) throw Error(ErrorCode::MalformedLine, "unknown leaf label");
        n.label = static_cast<int>(it - tree.classes.begin());
      } else {
        n.feature = o.at("feature").get<int>();
        n.threshold = o.at("threshold").get<double>();
        n.left = o.at("left").get<int>();
        n.right = o.at("right").get<int>();
      }
      tree.nodes.push_back(std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedLine, std::string("tree json: ") + e.what());
  }
  if (tree.nodes.empty()) throw Error(ErrorCode::MalformedLine, "tree json has no nodes");
  for (const auto& n : tree.nodes) {
    if (n.leaf()) continue;
    auto bad = [&](int c) { return c <= 0 || static_cast<std::size_t>(c) >= tree.nodes.size(); };
    if (bad(n.left) || bad(n.right) || n.feature >= static_cast<int>(tree.dims)) {
      throw Error(ErrorCode::MalformedLine, "tree json has a dangling node");
    }
  }
  return tree;
}

}  // namespace ctxrisk
