#pragma once

#include <span>
#include <string>
#include <vector>

#include "ctxrisk/clustering.hpp"

namespace ctxrisk {

struct TreeConfig {
  std::size_t max_depth = 6;  // 0 = unbounded
  std::size_t min_samples_leaf = 5;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  int label = 0;  // index into TrainedTree::classes
  std::vector<std::size_t> class_counts;
  std::size_t samples = 0;
  std::size_t depth = 0;

  bool leaf() const { return feature < 0; }
};

struct TrainedTree {
  std::vector<std::string> classes;  // sorted
  std::vector<TreeNode> nodes;       // nodes[0] is the root
  std::size_t dims = 0;
  TreeConfig config;

  const std::string& predict(std::span<const double> x) const;
  std::size_t depth() const;
  std::size_t leaf_count() const;
};

/// Greedy CART with Gini impurity. Splits are chosen by largest impurity decrease,
/// ties to the lowest feature index and then the lowest threshold.
TrainedTree train_tree(const std::vector<Point>& x, const std::vector<std::string>& labels,
                       const TreeConfig& cfg = {});

/// Fraction of samples whose prediction equals the label.
double accuracy(const TrainedTree& tree, const std::vector<Point>& x,
                const std::vector<std::string>& labels);

/// Accuracy of a tree trained on one dataset against another dataset's labels.
double cross_dataset_accuracy(const TrainedTree& tree, const std::vector<Point>& x,
                              const std::vector<std::string>& labels);

std::string export_tree_text(const TrainedTree& tree,
                             const std::vector<std::string>& feature_names = {});
std::string export_tree_json(const TrainedTree& tree,
                             const std::vector<std::string>& feature_names = {});
TrainedTree tree_from_json(const std::string& text);

}  // namespace ctxrisk
