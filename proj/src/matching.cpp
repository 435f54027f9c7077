#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "dexined/eval.hpp"
#include "dexined/ops.hpp"

namespace dexined {

namespace {

// Hopcroft-Karp over pred (left) and gt (right) pixels.
class BipartiteMatcher {
 public:
  explicit BipartiteMatcher(std::vector<std::vector<int>> adjacency, int right_count)
      : adj_(std::move(adjacency)),
        match_left_(adj_.size(), -1),
        match_right_(static_cast<std::size_t>(right_count), -1),
        dist_(adj_.size(), 0) {}

  std::int64_t run() {
    std::int64_t matched = 0;
    while (bfs()) {
      for (std::size_t u = 0; u < adj_.size(); ++u) {
        if (match_left_[u] == -1 && dfs(static_cast<int>(u))) ++matched;
      }
    }
    return matched;
  }

 private:
  static constexpr int kInf = std::numeric_limits<int>::max();

  bool bfs() {
    std::queue<int> queue;
    bool found = false;
    for (std::size_t u = 0; u < adj_.size(); ++u) {
      if (match_left_[u] == -1) {
        dist_[u] = 0;
        queue.push(static_cast<int>(u));
      } else {
        dist_[u] = kInf;
      }
    }
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop();
      for (int v : adj_[static_cast<std::size_t>(u)]) {
        const int next = match_right_[static_cast<std::size_t>(v)];
        if (next == -1) {
          found = true;
        } else if (dist_[static_cast<std::size_t>(next)] == kInf) {
          dist_[static_cast<std::size_t>(next)] = dist_[static_cast<std::size_t>(u)] + 1;
          queue.push(next);
        }
      }
    }
    return found;
  }

  bool dfs(int u) {
    const auto su = static_cast<std::size_t>(u);
    for (int v : adj_[su]) {
      const int next = match_right_[static_cast<std::size_t>(v)];
      if (next == -1 || (dist_[static_cast<std::size_t>(next)] == dist_[su] + 1 && dfs(next))) {
        match_left_[su] = v;
        match_right_[static_cast<std::size_t>(v)] = u;
        return true;
      }
    }
    dist_[su] = kInf;
    return false;
  }

  std::vector<std::vector<int>> adj_;
  std::vector<int> match_left_;
  std::vector<int> match_right_;
  std::vector<int> dist_;
};

}  // namespace

MatchCounts match_edges(const BinaryMap& pred, const BinaryMap& gt, double radius) {
  if (pred.width != gt.width || pred.height != gt.height) {
    fail(ErrorKind::Shape, "match_edges: prediction is " + std::to_string(pred.width) + "x" +
                               std::to_string(pred.height) + " but GT is " + std::to_string(gt.width) + "x" +
                               std::to_string(gt.height));
  }
  if (!(radius >= 0)) fail(ErrorKind::Argument, "match_edges: radius must be >= 0");
  const int w = gt.width;
  const int h = gt.height;

  std::vector<int> gt_index(gt.data.size(), -1);
  int gt_count = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (gt.data[i]) gt_index[i] = gt_count++;
  }

  const double r2 = radius * radius + 1e-9;
  const int reach = static_cast<int>(std::floor(radius + 1e-9));
  std::vector<std::pair<int, int>> offsets;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      if (dx * dx + dy * dy <= r2) offsets.emplace_back(dx, dy);
    }
  }

  std::vector<std::vector<int>> adjacency;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!pred.at(x, y)) continue;
      std::vector<int> nbrs;
      for (auto [dx, dy] : offsets) {
        const int gx = x + dx;
        const int gy = y + dy;
        if (gx < 0 || gy < 0 || gx >= w || gy >= h) continue;
        const int j = gt_index[static_cast<std::size_t>(gy) * w + gx];
        if (j >= 0) nbrs.push_back(j);
      }
      adjacency.push_back(std::move(nbrs));
    }
  }

  const auto pred_count = static_cast<std::int64_t>(adjacency.size());
  std::int64_t tp = BipartiteMatcher(std::move(adjacency), gt_count).run();
  if (testing::perturbed("matcher") && tp > 0) --tp;
  return MatchCounts{tp, pred_count - tp, gt_count - tp};
}

MatchCounts match_edges(const BinaryMap& pred, const BinaryMap& gt, const MatchConfig& config) {
  config.validate();
  return match_edges(pred, gt, config.radius_pixels(gt.width, gt.height));
}

}  // namespace dexined
