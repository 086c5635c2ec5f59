#pragma once

// High-rewarding joint state-action subspace: harvesting the valuable set
// from logged trajectories, densified relabeling, a k-means cluster hash and
// count-discounted shaped exploration rewards.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace mesa::subspace {

using Point = std::vector<double>;

struct Trajectory {
  std::vector<Point> points;  // embedded (state, joint action) per step
  std::vector<double> rewards;
  int task_id = 0;
};

struct ValuableSet {
  int dim = 0;
  std::vector<Point> points;
  std::vector<double> rewards;
  std::vector<int> task_ids;
  double r_star = 1.0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void add(Point p, double reward, int task_id);
};

// r_hat_t = r_t if r_t > 0, else gamma^(t'-t) r_t' for the nearest later
// positive reward, else 0.
std::vector<double> densify_trajectory(std::span<const double> rewards, double relabel_gamma);

struct CollectOptions {
  std::size_t max_points = 0;  // 0 keeps everything
  std::uint64_t seed = 0;      // subsampling seed when max_points binds
};

// Rewards below r_star are treated as zero, the rest densified; every step
// with r_hat > 0 is stored. Exact duplicate points keep their largest r_hat.
ValuableSet collect_valuable(std::span<const Trajectory> trajectories, double r_star,
                             double relabel_gamma, const CollectOptions& opts = {});

struct ClusterHash {
  Eigen::MatrixXd centroids;  // C x d

  int size() const { return static_cast<int>(centroids.rows()); }
  // Nearest centroid under L2; ties go to the lowest index.
  int assign(std::span<const double> point) const;
};

struct ClusterFit {
  ClusterHash hash;
  std::vector<double> objective;  // after each Lloyd iteration
  int iterations = 0;
  bool converged = false;
};

// Lloyd's algorithm from a farthest-point initialization whose first centre
// is drawn with the seed.
ClusterFit fit_clusters(const std::vector<Point>& points, int C, std::uint64_t seed, int max_iters = 100);

double clustering_objective(const std::vector<Point>& points, const ClusterHash& hash);
std::size_t count_distinct(const std::vector<Point>& points);

enum class CountScope { kTrajectory, kGlobal };

struct PseudoCounts {
  std::vector<long long> counts;
  CountScope scope = CountScope::kGlobal;

  static PseudoCounts zeros(int C, CountScope scope) {
    return {std::vector<long long>(static_cast<std::size_t>(C), 0), scope};
  }
  long long total() const;
};

// Exact nearest-neighbour queries restricted to a radius. Points are bucketed
// on a grid of side `radius` over a few high-variance coordinates; any point
// within the radius lies in a neighbouring bucket, so results equal a full scan.
class RadiusIndex {
 public:
  RadiusIndex() = default;
  RadiusIndex(const ValuableSet& set, double radius);

  struct Hit {
    std::size_t index = 0;
    double distance = 0.0;
  };
  std::optional<Hit> nearest_within(std::span<const double> point) const;
  double radius() const { return radius_; }
  const ValuableSet& set() const { return set_; }

 private:
  std::vector<long long> key_of(std::span<const double> point) const;
  std::uint64_t hash_key(std::span<const long long> key) const;

  ValuableSet set_;
  double radius_ = 0.0;
  std::vector<int> dims_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets_;
};

// Exhaustive scan; infinity for an empty set.
double min_distance(const ValuableSet& set, std::span<const double> point, std::size_t* argmin = nullptr);

struct ShapeParams {
  double dist_eps = 0.1;
  double fd_exponent = 5.0;
};

struct Shaped {
  double reward = 0.0;
  int cluster = -1;  // -1 when the gate is closed
  double r_hat = 0.0;
};

// r~ = r_hat * N^-p * [min distance to the set < eps], N the post-increment
// trajectory count of the point's cluster. Without an explicit r_hat the tag
// of the nearest stored point is used. Counts change only when gated.
Shaped shaped_reward(std::span<const double> point, std::optional<double> r_hat, const ClusterHash& hash,
                     PseudoCounts& counts, const RadiusIndex& index, const ShapeParams& params);

// Adds one count per point to the point's cluster. Callers pass gated points.
void update_global_counts(PseudoCounts& global, const std::vector<Point>& gated_points, const ClusterHash& hash);

// CSV with columns e0..e{d-1},reward,task.
void write_valuable_csv(std::ostream& out, const ValuableSet& set);
ValuableSet read_valuable_csv(std::istream& in, double r_star = 1.0);

}  // namespace mesa::subspace
