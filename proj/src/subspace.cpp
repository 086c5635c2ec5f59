#include "mesa/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mesa/errors.hpp"
#include "mesa/kvconfig.hpp"
#include "mesa/rng.hpp"

namespace mesa::subspace {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sq_dist(const Eigen::MatrixXd& c, Eigen::Index row, std::span<const double> p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = c(row, static_cast<Eigen::Index>(i)) - p[i];
    s += d * d;
  }
  return s;
}

}  // namespace

void ValuableSet::add(Point p, double reward, int task_id) {
  if (points.empty() && dim == 0) dim = static_cast<int>(p.size());
  require(static_cast<int>(p.size()) == dim, ErrorKind::kInvalidArgument,
          "valuable set: embedding dimension changed");
  points.push_back(std::move(p));
  rewards.push_back(reward);
  task_ids.push_back(task_id);
}

std::vector<double> densify_trajectory(std::span<const double> rewards, double g) {
  std::vector<double> out(rewards.size(), 0.0);
  double carry = 0.0;  // discounted value of the nearest later positive reward
  for (std::size_t k = rewards.size(); k-- > 0;) {
    if (rewards[k] > 0) {
      out[k] = rewards[k];
      carry = rewards[k];
    } else {
      carry *= g;
      out[k] = carry;
    }
  }
  return out;
}

ValuableSet collect_valuable(std::span<const Trajectory> trajectories, double r_star, double relabel_gamma,
                             const CollectOptions& opts) {
  require(relabel_gamma > 0 && relabel_gamma < 1, ErrorKind::kInvalidArgument,
          "relabel gamma must lie in (0, 1)");
  ValuableSet set;
  set.r_star = r_star;
  std::map<Point, std::size_t> seen;
  for (const Trajectory& tr : trajectories) {
    require(tr.points.size() == tr.rewards.size(), ErrorKind::kInvalidArgument,
            "trajectory points and rewards differ in length");
    std::vector<double> r(tr.rewards.begin(), tr.rewards.end());
    for (double& v : r) {
      if (v < r_star) v = 0.0;
    }
    const std::vector<double> rh = densify_trajectory(r, relabel_gamma);
    for (std::size_t t = 0; t < rh.size(); ++t) {
      if (!(rh[t] > 0)) continue;
      auto it = seen.find(tr.points[t]);
      if (it != seen.end()) {
        if (rh[t] > set.rewards[it->second]) {
          set.rewards[it->second] = rh[t];
          set.task_ids[it->second] = tr.task_id;
        }
        continue;
      }
      seen.emplace(tr.points[t], set.size());
      set.add(tr.points[t], rh[t], tr.task_id);
    }
  }
  if (opts.max_points > 0 && set.size() > opts.max_points) {
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(opts.seed);
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[uniform_index(rng, i + 1)]);
    idx.resize(opts.max_points);
    std::sort(idx.begin(), idx.end());
    ValuableSet kept;
    kept.r_star = r_star;
    for (std::size_t i : idx) kept.add(set.points[i], set.rewards[i], set.task_ids[i]);
    return kept;
  }
  return set;
}

int ClusterHash::assign(std::span<const double> point) const {
  require(centroids.rows() > 0 && static_cast<Eigen::Index>(point.size()) == centroids.cols(),
          ErrorKind::kInvalidArgument, "cluster hash: dimension mismatch");
  int best = 0;
  double best_d = sq_dist(centroids, 0, point);
  for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
    const double d = sq_dist(centroids, c, point);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::size_t count_distinct(const std::vector<Point>& points) {
  std::vector<Point> copy = points;
  std::sort(copy.begin(), copy.end());
  return static_cast<std::size_t>(std::unique(copy.begin(), copy.end()) - copy.begin());
}

double clustering_objective(const std::vector<Point>& points, const ClusterHash& hash) {
  double s = 0.0;
  for (const auto& p : points) s += sq_dist(hash.centroids, hash.assign(p), p);
  return s;
}

ClusterFit fit_clusters(const std::vector<Point>& points, int C, std::uint64_t seed, int max_iters) {
  require(C >= 1, ErrorKind::kInvalidArgument, "cluster count must be >= 1");
  require(!points.empty(), ErrorKind::kInvalidArgument, "cannot cluster an empty point set");
  const std::size_t distinct = count_distinct(points);
  require(static_cast<std::size_t>(C) <= distinct, ErrorKind::kInvalidArgument,
          "cluster count " + std::to_string(C) + " exceeds the " + std::to_string(distinct) +
              " distinct points");
  const auto d = static_cast<Eigen::Index>(points[0].size());
  const std::size_t N = points.size();

  ClusterFit fit;
  Eigen::MatrixXd& cen = fit.hash.centroids;
  cen.resize(C, d);
  Rng rng(seed);
  std::size_t first = uniform_index(rng, N);
  cen.row(0) = Eigen::Map<const Eigen::RowVectorXd>(points[first].data(), d);
  std::vector<double> near(N);
  for (std::size_t i = 0; i < N; ++i) near[i] = sq_dist(cen, 0, points[i]);
  for (int c = 1; c < C; ++c) {
    std::size_t far = 0;
    for (std::size_t i = 1; i < N; ++i) {
      if (near[i] > near[far]) far = i;
    }
    cen.row(c) = Eigen::Map<const Eigen::RowVectorXd>(points[far].data(), d);
    for (std::size_t i = 0; i < N; ++i) near[i] = std::min(near[i], sq_dist(cen, c, points[i]));
  }

  std::vector<int> assign(N, -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      const int a = fit.hash.assign(points[i]);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(C, d);
    std::vector<std::size_t> cnt(static_cast<std::size_t>(C), 0);
    for (std::size_t i = 0; i < N; ++i) {
      sum.row(assign[i]) += Eigen::Map<const Eigen::RowVectorXd>(points[i].data(), d);
      ++cnt[static_cast<std::size_t>(assign[i])];
    }
    for (int c = 0; c < C; ++c) {
      if (cnt[static_cast<std::size_t>(c)] > 0) cen.row(c) = sum.row(c) / static_cast<double>(cnt[c]);
    }
    ++fit.iterations;
    fit.objective.push_back(clustering_objective(points, fit.hash));
  }
  return fit;
}

long long PseudoCounts::total() const { return std::accumulate(counts.begin(), counts.end(), 0LL); }

RadiusIndex::RadiusIndex(const ValuableSet& set, double radius) : set_(set), radius_(radius) {
  require(radius > 0, ErrorKind::kInvalidArgument, "radius must be positive");
  const int d = set.dim;
  if (set.empty()) return;
  // Bucket on the (up to) three coordinates with the largest spread.
  std::vector<std::pair<double, int>> spread;
  for (int k = 0; k < d; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : set.points) {
      lo = std::min(lo, p[k]);
      hi = std::max(hi, p[k]);
    }
    spread.emplace_back(-(hi - lo), k);
  }
  std::sort(spread.begin(), spread.end());
  for (std::size_t k = 0; k < spread.size() && k < 3; ++k) {
    if (spread[k].first < 0) dims_.push_back(spread[k].second);
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto key = key_of(set.points[i]);
    buckets_[hash_key(key)].push_back(i);
  }
}

std::vector<long long> RadiusIndex::key_of(std::span<const double> p) const {
  std::vector<long long> key(dims_.size());
  for (std::size_t k = 0; k < dims_.size(); ++k) {
    key[k] = static_cast<long long>(std::floor(p[static_cast<std::size_t>(dims_[k])] / radius_));
  }
  return key;
}

std::uint64_t RadiusIndex::hash_key(std::span<const long long> key) const {
  std::uint64_t h = 0x12345;
  for (long long k : key) h = derive_seed(h, static_cast<std::uint64_t>(k));
  return h;
}

std::optional<RadiusIndex::Hit> RadiusIndex::nearest_within(std::span<const double> point) const {
  if (set_.empty()) return std::nullopt;
  require(static_cast<int>(point.size()) == set_.dim, ErrorKind::kInvalidArgument,
          "radius query: dimension mismatch");
  const auto base = key_of(point);
  const std::size_t m = base.size();
  std::vector<long long> key(m);
  std::size_t combos = 1;
  for (std::size_t k = 0; k < m; ++k) combos *= 3;
  double best = radius_ * radius_;
  std::optional<Hit> hit;
  for (std::size_t c = 0; c < combos; ++c) {
    std::size_t code = c;
    for (std::size_t k = 0; k < m; ++k) {
      key[k] = base[k] + static_cast<long long>(code % 3) - 1;
      code /= 3;
    }
    auto it = buckets_.find(hash_key(key));
    if (it == buckets_.end()) continue;
    for (std::size_t i : it->second) {
      const double d2 = sq_dist(set_.points[i], point);
      if (d2 < best || (hit && d2 == best && i < hit->index)) {
        best = d2;
        hit = Hit{i, 0.0};
      }
    }
  }
  if (hit) hit->distance = std::sqrt(best);
  return hit;
}

double min_distance(const ValuableSet& set, std::span<const double> point, std::size_t* argmin) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d2 = sq_dist(set.points[i], point);
    if (d2 < best) {
      best = d2;
      if (argmin) *argmin = i;
    }
  }
  return std::sqrt(best);
}

Shaped shaped_reward(std::span<const double> point, std::optional<double> r_hat, const ClusterHash& hash,
                     PseudoCounts& counts, const RadiusIndex& index, const ShapeParams& params) {
  require(!index.set().empty(), ErrorKind::kInvalidState, "shaped reward needs a non-empty valuable set");
  require(static_cast<int>(counts.counts.size()) == hash.size(), ErrorKind::kInvalidArgument,
          "pseudo-counts do not match the cluster hash");
  require(index.radius() == params.dist_eps, ErrorKind::kInvalidArgument,
          "radius index was built for a different gate radius");
  Shaped out;
  const auto hit = index.nearest_within(point);
  if (!hit) return out;
  out.r_hat = r_hat ? *r_hat : index.set().rewards[hit->index];
  out.cluster = hash.assign(point);
  const long long n = ++counts.counts[static_cast<std::size_t>(out.cluster)];
  out.reward = out.r_hat * std::pow(static_cast<double>(n), -params.fd_exponent);
  return out;
}

void update_global_counts(PseudoCounts& global, const std::vector<Point>& gated_points, const ClusterHash& hash) {
  require(static_cast<int>(global.counts.size()) == hash.size(), ErrorKind::kInvalidArgument,
          "pseudo-counts do not match the cluster hash");
  for (const auto& p : gated_points) ++global.counts[static_cast<std::size_t>(hash.assign(p))];
}

void write_valuable_csv(std::ostream& out, const ValuableSet& set) {
  for (int k = 0; k < set.dim; ++k) out << 'e' << k << ',';
  out << "reward,task\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (double v : set.points[i]) out << format_real(v) << ',';
    out << format_real(set.rewards[i]) << ',' << set.task_ids[i] << '\n';
  }
}

ValuableSet read_valuable_csv(std::istream& in, double r_star) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kIo, "valuable-set CSV: missing header");
  const auto cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  require(cols >= 2 && line.ends_with("reward,task"), ErrorKind::kIo, "valuable-set CSV: bad header");
  ValuableSet set;
  set.r_star = r_star;
  set.dim = cols - 2;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        require(used == cell.size(), ErrorKind::kIo, "");
      } catch (const std::exception&) {
        fail(ErrorKind::kIo, "valuable-set CSV line " + std::to_string(lineno) + ": bad number");
      }
    }
    require(static_cast<int>(vals.size()) == cols, ErrorKind::kIo,
            "valuable-set CSV line " + std::to_string(lineno) + ": wrong column count");
    const int task = static_cast<int>(vals.back());
    vals.pop_back();
    const double r = vals.back();
    vals.pop_back();
    set.add(std::move(vals), r, task);
  }
  return set;
}

}  // namespace mesa::subspace
