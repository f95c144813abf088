#include "trifuse/dbscan.hpp"

#include <deque>
#include <limits>

#include "trifuse/errors.hpp"

namespace trifuse {

namespace {

constexpr int kUnvisited = -1;
constexpr int kNoise = -2;

std::vector<int> neighbors_of(const std::vector<Vector>& vs, std::size_t i, double eps) {
  std::vector<int> out;
  const double eps2 = eps * eps;
  for (std::size_t j = 0; j < vs.size(); ++j) {
    if (j != i && (vs[j] - vs[i]).squaredNorm() <= eps2) out.push_back(static_cast<int>(j));
  }
  return out;
}

// Eq.-style medoid: the member with the smallest summed distance to the
// cluster; ties resolve to the earliest member.
Vector medoid(const std::vector<Vector>& vs, const std::vector<int>& members) {
  double best = std::numeric_limits<double>::infinity();
  int best_idx = members.front();
  for (int a : members) {
    double sum = 0.0;
    for (int b : members) sum += (vs[static_cast<std::size_t>(a)] - vs[static_cast<std::size_t>(b)]).norm();
    if (sum < best) {
      best = sum;
      best_idx = a;
    }
  }
  return vs[static_cast<std::size_t>(best_idx)];
}

}  // namespace

std::vector<TemplateCluster> cluster_templates(const std::vector<Vector>& vectors,
                                               const std::vector<int>& template_ids,
                                               double eps, int min_pts) {
  if (vectors.empty()) throw UsageError("cluster_templates: no vectors");
  if (vectors.size() != template_ids.size())
    throw UsageError("cluster_templates: vectors/ids size mismatch");
  if (eps <= 0.0) throw UsageError("cluster_templates: eps must be > 0");
  if (min_pts < 1) throw UsageError("cluster_templates: min_pts must be >= 1");

  const std::size_t n = vectors.size();
  std::vector<int> label(n, kUnvisited);
  int next_cluster = 0;

  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    auto seeds = neighbors_of(vectors, i, eps);
    if (static_cast<int>(seeds.size()) + 1 < min_pts) {
      label[i] = kNoise;
      continue;
    }
    const int cid = next_cluster++;
    label[i] = cid;
    std::deque<int> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const int j = queue.front();
      queue.pop_front();
      if (label[j] == kNoise) label[j] = cid;  // border point
      if (label[j] != kUnvisited) continue;
      label[j] = cid;
      auto nb = neighbors_of(vectors, static_cast<std::size_t>(j), eps);
      if (static_cast<int>(nb.size()) + 1 >= min_pts) {
        for (int k : nb) queue.push_back(k);
      }
    }
  }

  std::vector<std::vector<int>> groups(static_cast<std::size_t>(next_cluster));
  std::vector<int> noise;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == kNoise)
      noise.push_back(static_cast<int>(i));
    else
      groups[static_cast<std::size_t>(label[i])].push_back(static_cast<int>(i));
  }
  if (!noise.empty()) groups.push_back(std::move(noise));

  std::vector<TemplateCluster> out;
  out.reserve(groups.size());
  for (std::size_t c = 0; c < groups.size(); ++c) {
    TemplateCluster tc;
    tc.cluster_id = static_cast<int>(c);
    tc.centroid = medoid(vectors, groups[c]);
    for (int idx : groups[c]) tc.member_template_ids.push_back(template_ids[static_cast<std::size_t>(idx)]);
    out.push_back(std::move(tc));
  }
  return out;
}

int assign_template(const Vector& v, const std::vector<TemplateCluster>& clusters) {
  if (clusters.empty()) throw UsageError("assign_template: no clusters");
  int best = clusters.front().cluster_id;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (const auto& c : clusters) {
    const double d2 = (c.centroid - v).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && c.cluster_id < best)) {
      best_d2 = d2;
      best = c.cluster_id;
    }
  }
  return best;
}

}  // namespace trifuse
