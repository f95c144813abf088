#pragma once

#include <vector>

#include "trifuse/types.hpp"

namespace trifuse {

struct TemplateCluster {
  int cluster_id = 0;
  Vector centroid;
  std::vector<int> member_template_ids;
};

// DBSCAN with Euclidean distance over template embeddings. Noise points are
// pooled into one trailing "rare" cluster instead of being dropped, so novel
// templates still feed a signal channel. Each centroid is the member vector
// minimizing the summed distance to its cluster.
std::vector<TemplateCluster> cluster_templates(const std::vector<Vector>& vectors,
                                               const std::vector<int>& template_ids,
                                               double eps, int min_pts);

// Nearest-centroid assignment; ties resolve to the smallest cluster_id.
// Never creates clusters: refitting is an offline operation.
int assign_template(const Vector& v, const std::vector<TemplateCluster>& clusters);

}  // namespace trifuse
