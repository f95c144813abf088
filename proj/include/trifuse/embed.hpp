#pragma once

#include "trifuse/drain.hpp"
#include "trifuse/rng.hpp"
#include "trifuse/types.hpp"

namespace trifuse {

struct EmbedderConfig {
  int dim = 64;
  std::uint64_t hash_seed = 0xcbf29ce484222325ULL;
};

// Deterministic bag-of-tokens embedding: each non-wildcard token is hashed
// into one of `dim` buckets and the bucket counts are L2-normalized. A
// drop-in stand-in for a learned sentence embedder behind the same shape.
inline Vector embed_template(const LogTemplate& tmpl, const EmbedderConfig& cfg) {
  Vector v = Vector::Zero(cfg.dim);
  for (const auto& token : tmpl.tokens) {
    if (token == kWildcard) continue;
    const std::uint64_t h = fnv1a(token, splitmix64(cfg.hash_seed));
    v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(cfg.dim))] += 1.0;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

}  // namespace trifuse
