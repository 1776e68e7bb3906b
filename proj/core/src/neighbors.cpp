#include "spackle/neighbors.hpp"

#include <algorithm>
#include <cmath>

#include "spackle/errors.hpp"

namespace spackle {

namespace {

struct Candidate {
  double d2;
  std::int32_t index;
};

inline bool closer(const Candidate& a, const Candidate& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
}

// Median nearest-neighbor distance; the lattice pitch estimate used for the
// disc radius cutoff.
double lattice_pitch(const Slide& slide) {
  const int n = slide.n_spots();
  if (n < 2) return 0.0;
  std::vector<double> nearest(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    const double xi = slide.spots[static_cast<std::size_t>(i)].x;
    const double yi = slide.spots[static_cast<std::size_t>(i)].y;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = slide.spots[static_cast<std::size_t>(j)].x - xi;
      const double dy = slide.spots[static_cast<std::size_t>(j)].y - yi;
      best = std::min(best, dx * dx + dy * dy);
    }
    nearest[static_cast<std::size_t>(i)] = best;
  }
  std::nth_element(nearest.begin(), nearest.begin() + n / 2, nearest.end());
  return std::sqrt(nearest[static_cast<std::size_t>(n / 2)]);
}

NeighborIndex build_index(const Slide& slide, int hops) {
  const int n = slide.n_spots();
  const int target = hop_target_count(hops);

  NeighborIndex idx;
  idx.hops = hops;
  idx.target_count = target;
  idx.neighbors.setConstant(n, target, -1);
  idx.pad.setConstant(n, target, true);
  if (target == 0 || n < 2) return idx;

  // A spot belongs to the radius-h disc only if it lies within h lattice
  // pitches (plus jitter slack). On a regular hex lattice the next shell
  // beyond disc h starts at >= 1.1547 * h * pitch for h <= 3, so 1.12 keeps
  // interior discs exact while tolerating irregular spot placement.
  const double pitch = lattice_pitch(slide);
  const double cutoff = kDiscRadiusSlack * static_cast<double>(hops) * pitch;
  const double cutoff_sq = cutoff * cutoff;

  std::vector<Candidate> cand;
  cand.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    cand.clear();
    const double xi = slide.spots[static_cast<std::size_t>(i)].x;
    const double yi = slide.spots[static_cast<std::size_t>(i)].y;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = slide.spots[static_cast<std::size_t>(j)].x - xi;
      const double dy = slide.spots[static_cast<std::size_t>(j)].y - yi;
      const double d2 = dx * dx + dy * dy;
      if (d2 <= cutoff_sq) cand.push_back({d2, j});
    }
    const int k = std::min<int>(target, static_cast<int>(cand.size()));
    if (k < static_cast<int>(cand.size())) {
      std::nth_element(cand.begin(), cand.begin() + k, cand.end(), closer);
    }
    std::sort(cand.begin(), cand.begin() + k, closer);
    for (int c = 0; c < k; ++c) {
      idx.neighbors(i, c) = cand[static_cast<std::size_t>(c)].index;
      idx.pad(i, c) = false;
    }
  }
  return idx;
}

}  // namespace

NeighborIndex build_neighbor_index(const Slide& slide, int hops) {
  if (hops < 0 || hops > 3) {
    throw ConfigError("hops must be in {0, 1, 2, 3}, got " + std::to_string(hops));
  }
  return build_index(slide, hops);
}

NeighborIndex build_disc_index(const Slide& slide, int hops) {
  if (hops < 0) throw ConfigError("disc radius must be nonnegative");
  return build_index(slide, hops);
}

std::vector<NeighborIndex> build_disc_family(const Slide& slide, int max_hops) {
  if (max_hops < 1) throw ConfigError("max_hops must be >= 1");
  std::vector<NeighborIndex> family;
  family.reserve(static_cast<std::size_t>(max_hops));
  for (int h = 1; h <= max_hops; ++h) {
    family.push_back(build_disc_index(slide, h));
  }
  return family;
}

}  // namespace spackle
