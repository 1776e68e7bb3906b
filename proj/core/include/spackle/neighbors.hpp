#pragma once

#include <vector>

#include "spackle/dataset.hpp"

namespace spackle {

// Per-spot disc of nearest neighbors on the slide. `hops` is the hex-lattice
// radius; a full disc of radius h holds 3h(h+1) spots, so hops 0..3 give the
// 0 / 6 / 18 / 36 neighborhood sizes. Neighbors are sorted by ascending
// Euclidean pixel distance with ties broken by spot index, and only spots
// within kDiscRadiusSlack * hops * pitch qualify, where pitch is the slide's
// median nearest-neighbor distance. Slots that cannot be filled near slide
// borders carry index -1 and are flagged in `pad`.
struct NeighborIndex {
  int hops = 0;
  int target_count = 0;
  Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> neighbors;  // [spots x target]
  BoolMatrix pad;                                                         // [spots x target]

  int n_real(int spot) const {
    int k = 0;
    for (Eigen::Index c = 0; c < pad.cols(); ++c) {
      if (!pad(spot, c)) ++k;
    }
    return k;
  }
};

// Disc size of a radius-h hex neighborhood.
constexpr int hop_target_count(int hops) { return 3 * hops * (hops + 1); }

// Radius slack over h * pitch. Must stay below 1.1547 (the ratio between the
// innermost shell outside a 3-hop disc and the disc radius) so regular-grid
// interiors come out exact.
inline constexpr double kDiscRadiusSlack = 1.12;

// Model-facing construction; accepts hops in {0, 1, 2, 3} only.
NeighborIndex build_neighbor_index(const Slide& slide, int hops);

// Same construction for any radius >= 0 (the median filter expands past
// three hops).
NeighborIndex build_disc_index(const Slide& slide, int hops);

// Discs for radii 1..max_hops, sharing one distance pass over the slide.
std::vector<NeighborIndex> build_disc_family(const Slide& slide, int max_hops);

}  // namespace spackle
