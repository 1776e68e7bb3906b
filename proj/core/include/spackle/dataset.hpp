#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spackle {

// Expression values are stored as 32-bit floats (the on-disk precision);
// accuracy-critical statistics are computed in double internally.
using Matrix = Eigen::MatrixXf;
using MatrixD = Eigen::MatrixXd;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);
Split split_from_string(std::string_view s);

struct Spot {
  std::string spot_id;
  double x = 0.0;  // pixels
  double y = 0.0;
  int array_row = 0;
  int array_col = 0;
};

// One tissue section. `expr` holds processed log-space expression
// [spots x genes]; `raw_counts` the pre-normalization integer counts.
// A slide carries at least one of the two. `observed(i, j)` is false where
// the value at (i, j) was originally missing: such entries are completions
// or zeros and are never treated as ground truth.
struct Slide {
  std::string slide_id;
  std::vector<Spot> spots;
  Matrix expr;
  std::optional<CountMatrix> raw_counts;
  BoolMatrix observed;

  int n_spots() const { return static_cast<int>(spots.size()); }
  bool has_expr() const { return expr.size() > 0; }
  bool has_counts() const { return raw_counts.has_value(); }
};

struct SlideDataset {
  std::string name;
  std::string organism;
  std::string tissue;
  std::vector<std::string> genes;
  std::vector<Slide> slides;
  std::map<std::string, Split> split_map;  // slide id -> split

  int n_genes() const { return static_cast<int>(genes.size()); }

  Split split_of(const std::string& slide_id) const;
  std::vector<const Slide*> slides_in(Split split) const;
  std::vector<int> slide_indices_in(Split split) const;
};

// Checks every structural invariant (shared gene list, split coverage,
// shapes, finiteness, coordinate uniqueness). Throws ConsistencyError /
// DataError with the offending slide or gene named.
void validate(const SlideDataset& ds);

}  // namespace spackle
