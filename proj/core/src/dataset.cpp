#include "spackle/dataset.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "spackle/errors.hpp"

namespace spackle {

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw FormatError("unknown split label: '" + std::string(s) + "'");
}

Split SlideDataset::split_of(const std::string& slide_id) const {
  auto it = split_map.find(slide_id);
  if (it == split_map.end()) {
    throw ConsistencyError("slide '" + slide_id + "' has no split assignment");
  }
  return it->second;
}

std::vector<const Slide*> SlideDataset::slides_in(Split split) const {
  std::vector<const Slide*> out;
  for (const Slide& s : slides) {
    if (split_of(s.slide_id) == split) out.push_back(&s);
  }
  return out;
}

std::vector<int> SlideDataset::slide_indices_in(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(slides.size()); ++i) {
    if (split_of(slides[i].slide_id) == split) out.push_back(i);
  }
  return out;
}

namespace {

void validate_slide(const Slide& slide, int g) {
  const std::string& id = slide.slide_id;
  if (slide.spots.empty()) {
    throw ConsistencyError("slide '" + id + "' has zero spots");
  }
  std::set<std::pair<int, int>> coords;
  std::set<std::string> spot_ids;
  for (const Spot& s : slide.spots) {
    if (!std::isfinite(s.x) || !std::isfinite(s.y)) {
      throw DataError("slide '" + id + "': non-finite pixel coordinates for spot '" +
                      s.spot_id + "'");
    }
    if (!coords.insert({s.array_row, s.array_col}).second) {
      throw ConsistencyError("slide '" + id + "': duplicate array position for spot '" +
                             s.spot_id + "'");
    }
    if (!spot_ids.insert(s.spot_id).second) {
      throw ConsistencyError("slide '" + id + "': duplicate spot id '" + s.spot_id + "'");
    }
  }

  const auto n = static_cast<Eigen::Index>(slide.spots.size());
  if (!slide.has_expr() && !slide.has_counts()) {
    throw ConsistencyError("slide '" + id + "' carries neither expression nor counts");
  }
  if (slide.has_expr()) {
    if (slide.expr.rows() != n || slide.expr.cols() != g) {
      throw ConsistencyError("slide '" + id + "': expr shape does not match spots x genes");
    }
    if (!slide.expr.allFinite()) {
      throw DataError("slide '" + id + "': non-finite expression value");
    }
    if (slide.observed.rows() != n || slide.observed.cols() != g) {
      throw ConsistencyError("slide '" + id + "': observed mask shape does not match expr");
    }
  }
  if (slide.has_counts()) {
    const CountMatrix& c = *slide.raw_counts;
    if (c.rows() != n || c.cols() != g) {
      throw ConsistencyError("slide '" + id + "': counts shape does not match spots x genes");
    }
    if ((c.array() < 0).any()) {
      throw DataError("slide '" + id + "': negative count");
    }
  }
}

}  // namespace

void validate(const SlideDataset& ds) {
  if (ds.genes.empty()) throw ConsistencyError("dataset has an empty gene list");
  {
    std::set<std::string> uniq(ds.genes.begin(), ds.genes.end());
    if (uniq.size() != ds.genes.size()) {
      throw ConsistencyError("dataset gene list contains duplicates");
    }
  }
  if (ds.slides.empty()) throw ConsistencyError("dataset has no slides");

  std::set<std::string> slide_ids;
  for (const Slide& s : ds.slides) {
    if (!slide_ids.insert(s.slide_id).second) {
      throw ConsistencyError("duplicate slide id '" + s.slide_id + "'");
    }
    if (ds.split_map.find(s.slide_id) == ds.split_map.end()) {
      throw ConsistencyError("slide '" + s.slide_id + "' missing from split map");
    }
  }
  for (const auto& [id, split] : ds.split_map) {
    (void)split;
    if (slide_ids.find(id) == slide_ids.end()) {
      throw ConsistencyError("split map names unknown slide '" + id + "'");
    }
  }

  const int g = ds.n_genes();
  for (const Slide& s : ds.slides) validate_slide(s, g);
}

}  // namespace spackle
