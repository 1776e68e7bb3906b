#pragma once

#include <filesystem>

#include "spackle/dataset.hpp"

namespace spackle {

// Dataset directory format:
//   manifest.json                      name, organism, tissue, genes, slides
//   <slide>/spots.tsv                  spot_id  x  y  array_row  array_col
//   <slide>/expr.tsv                   header = gene ids, one row per spot
//   <slide>/observed.tsv               same shape, values in {0, 1}
//   <slide>/counts.tsv                 raw-count variant, nonnegative integers
// Numbers are written with shortest round-trip formatting ('.' radix), so a
// save -> load cycle reproduces every numeric field bit-exactly at the
// declared precision (float32 for expression, float64 for coordinates).
SlideDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const SlideDataset& ds, const std::filesystem::path& dir);

// Plain TSV matrix helpers shared with the synthetic-truth and report files.
void write_float_tsv(const std::filesystem::path& file,
                     const std::vector<std::string>& header, const Matrix& values);
void write_count_tsv(const std::filesystem::path& file,
                     const std::vector<std::string>& header, const CountMatrix& values);
Matrix read_float_tsv(const std::filesystem::path& file, std::vector<std::string>* header);
CountMatrix read_count_tsv(const std::filesystem::path& file, std::vector<std::string>* header);

}  // namespace spackle
