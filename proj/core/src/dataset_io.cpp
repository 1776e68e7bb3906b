#include "spackle/dataset_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <system_error>

#include <nlohmann/json.hpp>

#include "spackle/errors.hpp"

namespace spackle {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// formatting / parsing (locale-independent, shortest round-trip)
// ---------------------------------------------------------------------------

template <typename T>
void append_number(std::string& out, T value) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw IoError("number formatting failed");
  out.append(buf, ptr);
}

template <typename T>
T parse_number(std::string_view token, const std::string& context) {
  T value{};
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw FormatError("cannot parse '" + std::string(token) + "' in " + context);
  }
  return value;
}

std::string read_text_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("missing or unreadable file: " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + file.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + file.string());
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

// Splits into lines, dropping one trailing empty line if present.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string_view::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    std::string_view line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = pos + 1;
  }
  return lines;
}

template <typename Derived, typename Parser>
void read_matrix_tsv(const fs::path& file, std::vector<std::string>* header,
                     Eigen::MatrixBase<Derived> const& out_, Parser parse_cell,
                     Eigen::Index expected_rows, Eigen::Index expected_cols) {
  auto& out = const_cast<Eigen::MatrixBase<Derived>&>(out_).derived();
  const std::string text = read_text_file(file);
  const auto lines = split_lines(text);
  if (lines.empty()) throw FormatError("empty table: " + file.string());
  const auto head = split_tabs(lines[0]);
  const auto cols = static_cast<Eigen::Index>(head.size());
  const auto rows = static_cast<Eigen::Index>(lines.size()) - 1;
  if (expected_cols >= 0 && cols != expected_cols) {
    throw ConsistencyError(file.string() + ": expected " + std::to_string(expected_cols) +
                           " columns, found " + std::to_string(cols));
  }
  if (expected_rows >= 0 && rows != expected_rows) {
    throw ConsistencyError(file.string() + ": expected " + std::to_string(expected_rows) +
                           " rows, found " + std::to_string(rows));
  }
  if (header) {
    header->clear();
    for (auto h : head) header->emplace_back(h);
  }
  out.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto fields = split_tabs(lines[static_cast<std::size_t>(r) + 1]);
    if (static_cast<Eigen::Index>(fields.size()) != cols) {
      throw FormatError(file.string() + ": row " + std::to_string(r + 1) +
                        " has wrong field count");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = parse_cell(fields[static_cast<std::size_t>(c)]);
    }
  }
}

template <typename Mat, typename Formatter>
void write_matrix_tsv(const fs::path& file, const std::vector<std::string>& header,
                      const Mat& values, Formatter format_cell) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
    throw ConsistencyError("header length does not match matrix columns for " + file.string());
  }
  std::string out;
  out.reserve(static_cast<std::size_t>(values.size()) * 8 + header.size() * 16);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c) out.push_back('\t');
    out += header[c];
  }
  out.push_back('\n');
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out.push_back('\t');
      format_cell(out, values(r, c));
    }
    out.push_back('\n');
  }
  write_text_file(file, out);
}

constexpr const char* kSpotsHeader = "spot_id\tx\ty\tarray_row\tarray_col";

void write_spots_tsv(const fs::path& file, const Slide& slide) {
  std::string out(kSpotsHeader);
  out.push_back('\n');
  for (const Spot& s : slide.spots) {
    out += s.spot_id;
    out.push_back('\t');
    append_number(out, s.x);
    out.push_back('\t');
    append_number(out, s.y);
    out.push_back('\t');
    append_number(out, s.array_row);
    out.push_back('\t');
    append_number(out, s.array_col);
    out.push_back('\n');
  }
  write_text_file(file, out);
}

std::vector<Spot> read_spots_tsv(const fs::path& file) {
  const std::string text = read_text_file(file);
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kSpotsHeader) {
    throw FormatError(file.string() + ": expected header '" + std::string(kSpotsHeader) + "'");
  }
  std::vector<Spot> spots;
  spots.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_tabs(lines[i]);
    if (fields.size() != 5) {
      throw FormatError(file.string() + ": row " + std::to_string(i) + " has wrong field count");
    }
    Spot s;
    s.spot_id = std::string(fields[0]);
    s.x = parse_number<double>(fields[1], file.string());
    s.y = parse_number<double>(fields[2], file.string());
    s.array_row = parse_number<int>(fields[3], file.string());
    s.array_col = parse_number<int>(fields[4], file.string());
    spots.push_back(std::move(s));
  }
  return spots;
}

}  // namespace

void write_float_tsv(const fs::path& file, const std::vector<std::string>& header,
                     const Matrix& values) {
  write_matrix_tsv(file, header, values,
                   [](std::string& out, float v) { append_number(out, v); });
}

void write_count_tsv(const fs::path& file, const std::vector<std::string>& header,
                     const CountMatrix& values) {
  write_matrix_tsv(file, header, values,
                   [](std::string& out, std::int64_t v) { append_number(out, v); });
}

Matrix read_float_tsv(const fs::path& file, std::vector<std::string>* header) {
  Matrix m;
  read_matrix_tsv(file, header, m,
                  [&](std::string_view tok) { return parse_number<float>(tok, file.string()); },
                  -1, -1);
  return m;
}

CountMatrix read_count_tsv(const fs::path& file, std::vector<std::string>* header) {
  CountMatrix m;
  read_matrix_tsv(
      file, header, m,
      [&](std::string_view tok) { return parse_number<std::int64_t>(tok, file.string()); }, -1,
      -1);
  return m;
}

SlideDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError("invalid manifest.json: " + std::string(e.what()));
  }

  SlideDataset ds;
  try {
    ds.name = manifest.at("name").get<std::string>();
    ds.organism = manifest.at("organism").get<std::string>();
    ds.tissue = manifest.at("tissue").get<std::string>();
    ds.genes = manifest.at("genes").get<std::vector<std::string>>();

    for (const json& entry : manifest.at("slides")) {
      Slide slide;
      slide.slide_id = entry.at("id").get<std::string>();
      ds.split_map[slide.slide_id] = split_from_string(entry.at("split").get<std::string>());
      slide.spots = read_spots_tsv(dir / entry.at("spots_file").get<std::string>());
      const auto n_spots = static_cast<Eigen::Index>(slide.spots.size());
      const auto g = static_cast<Eigen::Index>(ds.genes.size());

      if (entry.contains("expr_file")) {
        std::vector<std::string> header;
        read_matrix_tsv(
            dir / entry.at("expr_file").get<std::string>(), &header, slide.expr,
            [&](std::string_view tok) {
              const float v = parse_number<float>(tok, "expr.tsv");
              if (!std::isfinite(v)) throw DataError("non-finite expression value in expr table");
              return v;
            },
            n_spots, g);
        if (header != ds.genes) {
          throw ConsistencyError("slide '" + slide.slide_id +
                                 "': expr header does not match the dataset gene list");
        }
        BoolMatrix observed;
        Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> raw;
        read_matrix_tsv(
            dir / entry.at("observed_file").get<std::string>(), &header, raw,
            [&](std::string_view tok) {
              if (tok == "0") return std::int8_t{0};
              if (tok == "1") return std::int8_t{1};
              throw FormatError("observed table values must be 0 or 1");
            },
            n_spots, g);
        slide.observed = raw.array() != 0;
      }
      if (entry.contains("counts_file")) {
        std::vector<std::string> header;
        CountMatrix counts;
        read_matrix_tsv(
            dir / entry.at("counts_file").get<std::string>(), &header, counts,
            [&](std::string_view tok) {
              const auto v = parse_number<std::int64_t>(tok, "counts.tsv");
              if (v < 0) throw DataError("negative value in counts table");
              return v;
            },
            n_spots, g);
        if (header != ds.genes) {
          throw ConsistencyError("slide '" + slide.slide_id +
                                 "': counts header does not match the dataset gene list");
        }
        slide.raw_counts = std::move(counts);
      }
      ds.slides.push_back(std::move(slide));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }

  validate(ds);
  return ds;
}

void save_dataset(const SlideDataset& ds, const fs::path& dir) {
  validate(ds);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory: " + dir.string());

  json manifest;
  manifest["name"] = ds.name;
  manifest["organism"] = ds.organism;
  manifest["tissue"] = ds.tissue;
  manifest["genes"] = ds.genes;
  manifest["slides"] = json::array();

  for (const Slide& slide : ds.slides) {
    const fs::path slide_dir = dir / slide.slide_id;
    fs::create_directories(slide_dir, ec);
    if (ec) throw IoError("cannot create directory: " + slide_dir.string());

    json entry;
    entry["id"] = slide.slide_id;
    entry["split"] = to_string(ds.split_of(slide.slide_id));
    entry["spots_file"] = slide.slide_id + "/spots.tsv";
    write_spots_tsv(slide_dir / "spots.tsv", slide);

    if (slide.has_expr()) {
      entry["expr_file"] = slide.slide_id + "/expr.tsv";
      entry["observed_file"] = slide.slide_id + "/observed.tsv";
      write_float_tsv(slide_dir / "expr.tsv", ds.genes, slide.expr);
      Matrix obs = slide.observed.cast<float>().matrix();
      write_matrix_tsv(slide_dir / "observed.tsv", ds.genes, obs,
                       [](std::string& out, float v) { out.push_back(v != 0.0f ? '1' : '0'); });
    }
    if (slide.has_counts()) {
      entry["counts_file"] = slide.slide_id + "/counts.tsv";
      write_count_tsv(slide_dir / "counts.tsv", ds.genes, *slide.raw_counts);
    }
    manifest["slides"].push_back(std::move(entry));
  }

  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace spackle
