#include <bit>
#include <fstream>

#include <nlohmann/json.hpp>

#include "spackle/errors.hpp"
#include "spackle/train.hpp"

namespace spackle {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint tensors are little-endian");

void save_checkpoint(const std::filesystem::path& file, const SpackleModel& model,
                     const std::vector<std::string>& genes, std::uint64_t seed) {
  if (static_cast<int>(genes.size()) != model.cfg.genes) {
    throw ModelMismatchError("save_checkpoint: gene panel does not match the model");
  }
  json header;
  header["format"] = "spackle-checkpoint";
  header["version"] = 1;
  header["dim"] = model.cfg.dim;
  header["layers"] = model.cfg.layers;
  header["heads"] = model.cfg.heads;
  header["ffn_width"] = model.cfg.effective_ffn();
  header["scored_genes"] = model.cfg.effective_scored();
  header["hops"] = model.cfg.hops;
  header["seed"] = seed;
  header["genes"] = genes;

  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + file.string());
  const std::string head = header.dump();
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.put('\n');
  for (auto [p, n] : model.parameter_views()) {
    out.write(reinterpret_cast<const char*>(p),
              static_cast<std::streamsize>(n * static_cast<std::ptrdiff_t>(sizeof(float))));
  }
  if (!out) throw IoError("checkpoint write failed: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("missing checkpoint: " + file.string());
  std::string head;
  if (!std::getline(in, head)) throw FormatError("checkpoint header missing: " + file.string());

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }

  Checkpoint ckpt;
  try {
    if (header.at("format").get<std::string>() != "spackle-checkpoint" ||
        header.at("version").get<int>() != 1) {
      throw FormatError("unsupported checkpoint format/version");
    }
    ckpt.genes = header.at("genes").get<std::vector<std::string>>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ModelConfig cfg;
    cfg.genes = static_cast<int>(ckpt.genes.size());
    cfg.dim = header.at("dim").get<int>();
    cfg.layers = header.at("layers").get<int>();
    cfg.heads = header.at("heads").get<int>();
    cfg.ffn_width = header.at("ffn_width").get<int>();
    cfg.scored_genes = header.at("scored_genes").get<int>();
    cfg.hops = header.at("hops").get<int>();
    ckpt.model = SpackleModel::zeros(cfg);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint header: " + std::string(e.what()));
  }

  for (auto [p, n] : ckpt.model.parameter_views()) {
    in.read(reinterpret_cast<char*>(p),
            static_cast<std::streamsize>(n * static_cast<std::ptrdiff_t>(sizeof(float))));
    if (!in) throw FormatError("checkpoint truncated: " + file.string());
  }
  char extra;
  if (in.read(&extra, 1)) throw FormatError("checkpoint has trailing bytes: " + file.string());
  return ckpt;
}

}  // namespace spackle
