#include "sparc/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <vector>

namespace sparc {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string provenance_json(const Provenance& p) {
  ordered_json j;
  j["tool_version"] = p.tool_version;
  j["seed"] = p.seed;
  j["config_hash"] = p.config_hash;
  if (!p.notes.empty()) j["notes"] = p.notes;
  return j.dump();
}

static ordered_json config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["n_layers"] = cfg.n_layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["vocab_size"] = cfg.vocab_size;
  j["max_seq_len"] = cfg.max_seq_len;
  j["tie_embeddings"] = cfg.tie_embeddings;
  return j;
}

static ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig cfg;
  try {
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_seq_len = j.at("max_seq_len").get<int>();
    cfg.tie_embeddings = j.at("tie_embeddings").get<bool>();
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("manifest config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const Model& model, const std::string& dir, const Provenance& provenance) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir + ": " + ec.message());

  ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = config_to_json(model.config);
  manifest["vocabulary"] = model.vocab.tokens();

  ordered_json index = ordered_json::object();
  uint64_t offset = 0;
  for (const auto& name : model.tensor_names) {
    const Mat& m = model.tensor(name);
    ordered_json entry;
    entry["shape"] = {m.rows(), m.cols()};
    entry["dtype"] = "f32";
    entry["byte_offset"] = offset;
    index[name] = entry;
    offset += static_cast<uint64_t>(m.size()) * 4;
  }
  manifest["tensors"] = index;
  manifest["provenance"] = ordered_json::parse(provenance_json(provenance));

  const fs::path blob_path = fs::path(dir) / "weights.bin";
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + blob_path.string());
  for (const auto& name : model.tensor_names) {
    const Mat& m = model.tensor(name);
    std::vector<unsigned char> bytes(static_cast<size_t>(m.size()) * 4);
    size_t at = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const float v = static_cast<float>(m(r, c));
        uint32_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        bytes[at++] = static_cast<unsigned char>(bits & 0xff);
        bytes[at++] = static_cast<unsigned char>((bits >> 8) & 0xff);
        bytes[at++] = static_cast<unsigned char>((bits >> 16) & 0xff);
        bytes[at++] = static_cast<unsigned char>((bits >> 24) & 0xff);
      }
    }
    blob.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
  }
  blob.close();
  if (!blob) throw IoError("failed writing " + blob_path.string());

  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw IoError("cannot write " + manifest_path.string());
  mf << manifest.dump(2) << "\n";
  mf.close();
  if (!mf) throw IoError("failed writing " + manifest_path.string());
}

Model load_checkpoint(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open " + manifest_path.string());
  ordered_json manifest;
  try {
    mf >> manifest;
  } catch (const ordered_json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  if (!manifest.contains("format_version") || !manifest["format_version"].is_number_integer()) {
    throw IoError("manifest missing format_version");
  }
  const int version = manifest["format_version"].get<int>();
  if (version != 1) throw IoError("unknown format version: " + std::to_string(version));

  const ModelConfig cfg = config_from_json(manifest.at("config"));
  std::vector<std::string> vocab_tokens;
  try {
    vocab_tokens = manifest.at("vocabulary").get<std::vector<std::string>>();
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("manifest vocabulary: ") + e.what());
  }
  if (static_cast<int>(vocab_tokens.size()) != cfg.vocab_size) {
    throw IoError("vocabulary length does not match config vocab_size");
  }

  if (!manifest.contains("tensors") || !manifest["tensors"].is_object()) {
    throw IoError("manifest missing tensor index");
  }
  const ordered_json& index = manifest["tensors"];

  // validate the whole index before touching the blob
  struct Entry {
    std::string name;
    int rows, cols;
    uint64_t byte_offset;
  };
  std::vector<Entry> entries;
  uint64_t total_bytes = 0;
  for (auto it = index.begin(); it != index.end(); ++it) {
    const std::string& name = it.key();
    const auto [want_rows, want_cols] = tensor_shape(cfg, name);  // rejects unknown names
    const ordered_json& e = it.value();
    if (!e.contains("shape") || !e["shape"].is_array() || e["shape"].size() != 2) {
      throw IoError("tensor " + name + ": malformed shape");
    }
    const int rows = e["shape"][0].get<int>();
    const int cols = e["shape"][1].get<int>();
    if (rows != want_rows || cols != want_cols) {
      throw ShapeError("tensor " + name + ": manifest shape [" + std::to_string(rows) + ", " +
                       std::to_string(cols) + "] does not match expected [" +
                       std::to_string(want_rows) + ", " + std::to_string(want_cols) + "]");
    }
    if (e.value("dtype", "") != std::string("f32")) {
      throw IoError("tensor " + name + ": unsupported dtype");
    }
    const uint64_t off = e.at("byte_offset").get<uint64_t>();
    entries.push_back({name, rows, cols, off});
    total_bytes =
        std::max(total_bytes, off + static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) * 4);
  }

  const size_t expected_count = 2 + 10 * static_cast<size_t>(cfg.n_layers) + 3;
  if (entries.size() != expected_count) {
    throw IoError("manifest lists " + std::to_string(entries.size()) + " tensors, expected " +
                  std::to_string(expected_count));
  }

  const fs::path blob_path = fs::path(dir) / "weights.bin";
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw IoError("cannot open " + blob_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < total_bytes) {
    throw IoError("truncated blob: " + blob_path.string() + " has " +
                  std::to_string(bytes.size()) + " bytes, manifest needs " +
                  std::to_string(total_bytes));
  }

  Model model;
  model.config = cfg;
  model.vocab = Vocabulary(vocab_tokens);
  for (const auto& entry : entries) {
    Mat m(entry.rows, entry.cols);
    size_t at = entry.byte_offset;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const uint32_t bits = static_cast<uint32_t>(bytes[at]) |
                              (static_cast<uint32_t>(bytes[at + 1]) << 8) |
                              (static_cast<uint32_t>(bytes[at + 2]) << 16) |
                              (static_cast<uint32_t>(bytes[at + 3]) << 24);
        at += 4;
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        m(r, c) = static_cast<double>(v);
      }
    }
    if (!all_finite(m)) throw IoError("tensor " + entry.name + ": non-finite values in blob");
    model.tensor_names.push_back(entry.name);
    model.tensors.emplace(entry.name, std::move(m));
  }
  return model;
}

}  // namespace sparc
