#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "sparc/attribution.hpp"

namespace sparc {

using ordered_json = nlohmann::ordered_json;

static constexpr char kMapMagic[8] = {'S', 'P', 'A', 'R', 'C', 'M', 'P', '1'};

static void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

static uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated relevance-map file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static void write_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

static double read_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("truncated relevance-map file");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

void save_relevance_map(const RelevanceMap& map, const std::string& path,
                        const Provenance& provenance) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);

  out.write(kMapMagic, 8);
  out.put(static_cast<char>(map.granularity));
  write_u32(out, static_cast<uint32_t>(map.layers.size()));
  for (const auto& layer : map.layers) {
    const Mat& m = map.at(layer);
    write_u32(out, static_cast<uint32_t>(layer.size()));
    out.write(layer.data(), static_cast<std::streamsize>(layer.size()));
    write_u32(out, static_cast<uint32_t>(m.rows()));
    write_u32(out, static_cast<uint32_t>(m.cols()));
  }

  ordered_json meta;
  meta["scorer"] = map.scorer;
  meta["refset_id"] = map.refset_id;
  meta["n_ref"] = map.n_ref;
  meta["notes"] = map.notes;
  meta["provenance"] = ordered_json::parse(provenance_json(provenance));
  const std::string meta_str = meta.dump();
  write_u32(out, static_cast<uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  for (const auto& layer : map.layers) {
    const Mat& m = map.at(layer);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_f64(out, m(r, c));
    }
  }
  out.close();
  if (!out) throw IoError("failed writing " + path);
}

RelevanceMap load_relevance_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMapMagic, 8) != 0) {
    throw IoError("not a relevance-map file: " + path);
  }
  const int gran = in.get();
  if (gran < 0 || gran > 2) throw IoError("unknown granularity byte in " + path);

  RelevanceMap map;
  map.granularity = static_cast<Granularity>(gran);
  const uint32_t n_layers = read_u32(in);
  std::vector<std::pair<uint32_t, uint32_t>> shapes;
  for (uint32_t i = 0; i < n_layers; ++i) {
    const uint32_t name_len = read_u32(in);
    if (name_len > 4096) throw IoError("implausible layer-name length in " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("truncated relevance-map file");
    const uint32_t rows = read_u32(in);
    const uint32_t cols = read_u32(in);
    map.layers.push_back(name);
    shapes.emplace_back(rows, cols);
  }

  const uint32_t meta_len = read_u32(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  if (!in) throw IoError("truncated relevance-map file");
  try {
    const ordered_json meta = ordered_json::parse(meta_str);
    map.scorer = meta.value("scorer", "");
    map.refset_id = meta.value("refset_id", "");
    map.n_ref = meta.value("n_ref", 0);
    if (meta.contains("notes")) map.notes = meta["notes"].get<std::vector<std::string>>();
  } catch (const ordered_json::exception& e) {
    throw IoError("malformed relevance-map metadata: " + std::string(e.what()));
  }

  for (uint32_t i = 0; i < n_layers; ++i) {
    Mat m(shapes[i].first, shapes[i].second);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = read_f64(in);
    }
    map.scores[map.layers[i]] = std::move(m);
  }
  map.check_finite();
  return map;
}

void save_relevance_csv(const RelevanceMap& map, const std::string& path,
                        const Provenance& provenance) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "# provenance " << provenance_json(provenance) << "\n";
  out << "layer,row,col,score\n";
  char buf[32];
  const int special_col = map.granularity == Granularity::Neuron  ? -1
                          : map.granularity == Granularity::Head ? -2
                                                                  : 0;
  for (const auto& layer : map.layers) {
    const Mat& m = map.at(layer);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
        const long long col = map.granularity == Granularity::Weight
                                  ? static_cast<long long>(c)
                                  : static_cast<long long>(special_col);
        out << layer << ',' << r << ',' << col << ',' << buf << '\n';
      }
    }
  }
  out.close();
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace sparc
