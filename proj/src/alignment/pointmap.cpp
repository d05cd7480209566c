#include "scd/alignment/pointmap.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "json.hpp"
#include "scd/errors.hpp"

namespace scd {

namespace {

constexpr int kPointMapFormatVersion = 1;

std::uint32_t le32(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

PointMap::PointMap(int id, std::size_t h, std::size_t w)
    : frame_id(id), height(h), width(w), points(h * w * 3, 0.0), valid(h * w, 0) {}

std::size_t PointMap::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void check_pointmap(const PointMap& pm) {
  if (pm.points.size() != pm.pixels() * 3 || pm.valid.size() != pm.pixels()) {
    throw DimensionError("pointmap " + std::to_string(pm.frame_id) + ": buffers do not match " +
                         std::to_string(pm.height) + "x" + std::to_string(pm.width));
  }
  for (std::size_t i = 0; i < pm.pixels(); ++i) {
    if (pm.valid[i] > 1) {
      throw ContractError("pointmap " + std::to_string(pm.frame_id) + ": mask byte " +
                          std::to_string(pm.valid[i]) + " at pixel " + std::to_string(i));
    }
    if (pm.valid[i] && !pm.point(i).allFinite()) {
      throw ContractError("pointmap " + std::to_string(pm.frame_id) +
                          ": non-finite valid point at pixel " + std::to_string(i));
    }
  }
}

void save_pointmap(const PointMap& pm, const std::filesystem::path& path) {
  check_pointmap(pm);
  nlohmann::json header = {{"format_version", kPointMapFormatVersion},
                           {"frame_id", pm.frame_id},
                           {"height", pm.height},
                           {"width", pm.width}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write pointmap " + path.string());
  out << header.dump() << '\n';
  std::vector<char> buffer(pm.points.size() * 4);
  for (std::size_t i = 0; i < pm.points.size(); ++i) {
    const std::uint32_t bits = le32(std::bit_cast<std::uint32_t>(static_cast<float>(pm.points[i])));
    std::memcpy(buffer.data() + 4 * i, &bits, 4);
  }
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  out.write(reinterpret_cast<const char*>(pm.valid.data()),
            static_cast<std::streamsize>(pm.valid.size()));
  if (!out) throw LoadError("failed while writing pointmap " + path.string());
}

PointMap load_pointmap(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open pointmap " + where);
  std::string line;
  if (!std::getline(in, line) || in.eof()) throw LoadError(where + ": missing header line");

  PointMap pm;
  try {
    const auto header = nlohmann::json::parse(line);
    const int version = header.at("format_version").get<int>();
    if (version != kPointMapFormatVersion) {
      throw LoadError(where + ": unsupported format_version " + std::to_string(version));
    }
    pm = PointMap(header.at("frame_id").get<int>(), header.at("height").get<std::size_t>(),
                  header.at("width").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(where + ": malformed header (" + e.what() + ")");
  }

  const std::vector<char> blob{std::istreambuf_iterator<char>(in),
                               std::istreambuf_iterator<char>()};
  const std::size_t expected = pm.pixels() * 3 * 4 + pm.pixels();
  if (blob.size() != expected) {
    throw LoadError(where + ": data section holds " + std::to_string(blob.size()) +
                    " bytes, expected " + std::to_string(expected));
  }
  for (std::size_t i = 0; i < pm.points.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, blob.data() + 4 * i, 4);
    pm.points[i] = std::bit_cast<float>(le32(bits));
  }
  const char* mask = blob.data() + pm.points.size() * 4;
  for (std::size_t i = 0; i < pm.pixels(); ++i) {
    const auto m = static_cast<std::uint8_t>(mask[i]);
    if (m > 1) {
      throw LoadError(where + ": mask byte " + std::to_string(m) + " at pixel " +
                      std::to_string(i) + " is not 0 or 1");
    }
    pm.valid[i] = (m == 1 && pm.point(i).allFinite()) ? 1 : 0;
  }
  return pm;
}

void check_pair(const PairPrediction& pair) {
  if (pair.ref_id == pair.src_id) {
    throw ContractError("pair (" + std::to_string(pair.ref_id) + "," +
                        std::to_string(pair.src_id) + ") has identical frames");
  }
  if (pair.map_ref.height != pair.map_src.height || pair.map_ref.width != pair.map_src.width) {
    throw ContractError("pair (" + std::to_string(pair.ref_id) + "," +
                        std::to_string(pair.src_id) + ") maps differ in resolution");
  }
  check_pointmap(pair.map_ref);
  check_pointmap(pair.map_src);
}

}  // namespace scd
