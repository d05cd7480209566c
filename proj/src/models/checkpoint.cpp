#include "scd/models/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>

#include "scd/errors.hpp"
#include "scd/models/builders.hpp"

namespace scd::models {

using nlohmann::json;

namespace {

struct RawCheckpoint {
  CheckpointHeader header;
  std::vector<char> blob;
};

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

float read_float(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  bits = to_little_endian(bits);
  return std::bit_cast<float>(bits);
}

CheckpointHeader parse_header(const std::string& line, const std::string& where) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw LoadError(where + ": header is not valid JSON (" + e.what() + ")");
  }
  CheckpointHeader h;
  try {
    h.format_version = j.at("format_version").get<int>();
    if (h.format_version != kCheckpointFormatVersion) {
      throw LoadError(where + ": unsupported format_version " +
                      std::to_string(h.format_version) + " (expected " +
                      std::to_string(kCheckpointFormatVersion) + ")");
    }
    const Architecture arch = parse_architecture(j.at("architecture").get<std::string>());
    h.config = config_from_json(arch, j.at("config"));
    validate(h.config);
    for (const auto& e : j.at("parameters")) {
      h.parameters.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(),
                              e.at("byte_offset").get<std::uint64_t>()});
    }
  } catch (const json::exception& e) {
    throw LoadError(where + ": malformed header (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw LoadError(where + ": " + e.what());
  }
  return h;
}

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_blob) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + where);
  std::string line;
  if (!std::getline(in, line) || in.eof()) {
    throw LoadError(where + ": missing header line");
  }
  RawCheckpoint raw;
  raw.header = parse_header(line, where);
  if (!with_blob) return raw;

  raw.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  std::uint64_t expected = 0;
  for (const auto& e : raw.header.parameters) {
    if (e.byte_offset != expected) {
      throw LoadError(where + ": parameter '" + e.name + "' has byte offset " +
                      std::to_string(e.byte_offset) + ", expected " + std::to_string(expected));
    }
    expected += 4 * shape_numel(e.shape);
  }
  if (raw.blob.size() != expected) {
    throw LoadError(where + ": data section holds " + std::to_string(raw.blob.size()) +
                    " bytes, header describes " + std::to_string(expected) +
                    (raw.blob.size() < expected ? " (truncated)" : ""));
  }
  return raw;
}

template <typename T>
void copy_into(Tensor<T>& dst, const RawCheckpoint& raw, const CheckpointEntry& e) {
  auto out = dst.mutable_data();
  const char* p = raw.blob.data() + e.byte_offset;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(read_float(p + 4 * i));
}

}  // namespace

template <typename T>
void save_checkpoint(const StudentModel<T>& model, const std::filesystem::path& path) {
  json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["architecture"] = std::string(to_string(model.architecture()));
  header["config"] = config_to_json(model.config());
  json params = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"byte_offset", offset}});
    offset += 4 * p.tensor.numel();
  }
  header["parameters"] = std::move(params);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  std::vector<char> buffer;
  for (const auto& p : model.parameters()) {
    buffer.resize(4 * p.tensor.numel());
    const auto data = p.tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::uint32_t bits =
          to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(data[i])));
      std::memcpy(buffer.data() + 4 * i, &bits, 4);
    }
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  }
  if (!out) throw LoadError("failed while writing checkpoint " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  return read_raw(path, true).header;
}

template <typename T>
StudentModel<T> load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path, true);
  std::mt19937_64 rng(0);  // values are overwritten below
  StudentModel<T> model = build_model<T>(raw.header.config, rng);
  const auto& params = model.parameters();
  const auto& entries = raw.header.parameters;
  if (params.size() != entries.size()) {
    throw LoadError(path.string() + ": stores " + std::to_string(entries.size()) +
                    " parameters, architecture has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != entries[i].name || params[i].tensor.shape() != entries[i].shape) {
      throw LoadError(path.string() + ": entry " + std::to_string(i) + " is '" +
                      entries[i].name + "' " + shape_string(entries[i].shape) +
                      ", architecture expects '" + params[i].name + "' " +
                      shape_string(params[i].tensor.shape()));
    }
    Tensor<T> handle = params[i].tensor;
    copy_into(handle, raw, entries[i]);
  }
  return model;
}

template <typename T>
void load_backbone_weights(StudentModel<T>& model, const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path, true);
  std::map<std::string, const CheckpointEntry*> stored;
  for (const auto& e : raw.header.parameters) {
    if (e.name.starts_with("backbone.")) stored.emplace(e.name, &e);
  }
  if (stored.empty()) throw LoadError(path.string() + ": no backbone parameters stored");

  std::size_t matched = 0;
  for (const auto& p : model.parameters()) {
    if (!p.name.starts_with("backbone.")) continue;
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      throw LoadError(path.string() + ": missing backbone parameter '" + p.name + "'");
    }
    if (it->second->shape != p.tensor.shape()) {
      throw LoadError(path.string() + ": '" + p.name + "' stored as " +
                      shape_string(it->second->shape) + ", model expects " +
                      shape_string(p.tensor.shape()));
    }
    Tensor<T> handle = p.tensor;
    copy_into(handle, raw, *it->second);
    ++matched;
  }
  if (matched != stored.size()) {
    throw LoadError(path.string() + ": stores backbone parameters the model does not have");
  }
}

template void save_checkpoint(const StudentModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const StudentModel<double>&, const std::filesystem::path&);
template StudentModel<float> load_checkpoint<float>(const std::filesystem::path&);
template StudentModel<double> load_checkpoint<double>(const std::filesystem::path&);
template void load_backbone_weights(StudentModel<float>&, const std::filesystem::path&);
template void load_backbone_weights(StudentModel<double>&, const std::filesystem::path&);

}  // namespace scd::models
