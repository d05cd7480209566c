#include "scd/dataset/pairs.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "scd/errors.hpp"

namespace scd {

namespace fs = std::filesystem;

PairSpec generate_pairs(const SceneDataset& ds, int window) {
  if (window < 1) throw ConfigError("pair window must be at least 1, got " + std::to_string(window));
  PairSpec spec;
  const int n = static_cast<int>(ds.frames.size());
  for (int i = 0; i < n; ++i) {
    for (int k = 1; k <= window && i + k < n; ++k) {
      spec.pairs.emplace_back(ds.frames[i].id, ds.frames[i + k].id);
      spec.pairs.emplace_back(ds.frames[i + k].id, ds.frames[i].id);
    }
  }
  return spec;
}

PairSpec scene_pairs(const SceneDataset& ds, int window) {
  if (ds.pair_list) return PairSpec{*ds.pair_list};
  return generate_pairs(ds, window);
}

PairSpec complete_pairs(const std::vector<std::pair<int, int>>& pairs) {
  std::set<std::pair<int, int>> given;
  for (const auto& p : pairs) {
    if (p.first == p.second) {
      throw ConfigError("pair (" + std::to_string(p.first) + "," + std::to_string(p.second) +
                        ") pairs a frame with itself");
    }
    if (!given.insert(p).second) {
      throw ConfigError("pair (" + std::to_string(p.first) + "," + std::to_string(p.second) +
                        ") is listed twice");
    }
  }
  PairSpec spec;
  std::set<std::pair<int, int>> emitted;
  for (const auto& p : pairs) {
    if (emitted.insert(p).second) spec.pairs.push_back(p);
    const std::pair<int, int> rev{p.second, p.first};
    if (!given.count(rev) && emitted.insert(rev).second) spec.pairs.push_back(rev);
  }
  return spec;
}

void write_pairs(const PairSpec& spec, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  for (const auto& [a, b] : spec.pairs) out << a << ' ' << b << '\n';
}

PairSpec read_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  PairSpec spec;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ss(line);
    int a, b;
    std::string rest;
    if (!(ss >> a >> b) || (ss >> rest)) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) +
                      ": expected \"ref_id src_id\", got \"" + line + "\"");
    }
    spec.pairs.emplace_back(a, b);
  }
  return spec;
}

fs::path teacher_path(const fs::path& dir, int ref, int src, bool ref_side) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "pair-%06d-%06d.%s.pts", ref, src, ref_side ? "ref" : "src");
  return dir / "teacher" / buf;
}

void save_teacher_pairs(const std::vector<PairPrediction>& pairs, const fs::path& dir) {
  for (const auto& p : pairs) {
    save_pointmap(p.map_ref, teacher_path(dir, p.ref_id, p.src_id, true));
    save_pointmap(p.map_src, teacher_path(dir, p.ref_id, p.src_id, false));
  }
}

std::vector<PairPrediction> load_teacher_pairs(const fs::path& dir, const PairSpec& spec) {
  std::vector<PairPrediction> out;
  for (const auto& [ref, src] : spec.pairs) {
    PairPrediction p;
    p.ref_id = ref;
    p.src_id = src;
    const fs::path a = teacher_path(dir, ref, src, true), b = teacher_path(dir, ref, src, false);
    if (!fs::exists(a) || !fs::exists(b)) {
      throw LoadError("missing teacher pointmaps for pair (" + std::to_string(ref) + "," +
                      std::to_string(src) + ") under " + (dir / "teacher").string());
    }
    p.map_ref = load_pointmap(a);
    p.map_src = load_pointmap(b);
    p.map_ref.frame_id = ref;
    p.map_src.frame_id = src;
    if (p.map_ref.height != p.map_src.height || p.map_ref.width != p.map_src.width) {
      throw LoadError("teacher pair (" + std::to_string(ref) + "," + std::to_string(src) +
                      ") maps differ in resolution");
    }
    out.push_back(std::move(p));
  }
  return out;
}

PairSpec discover_teacher_pairs(const fs::path& dir) {
  static const std::regex pattern(R"(pair-(\d{6})-(\d{6})\.ref\.pts)");
  PairSpec spec;
  const fs::path teacher = dir / "teacher";
  if (!fs::is_directory(teacher)) {
    throw LoadError("scene " + dir.string() + " has no teacher/ directory");
  }
  for (const auto& entry : fs::directory_iterator(teacher)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) {
      spec.pairs.emplace_back(std::stoi(m[1].str()), std::stoi(m[2].str()));
    }
  }
  std::sort(spec.pairs.begin(), spec.pairs.end());
  return spec;
}

}  // namespace scd
