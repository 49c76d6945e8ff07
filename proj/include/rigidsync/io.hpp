#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "rigidsync/metrics.hpp"
#include "rigidsync/pipeline.hpp"
#include "rigidsync/scene_gen.hpp"
#include "rigidsync/types.hpp"

namespace rigidsync {

// ---------------------------------------------------------------------------
// On-disk layout.  A scene directory holds one ASCII PLY per scan plus a
// manifest listing them in order; generated scenes add a ground-truth
// document.  Results and metric reports are JSON with alphabetically ordered
// keys, so identical runs serialize byte-identically.  All writes go through
// a temp file and a rename, so readers never see a half-written file.

namespace detail {

// Fixed-width decimal for coordinates: 17 significant digits round-trip any
// binary64 exactly, and a fixed digit count keeps files diff-able.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double_token(const std::string& tok, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  require(res.ec == std::errc() && res.ptr == tok.data() + tok.size(), ErrorCode::ParseError,
          where + ": bad number '" + tok + "'");
  require(std::isfinite(v), ErrorCode::ParseError, where + ": non-finite number '" + tok + "'");
  return v;
}

inline long parse_int_token(const std::string& tok, const std::string& where) {
  long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  require(res.ec == std::errc() && res.ptr == tok.data() + tok.size(), ErrorCode::ParseError,
          where + ": bad integer '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

// Writes `body` to `path` atomically (temp file in the same directory, then
// rename), creating parent directories as needed.
inline void write_text_atomic(const std::string& path, const std::string& body) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path(), ec);
    require(!ec, ErrorCode::IoError, "cannot create directory " + target.parent_path().string());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    out.flush();
    require(out.good(), ErrorCode::IoError, "write failed for " + tmp.string());
  }
  fs::rename(tmp, target, ec);
  require(!ec, ErrorCode::IoError, "cannot rename " + tmp.string() + " to " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::ostringstream body;
  body << in.rdbuf();
  require(!in.bad(), ErrorCode::IoError, "read failed for " + path);
  return body.str();
}

// ---------------------------------------------------------------------------
// ASCII PLY: x y z coordinates, optionally one integer label per point.

inline void save_ply(const std::string& path, const PointMatrix& points,
                     const std::vector<int>* labels = nullptr) {
  const int n = static_cast<int>(points.rows());
  require(points.cols() == 3, ErrorCode::ShapeMismatch, "points must be N x 3");
  if (labels != nullptr)
    require(static_cast<int>(labels->size()) == n, ErrorCode::LengthMismatch,
            "label count does not match point count");
  std::string body;
  body += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(n) + "\n";
  body += "property double x\nproperty double y\nproperty double z\n";
  if (labels != nullptr) body += "property int label\n";
  body += "end_header\n";
  for (int i = 0; i < n; ++i) {
    body += detail::format_double(points(i, 0));
    body += ' ';
    body += detail::format_double(points(i, 1));
    body += ' ';
    body += detail::format_double(points(i, 2));
    if (labels != nullptr) {
      body += ' ';
      body += std::to_string((*labels)[static_cast<size_t>(i)]);
    }
    body += '\n';
  }
  write_text_atomic(path, body);
}

struct LabeledCloud {
  PointMatrix points;
  std::vector<int> labels;  // empty when the file has no label property
};

inline LabeledCloud load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + path);

  int lineno = 0;
  const auto next_line = [&](std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ++lineno;
    return true;
  };
  const auto where = [&]() { return path + ":" + std::to_string(lineno); };

  std::string line;
  require(next_line(line) && line == "ply", ErrorCode::ParseError, where() + ": expected 'ply'");
  require(next_line(line) && line == "format ascii 1.0", ErrorCode::ParseError,
          where() + ": expected 'format ascii 1.0'");

  long vertices = -1;
  std::vector<std::string> props;
  for (;;) {
    require(next_line(line), ErrorCode::ParseError, where() + ": header ends before end_header");
    if (line == "end_header") break;
    const std::vector<std::string> tok = detail::split_ws(line);
    if (tok.empty() || tok[0] == "comment") continue;
    if (tok[0] == "element") {
      require(tok.size() == 3 && tok[1] == "vertex" && vertices < 0, ErrorCode::ParseError,
              where() + ": expected one 'element vertex <count>'");
      vertices = detail::parse_int_token(tok[2], where());
      require(vertices >= 0, ErrorCode::ParseError, where() + ": negative vertex count");
    } else if (tok[0] == "property") {
      require(tok.size() == 3, ErrorCode::ParseError, where() + ": malformed property");
      props.push_back(tok[2]);
      const bool coordinate = tok[2] == "x" || tok[2] == "y" || tok[2] == "z";
      const bool numeric_type = tok[1] == "double" || tok[1] == "float";
      const bool label_type = tok[1] == "int" || tok[1] == "uint" || tok[1] == "int32";
      require((coordinate && numeric_type) || (tok[2] == "label" && label_type),
              ErrorCode::ParseError, where() + ": unsupported property '" + line + "'");
    } else {
      fail(ErrorCode::ParseError, where() + ": unexpected header line '" + line + "'");
    }
  }
  require(vertices >= 0, ErrorCode::ParseError, where() + ": missing 'element vertex'");
  const bool has_label = props.size() == 4 && props[3] == "label";
  require((props.size() == 3 || has_label) && props[0] == "x" && props[1] == "y" &&
              props[2] == "z",
          ErrorCode::ParseError, where() + ": properties must be x, y, z[, label]");

  LabeledCloud out;
  out.points.resize(vertices, 3);
  if (has_label) out.labels.resize(static_cast<size_t>(vertices));
  for (long i = 0; i < vertices; ++i) {
    require(next_line(line), ErrorCode::ParseError,
            where() + ": expected " + std::to_string(vertices) + " vertices, got " +
                std::to_string(i));
    const std::vector<std::string> tok = detail::split_ws(line);
    require(tok.size() == props.size(), ErrorCode::ParseError,
            where() + ": expected " + std::to_string(props.size()) + " values per vertex");
    for (int c = 0; c < 3; ++c)
      out.points(i, c) = detail::parse_double_token(tok[static_cast<size_t>(c)], where());
    if (has_label)
      out.labels[static_cast<size_t>(i)] =
          static_cast<int>(detail::parse_int_token(tok[3], where()));
  }
  while (next_line(line))
    require(detail::split_ws(line).empty(), ErrorCode::ParseError,
            where() + ": trailing content after vertex list");
  return out;
}

// ---------------------------------------------------------------------------
// JSON documents.  nlohmann::json objects keep keys sorted, which gives the
// stable serialization the determinism guarantee depends on.

using Json = nlohmann::json;

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::ParseError, what + ": " + e.what());  // includes byte position
  }
}

// Runs a block of JSON field accesses, converting the library's type/missing
// errors into ParseError so callers see one error family.
template <typename F>
auto json_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    fail(ErrorCode::ParseError, what + ": " + e.what());
  }
}

inline Json pose_to_json(const RigidTransform& t) {
  Json j;
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(t.rotation(r, c));  // row-major
  Json tr = Json::array();
  for (int c = 0; c < 3; ++c) tr.push_back(t.translation(c));
  j["rotation"] = std::move(rot);
  j["translation"] = std::move(tr);
  return j;
}

inline RigidTransform pose_from_json(const Json& j) {
  require(j.contains("rotation") && j.contains("translation"), ErrorCode::ParseError,
          "pose needs 'rotation' and 'translation'");
  const auto& rot = j.at("rotation");
  const auto& tr = j.at("translation");
  require(rot.is_array() && rot.size() == 9 && tr.is_array() && tr.size() == 3,
          ErrorCode::ParseError, "pose arrays must have 9 and 3 entries");
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = rot.at(static_cast<size_t>(3 * r + c)).get<double>();
  for (int c = 0; c < 3; ++c) t.translation(c) = tr.at(static_cast<size_t>(c)).get<double>();
  return t;
}

inline const char* fit_status_name(PoseSet::FitStatus s) {
  switch (s) {
    case PoseSet::FitStatus::Ok: return "ok";
    case PoseSet::FitStatus::EmptyPart: return "empty_part";
    case PoseSet::FitStatus::Degenerate: return "degenerate";
  }
  return "ok";
}

inline PoseSet::FitStatus fit_status_from_name(const std::string& name) {
  if (name == "ok") return PoseSet::FitStatus::Ok;
  if (name == "empty_part") return PoseSet::FitStatus::EmptyPart;
  if (name == "degenerate") return PoseSet::FitStatus::Degenerate;
  fail(ErrorCode::ParseError, "unknown fit status '" + name + "'");
}

inline Json scene_config_to_json(const SceneConfig& c) {
  Json j;
  j["scans"] = c.scans;
  j["points"] = c.points;
  j["parts"] = c.parts;
  j["part_fractions"] = c.part_fractions;
  Json prims = Json::array();
  for (const Primitive p : c.primitives) prims.push_back(primitive_name(p));
  j["primitives"] = std::move(prims);
  j["max_rotation"] = c.max_rotation;
  j["max_translation"] = c.max_translation;
  j["noise_sigma"] = c.noise_sigma;
  j["shuffle"] = c.shuffle;
  j["seed"] = c.seed;
  return j;
}

inline SceneConfig scene_config_from_json(const Json& j) {
  return json_guard("scene config", [&] {
    SceneConfig c;
    for (const auto& [key, value] : j.items()) {
      if (key == "scans") c.scans = value.get<int>();
      else if (key == "points") c.points = value.get<int>();
      else if (key == "parts") c.parts = value.get<int>();
      else if (key == "part_fractions") c.part_fractions = value.get<std::vector<double>>();
      else if (key == "primitives") {
        c.primitives.clear();
        for (const auto& name : value)
          c.primitives.push_back(primitive_from_name(name.get<std::string>()));
      } else if (key == "max_rotation") c.max_rotation = value.get<double>();
      else if (key == "max_translation") c.max_translation = value.get<double>();
      else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
      else if (key == "shuffle") c.shuffle = value.get<bool>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else fail(ErrorCode::ParseError, "unknown scene key '" + key + "'");
    }
    return c;
  });
}

// Pipeline knobs from a config document; unknown keys are rejected so typos
// fail loudly instead of silently running defaults.
inline PipelineConfig pipeline_config_from_json(const Json& j) {
  return json_guard("pipeline config", [&] {
    PipelineConfig c;
    for (const auto& [key, value] : j.items()) {
      if (key == "iterations") c.iterations = value.get<int>();
      else if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "canonical_scan") c.canonical_scan = value.get<int>();
      else if (key == "parts_override") c.parts_override = value.get<int>();
      else if (key == "no_sync") c.no_sync = value.get<bool>();
      else if (key == "unweighted") c.unweighted = value.get<bool>();
      else if (key == "unnormalized_z") c.unnormalized_z = value.get<bool>();
      else if (key == "pose_delta_exit") c.pose_delta_exit = value.get<double>();
      else if (key == "merge_tol") c.merge_tol = value.get<double>();
      else if (key == "tau") c.sync.tau = value.get<double>();
      else if (key == "t_flow") c.sync.t_flow = value.get<double>();
      else if (key == "t_flow_absolute") c.sync.t_flow_absolute = value.get<bool>();
      else if (key == "knn") c.frontend.knn = value.get<int>();
      else if (key == "sigma_c") c.frontend.sigma_c = value.get<double>();
      else if (key == "sigma_z") c.frontend.sigma_z = value.get<double>();
      else if (key == "eps_f") c.frontend.eps_f = value.get<double>();
      else if (key == "scene") continue;  // scene block is read separately
      else fail(ErrorCode::ParseError, "unknown config key '" + key + "'");
    }
    return c;
  });
}

// ---------------------------------------------------------------------------
// Scene bundles: scans + manifest (+ ground truth when generated).

inline void save_scans(const std::string& dir, const ScanSet& scans,
                       const std::vector<int>* labels_scan_major = nullptr) {
  namespace fs = std::filesystem;
  const int k = scans.scan_count();
  const int n = scans.points_per_scan();
  Json manifest;
  manifest["points_per_scan"] = n;
  Json names = Json::array();
  for (int a = 0; a < k; ++a) {
    char name[32];
    std::snprintf(name, sizeof(name), "scan_%03d.ply", a);
    names.push_back(std::string(name));
    std::vector<int> labels;
    if (labels_scan_major != nullptr)
      labels.assign(labels_scan_major->begin() + static_cast<std::ptrdiff_t>(a) * n,
                    labels_scan_major->begin() + static_cast<std::ptrdiff_t>(a + 1) * n);
    save_ply((fs::path(dir) / name).string(), scans.clouds[static_cast<size_t>(a)].points,
             labels_scan_major != nullptr ? &labels : nullptr);
  }
  manifest["scans"] = std::move(names);
  write_text_atomic((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

// `path` may be a manifest file or a directory containing manifest.json.
inline ScanSet load_scans(const std::string& path) {
  namespace fs = std::filesystem;
  fs::path manifest_path(path);
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.json";
  const Json manifest = parse_json(read_text(manifest_path.string()), manifest_path.string());
  return json_guard(manifest_path.string(), [&] {
    require(manifest.contains("scans") && manifest.at("scans").is_array(), ErrorCode::ParseError,
            manifest_path.string() + ": missing 'scans' array");
    const fs::path base = manifest_path.parent_path();
    ScanSet scans;
    for (const auto& name : manifest.at("scans")) {
      LabeledCloud cloud = load_ply((base / name.get<std::string>()).string());
      PointCloud pc;
      pc.scan_id = static_cast<int>(scans.clouds.size());
      pc.points = std::move(cloud.points);
      scans.clouds.push_back(std::move(pc));
    }
    require(!scans.clouds.empty(), ErrorCode::ParseError,
            manifest_path.string() + ": manifest lists no scans");
    const int n = scans.clouds.front().size();
    for (const auto& c : scans.clouds)
      require(c.size() == n, ErrorCode::ShapeMismatch, "scans have differing point counts");
    if (manifest.contains("points_per_scan"))
      require(manifest.at("points_per_scan").get<int>() == n, ErrorCode::ShapeMismatch,
              manifest_path.string() + ": points_per_scan does not match the scan files");
    return scans;
  });
}

struct GroundTruth {
  SceneConfig config;
  int parts = 1;
  std::vector<int> labels;  // scan-major
  PoseSet poses;
};

inline void save_ground_truth(const std::string& path, const SceneBundle& bundle) {
  Json j;
  j["config"] = scene_config_to_json(bundle.config);
  j["parts"] = bundle.config.parts;
  const int k = bundle.config.scans;
  const int n = bundle.config.points;
  Json labels = Json::array();
  for (int a = 0; a < k; ++a)
    labels.push_back(std::vector<int>(
        bundle.gt_labels.begin() + static_cast<std::ptrdiff_t>(a) * n,
        bundle.gt_labels.begin() + static_cast<std::ptrdiff_t>(a + 1) * n));
  j["labels"] = std::move(labels);
  j["canonical_scan"] = bundle.gt_poses.canonical_scan;
  Json poses = Json::array();
  for (int a = 0; a < k; ++a) {
    Json row = Json::array();
    for (int s = 0; s < bundle.config.parts; ++s)
      row.push_back(pose_to_json(bundle.gt_poses.poses[static_cast<size_t>(a)][static_cast<size_t>(s)]));
    poses.push_back(std::move(row));
  }
  j["poses"] = std::move(poses);
  write_text_atomic(path, j.dump(2) + "\n");
}

inline GroundTruth load_ground_truth(const std::string& path) {
  const Json j = parse_json(read_text(path), path);
  return json_guard(path, [&] {
    GroundTruth gt;
    require(j.contains("parts") && j.contains("labels") && j.contains("poses"),
            ErrorCode::ParseError, path + ": needs 'parts', 'labels', 'poses'");
    if (j.contains("config")) gt.config = scene_config_from_json(j.at("config"));
    gt.parts = j.at("parts").get<int>();
    for (const auto& row : j.at("labels"))
      for (const auto& v : row) gt.labels.push_back(v.get<int>());
    gt.poses.canonical_scan = j.value("canonical_scan", 0);
    for (const auto& row : j.at("poses")) {
      std::vector<RigidTransform> scan_poses;
      for (const auto& p : row) scan_poses.push_back(pose_from_json(p));
      gt.poses.poses.push_back(std::move(scan_poses));
      gt.poses.status.emplace_back(gt.poses.poses.back().size(), PoseSet::FitStatus::Ok);
    }
    return gt;
  });
}

// ---------------------------------------------------------------------------
// Results and reports.

inline Json report_to_json(const MetricsReport& r) {
  Json j;
  j["epe3d_mean"] = r.epe3d_mean;
  j["epe3d_std"] = r.epe3d_std;
  j["miou_multi"] = r.miou_multi;
  j["ri_multi"] = r.ri_multi;
  j["miou_per_scan_mean"] = r.miou_per_scan_mean;
  j["miou_per_scan_std"] = r.miou_per_scan_std;
  j["ri_per_scan_mean"] = r.ri_per_scan_mean;
  j["ri_per_scan_std"] = r.ri_per_scan_std;
  return j;
}

inline void save_report(const std::string& path, const MetricsReport& r) {
  write_text_atomic(path, report_to_json(r).dump(2) + "\n");
}

// Final labels and poses plus a per-iteration structure trace; the metrics
// block is attached when ground truth was available to score against.
inline void save_result(const std::string& path, const PipelineResult& result,
                        const MetricsReport* report = nullptr) {
  require(!result.iterations.empty(), ErrorCode::EmptyInput, "result has no iterations");
  const IterationState& fin = result.final_state();
  const int k = fin.poses.scan_count();
  const int parts = fin.poses.part_count();
  const int n = parts > 0 && !fin.seg.hard_labels.empty()
                    ? static_cast<int>(fin.seg.hard_labels.size()) / k
                    : 0;
  Json j;
  j["canonical_scan"] = fin.poses.canonical_scan;
  j["estimated_parts"] = fin.estimated_parts;
  Json iters = Json::array();
  for (size_t t = 0; t < result.iterations.size(); ++t) {
    Json it;
    it["index"] = result.iterations[t].index;
    it["estimated_parts"] = result.iterations[t].estimated_parts;
    const double delta =
        t == 0 ? 0.0
               : pose_delta(result.iterations[t - 1].poses, result.iterations[t].poses);
    // shape changes between iterations compare as infinite; JSON spells that null
    it["pose_delta_from_prev"] = std::isfinite(delta) ? Json(delta) : Json();
    iters.push_back(std::move(it));
  }
  j["iterations"] = std::move(iters);
  Json labels = Json::array();
  for (int a = 0; a < k; ++a)
    labels.push_back(std::vector<int>(
        fin.seg.hard_labels.begin() + static_cast<std::ptrdiff_t>(a) * n,
        fin.seg.hard_labels.begin() + static_cast<std::ptrdiff_t>(a + 1) * n));
  j["labels"] = std::move(labels);
  Json poses = Json::array();
  for (int a = 0; a < k; ++a) {
    Json row = Json::array();
    for (int s = 0; s < parts; ++s) {
      Json p = pose_to_json(fin.poses.poses[static_cast<size_t>(a)][static_cast<size_t>(s)]);
      p["status"] =
          fit_status_name(fin.poses.status[static_cast<size_t>(a)][static_cast<size_t>(s)]);
      row.push_back(std::move(p));
    }
    poses.push_back(std::move(row));
  }
  j["poses"] = std::move(poses);
  if (report != nullptr) j["report"] = report_to_json(*report);
  write_text_atomic(path, j.dump(2) + "\n");
}

struct LoadedResult {
  int estimated_parts = 1;
  std::vector<int> labels;  // scan-major
  PoseSet poses;
};

inline LoadedResult load_result(const std::string& path) {
  const Json j = parse_json(read_text(path), path);
  return json_guard(path, [&] {
    require(j.contains("estimated_parts") && j.contains("labels") && j.contains("poses"),
            ErrorCode::ParseError, path + ": needs 'estimated_parts', 'labels', 'poses'");
    LoadedResult out;
    out.estimated_parts = j.at("estimated_parts").get<int>();
    for (const auto& row : j.at("labels"))
      for (const auto& v : row) out.labels.push_back(v.get<int>());
    out.poses.canonical_scan = j.value("canonical_scan", 0);
    for (const auto& row : j.at("poses")) {
      std::vector<RigidTransform> scan_poses;
      std::vector<PoseSet::FitStatus> scan_status;
      for (const auto& p : row) {
        scan_poses.push_back(pose_from_json(p));
        scan_status.push_back(fit_status_from_name(p.value("status", "ok")));
      }
      out.poses.poses.push_back(std::move(scan_poses));
      out.poses.status.push_back(std::move(scan_status));
    }
    return out;
  });
}

}  // namespace rigidsync
