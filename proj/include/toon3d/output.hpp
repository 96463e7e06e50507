#pragma once

// Dense point cloud assembly and artifact export.
//
// PLY layout (binary, little-endian), header bytes exactly:
//
//   ply
//   format binary_little_endian 1.0
//   element vertex <N>
//   property float x
//   property float y
//   property float z
//   property uchar red
//   property uchar green
//   property uchar blue
//   end_header
//
// followed by N records of 15 bytes (3 x float32, 3 x uint8).

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "toon3d/camera.hpp"
#include "toon3d/error.hpp"
#include "toon3d/image_io.hpp"
#include "toon3d/mesh.hpp"
#include "toon3d/optimizer.hpp"
#include "toon3d/scene.hpp"

namespace toon3d {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

struct PointCloud {
  std::vector<std::array<float, 3>> positions;
  std::vector<std::array<std::uint8_t, 3>> colors;
  std::vector<int> source_image;

  std::size_t size() const { return positions.size(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

// Backprojects every valid static pixel on the stride grid of each warped
// image with its final camera. `warps` may hold precomputed warp_dense
// results, one per image.
inline PointCloud assemble_point_cloud(const Scene& scene, const AlignmentState& state, int stride, int threads = 1,
                                       const std::vector<WarpResult>* warps = nullptr) {
  if (stride < 1) throw RangeError("output", "stride must be positive");
  PointCloud cloud;
  for (int i = 0; i < scene.n_images(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const ImageRecord& rec = scene.images[iu];
    const WarpResult local = warps == nullptr ? warp_dense(rec, state.meshes[iu], threads) : WarpResult{};
    const WarpResult& warp = warps == nullptr ? local : (*warps)[iu];
    const CameraParams& cam = state.cams[iu];
    const Mat3<double> r = rotation_from_quaternion(cam.rotation);
    for (int y = 0; y < rec.height; y += stride) {
      for (int x = 0; x < rec.width; x += stride) {
        if (warp.validity.at(x, y) == 0 || warp.mask.at(x, y) == 0) continue;
        const Vec3d p = backproject(intrinsic_coords(rec, {static_cast<double>(x), static_cast<double>(y)}),
                                    warp.depth.at(x, y), cam, r);
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) continue;
        cloud.positions.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z)});
        cloud.colors.push_back({warp.rgb.at(x, y, 0), warp.rgb.at(x, y, 1), warp.rgb.at(x, y, 2)});
        cloud.source_image.push_back(i);
      }
    }
  }
  return cloud;
}

inline std::string ply_header(std::size_t n) {
  return "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(n) +
         "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
}

inline void export_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  if (cloud.colors.size() != cloud.size()) throw Error("output", "point cloud arrays differ in length");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("output", "cannot open " + path.string() + " for writing");
  const std::string header = ply_header(cloud.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<char> body(cloud.size() * 15);
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    std::memcpy(body.data() + 15 * k, cloud.positions[k].data(), 12);
    std::memcpy(body.data() + 15 * k + 12, cloud.colors[k].data(), 3);
  }
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.flush();
  if (!out) throw IoError("output", "failed writing " + path.string());
}

// Reads files written by export_ply (source_image is not stored and comes
// back empty).
inline PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("output", "cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  bool have_count = false;
  std::getline(in, line);
  if (line != "ply") throw IoError("output", path.string() + " is not a PLY file");
  std::getline(in, line);
  if (line != "format binary_little_endian 1.0") throw IoError("output", path.string() + ": unsupported PLY format");
  std::vector<std::string> props;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "element") {
      std::string name;
      ls >> name >> n;
      if (name != "vertex" || !ls) throw IoError("output", path.string() + ": unexpected element '" + line + "'");
      have_count = true;
    } else if (kw == "property") {
      props.push_back(line);
    }
  }
  const std::vector<std::string> expected{"property float x",  "property float y",    "property float z",
                                          "property uchar red", "property uchar green", "property uchar blue"};
  if (line != "end_header" || !have_count || props != expected) {
    throw IoError("output", path.string() + ": unsupported PLY header");
  }
  PointCloud cloud;
  cloud.positions.resize(n);
  cloud.colors.resize(n);
  std::vector<char> body(n * 15);
  in.read(body.data(), static_cast<std::streamsize>(body.size()));
  if (static_cast<std::size_t>(in.gcount()) != body.size()) throw IoError("output", path.string() + ": truncated PLY");
  for (std::size_t k = 0; k < n; ++k) {
    std::memcpy(cloud.positions[k].data(), body.data() + 15 * k, 12);
    std::memcpy(cloud.colors[k].data(), body.data() + 15 * k + 12, 3);
  }
  return cloud;
}

// --- JSON artifacts ------------------------------------------------------------

// cameras.json: intrinsics in pixels of each image, rotation as a row-major
// world-from-camera matrix, translation in normalized scene units.
inline nlohmann::json cameras_to_json(const Scene& scene, const std::vector<CameraParams>& cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < scene.n_images(); ++i) {
    const ImageRecord& rec = scene.images[static_cast<std::size_t>(i)];
    const CameraParams& c = cams[static_cast<std::size_t>(i)];
    const Mat3<double> r = rotation_from_quaternion(c.rotation);
    nlohmann::json rot = nlohmann::json::array();
    for (int row = 0; row < 3; ++row) rot.push_back({r(row, 0), r(row, 1), r(row, 2)});
    arr.push_back({{"image", rec.name},
                   {"width", rec.width},
                   {"height", rec.height},
                   {"rotation", rot},
                   {"translation", {c.translation.x, c.translation.y, c.translation.z}},
                   {"fx", c.fx * rec.width},
                   {"fy", c.fy * rec.height},
                   {"cx", c.cx * rec.width},
                   {"cy", c.cy * rec.height},
                   {"scale", c.scale},
                   {"shift", c.shift}});
  }
  return {{"depth_normalizer", scene.depth_normalizer}, {"cameras", arr}};
}

// Inverse of cameras_to_json given the image sizes in `scene`.
inline std::vector<CameraParams> cameras_from_json(const Scene& scene, const nlohmann::json& j) {
  const auto& arr = j.at("cameras");
  if (static_cast<int>(arr.size()) != scene.n_images()) throw LoadError("camera count does not match the scene");
  std::vector<CameraParams> cams;
  for (int i = 0; i < scene.n_images(); ++i) {
    const ImageRecord& rec = scene.images[static_cast<std::size_t>(i)];
    const auto& e = arr.at(static_cast<std::size_t>(i));
    Mat3<double> r;
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) r(row, col) = e.at("rotation").at(row).at(col).get<double>();
    CameraParams c;
    c.rotation = quaternion_from_rotation(r);
    const auto& t = e.at("translation");
    c.translation = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
    c.fx = e.at("fx").get<double>() / rec.width;
    c.fy = e.at("fy").get<double>() / rec.height;
    c.cx = e.at("cx").get<double>() / rec.width;
    c.cy = e.at("cy").get<double>() / rec.height;
    c.scale = e.at("scale").get<double>();
    c.shift = e.at("shift").get<double>();
    cams.push_back(c);
  }
  return cams;
}

inline nlohmann::json weights_to_json(const LossWeights& w) {
  return {{"scale", w.scale}, {"aspect", w.aspect}, {"focal", w.focal}, {"neg", w.neg},
          {"arap2d", w.arap2d}, {"flip", w.flip},   {"z", w.z}};
}

inline LossWeights weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.scale = j.value("scale", w.scale);
  w.aspect = j.value("aspect", w.aspect);
  w.focal = j.value("focal", w.focal);
  w.neg = j.value("neg", w.neg);
  w.arap2d = j.value("arap2d", w.arap2d);
  w.flip = j.value("flip", w.flip);
  w.z = j.value("z", w.z);
  return w;
}

// Full optimizer state in normalized units (exact doubles), so a later
// export reproduces the same artifacts.
inline nlohmann::json state_to_json(const AlignmentState& state) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : state.cams) {
    cams.push_back({{"rotation", c.rotation},
                    {"translation", {c.translation.x, c.translation.y, c.translation.z}},
                    {"fx", c.fx},
                    {"fy", c.fy},
                    {"cx", c.cx},
                    {"cy", c.cy},
                    {"scale", c.scale},
                    {"shift", c.shift}});
  }
  nlohmann::json meshes = nlohmann::json::array();
  for (const auto& m : state.meshes) {
    nlohmann::json pos = nlohmann::json::array();
    for (const auto& p : m.positions) pos.push_back({p.x, p.y, p.z});
    meshes.push_back({{"positions", pos}});
  }
  return {{"stage", state.stage == Stage::CameraOnly ? "camera" : "deformation"},
          {"weights", weights_to_json(state.weights)},
          {"cameras", cams},
          {"meshes", meshes}};
}

inline AlignmentState state_from_json(const Scene& scene, const nlohmann::json& j) {
  AlignmentState state;
  try {
    state.stage = j.at("stage").get<std::string>() == "camera" ? Stage::CameraOnly : Stage::Deformation;
    state.weights = weights_from_json(j.at("weights"));
    const auto& cams = j.at("cameras");
    const auto& meshes = j.at("meshes");
    if (static_cast<int>(cams.size()) != scene.n_images() || static_cast<int>(meshes.size()) != scene.n_images()) {
      throw LoadError("state does not match the scene's image count");
    }
    for (int i = 0; i < scene.n_images(); ++i) {
      const auto& e = cams.at(static_cast<std::size_t>(i));
      CameraParams c;
      c.rotation = e.at("rotation").get<std::array<double, 4>>();
      const auto& t = e.at("translation");
      c.translation = {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()};
      c.fx = e.at("fx").get<double>();
      c.fy = e.at("fy").get<double>();
      c.cx = e.at("cx").get<double>();
      c.cy = e.at("cy").get<double>();
      c.scale = e.at("scale").get<double>();
      c.shift = e.at("shift").get<double>();
      state.cams.push_back(c);
      DeformableMesh mesh = build_mesh(scene, i);
      const auto& pos = meshes.at(static_cast<std::size_t>(i)).at("positions");
      if (pos.size() != mesh.size()) throw LoadError("mesh " + std::to_string(i) + " does not match the scene");
      for (std::size_t v = 0; v < mesh.size(); ++v) {
        mesh.positions[v] = {pos.at(v).at(0).get<double>(), pos.at(v).at(1).get<double>(), pos.at(v).at(2).get<double>()};
      }
      state.meshes.push_back(std::move(mesh));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed state: ") + e.what());
  }
  return state;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("output", "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("output", "failed writing " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

// --- export_all ---------------------------------------------------------------------

struct ExportOptions {
  int stride = 2;
  int threads = 1;
  nlohmann::json report = nlohmann::json::object();
};

// Writes into out_dir:
//   cameras.json, state.json, report.json, pointcloud.ply,
//   images/<stem>_warped.png, depths/<stem>_warped.pfm, validity/<stem>.png,
//   diff/<stem>.png (|original - warped| per channel).
// Everything is first written to out_dir/.staging and then moved into
// place; on failure the staging directory is removed and the error names
// the artifact that failed.
inline void export_all(const Scene& scene, const AlignmentState& state, const std::filesystem::path& out_dir,
                       const ExportOptions& options = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (fs::exists(out_dir, ec) && !fs::is_directory(out_dir, ec)) {
    throw IoError("output", out_dir.string() + " exists and is not a directory");
  }
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("output", "cannot create " + out_dir.string() + ": " + ec.message());
  const fs::path staging = out_dir / ".staging";
  fs::remove_all(staging, ec);
  fs::create_directories(staging, ec);
  if (ec) throw IoError("output", "cannot write to " + out_dir.string() + ": " + ec.message());

  std::vector<fs::path> artifacts;
  std::string current;
  try {
    auto stage_file = [&](const fs::path& rel, const auto& write) {
      current = rel.generic_string();
      fs::create_directories((staging / rel).parent_path());
      write(staging / rel);
      artifacts.push_back(rel);
    };
    std::vector<WarpResult> warps;
    for (int i = 0; i < scene.n_images(); ++i) {
      const ImageRecord& rec = scene.images[static_cast<std::size_t>(i)];
      warps.push_back(warp_dense(rec, state.meshes[static_cast<std::size_t>(i)], options.threads));
      const WarpResult& w = warps.back();
      const std::string stem = rec.stem();
      stage_file(fs::path("images") / (stem + "_warped.png"), [&](const fs::path& p) { io::write_png(p, w.rgb); });
      stage_file(fs::path("depths") / (stem + "_warped.pfm"), [&](const fs::path& p) { io::write_pfm(p, w.depth); });
      stage_file(fs::path("validity") / (stem + ".png"), [&](const fs::path& p) {
        MaskRaster v = w.validity;
        for (auto& px : v.data()) px = px ? 255 : 0;
        io::write_png(p, v);
      });
      stage_file(fs::path("diff") / (stem + ".png"),
                 [&](const fs::path& p) { io::write_png(p, difference_image(rec.rgb, w.rgb)); });
    }
    stage_file("pointcloud.ply", [&](const fs::path& p) {
      export_ply(assemble_point_cloud(scene, state, options.stride, options.threads, &warps), p);
    });
    stage_file("cameras.json", [&](const fs::path& p) { write_json(p, cameras_to_json(scene, state.cams)); });
    stage_file("state.json", [&](const fs::path& p) { write_json(p, state_to_json(state)); });
    stage_file("report.json", [&](const fs::path& p) { write_json(p, options.report); });
    for (const fs::path& rel : artifacts) {
      current = rel.generic_string();
      fs::create_directories((out_dir / rel).parent_path());
      fs::rename(staging / rel, out_dir / rel);
    }
  } catch (const std::exception& e) {
    fs::remove_all(staging, ec);
    throw IoError("output", "failed to write " + current + ": " + e.what());
  }
  fs::remove_all(staging, ec);
}

}  // namespace toon3d
