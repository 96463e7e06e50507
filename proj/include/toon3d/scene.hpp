#pragma once

// Scene data model: images with depth and transient masks, plus the
// multi-view correspondence annotations (points.json).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toon3d/error.hpp"
#include "toon3d/geometry.hpp"
#include "toon3d/image_io.hpp"
#include "toon3d/raster.hpp"

namespace toon3d {

struct ImageRecord {
  int id = 0;
  std::string name;  // file name inside images/, e.g. "000.png"
  int width = 0;
  int height = 0;
  RgbRaster rgb;
  DepthRaster depth;
  MaskRaster mask;  // 1 = static, 0 = transient

  std::string stem() const { return std::filesystem::path(name).stem().string(); }
  double max_dim() const { return static_cast<double>(std::max(width, height)); }
};

struct Observation {
  double u = 0.0;
  double v = 0.0;
  bool visible = false;

  friend bool operator==(const Observation&, const Observation&) = default;
};

// Observations indexed [image i][correspondence c].
class CorrespondenceSet {
 public:
  CorrespondenceSet() = default;
  CorrespondenceSet(int n_images, int n_points)
      : n_images_(n_images), ids_(static_cast<std::size_t>(n_points)),
        obs_(static_cast<std::size_t>(n_images) * static_cast<std::size_t>(n_points)) {
    for (int c = 0; c < n_points; ++c) ids_[static_cast<std::size_t>(c)] = c;
  }

  int n_images() const { return n_images_; }
  int n_points() const { return static_cast<int>(ids_.size()); }

  Observation& at(int i, int c) { return obs_[index(i, c)]; }
  const Observation& at(int i, int c) const { return obs_[index(i, c)]; }
  bool visible(int i, int c) const { return at(i, c).visible; }
  Vec2d pixel(int i, int c) const { return {at(i, c).u, at(i, c).v}; }

  int id(int c) const { return ids_[static_cast<std::size_t>(c)]; }
  void set_id(int c, int id) { ids_[static_cast<std::size_t>(c)] = id; }

  int view_count(int c) const {
    int n = 0;
    for (int i = 0; i < n_images_; ++i) n += visible(i, c) ? 1 : 0;
    return n;
  }

  // Subset of correspondences, keeping their ids.
  CorrespondenceSet select(const std::vector<int>& which) const {
    CorrespondenceSet out(n_images_, static_cast<int>(which.size()));
    for (std::size_t k = 0; k < which.size(); ++k) {
      out.set_id(static_cast<int>(k), id(which[k]));
      for (int i = 0; i < n_images_; ++i) out.at(i, static_cast<int>(k)) = at(i, which[k]);
    }
    return out;
  }

  friend bool operator==(const CorrespondenceSet&, const CorrespondenceSet&) = default;

 private:
  std::size_t index(int i, int c) const {
    return static_cast<std::size_t>(i) * ids_.size() + static_cast<std::size_t>(c);
  }

  int n_images_ = 0;
  std::vector<int> ids_;
  std::vector<Observation> obs_;
};

struct Scene {
  std::vector<ImageRecord> images;
  CorrespondenceSet correspondences;
  double depth_normalizer = 1.0;

  int n_images() const { return static_cast<int>(images.size()); }
};

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

// Bilinear depth at (u, v); throws RangeError outside [0, w-1] x [0, h-1].
inline double sample_depth(const ImageRecord& record, Vec2d pixel) {
  if (!record.depth.contains(pixel.x, pixel.y)) {
    std::ostringstream msg;
    msg << "pixel (" << pixel.x << ", " << pixel.y << ") outside image " << record.id << " (" << record.width << "x"
        << record.height << ")";
    throw RangeError("scene", msg.str());
  }
  return record.depth.bilinear(pixel.x, pixel.y);
}

inline ValidationReport validate_scene(const Scene& scene) {
  ValidationReport report;
  const CorrespondenceSet& corrs = scene.correspondences;
  if (corrs.n_images() != scene.n_images()) {
    report.errors.push_back("points.json references " + std::to_string(corrs.n_images()) + " images, scene has " +
                            std::to_string(scene.n_images()));
    return report;
  }
  if (!(scene.depth_normalizer > 0.0)) report.errors.push_back("depth normalizer must be positive");
  for (int c = 0; c < corrs.n_points(); ++c) {
    const int views = corrs.view_count(c);
    if (views < 2) {
      report.errors.push_back("point " + std::to_string(corrs.id(c)) + " is visible in " + std::to_string(views) +
                              " image(s), needs at least 2");
    }
    for (int i = 0; i < corrs.n_images(); ++i) {
      if (!corrs.visible(i, c)) continue;
      const ImageRecord& rec = scene.images[static_cast<std::size_t>(i)];
      const Observation& o = corrs.at(i, c);
      if (!std::isfinite(o.u) || !std::isfinite(o.v) || !rec.depth.contains(o.u, o.v)) {
        std::ostringstream msg;
        msg << "point " << corrs.id(c) << " in image " << i << " at (" << o.u << ", " << o.v << ") is outside "
            << rec.width << "x" << rec.height;
        report.errors.push_back(msg.str());
        continue;
      }
      const int x = static_cast<int>(std::lround(o.u));
      const int y = static_cast<int>(std::lround(o.v));
      if (rec.mask.at(x, y) == 0) {
        report.warnings.push_back("point " + std::to_string(corrs.id(c)) + " in image " + std::to_string(i) +
                                  " lies on a transient mask region");
      }
      const double d = sample_depth(rec, {o.u, o.v});
      if (!std::isfinite(d) || d <= 0.0) {
        report.errors.push_back("point " + std::to_string(corrs.id(c)) + " in image " + std::to_string(i) +
                                " has non-positive depth");
      }
    }
  }
  return report;
}

// --- points.json -------------------------------------------------------------

inline nlohmann::json correspondences_to_json(const CorrespondenceSet& corrs, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["version"] = 1;
  j["images"] = names;
  nlohmann::json points = nlohmann::json::array();
  for (int c = 0; c < corrs.n_points(); ++c) {
    nlohmann::json obs = nlohmann::json::array();
    for (int i = 0; i < corrs.n_images(); ++i) {
      const Observation& o = corrs.at(i, c);
      if (o.visible) {
        obs.push_back({{"image", i}, {"u", o.u}, {"v", o.v}, {"visible", true}});
      } else {
        obs.push_back({{"image", i}, {"visible", false}});
      }
    }
    points.push_back({{"id", corrs.id(c)}, {"obs", obs}});
  }
  j["points"] = points;
  return j;
}

inline CorrespondenceSet correspondences_from_json(const nlohmann::json& j, std::vector<std::string>* names_out) {
  if (!j.is_object() || j.value("version", 0) != 1) throw LoadError("points.json: expected version 1 object");
  const auto names = j.at("images").get<std::vector<std::string>>();
  const auto& points = j.at("points");
  CorrespondenceSet corrs(static_cast<int>(names.size()), static_cast<int>(points.size()));
  for (std::size_t c = 0; c < points.size(); ++c) {
    const auto& p = points[c];
    corrs.set_id(static_cast<int>(c), p.at("id").get<int>());
    for (const auto& o : p.at("obs")) {
      const int i = o.at("image").get<int>();
      if (i < 0 || i >= static_cast<int>(names.size())) {
        throw LoadError("points.json: point " + std::to_string(p.at("id").get<int>()) + " references image " +
                        std::to_string(i));
      }
      Observation& dst = corrs.at(i, static_cast<int>(c));
      dst.visible = o.value("visible", true);
      if (dst.visible) {
        dst.u = o.at("u").get<double>();
        dst.v = o.at("v").get<double>();
      }
    }
  }
  if (names_out != nullptr) *names_out = names;
  return corrs;
}

// --- scene directories -------------------------------------------------------

inline Scene load_scene(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LoadError("scene directory not found: " + dir.string());
  const fs::path points_path = dir / "points.json";
  if (!fs::exists(points_path)) throw LoadError("missing " + points_path.string());
  nlohmann::json j;
  try {
    std::ifstream in(points_path);
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt " + points_path.string() + ": " + e.what());
  }
  Scene scene;
  std::vector<std::string> names;
  try {
    scene.correspondences = correspondences_from_json(j, &names);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt " + points_path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    ImageRecord rec;
    rec.id = static_cast<int>(i);
    rec.name = names[i];
    const fs::path image_path = dir / "images" / names[i];
    if (!fs::exists(image_path)) throw LoadError("missing image " + image_path.string());
    rec.rgb = io::read_png_rgb(image_path);
    rec.width = rec.rgb.width();
    rec.height = rec.rgb.height();
    const fs::path depth_path = dir / "depths" / (rec.stem() + ".pfm");
    if (!fs::exists(depth_path)) throw LoadError("missing depth " + depth_path.string());
    rec.depth = io::read_pfm(depth_path);
    if (!rec.depth.same_shape(rec.width, rec.height)) {
      throw StructuralError("depth " + depth_path.string() + " is " + std::to_string(rec.depth.width()) + "x" +
                            std::to_string(rec.depth.height()) + " but image is " + std::to_string(rec.width) + "x" +
                            std::to_string(rec.height));
    }
    const fs::path mask_path = dir / "masks" / (rec.stem() + ".png");
    if (fs::exists(mask_path)) {
      MaskRaster gray = io::read_png_gray(mask_path);
      if (!gray.same_shape(rec.width, rec.height)) {
        throw StructuralError("mask " + mask_path.string() + " does not match image dimensions");
      }
      for (auto& m : gray.data()) m = m >= 128 ? 1 : 0;
      rec.mask = std::move(gray);
    } else {
      rec.mask = MaskRaster(rec.width, rec.height, 1, 1);
    }
    scene.images.push_back(std::move(rec));
  }
  return scene;
}

inline void save_scene(const Scene& scene, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "depths");
  std::vector<std::string> names;
  bool any_transient = false;
  for (const auto& rec : scene.images) {
    names.push_back(rec.name);
    io::write_png(dir / "images" / rec.name, rec.rgb);
    io::write_pfm(dir / "depths" / (rec.stem() + ".pfm"), rec.depth);
    for (auto m : rec.mask.data()) any_transient = any_transient || m == 0;
  }
  if (any_transient) {
    fs::create_directories(dir / "masks");
    for (const auto& rec : scene.images) {
      MaskRaster gray = rec.mask;
      for (auto& m : gray.data()) m = m ? 255 : 0;
      io::write_png(dir / "masks" / (rec.stem() + ".png"), gray);
    }
  }
  std::ofstream out(dir / "points.json");
  if (!out) throw IoError("scene", "cannot write " + (dir / "points.json").string());
  out << correspondences_to_json(scene.correspondences, names).dump(2) << "\n";
}

inline constexpr double kNormalizedTolerance = 1e-12;

// Divides every depth raster by the largest depth sampled at a visible
// correspondence, so that this maximum becomes 1.
inline Scene normalize_depths(Scene scene) {
  double max_depth = -std::numeric_limits<double>::infinity();
  bool any = false;
  const CorrespondenceSet& corrs = scene.correspondences;
  for (int i = 0; i < corrs.n_images(); ++i) {
    for (int c = 0; c < corrs.n_points(); ++c) {
      if (!corrs.visible(i, c)) continue;
      const double d = sample_depth(scene.images[static_cast<std::size_t>(i)], corrs.pixel(i, c));
      if (!std::isfinite(d)) throw NormalizationError("correspondence depth is not finite");
      max_depth = std::max(max_depth, d);
      any = true;
    }
  }
  if (!any) throw NormalizationError("no visible correspondence to normalize depth against");
  if (!std::isfinite(max_depth) || max_depth <= 0.0) {
    throw NormalizationError("maximum correspondence depth is not positive and finite");
  }
  // Division leaves the maximum within an ulp of 1; treating that as done
  // keeps a second pass from rescaling again.
  if (std::abs(max_depth - 1.0) <= kNormalizedTolerance) return scene;
  for (auto& rec : scene.images) {
    for (double& d : rec.depth.data()) d /= max_depth;
  }
  scene.depth_normalizer *= max_depth;
  return scene;
}

inline std::string image_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03d.png", index);
  return buf;
}

}  // namespace toon3d
