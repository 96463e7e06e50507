#pragma once

#include "toon3d/ad.hpp"
#include "toon3d/camera.hpp"
#include "toon3d/delaunay.hpp"
#include "toon3d/error.hpp"
#include "toon3d/evaluation.hpp"
#include "toon3d/geometry.hpp"
#include "toon3d/image_io.hpp"
#include "toon3d/mesh.hpp"
#include "toon3d/optimizer.hpp"
#include "toon3d/output.hpp"
#include "toon3d/raster.hpp"
#include "toon3d/scene.hpp"
#include "toon3d/synthetic.hpp"
