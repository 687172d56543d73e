#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace sda::xray {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;

/// [x, y, w, h] in image coordinates.
using BBox = std::array<double, 4>;

struct Transform {
  double tx = 0.0, ty = 0.0;
  double rotation = 0.0;  // radians
  double scale_x = 1.0, scale_y = 1.0;
};

/// Scale, then rotate, then translate.
Polygon transform_polygon(const Transform& t, const Polygon& p);

/// Shoelace area, positive for counter-clockwise vertex order in a y-up frame.
double signed_area(const Polygon& p);
double polygon_area(const Polygon& p);

/// True when no two non-adjacent edges touch and the polygon has >= 3 vertices.
bool is_simple(const Polygon& p);

BBox bounding_box(const Polygon& p);

/// Named unit templates centred on the origin within [-0.5, 0.5]^2.
/// Known names: rect, lshape, tshape, cross, hexagon, blade, ellipse, wire.
Polygon template_polygon(const std::string& name);
bool is_known_template(const std::string& name);
const std::vector<std::string>& template_names();

}  // namespace sda::xray
