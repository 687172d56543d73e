#include "sda/xray/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sda/errors.hpp"

namespace sda::xray {

Polygon transform_polygon(const Transform& t, const Polygon& p) {
  const double c = std::cos(t.rotation), s = std::sin(t.rotation);
  Polygon out;
  out.reserve(p.size());
  for (const auto& v : p) {
    const double x = v.x * t.scale_x, y = v.y * t.scale_y;
    out.push_back({c * x - s * y + t.tx, s * x + c * y + t.ty});
  }
  return out;
}

double signed_area(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const auto& u = p[i];
    const auto& v = p[(i + 1) % n];
    a += u.x * v.y - v.x * u.y;
  }
  return 0.5 * a;
}

double polygon_area(const Polygon& p) { return std::abs(signed_area(p)); }

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_touch(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

}  // namespace

bool is_simple(const Polygon& p) {
  const std::size_t n = p.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_touch(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n])) return false;
    }
  }
  return true;
}

BBox bounding_box(const Polygon& p) {
  if (p.empty()) return {0, 0, 0, 0};
  double x0 = p[0].x, x1 = p[0].x, y0 = p[0].y, y1 = p[0].y;
  for (const auto& v : p) {
    x0 = std::min(x0, v.x);
    x1 = std::max(x1, v.x);
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

namespace {

Polygon ellipse(std::size_t n) {
  Polygon p;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * double(i) / double(n);
    p.push_back({0.5 * std::cos(a), 0.5 * std::sin(a)});
  }
  return p;
}

// A zig-zag band: centre line with three bends, offset to a closed outline.
Polygon wire() {
  const std::vector<Point> centre{{-0.5, -0.1}, {-0.2, 0.2}, {0.1, -0.2}, {0.5, 0.1}};
  const double half = 0.04;
  Polygon upper, lower;
  for (const auto& c : centre) {
    upper.push_back({c.x, c.y - half});
    lower.push_back({c.x, c.y + half});
  }
  Polygon p = upper;
  p.insert(p.end(), lower.rbegin(), lower.rend());
  return p;
}

}  // namespace

Polygon template_polygon(const std::string& name) {
  if (name == "rect") return {{-0.5, -0.3}, {0.5, -0.3}, {0.5, 0.3}, {-0.5, 0.3}};
  if (name == "lshape") {
    return {{-0.5, -0.5}, {0.5, -0.5}, {0.5, -0.1}, {-0.1, -0.1}, {-0.1, 0.5}, {-0.5, 0.5}};
  }
  if (name == "tshape") {
    return {{-0.5, -0.5}, {0.5, -0.5}, {0.5, -0.2}, {0.15, -0.2}, {0.15, 0.5}, {-0.15, 0.5}, {-0.15, -0.2},
            {-0.5, -0.2}};
  }
  if (name == "cross") {
    return {{-0.15, -0.5}, {0.15, -0.5}, {0.15, -0.15}, {0.5, -0.15}, {0.5, 0.15}, {0.15, 0.15},
            {0.15, 0.5},   {-0.15, 0.5}, {-0.15, 0.15}, {-0.5, 0.15}, {-0.5, -0.15}, {-0.15, -0.15}};
  }
  if (name == "hexagon") {
    return {{-0.25, -0.45}, {0.25, -0.45}, {0.5, 0.0}, {0.25, 0.45}, {-0.25, 0.45}, {-0.5, 0.0}};
  }
  if (name == "blade") return {{-0.5, -0.15}, {0.3, -0.15}, {0.5, 0.0}, {0.3, 0.15}, {-0.5, 0.15}};
  if (name == "ellipse") return ellipse(16);
  if (name == "wire") return wire();
  throw ConfigError("unknown shape template '" + name + "'");
}

const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names{"rect",    "lshape", "tshape",  "cross",
                                              "hexagon", "blade",  "ellipse", "wire"};
  return names;
}

bool is_known_template(const std::string& name) {
  const auto& n = template_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

}  // namespace sda::xray
