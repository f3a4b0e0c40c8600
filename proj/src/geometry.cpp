#include "cite/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cite/error.hpp"

namespace cite {

bool BBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

void validate_box(const BBox& b) {
  if (!b.valid()) {
    throw ValidationError("invalid box [" + std::to_string(b.x_min) + ", " +
                          std::to_string(b.y_min) + ", " + std::to_string(b.x_max) + ", " +
                          std::to_string(b.y_max) + "]");
  }
}

double iou(const BBox& a, const BBox& b) {
  validate_box(a);
  validate_box(b);
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (area_a + area_b - inter);
}

BBox union_box(std::span<const BBox> boxes) {
  if (boxes.empty()) throw ValidationError("union_box: empty box list");
  BBox u = boxes.front();
  validate_box(u);
  for (const BBox& b : boxes.subspan(1)) {
    validate_box(b);
    u.x_min = std::min(u.x_min, b.x_min);
    u.y_min = std::min(u.y_min, b.y_min);
    u.x_max = std::max(u.x_max, b.x_max);
    u.y_max = std::max(u.y_max, b.y_max);
  }
  return u;
}

namespace {

void validate_size(const ImageSize& s) {
  if (!(s.width > 0.0) || !(s.height > 0.0)) {
    throw ValidationError("image size must be positive, got " + std::to_string(s.width) + "x" +
                          std::to_string(s.height));
  }
}

}  // namespace

BBox clamp_to_image(const BBox& b, const ImageSize& s) {
  validate_size(s);
  validate_box(b);
  BBox c;
  c.x_min = std::clamp(b.x_min, 0.0, s.width);
  c.x_max = std::clamp(b.x_max, 0.0, s.width);
  c.y_min = std::clamp(b.y_min, 0.0, s.height);
  c.y_max = std::clamp(b.y_max, 0.0, s.height);
  return c;
}

std::array<double, 5> encode_spatial_flickr(const BBox& b, const ImageSize& s) {
  const BBox c = clamp_to_image(b, s);
  return {c.x_min / s.width, c.y_min / s.height, c.x_max / s.width, c.y_max / s.height,
          c.area() / (s.width * s.height)};
}

std::array<double, 8> encode_spatial_referit(const BBox& b, const ImageSize& s) {
  const BBox c = clamp_to_image(b, s);
  const double xc = 0.5 * (c.x_min + c.x_max);
  const double yc = 0.5 * (c.y_min + c.y_max);
  return {c.x_min / s.width, c.y_min / s.height, c.x_max / s.width,    c.y_max / s.height,
          xc / s.width,      yc / s.height,      c.width() / s.width, c.height() / s.height};
}

}  // namespace cite
