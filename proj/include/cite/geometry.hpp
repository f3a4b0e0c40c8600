#pragma once

#include <array>
#include <span>

namespace cite {

// Closed axis-aligned box in real pixel coordinates (no +1 convention).
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct ImageSize {
  double width = 0.0;
  double height = 0.0;
};

// ValidationError unless x_min <= x_max, y_min <= y_max and all finite.
void validate_box(const BBox& b);

// Intersection over union; 0 when either box has zero area.
double iou(const BBox& a, const BBox& b);

// Coordinate-wise envelope. ValidationError on an empty list.
BBox union_box(std::span<const BBox> boxes);

BBox clamp_to_image(const BBox& b, const ImageSize& s);

enum class SpatialEncoding { kNone, kFlickr, kReferIt };

constexpr std::size_t spatial_dims(SpatialEncoding e) {
  return e == SpatialEncoding::kFlickr ? 5 : (e == SpatialEncoding::kReferIt ? 8 : 0);
}

// [x_min/W, y_min/H, x_max/W, y_max/H, wh/WH] of the clamped box.
std::array<double, 5> encode_spatial_flickr(const BBox& b, const ImageSize& s);

// [x_min, y_min, x_max, y_max, x_center, y_center, w, h] of the clamped box,
// x terms divided by W and y terms by H.
std::array<double, 8> encode_spatial_referit(const BBox& b, const ImageSize& s);

}  // namespace cite
