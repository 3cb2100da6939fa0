#include "common/region.hpp"

#include <algorithm>
#include <climits>

#include "common/error.hpp"

namespace e2eve {

const char* region_kind_name(RegionKind k) { return k == RegionKind::Block ? "block" : "freeform"; }

Rect tight_bbox(const Mask& mask) {
  int top = INT_MAX, left = INT_MAX, bottom = -1, right = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        top = std::min(top, y);
        left = std::min(left, x);
        bottom = std::max(bottom, y);
        right = std::max(right, x);
      }
  require(bottom >= 0, ErrorCode::EmptyMask, "edit region must contain at least one pixel");
  return Rect{top, left, bottom - top + 1, right - left + 1};
}

EditRegion make_block_region(int height, int width, const Rect& rect) {
  require(rect.height > 0 && rect.width > 0, ErrorCode::EmptyMask, "block region must be non-empty");
  require(rect.top >= 0 && rect.left >= 0 && rect.bottom() <= height && rect.right() <= width,
          ErrorCode::InvalidArgument, "block region outside image");
  EditRegion r;
  r.mask = Mask(height, width);
  for (int y = rect.top; y < rect.bottom(); ++y)
    for (int x = rect.left; x < rect.right(); ++x) r.mask.at(y, x) = 1;
  r.bbox = rect;
  r.kind = RegionKind::Block;
  return r;
}

EditRegion make_region_from_mask(Mask mask, RegionKind kind) {
  for (auto& b : mask.bits) b = b ? 1 : 0;
  EditRegion r;
  r.bbox = tight_bbox(mask);
  r.mask = std::move(mask);
  r.kind = kind;
  if (kind == RegionKind::Block)
    require(r.mask.count() == r.bbox.area(), ErrorCode::InvalidArgument, "block region mask is not a rectangle");
  return r;
}

void validate_region(const EditRegion& r) {
  const Rect bb = tight_bbox(r.mask);
  require(bb == r.bbox, ErrorCode::InvalidArgument, "bbox does not bound the mask exactly");
  if (r.kind == RegionKind::Block)
    require(r.mask.count() == r.bbox.area(), ErrorCode::InvalidArgument, "block mask differs from its bbox");
}

}  // namespace e2eve
