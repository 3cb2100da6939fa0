#pragma once

#include <string>

#include "common/image.hpp"

namespace e2eve {

enum class RegionKind { Block, Freeform };

const char* region_kind_name(RegionKind k);

/// Binary edit region R with its tight bounding box.
/// Invariants: mask non-empty; bbox bounds exactly the set pixels; a block mask equals its bbox.
struct EditRegion {
  Mask mask;
  Rect bbox;
  RegionKind kind = RegionKind::Block;

  int height() const { return mask.height; }
  int width() const { return mask.width; }
  long area() const { return mask.count(); }
  bool inside(int y, int x) const { return mask.at(y, x) != 0; }
};

/// Tight bounding box of the set pixels; EmptyMask if none.
Rect tight_bbox(const Mask& mask);

EditRegion make_block_region(int height, int width, const Rect& rect);

/// Region from an arbitrary mask; EmptyMask if no pixel is set.
EditRegion make_region_from_mask(Mask mask, RegionKind kind);

/// Throws InvalidArgument with a reason if any EditRegion invariant is broken.
void validate_region(const EditRegion& r);

}  // namespace e2eve
