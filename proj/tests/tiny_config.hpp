#pragma once

// Run-config patch small enough for every stage to finish in seconds.
inline constexpr const char* kTinyRunPatch = R"({
  "seed": 4,
  "data": {"n_images": 12, "val_fraction": 0.34},
  "synth": {"per_image": 2},
  "vq": {
    "image": {"codebook": {"codebook_size": 32, "code_dim": 8, "hidden": 8}, "train": {"steps": 3, "batch": 2}},
    "driver": {"codebook": {"codebook_size": 32, "code_dim": 8, "hidden": 8}, "train": {"steps": 3, "batch": 2}}
  },
  "artist": {"layers": 1, "heads": 2, "d_model": 16, "train": {"steps": 3, "batch": 2}},
  "sampler": {"n": 4, "keep": 2},
  "eval": {"n_triplets": 4, "n_distractors": 3}
})";
