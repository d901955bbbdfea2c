#pragma once

// Box overlays for generated object words: one PNG per word plus a JSON
// sidecar listing (word, frame, box, weight).

#include <filesystem>
#include <string>
#include <vector>

#include "gvd/corpus.hpp"
#include "gvd/decoder.hpp"

namespace gvd {

struct OverlayEntry {
  std::string word;
  int step = 0;
  int region = -1;
  int frame = 0;
  BoundingBox box;
  double weight = 0;
  std::string image;
};

// RGB8 canvas of the frame size with every proposal of `frame` outlined in
// grey and `highlight` in red.
void render_frame_png(const std::filesystem::path& path, const RegionSet& regions, int frame,
                      int highlight);

// Only object-class words get an entry. Returns the entries written.
std::vector<OverlayEntry> write_overlays(const std::filesystem::path& dir, const Sample& sample,
                                         const Generation& gen, const Vocabulary& vocab,
                                         const ObjectClassSet& classes);

}  // namespace gvd
