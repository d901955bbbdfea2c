#include "gvd/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include <png.h>

#include "gvd/dataset.hpp"
#include "gvd/errors.hpp"

namespace gvd {

namespace fs = std::filesystem;

namespace {

struct Canvas {
  int w, h;
  std::vector<unsigned char> rgb;

  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 40) {}

  void put(int x, int y, const unsigned char c[3]) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    auto* p = &rgb[(static_cast<std::size_t>(y) * w + x) * 3];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  void rect(const BoundingBox& b, double sx, double sy, int thick, const unsigned char c[3]) {
    const int x1 = static_cast<int>(std::lround(b.x1 * sx)), x2 = static_cast<int>(std::lround(b.x2 * sx));
    const int y1 = static_cast<int>(std::lround(b.y1 * sy)), y2 = static_cast<int>(std::lround(b.y2 * sy));
    for (int t = 0; t < thick; ++t) {
      for (int x = x1; x <= x2; ++x) {
        put(x, y1 + t, c);
        put(x, y2 - t, c);
      }
      for (int y = y1; y <= y2; ++y) {
        put(x1 + t, y, c);
        put(x2 - t, y, c);
      }
    }
  }
};

void write_png(const fs::path& path, const Canvas& canvas) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, canvas.w, canvas.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < canvas.h; ++y)
    png_write_row(png, const_cast<png_bytep>(&canvas.rgb[static_cast<std::size_t>(y) * canvas.w * 3]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void render_frame_png(const fs::path& path, const RegionSet& regions, int frame, int highlight) {
  // Cap the canvas at 640 px on the long side.
  const double fw = regions.frame_width(), fh = regions.frame_height();
  const double scale = std::min(1.0, 640.0 / std::max(fw, fh));
  Canvas canvas(std::max(1, static_cast<int>(std::lround(fw * scale))),
                std::max(1, static_cast<int>(std::lround(fh * scale))));
  static const unsigned char kGrey[3] = {140, 140, 140};
  static const unsigned char kRed[3] = {230, 40, 40};
  for (int i : regions.frame_regions(frame))
    if (i != highlight) canvas.rect(regions.box(i), scale, scale, 1, kGrey);
  if (highlight >= 0) canvas.rect(regions.box(highlight), scale, scale, 3, kRed);
  write_png(path, canvas);
}

std::vector<OverlayEntry> write_overlays(const fs::path& dir, const Sample& sample,
                                         const Generation& gen, const Vocabulary& vocab,
                                         const ObjectClassSet& classes) {
  fs::create_directories(dir);
  std::vector<OverlayEntry> entries;
  for (std::size_t w = 0; w < gen.steps.size(); ++w) {
    const DecodeStep& step = gen.steps[w];
    const std::string& word = vocab.token(step.token);
    if (!classes.class_of(word)) continue;
    const auto best = std::max_element(step.alpha.begin(), step.alpha.end());
    OverlayEntry e;
    e.word = word;
    e.step = static_cast<int>(w);
    e.region = static_cast<int>(best - step.alpha.begin());
    e.frame = sample.regions.frame_of(e.region);
    e.box = sample.regions.box(e.region);
    e.weight = *best;
    e.image = sample.key + "_w" + std::to_string(w) + "_" + word + ".png";
    render_frame_png(dir / e.image, sample.regions, e.frame, e.region);
    entries.push_back(e);
  }
  nlohmann::ordered_json side = nlohmann::ordered_json::array();
  for (const auto& e : entries)
    side.push_back({{"word", e.word},
                    {"step", e.step},
                    {"region", e.region},
                    {"frame", e.frame},
                    {"box", {e.box.x1, e.box.y1, e.box.x2, e.box.y2}},
                    {"weight", e.weight},
                    {"image", e.image}});
  std::ofstream(dir / (sample.key + ".json")) << side.dump(2) << "\n";
  return entries;
}

}  // namespace gvd
