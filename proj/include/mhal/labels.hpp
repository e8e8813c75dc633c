#pragma once

#include <cstdint>
#include <vector>

namespace mhal {

// Hard label maps [batch, h, w], one byte per pixel.
struct LabelMap {
  std::int64_t batch = 0, h = 0, w = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(std::int64_t b, std::int64_t hh, std::int64_t ww, std::uint8_t fill = 0)
      : batch(b), h(hh), w(ww), values(static_cast<std::size_t>(b * hh * ww), fill) {}

  std::int64_t plane() const { return h * w; }
  std::uint8_t& at(std::int64_t b, std::int64_t y, std::int64_t x) { return values[(b * h + y) * w + x]; }
  std::uint8_t at(std::int64_t b, std::int64_t y, std::int64_t x) const { return values[(b * h + y) * w + x]; }

  bool operator==(const LabelMap&) const = default;
};

}  // namespace mhal
