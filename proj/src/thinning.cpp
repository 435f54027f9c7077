#include <vector>

#include "dexined/eval.hpp"

namespace dexined {

std::int64_t BinaryMap::count() const {
  std::int64_t n = 0;
  for (auto v : data) n += v;
  return n;
}

BinaryMap binarize(const Image& map, double threshold) {
  if (map.channels != 1) fail(ErrorKind::Shape, "binarize expects a single-channel map");
  BinaryMap out(map.width, map.height);
  for (std::size_t i = 0; i < map.data.size(); ++i) out.data[i] = static_cast<double>(map.data[i]) >= threshold ? 1 : 0;
  return out;
}

BinaryMap thin(const BinaryMap& map) {
  BinaryMap img = map;
  const int w = img.width;
  const int h = img.height;
  auto px = [&](int x, int y) -> int {
    return x >= 0 && y >= 0 && x < w && y < h ? img.at(x, y) : 0;
  };
  std::vector<std::size_t> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      doomed.clear();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!img.at(x, y)) continue;
          // P2..P9 clockwise from north.
          const int p[8] = {px(x, y - 1), px(x + 1, y - 1), px(x + 1, y),     px(x + 1, y + 1),
                            px(x, y + 1), px(x - 1, y + 1), px(x - 1, y), px(x - 1, y - 1)};
          int b = 0;
          int a = 0;
          for (int i = 0; i < 8; ++i) {
            b += p[i];
            a += (p[i] == 0 && p[(i + 1) % 8] == 1) ? 1 : 0;
          }
          if (b < 2 || b > 6 || a != 1) continue;
          const int p2 = p[0], p4 = p[2], p6 = p[4], p8 = p[6];
          const bool ok = pass == 0 ? (p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0)
                                    : (p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0);
          if (ok) doomed.push_back(static_cast<std::size_t>(y) * w + x);
        }
      }
      for (auto i : doomed) img.data[i] = 0;
      changed = changed || !doomed.empty();
    }
  }
  return img;
}

}  // namespace dexined
