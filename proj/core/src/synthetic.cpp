#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsc/dataio.hpp"
#include "fsc/error.hpp"
#include "fsc/parallel.hpp"

namespace fsc {

namespace {

constexpr double kPi = 3.14159265358979323846;

void stamp(std::vector<unsigned char>& mask, std::size_t size, double x, double y,
           std::size_t width) {
  const long cx = static_cast<long>(std::floor(x));
  const long cy = static_cast<long>(std::floor(y));
  const long lo = -static_cast<long>((width - 1) / 2);
  const long hi = static_cast<long>(width / 2);
  const long n = static_cast<long>(size);
  for (long dy = lo; dy <= hi; ++dy) {
    for (long dx = lo; dx <= hi; ++dx) {
      const long px = cx + dx;
      const long py = cy + dy;
      if (px >= 0 && py >= 0 && px < n && py < n) {
        mask[static_cast<std::size_t>(py * n + px)] = 1;
      }
    }
  }
}

}  // namespace

GrayImage render_synthetic(bool crack, std::uint64_t seed, std::size_t index, std::size_t size,
                           const GeneratorParams& p) {
  auto rng = RngStream::derive(seed, "image").child(index);
  GrayImage img(size, size);

  // Low-frequency shading with an integer number of periods across the
  // image, so it shifts local brightness without moving the image mean.
  const double amplitude = p.shading_amplitude * rng.uniform();
  std::size_t fx = 0;
  std::size_t fy = 0;
  while (fx == 0 && fy == 0) {
    fx = rng.below(3);
    fy = rng.below(3);
  }
  const double phase = 2.0 * kPi * rng.uniform();
  const double n = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double shade =
          amplitude * std::sin(2.0 * kPi * (static_cast<double>(fx * x + fy * y)) / n + phase);
      img.at(x, y) = static_cast<float>(p.background_mean + p.background_sd * gaussian(rng) + shade);
    }
  }

  if (crack) {
    std::vector<unsigned char> mask(size * size, 0);
    const std::size_t side = rng.below(4);
    const double along = rng.uniform() * n;
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    switch (side) {
      case 0: x = along; y = 0.0; heading = 0.5 * kPi; break;   // top, heading down
      case 1: x = n - 1e-9; y = along; heading = kPi; break;    // right, heading left
      case 2: x = along; y = n - 1e-9; heading = 1.5 * kPi; break;
      default: x = 0.0; y = along; heading = 0.0; break;
    }
    heading += (rng.uniform() - 0.5) * 1.2;
    const std::size_t steps = p.min_steps + rng.below(p.max_steps - p.min_steps + 1);
    const std::size_t width = p.min_width + rng.below(p.max_width - p.min_width + 1);
    stamp(mask, size, x, y, width);
    // The walk reflects off the borders, so every step lands in the image.
    for (std::size_t s = 0; s < steps; ++s) {
      heading += (2.0 * rng.uniform() - 1.0) * p.max_turn;
      double dx = std::cos(heading);
      double dy = std::sin(heading);
      if (x + dx < 0.0 || x + dx >= n) {
        dx = -dx;
        heading = std::atan2(dy, dx);
      }
      if (y + dy < 0.0 || y + dy >= n) {
        dy = -dy;
        heading = std::atan2(dy, dx);
      }
      x = std::clamp(x + dx, 0.0, n - 1e-9);
      y = std::clamp(y + dy, 0.0, n - 1e-9);
      stamp(mask, size, x, y, width);
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) {
        img.pixels[i] = static_cast<float>(img.pixels[i] * p.crack_multiplier);
      }
    }
  }
  for (float& v : img.pixels) {
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return img;
}

SyntheticSet generate_synthetic(std::size_t count, double crack_fraction, std::uint64_t seed,
                                std::size_t size, const GeneratorParams& params) {
  if (!(crack_fraction > 0.0 && crack_fraction < 1.0)) {
    throw ConfigError("crack_fraction must be in (0, 1), got " + std::to_string(crack_fraction));
  }
  if (count < 2) {
    throw ConfigError("synthetic set needs at least 2 images");
  }
  if (size < 4) {
    throw ConfigError("synthetic images must be at least 4 pixels wide");
  }
  if (params.min_steps > params.max_steps || params.min_width == 0 ||
      params.min_width > params.max_width) {
    throw ConfigError("inconsistent generator step/width ranges");
  }
  const auto cracks = static_cast<std::size_t>(std::llround(crack_fraction * static_cast<double>(count)));
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  auto rng = RngStream::derive(seed, "crack-assignment");
  shuffle(order, rng);

  SyntheticSet set;
  set.labels.assign(count, Label::no_crack);
  for (std::size_t i = 0; i < cracks; ++i) {
    set.labels[order[i]] = Label::crack;
  }
  set.images.resize(count);
  parallel_for(count, [&](std::size_t i) {
    set.images[i] = render_synthetic(set.labels[i] == Label::crack, seed, i, size, params);
  });
  return set;
}

}  // namespace fsc
