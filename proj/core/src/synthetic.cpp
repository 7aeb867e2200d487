#include "retina/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace retina {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr std::size_t at(KeypointName k) { return static_cast<std::size_t>(k); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

Rgb clothing(std::mt19937_64& rng) {
  return hsv(uniform(rng, 0.0, 1.0), uniform(rng, 0.4, 1.0), uniform(rng, 0.3, 1.0));
}

struct Vec {
  double x = 0.0, y = 0.0;
};

Vec operator+(Vec a, Vec b) { return {a.x + b.x, a.y + b.y}; }
Vec operator-(Vec a, Vec b) { return {a.x - b.x, a.y - b.y}; }
Vec operator*(double s, Vec a) { return {s * a.x, s * a.y}; }
double dot(Vec a, Vec b) { return a.x * b.x + a.y * b.y; }
double cross(Vec a, Vec b) { return a.x * b.y - a.y * b.x; }
double norm(Vec a) { return std::sqrt(dot(a, a)); }

Vec along(Vec from, double angle, double length) {
  return {from.x + length * std::sin(angle), from.y + length * std::cos(angle)};
}

double segment_distance(Vec p, Vec a, Vec b) {
  const Vec ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + t * ab));
}

// Signed distance to a convex quad given counter-clockwise or clockwise.
double quad_distance(Vec p, const std::array<Vec, 4>& q) {
  double edge = INFINITY;
  bool inside = true;
  double orient = cross(q[1] - q[0], q[2] - q[1]) >= 0.0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec a = q[i], b = q[(i + 1) % 4];
    edge = std::min(edge, segment_distance(p, a, b));
    if (orient * cross(b - a, p - a) < 0.0) inside = false;
  }
  return inside ? -edge : edge;
}

struct Canvas {
  std::size_t n;
  std::vector<Rgb> px;

  void paint(Rgb c, auto&& signed_distance) {
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const Vec p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
        const double cover = std::clamp(0.5 - signed_distance(p), 0.0, 1.0);
        if (cover <= 0.0) continue;
        Rgb& d = px[y * n + x];
        d.r += cover * (c.r - d.r);
        d.g += cover * (c.g - d.g);
        d.b += cover * (c.b - d.b);
      }
    }
  }
};

}  // namespace

SyntheticIdentity make_identity(std::uint64_t global_seed, std::size_t id, Regime regime) {
  std::mt19937_64 rng(mix(global_seed, id));
  SyntheticIdentity s;
  s.id = id;
  s.regime = regime;
  s.head_radius = uniform(rng, 0.065, 0.095);
  s.torso_length = uniform(rng, 0.27, 0.35);
  s.shoulder_width = uniform(rng, 0.20, 0.32);
  s.hip_width = uniform(rng, 0.14, 0.24);
  s.upper_arm = uniform(rng, 0.14, 0.20);
  s.forearm = uniform(rng, 0.12, 0.18);
  s.thigh = uniform(rng, 0.21, 0.27);
  s.shin = uniform(rng, 0.20, 0.26);
  s.limb_width = uniform(rng, 0.03, 0.06);
  s.skin = hsv(uniform(rng, 0.0, 0.14), uniform(rng, 0.2, 0.75), uniform(rng, 0.35, 0.95));
  s.hair = hsv(uniform(rng, 0.0, 1.0), uniform(rng, 0.3, 0.95), uniform(rng, 0.1, 0.8));
  s.top = clothing(rng);
  s.bottom = clothing(rng);
  return s;
}

Camera random_camera(std::uint64_t camera_seed) {
  std::mt19937_64 rng(mix(camera_seed, 0x6361));
  Camera c;
  c.scale = uniform(rng, 0.4, 1.0);
  // Keep the head in frame: the window starts between just above the head
  // and its chin, and never runs past the feet.
  const double window = 1.08 * c.scale;
  const double lo = -0.06;
  const double hi = std::clamp(1.04 - window, lo, 0.06);
  c.top = hi > lo ? uniform(rng, lo, hi) : lo;
  c.shift = uniform(rng, -0.15, 0.15);
  return c;
}

Sample render_sample(const SyntheticIdentity& identity, std::uint64_t pose_seed,
                     std::uint64_t camera_seed, Regime regime, std::size_t image_size) {
  return render_sample(identity, mix(pose_seed, camera_seed), random_camera(camera_seed), regime,
                       image_size);
}

Sample render_sample(const SyntheticIdentity& id, std::uint64_t pose_seed, const Camera& cam,
                     Regime regime, std::size_t image_size) {
  if (image_size == 0) throw std::invalid_argument("render_sample: empty image");
  if (!(cam.scale > 0.0)) throw std::invalid_argument("render_sample: camera scale must be positive");
  std::mt19937_64 rng(mix(pose_seed, id.id));

  // Skeleton in figure units: y grows downwards from the top of the head,
  // the figure faces the camera so its left side is at +x.
  const double r = id.head_radius;
  const Vec head{0.0, r};
  const double yaw = uniform(rng, -0.5, 0.5);
  const double tilt = uniform(rng, -0.1, 0.1);
  const Vec neck{0.0, 2.0 * r + 0.02};
  const Vec l_sh = neck + Vec{id.shoulder_width / 2, 0.02};
  const Vec r_sh = neck + Vec{-id.shoulder_width / 2, 0.02};
  const Vec l_hip{id.hip_width / 2, l_sh.y + id.torso_length};
  const Vec r_hip{-id.hip_width / 2, r_sh.y + id.torso_length};
  const double la = uniform(rng, -0.2, 1.3), ra = -uniform(rng, -0.2, 1.3);
  const Vec l_el = along(l_sh, la, id.upper_arm);
  const Vec r_el = along(r_sh, ra, id.upper_arm);
  const Vec l_wr = along(l_el, la + uniform(rng, -1.2, 0.3), id.forearm);
  const Vec r_wr = along(r_el, ra - uniform(rng, -1.2, 0.3), id.forearm);
  const double ll = uniform(rng, -0.1, 0.35), rl = -uniform(rng, -0.1, 0.35);
  const Vec l_kn = along(l_hip, ll, id.thigh);
  const Vec r_kn = along(r_hip, rl, id.thigh);
  const Vec l_an = along(l_kn, ll - uniform(rng, 0.0, 0.5), id.shin);
  const Vec r_an = along(r_kn, rl + uniform(rng, 0.0, 0.5), id.shin);
  auto face = [&](double fx, double fy) {
    return Vec{head.x + r * (fx + 0.6 * yaw), head.y + r * (fy + tilt * fx)};
  };
  std::array<Vec, kNumKeypoints> kp{};
  kp[at(KeypointName::Nose)] = face(0.0, 0.1);
  kp[at(KeypointName::LeftEye)] = face(0.38, -0.2);
  kp[at(KeypointName::RightEye)] = face(-0.38, -0.2);
  kp[at(KeypointName::LeftEar)] = face(0.92, 0.0);
  kp[at(KeypointName::RightEar)] = face(-0.92, 0.0);
  kp[at(KeypointName::LeftMouth)] = face(0.28, 0.48);
  kp[at(KeypointName::RightMouth)] = face(-0.28, 0.48);
  kp[at(KeypointName::LeftShoulder)] = l_sh;
  kp[at(KeypointName::RightShoulder)] = r_sh;
  kp[at(KeypointName::LeftElbow)] = l_el;
  kp[at(KeypointName::RightElbow)] = r_el;
  kp[at(KeypointName::LeftWrist)] = l_wr;
  kp[at(KeypointName::RightWrist)] = r_wr;
  kp[at(KeypointName::LeftHip)] = l_hip;
  kp[at(KeypointName::RightHip)] = r_hip;
  kp[at(KeypointName::LeftKnee)] = l_kn;
  kp[at(KeypointName::RightKnee)] = r_kn;
  kp[at(KeypointName::LeftAnkle)] = l_an;
  kp[at(KeypointName::RightAnkle)] = r_an;

  // Camera: figure units to pixels.
  const double n = static_cast<double>(image_size);
  const double ppu = n / (1.08 * cam.scale);
  const double cx = n / 2.0 + cam.shift * n;
  auto to_px = [&](Vec v) { return Vec{cx + v.x * ppu, (v.y - cam.top) * ppu}; };

  Rgb top = id.top, bottom = id.bottom;
  if (regime == Regime::LongTerm) {
    std::mt19937_64 crng(mix(pose_seed, 0x636c6f));
    top = clothing(crng);
    bottom = clothing(crng);
  }

  Canvas cv{image_size, std::vector<Rgb>(image_size * image_size)};
  const Rgb bg = hsv(uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 0.3), uniform(rng, 0.3, 0.8));
  const double grad = uniform(rng, -0.15, 0.15);
  for (std::size_t y = 0; y < image_size; ++y) {
    const double f = 1.0 + grad * (static_cast<double>(y) / n - 0.5);
    for (std::size_t x = 0; x < image_size; ++x) cv.px[y * image_size + x] = {bg.r * f, bg.g * f, bg.b * f};
  }

  const double limb = id.limb_width * ppu;
  auto capsule = [&](Vec a, Vec b, double radius) {
    const Vec pa = to_px(a), pb = to_px(b);
    return [pa, pb, radius](Vec p) { return segment_distance(p, pa, pb) - radius; };
  };
  cv.paint(bottom, capsule(l_hip, l_kn, limb));
  cv.paint(bottom, capsule(l_kn, l_an, limb * 0.9));
  cv.paint(bottom, capsule(r_hip, r_kn, limb));
  cv.paint(bottom, capsule(r_kn, r_an, limb * 0.9));
  const std::array<Vec, 4> torso{to_px(r_sh + Vec{-0.01, -0.01}), to_px(l_sh + Vec{0.01, -0.01}),
                                 to_px(l_hip), to_px(r_hip)};
  cv.paint(top, [&torso](Vec p) { return quad_distance(p, torso); });
  cv.paint(top, capsule(l_sh, l_el, limb));
  cv.paint(top, capsule(r_sh, r_el, limb));
  cv.paint(id.skin, capsule(l_el, l_wr, limb * 0.8));
  cv.paint(id.skin, capsule(r_el, r_wr, limb * 0.8));
  cv.paint(id.skin, capsule(neck, neck + Vec{0.0, 0.02}, limb * 0.9));
  const Vec hc = to_px(head);
  const double hr = r * ppu;
  cv.paint(id.skin, [hc, hr](Vec p) { return norm(p - hc) - hr; });
  cv.paint(id.hair, [hc, hr](Vec p) {
    return std::max(norm(p - hc) - hr * 1.05, (p.y - (hc.y - 0.35 * hr)));
  });
  const Rgb dark{0.08, 0.06, 0.06};
  const double eye_r = std::max(0.35, 0.12 * hr);
  for (std::size_t k : {at(KeypointName::LeftEye), at(KeypointName::RightEye)}) {
    const Vec e = to_px(kp[k]);
    cv.paint(dark, [e, eye_r](Vec p) { return norm(p - e) - eye_r; });
  }
  const Vec m0 = to_px(kp[at(KeypointName::LeftMouth)]), m1 = to_px(kp[at(KeypointName::RightMouth)]);
  cv.paint({0.55, 0.15, 0.15}, [m0, m1, eye_r](Vec p) { return segment_distance(p, m0, m1) - eye_r * 0.7; });

  Sample s;
  s.label = id.id;
  s.dataset = static_cast<int>(regime);
  s.image = Tensor({3, image_size, image_size});
  const double gain = uniform(rng, 0.85, 1.15);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const Rgb& c = cv.px[y * image_size + x];
      s.image.at(0, y, x) = std::clamp(c.r * gain + noise(rng), 0.0, 1.0);
      s.image.at(1, y, x) = std::clamp(c.g * gain + noise(rng), 0.0, 1.0);
      s.image.at(2, y, x) = std::clamp(c.b * gain + noise(rng), 0.0, 1.0);
    }
  }
  for (std::size_t k = 0; k < kNumKeypoints; ++k) {
    const Vec p = to_px(kp[k]);
    if (p.x >= 0.0 && p.x < n && p.y >= 0.0 && p.y < n) {
      s.keypoints[k] = Keypoint{p.x, p.y};
    } else {
      s.keypoints[k] = Keypoint{};
    }
  }
  return s;
}

SyntheticSplit make_dataset(const DatasetConfig& cfg) {
  if (cfg.identities == 0) throw std::invalid_argument("make_dataset: no identities");
  if (!(cfg.long_term_fraction >= 0.0 && cfg.long_term_fraction <= 1.0)) {
    throw std::invalid_argument("make_dataset: long_term_fraction must lie in [0, 1]");
  }
  const auto n_long = static_cast<std::size_t>(
      std::lround(static_cast<double>(cfg.identities) * cfg.long_term_fraction));
  SyntheticSplit split;
  const std::array<std::pair<std::vector<Sample>*, std::size_t>, 3> parts{
      {{&split.train, cfg.train_per_id}, {&split.gallery, cfg.gallery_per_id},
       {&split.probe, cfg.probe_per_id}}};
  for (std::size_t id = 0; id < cfg.identities; ++id) {
    const Regime regime = id < n_long ? Regime::LongTerm : Regime::ShortTerm;
    const SyntheticIdentity ident = make_identity(cfg.seed, id, regime);
    for (std::size_t part = 0; part < parts.size(); ++part) {
      for (std::size_t i = 0; i < parts[part].second; ++i) {
        const std::uint64_t base = mix(mix(cfg.seed, id), part * 100003 + i);
        parts[part].first->push_back(
            render_sample(ident, mix(base, 1), mix(base, 2), regime, cfg.image_size));
      }
    }
  }
  return split;
}

}  // namespace retina
