#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "trajcm/assoc.hpp"
#include "trajcm/iwe.hpp"
#include "trajcm/objective.hpp"
#include "trajcm/parallel.hpp"
#include "trajcm/trajectory.hpp"
#include "trajcm/warp.hpp"

using namespace trajcm;

namespace {

TrajectoryField random_field(int w, int h, Basis basis, std::uint64_t seed, double scale) {
  TrajectoryField f(w, h, basis);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : f.scalars()) v = n(rng);
  return f;
}

TrajectoryField constant_field(int w, int h, Vec2 v) {
  TrajectoryField f(w, h, {BasisKind::Polynomial, 1});
  for (auto& c : f.coeffs()) c = v;
  return f;
}

double gauss_weight(int pixel, double u, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  const int base = static_cast<int>(std::floor(u));
  double sum = 0;
  for (int i = base - r; i <= base + r + 1; ++i) sum += std::exp(-0.5 * (i - u) * (i - u) / (sigma * sigma));
  if (pixel < base - r || pixel > base + r + 1) return 0.0;
  return std::exp(-0.5 * (pixel - u) * (pixel - u) / (sigma * sigma)) / sum;
}

// Direct per-pixel accumulation of every event.
std::vector<double> iwe_oracle(const WarpedEvents& w, double sigma, int polarity) {
  std::vector<double> img(static_cast<std::size_t>(w.width) * w.height, 0.0);
  for (std::size_t k = 0; k < w.pos.size(); ++k) {
    if (!w.valid[k] || (polarity != 0 && w.polarity[k] != polarity)) continue;
    for (int y = 0; y < w.height; ++y)
      for (int x = 0; x < w.width; ++x) {
        double v;
        if (sigma == 0) {
          v = std::max(0.0, 1 - std::abs(x - w.pos[k].x)) * std::max(0.0, 1 - std::abs(y - w.pos[k].y));
        } else {
          v = gauss_weight(x, w.pos[k].x, sigma) * gauss_weight(y, w.pos[k].y, sigma);
        }
        img[static_cast<std::size_t>(y) * w.width + x] += w.weight[k] * v;
      }
  }
  return img;
}

double stencil_oracle(const std::vector<double>& img, int w, int h) {
  double g = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double c = img[y * w + x];
      const double dx = x + 1 < w ? img[y * w + x + 1] - c : 0.0;
      const double dy = y + 1 < h ? img[(y + 1) * w + x] - c : 0.0;
      g += std::sqrt(dx * dx + dy * dy);
    }
  return g;
}

std::vector<double> count_image(const EventSlice& s, int polarity) {
  std::vector<double> img(static_cast<std::size_t>(s.width()) * s.height(), 0.0);
  for (const Event& e : s.events())
    if (polarity == 0 || e.p == polarity) img[static_cast<std::size_t>(e.y) * s.width() + e.x] += 1.0;
  return img;
}

}  // namespace

TEST_CASE("identity warp reproduces the raw event counts bit-exactly") {
  auto s = test_util::random_slice(23, 17, 3000, 4);
  auto vol = DisplacementVolume::zero(23, 17, 15, 4, 0.5);
  auto w = warp_events(s, vol, false);
  CHECK(w.n_masked == 0);
  for (std::size_t k = 0; k < s.size(); ++k) CHECK(w.pos[k] == Vec2{double(s[k].x), double(s[k].y)});
  auto iwe = build_iwe(w, 0.0, true);
  CHECK(iwe.pos == count_image(s, 1));
  CHECK(iwe.neg == count_image(s, -1));
  auto merged = build_iwe(w, 0.0, false);
  CHECK(merged.neg.empty());
  CHECK(merged.pos == count_image(s, 0));

  // A zero trajectory field builds the same identity warp.
  TrajectoryField f(23, 17, {BasisKind::Bezier, 10});
  ObjectiveConfig cfg;
  cfg.sigma = 0.0;
  cfg.time_weighting = false;
  auto st = evaluate_objective(s, f, 0.37, cfg);
  CHECK(st.iwe.pos == count_image(s, 1));
  CHECK(st.loss.R == 0.0);
  CHECK(fixed_reference_loss(s, f, cfg) == 1.0);
  cfg.sigma = 1.0;
  CHECK(fixed_reference_loss(s, f, cfg) == 1.0);
}

TEST_CASE("warp matches the nearest-voxel oracle") {
  auto s = test_util::random_slice(30, 26, 2000, 9);
  auto f = random_field(30, 26, {BasisKind::Bezier, 3}, 2, 2.0);
  auto vol = build_displacement_volume(f, 0.6, {8, 64}, 7);
  auto w = warp_events(s, vol, false);
  std::size_t masked = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const int bin = std::min(6, static_cast<int>(std::floor(s[k].t * 7)));
    const std::size_t cell = static_cast<std::size_t>(s[k].y / 4) * vol.cells.cells_x() + s[k].x / 4;
    const Vec2 p = Vec2{double(s[k].x), double(s[k].y)} + vol.disp[bin * vol.cell_count() + cell];
    CHECK(w.pos[k] == p);
    const bool inside = p.x >= 0 && p.x <= 29 && p.y >= 0 && p.y <= 25;
    CHECK(bool(w.valid[k]) == inside);
    CHECK(w.weight[k] == (inside ? 1.0 : 0.0));
    masked += !inside;
  }
  CHECK(w.n_masked == masked);
  CHECK(masked > 0);
}

TEST_CASE("events pushed off the image are masked") {
  auto s = test_util::random_slice(16, 16, 400, 1);
  auto f = constant_field(16, 16, {40.0, 0.0});
  auto vol = build_displacement_volume(f, 1.0, {1, 64}, 5);
  auto w = warp_events(s, vol, true);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (w.valid[k]) {
      CHECK(w.pos[k].x <= 15.0);
    } else {
      CHECK(w.weight[k] == 0.0);
    }
  }
  CHECK(w.n_masked > 300);
  auto iwe = build_iwe(w, 1.0);
  double mass = 0;
  for (double v : iwe.summed()) mass += v;
  CHECK(mass <= double(s.size() - w.n_masked) + 1e-9);

  TrajectoryField other(20, 16, {BasisKind::Polynomial, 1});
  auto bad = build_displacement_volume(other, 0.5, {1, 64}, 3);
  CHECK_THROWS_AS(warp_events(s, bad, false), std::invalid_argument);
}

TEST_CASE("time weights are proportional to the distance from t_ref with mean 1") {
  auto s = test_util::random_slice(12, 12, 1000, 6);
  auto vol = DisplacementVolume::zero(12, 12, 10, 4, 0.3);
  auto w = warp_events(s, vol, true);
  double sum = 0;
  for (double v : w.weight) sum += v;
  CHECK(sum / s.size() == doctest::Approx(1.0).epsilon(1e-12));
  const double ratio = w.weight[0] / std::abs(0.3 - s[0].t);
  for (std::size_t k = 1; k < s.size(); ++k)
    CHECK(w.weight[k] == doctest::Approx(ratio * std::abs(0.3 - s[k].t)).epsilon(1e-9).scale(1e-12));

  EventSlice at_ref(4, 4, 0, 1, {{0.3, 1, 1, 1}, {0.3, 2, 2, -1}});
  auto w2 = warp_events(at_ref, DisplacementVolume::zero(4, 4, 3, 4, 0.3), true);
  CHECK(w2.weight == std::vector<double>{1.0, 1.0});
}

TEST_CASE("trilinear lookup blends to one and agrees with nearest at voxel centers") {
  auto f = random_field(24, 24, {BasisKind::Bezier, 2}, 7, 1.0);
  auto vol = build_displacement_volume(f, 0.5, {4, 64}, 6);
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> up(0, 23);
  std::uniform_real_distribution<double> ut(0, 1);
  for (int i = 0; i < 200; ++i) {
    auto taps = lookup_taps(vol, up(rng), up(rng), ut(rng), VolumeLookup::Trilinear);
    double sum = 0;
    for (int j = 0; j < taps.count; ++j) sum += taps.weight[j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Cell (1, 2) spans pixels 4..7 x 8..11, so no pixel sits on its center;
  // bin 3 is centered at 3.5 / 6.
  auto near = lookup_taps(vol, 5, 9, 3.5 / 6, VolumeLookup::Nearest);
  CHECK(near.count == 1);
  CHECK(near.voxel[0] == vol.voxel(3, 2 * 6 + 1));
}

TEST_CASE("bilinear and Gaussian accumulation match the direct oracle") {
  auto s = test_util::random_slice(14, 11, 300, 12);
  auto f = random_field(14, 11, {BasisKind::Bezier, 2}, 13, 1.5);
  auto vol = build_displacement_volume(f, 0.2, {3, 64}, 4);
  auto w = warp_events(s, vol, true);
  for (double sigma : {0.0, 0.5, 1.0, 1.7}) {
    auto iwe = build_iwe(w, sigma, true);
    auto op = iwe_oracle(w, sigma, 1);
    auto on = iwe_oracle(w, sigma, -1);
    for (std::size_t i = 0; i < op.size(); ++i) {
      CHECK(iwe.pos[i] == doctest::Approx(op[i]).epsilon(1e-12).scale(1.0));
      CHECK(iwe.neg[i] == doctest::Approx(on[i]).epsilon(1e-12).scale(1.0));
    }
    CHECK(contrast_g(iwe) == doctest::Approx(stencil_oracle(op, 14, 11) + stencil_oracle(on, 14, 11)).epsilon(1e-12));
  }
}

TEST_CASE("interior events conserve their total weight") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(6.0, 24.0);
  WarpedEvents w;
  w.width = w.height = 31;
  for (int k = 0; k < 500; ++k) {
    w.pos.push_back({u(rng), u(rng)});
    w.weight.push_back(0.5 + (k % 3));
    w.polarity.push_back(k % 2 ? 1 : -1);
    w.valid.push_back(1);
  }
  double expect = 0;
  for (double v : w.weight) expect += v;
  for (double sigma : {0.0, 1.0, 2.0}) {
    double mass = 0;
    for (double v : build_iwe(w, sigma).summed()) mass += v;
    CHECK(mass == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("contrast gradient matches finite differences of the image") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 5);
  Iwe iwe{7, 5, 0.0, 0.0, true, {}, {}};
  for (int i = 0; i < 35; ++i) {
    iwe.pos.push_back(u(rng));
    iwe.neg.push_back(u(rng));
  }
  auto g = contrast_g_backward(iwe);
  const double h = 1e-6;
  for (int i = 0; i < 35; ++i) {
    auto plus = iwe, minus = iwe;
    plus.pos[i] += h;
    minus.pos[i] -= h;
    CHECK(g.pos[i] == doctest::Approx((contrast_g(plus) - contrast_g(minus)) / (2 * h)).epsilon(1e-6));
    plus = iwe;
    minus = iwe;
    plus.neg[i] += h;
    minus.neg[i] -= h;
    CHECK(g.neg[i] == doctest::Approx((contrast_g(plus) - contrast_g(minus)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("per-event IWE gradient matches finite differences") {
  auto s = test_util::random_slice(12, 12, 60, 21);
  auto f = random_field(12, 12, {BasisKind::Bezier, 2}, 22, 1.0);
  auto vol = build_displacement_volume(f, 0.5, {2, 64}, 3);
  auto w = warp_events(s, vol, true);
  for (double sigma : {0.0, 1.0}) {
    auto iwe = build_iwe(w, sigma);
    auto g = contrast_g_backward(iwe);
    auto dpos = iwe_backward(w, iwe, g);
    auto functional = [&](const WarpedEvents& we) {
      auto im = build_iwe(we, sigma);
      double acc = 0;
      for (std::size_t i = 0; i < im.pos.size(); ++i) acc += g.pos[i] * im.pos[i] + g.neg[i] * im.neg[i];
      return acc;
    };
    const double h = 1e-6;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (!w.valid[k]) continue;
      for (int axis = 0; axis < 2; ++axis) {
        double& c = axis ? w.pos[k].y : w.pos[k].x;
        const double c0 = c;
        // Integer crossings are kinks for both footprints.
        if (std::abs(c0 - std::round(c0)) < 1e-3) continue;
        c = c0 + h;
        const double fp = functional(w);
        c = c0 - h;
        const double fm = functional(w);
        c = c0;
        const double numeric = (fp - fm) / (2 * h);
        const double analytic = axis ? dpos[k].y : dpos[k].x;
        INFO("sigma " << sigma << " k " << k << " axis " << axis << " pos " << w.pos[k].x << "," << w.pos[k].y << " w " << w.weight[k]);
        CHECK(analytic == doctest::Approx(numeric).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("translating the scene translates the image") {
  // One nearest anchor per cell and a spatially constant field: shifting the
  // events by a whole number of cells shifts the IWE by the same amount.
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> ux(4, 15);
  std::vector<Event> a, b;
  for (int k = 0; k < 300; ++k) {
    Event e{k / 300.0, std::uint16_t(ux(rng)), std::uint16_t(ux(rng)), std::int8_t(k % 2 ? 1 : -1)};
    a.push_back(e);
    e.x += 8;
    e.y += 4;
    b.push_back(e);
  }
  EventSlice sa(32, 32, 0, 1, a), sb(32, 32, 0, 1, b);
  auto f = constant_field(32, 32, {2.25, -1.5});
  ObjectiveConfig cfg;
  cfg.knn.k = 1;
  auto ia = evaluate_objective(sa, f, 0.8, cfg).iwe;
  auto ib = evaluate_objective(sb, f, 0.8, cfg).iwe;
  for (int y = 0; y + 4 < 32; ++y)
    for (int x = 0; x + 8 < 32; ++x) {
      CHECK(ib.pos[(y + 4) * 32 + x + 8] == doctest::Approx(ia.pos[y * 32 + x]).scale(1.0));
      CHECK(ib.neg[(y + 4) * 32 + x + 8] == doctest::Approx(ia.neg[y * 32 + x]).scale(1.0));
    }
}

TEST_CASE("objective is bit-identical across thread counts") {
  auto s = test_util::random_slice(48, 40, 40000, 31);
  auto f = random_field(48, 40, {BasisKind::Bezier, 4}, 32, 1.0);
  ObjectiveConfig cfg;
  const int saved = thread_count();
  set_thread_count(1);
  auto a = evaluate_objective(s, f, 0.45, cfg);
  set_thread_count(5);
  auto b = evaluate_objective(s, f, 0.45, cfg);
  set_thread_count(saved);
  CHECK(std::memcmp(a.iwe.pos.data(), b.iwe.pos.data(), a.iwe.pos.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.iwe.neg.data(), b.iwe.neg.data(), a.iwe.neg.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(&a.loss.total, &b.loss.total, sizeof(double)) == 0);
}

TEST_CASE("regularizer matches the forward-difference oracle") {
  auto f = random_field(20, 12, {BasisKind::Bezier, 3}, 40, 2.0);
  auto vol = build_displacement_volume(f, 0.5, {4, 64}, 5);
  auto d = build_consecutive_delta_field(f, vol);
  const int cw = 5, ch = 3;
  double sum = 0;
  for (int b = 0; b < d.n_pairs; ++b)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) {
        auto at = [&](int xx, int yy) { return d.delta[b * 15 + yy * cw + xx]; };
        if (x + 1 < cw) sum += std::abs(at(x + 1, y).x - at(x, y).x) + std::abs(at(x + 1, y).y - at(x, y).y);
        if (y + 1 < ch) sum += std::abs(at(x, y + 1).x - at(x, y).x) + std::abs(at(x, y + 1).y - at(x, y).y);
      }
  CHECK(regularizer_r(d) == doctest::Approx(sum / 15).epsilon(1e-12));

  auto g = regularizer_r_backward(d);
  const double h = 1e-7;
  for (std::size_t i = 0; i < d.delta.size(); i += 3) {
    auto p = d, m = d;
    p.delta[i].x += h;
    m.delta[i].x -= h;
    CHECK(g[i].x == doctest::Approx((regularizer_r(p) - regularizer_r(m)) / (2 * h)).epsilon(1e-6).scale(1e-2));
  }
}

TEST_CASE("loss composition and degenerate contrast") {
  auto s = test_util::random_slice(16, 16, 500, 50);
  auto f = random_field(16, 16, {BasisKind::Bezier, 2}, 51, 1.0);
  ObjectiveConfig cfg;
  auto st = evaluate_objective(s, f, 0.25, cfg);
  CHECK(st.loss.G == doctest::Approx(contrast_g(st.iwe) / 256.0).epsilon(1e-12));
  CHECK(st.loss.total == doctest::Approx(1.0 / st.loss.G + 0.003 * st.loss.R).epsilon(1e-12));
  CHECK_FALSE(st.loss.degenerate);
  cfg.normalization = ContrastNormalization::None;
  CHECK(total_loss(s, f, 0.25, cfg).G == doctest::Approx(contrast_g(st.iwe)).epsilon(1e-12));

  EventSlice empty(16, 16, 0, 1, {});
  auto l = total_loss(empty, f, 0.5, cfg);
  CHECK(l.degenerate);
  CHECK(l.total == doctest::Approx(1e8 + cfg.lambda * l.R));
}

TEST_CASE("reference times are uniform and reproducible") {
  std::mt19937_64 a(77), b(77);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_reference_time(a);
    CHECK_FALSE((t < 0.0 || t >= 1.0));
    if (i < 100) CHECK(t == sample_reference_time(b));
    sum += t;
    sq += t * t;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(sq / n - mean * mean == doctest::Approx(1.0 / 12).epsilon(0.02));
}

TEST_CASE("PGM export records its normalization") {
  test_util::TempDir dir("pgm");
  auto s = test_util::random_slice(9, 5, 100, 2);
  auto iwe = build_iwe(warp_events(s, DisplacementVolume::zero(9, 5, 3, 4, 0.0), false), 0.0);
  write_pgm(iwe, dir / "a.pgm");
  write_pgm(iwe, dir / "b.pgm", {16, IweChannel::Negative});
  std::ifstream in(dir / "a.pgm", std::ios::binary);
  std::string magic, comment;
  std::getline(in, magic);
  std::getline(in, comment);
  CHECK(magic == "P5");
  CHECK(comment.rfind("# trajcm iwe max=", 0) == 0);
  CHECK(std::filesystem::file_size(dir / "b.pgm") > std::filesystem::file_size(dir / "a.pgm"));
  CHECK(image_variance(std::vector<double>{1, 2, 3, 4}) == doctest::Approx(1.25));
}
