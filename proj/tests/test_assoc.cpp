#include <algorithm>
#include <cstring>
#include <memory_resource>
#include <numeric>
#include <random>

#include "doctest.h"
#include "trajcm/assoc.hpp"
#include "trajcm/flow.hpp"
#include "trajcm/parallel.hpp"
#include "trajcm/trajectory.hpp"

using namespace trajcm;

namespace {

std::vector<std::int32_t> brute_knn(const Vec2& q, std::span<const Vec2> pts, int k) {
  std::vector<std::int32_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto d2 = [&](std::int32_t i) {
    double dx = pts[i].x - q.x, dy = pts[i].y - q.y;
    return dx * dx + dy * dy;
  };
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return d2(a) < d2(b); });
  idx.resize(k);
  return idx;
}

std::vector<Vec2> random_points(std::size_t n, std::mt19937_64& rng, bool integer_grid) {
  std::uniform_real_distribution<double> u(0.0, 50.0);
  std::uniform_int_distribution<int> ui(0, 6);
  std::vector<Vec2> p(n);
  for (auto& v : p) v = integer_grid ? Vec2{double(ui(rng)), double(ui(rng))} : Vec2{u(rng), u(rng)};
  return p;
}

// Tracks the largest number of bytes outstanding at once.
class CountingResource : public std::pmr::memory_resource {
 public:
  std::size_t current = 0;
  std::size_t peak = 0;

 private:
  void* do_allocate(std::size_t bytes, std::size_t align) override {
    current += bytes;
    peak = std::max(peak, current);
    return std::pmr::new_delete_resource()->allocate(bytes, align);
  }
  void do_deallocate(void* p, std::size_t bytes, std::size_t align) override {
    current -= bytes;
    std::pmr::new_delete_resource()->deallocate(p, bytes, align);
  }
  bool do_is_equal(const memory_resource& o) const noexcept override { return this == &o; }
};

TrajectoryField random_field(int w, int h, Basis basis, std::uint64_t seed, double scale = 3.0) {
  TrajectoryField f(w, h, basis);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : f.scalars()) v = n(rng);
  return f;
}

// Displacement of one voxel recomputed from its stored neighbor set.
Vec2 voxel_oracle(const TrajectoryField& f, const DisplacementVolume& v, int b, std::size_t c) {
  Vec2 sum;
  for (auto n : v.neighbors(v.voxel(b, c)))
    sum += (eval_trajectory(f, n, v.t_ref) - eval_trajectory(f, n, v.bin_centers[b]));
  return sum * (1.0 / v.k);
}

}  // namespace

TEST_CASE("tiled KNN is identical to brute force") {
  std::mt19937_64 rng(2024);
  const int ks[] = {1, 8, 32, 64};
  for (int inst = 0; inst < 100; ++inst) {
    const bool ties = inst % 3 == 0;
    std::uniform_int_distribution<std::size_t> un(64, inst % 10 == 0 ? 5000 : 600);
    const std::size_t n = un(rng);
    const int k = ks[inst % 4];
    auto pts = random_points(n, rng, ties);
    auto qs = random_points(37, rng, ties);
    auto res = knn_per_bin(qs, pts, k, 1 + inst % 16);
    for (std::size_t q = 0; q < qs.size(); ++q) {
      auto expect = brute_knn(qs[q], pts, k);
      auto got = res.neighbors(q);
      REQUIRE(std::equal(got.begin(), got.end(), expect.begin(), expect.end()));
    }
  }
}

TEST_CASE("KNN distances are sorted and argument checks hold") {
  std::mt19937_64 rng(1);
  auto pts = random_points(100, rng, false);
  auto qs = random_points(10, rng, false);
  auto res = knn_per_bin(qs, pts, 5);
  for (std::size_t q = 0; q < qs.size(); ++q)
    for (int j = 1; j < 5; ++j) CHECK(res.distances[q * 5 + j - 1] <= res.distances[q * 5 + j]);
  CHECK_THROWS_AS(knn_per_bin(qs, pts, 0), std::invalid_argument);
  CHECK_THROWS_AS(knn_per_bin(qs, pts, 101), std::invalid_argument);
  CHECK_THROWS_AS(knn_per_bin(qs, pts, 3, 0), std::invalid_argument);
}

TEST_CASE("KNN scratch memory is bounded by the tile size") {
  std::mt19937_64 rng(3);
  auto pts = random_points(3000, rng, false);
  auto qs = random_points(500, rng, false);
  CountingResource small, large;
  auto a = knn_per_bin(qs, pts, 8, 4, &small);
  auto b = knn_per_bin(qs, pts, 8, 64, &large);
  CHECK(a.indices == b.indices);
  CHECK(small.peak <= 4 * pts.size() * 16);
  CHECK(large.peak <= 64 * pts.size() * 16);
  CHECK(small.peak * 8 < large.peak);
  CHECK(small.current == 0);
}

TEST_CASE("displacement volume matches the per-voxel oracle") {
  for (auto kind : {BasisKind::Polynomial, BasisKind::Bezier}) {
    auto f = random_field(24, 20, {kind, 3}, 17);
    for (int k : {1, 4, 30}) {
      for (int vstride : {0, 3}) {
        auto v = build_displacement_volume(f, 0.3, {k, 7}, 5, vstride);
        CHECK(v.cells.stride == (vstride ? vstride : 4));
        std::vector<Vec2> cell_centers;
        for (std::size_t c = 0; c < v.cell_count(); ++c) cell_centers.push_back(v.cells.center(c));
        for (int b = 0; b < 5; ++b) {
          CHECK(v.bin_centers[b] == doctest::Approx((b + 0.5) / 5));
          std::vector<Vec2> pos;
          for (std::size_t n = 0; n < f.anchor_count(); ++n) pos.push_back(eval_trajectory(f, n, v.bin_centers[b]));
          for (std::size_t c = 0; c < v.cell_count(); ++c) {
            auto nb = v.neighbors(v.voxel(b, c));
            auto expect = brute_knn(cell_centers[c], pos, k);
            REQUIRE(std::equal(nb.begin(), nb.end(), expect.begin(), expect.end()));
            Vec2 o = voxel_oracle(f, v, b, c);
            Vec2 d = v.disp[v.voxel(b, c)];
            CHECK(d.x == doctest::Approx(o.x).epsilon(1e-12).scale(1.0));
            CHECK(d.y == doctest::Approx(o.y).epsilon(1e-12).scale(1.0));
          }
        }
      }
    }
  }
}

TEST_CASE("zero field gives a zero volume and zero delta field") {
  TrajectoryField f(16, 16, {BasisKind::Bezier, 4});
  auto v = build_displacement_volume(f, 0.8, {8, 64}, 6);
  for (auto d : v.disp) CHECK(d == Vec2{});
  auto delta = build_consecutive_delta_field(f, v);
  CHECK(delta.n_pairs == 5);
  for (auto d : delta.delta) CHECK(d == Vec2{});
  auto single = build_displacement_volume(f, 0.8, {8, 64}, 1);
  CHECK(build_consecutive_delta_field(f, single).n_pairs == 0);
}

TEST_CASE("delta field uses the earlier bin's neighbor sets") {
  auto f = random_field(20, 12, {BasisKind::Bezier, 3}, 5);
  auto v = build_displacement_volume(f, 0.5, {6, 64}, 4);
  auto d = build_consecutive_delta_field(f, v);
  for (int b = 0; b < d.n_pairs; ++b) {
    for (std::size_t c = 0; c < v.cell_count(); ++c) {
      Vec2 sum;
      for (auto n : v.neighbors(v.voxel(b, c)))
        sum += eval_trajectory(f, n, v.bin_centers[b + 1]) - eval_trajectory(f, n, v.bin_centers[b]);
      Vec2 o = sum * (1.0 / 6);
      CHECK(d.delta[b * v.cell_count() + c].x == doctest::Approx(o.x).scale(1.0));
      CHECK(d.delta[b * v.cell_count() + c].y == doctest::Approx(o.y).scale(1.0));
    }
  }
}

TEST_CASE("backward passes are the adjoints of the forward maps") {
  // With neighbor sets fixed both maps are linear in the coefficients, so
  // <g, J u> must equal <J^T g, u> for any g and u.
  auto f = random_field(20, 16, {BasisKind::Bezier, 3}, 6);
  auto v = build_displacement_volume(f, 0.4, {5, 64}, 4);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  TrajectoryField u(20, 16, f.basis());
  for (double& s : u.scalars()) s = n(rng);

  std::vector<Vec2> g_disp(v.disp.size());
  for (auto& g : g_disp) g = {n(rng), n(rng)};
  double lhs = 0.0;
  for (int b = 0; b < v.n_bins; ++b)
    for (std::size_t c = 0; c < v.cell_count(); ++c) {
      Vec2 ju = voxel_oracle(u, v, b, c);
      lhs += g_disp[v.voxel(b, c)].x * ju.x + g_disp[v.voxel(b, c)].y * ju.y;
    }
  std::vector<Vec2> grad(f.coeffs().size());
  displacement_volume_backward(f, v, g_disp, grad);
  double rhs = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) rhs += grad[i].x * u.coeffs()[i].x + grad[i].y * u.coeffs()[i].y;
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));

  auto du = build_consecutive_delta_field(u, v);
  std::vector<Vec2> g_delta(du.delta.size());
  for (auto& g : g_delta) g = {n(rng), n(rng)};
  lhs = 0.0;
  for (std::size_t i = 0; i < g_delta.size(); ++i) lhs += g_delta[i].x * du.delta[i].x + g_delta[i].y * du.delta[i].y;
  std::fill(grad.begin(), grad.end(), Vec2{});
  delta_field_backward(f, v, g_delta, grad);
  rhs = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) rhs += grad[i].x * u.coeffs()[i].x + grad[i].y * u.coeffs()[i].y;
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("volume is independent of the thread count") {
  auto f = random_field(40, 36, {BasisKind::Bezier, 5}, 12);
  const int saved = thread_count();
  set_thread_count(1);
  auto a = build_displacement_volume(f, 0.7, {16, 5}, 9);
  set_thread_count(4);
  auto b = build_displacement_volume(f, 0.7, {16, 5}, 9);
  set_thread_count(saved);
  CHECK(a.knn_indices == b.knn_indices);
  CHECK(std::memcmp(a.disp.data(), b.disp.data(), a.disp.size() * sizeof(Vec2)) == 0);
}

TEST_CASE("predicted flow averages the nearest starting trajectories") {
  auto f = random_field(13, 11, {BasisKind::Polynomial, 2}, 21);
  std::vector<Vec2> anchors;
  for (std::size_t n = 0; n < f.anchor_count(); ++n) anchors.push_back(f.anchor(n));
  auto map = predict_flow_map(f, 0.6, 3);
  CHECK(map.t == 0.6);
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 13; ++x) {
      Vec2 sum;
      for (auto n : brute_knn({double(x), double(y)}, anchors, 3)) sum += eval_trajectory(f, n, 0.6) - f.anchor(n);
      CHECK(map.at(x, y).x == doctest::Approx(sum.x / 3).scale(1.0));
      CHECK(map.at(x, y).y == doctest::Approx(sum.y / 3).scale(1.0));
    }
}

TEST_CASE("FLO1 round trip keeps NaN pixels invalid") {
  FlowMap m(3, 2, 0.25);
  m.at(0, 0) = {1.5, -2.0};
  m.at(2, 1) = FlowMap::invalid();
  auto back = decode_flo1(encode_flo1(m));
  CHECK(back.width == 3);
  CHECK(back.t == 0.25);
  CHECK(back.at(0, 0) == Vec2{1.5, -2.0});
  CHECK_FALSE(back.valid(5));
  CHECK(back.mask() == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0});
  auto bytes = encode_flo1(m);
  bytes.resize(bytes.size() - 1);
  CHECK_THROWS_AS(decode_flo1(bytes), ParseError);
}
