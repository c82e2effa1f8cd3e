#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/probe_plan.hpp"

using namespace tactile_cal;
using namespace tactile_cal::plan;

namespace {

// Brute-force count: every multiple of the spacing inside [0, extent].
std::size_t enumerate_axis(double extent, double spacing) {
  std::size_t n = 0;
  for (int i = 0; i < 100000; ++i) {
    if (i * spacing <= extent + 1e-9) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("grid counts match brute-force enumeration", "[probe_plan]") {
  struct Case {
    double w, h, s;
    std::size_t expected;
  };
  for (const auto& c : {Case{16.0, 18.0, 0.5, 1221}, Case{15.0, 19.0, 0.5, 1209}, Case{1.0, 1.0, 0.5, 9}}) {
    const auto p = generate_grid({c.w, c.h}, c.s, 0.8, 30);
    const std::size_t brute = enumerate_axis(c.w, c.s) * enumerate_axis(c.h, c.s);
    CHECK(brute == c.expected);
    CHECK(p.size() == c.expected);
    CHECK_NOTHROW(validate(p));
  }
}

TEST_CASE("grid is y-major then x, with inclusive endpoints", "[probe_plan]") {
  const auto p = generate_grid({1.0, 1.0}, 0.5, 0.8, 30);
  REQUIRE(p.size() == 9);
  CHECK(p.points[0] == ProbePoint{0.0, 0.0, 0.8});
  CHECK(p.points[1] == ProbePoint{0.5, 0.0, 0.8});
  CHECK(p.points[3] == ProbePoint{0.0, 0.5, 0.8});
  CHECK(p.points[8] == ProbePoint{1.0, 1.0, 0.8});
}

TEST_CASE("grid rejects non-positive spacing or extent", "[probe_plan]") {
  CHECK_THROWS_AS(generate_grid({1.0, 1.0}, 0.0, 0.8, 30), InvalidArgument);
  CHECK_THROWS_AS(generate_grid({1.0, 1.0}, -0.5, 0.8, 30), InvalidArgument);
  CHECK_THROWS_AS(generate_grid({0.0, 1.0}, 0.5, 0.8, 30), InvalidArgument);
  CHECK_THROWS_AS(generate_grid({1.0, -1.0}, 0.5, 0.8, 30), InvalidArgument);
}

TEST_CASE("split sizes follow the ablation fractions", "[probe_plan]") {
  const auto p = generate_grid({16.0, 18.0}, 0.5, 1.0, 30);
  CHECK(split_plan(p, 0.01, 1).train_indices.size() == 12);
  CHECK(split_plan(p, 0.05, 1).train_indices.size() == 61);
  const auto s80 = split_plan(p, 0.80, 1);
  CHECK(s80.val_indices.size() == 244);
  CHECK(s80.train_indices.size() + s80.val_indices.size() == 1221);
}

TEST_CASE("split of 100 points at P=0.8 is an exact disjoint partition", "[probe_plan]") {
  const auto p = generate_grid({4.5, 4.5}, 0.5, 1.0, 1);
  REQUIRE(p.size() == 100);
  const auto s = split_plan(p, 0.80, 7);
  CHECK(s.train_indices.size() == 80);
  CHECK(s.val_indices.size() == 20);
  std::set<std::size_t> all(s.train_indices.begin(), s.train_indices.end());
  all.insert(s.val_indices.begin(), s.val_indices.end());
  CHECK(all.size() == 100);
}

TEST_CASE("split is deterministic and shares the holdout across P and seeds", "[probe_plan]") {
  const auto p = generate_grid({16.0, 18.0}, 0.5, 1.0, 30);
  for (double P : {0.8, 0.4, 0.2, 0.1, 0.05, 0.01}) {
    const auto a = split_plan(p, P, 99);
    const auto b = split_plan(p, P, 99);
    CHECK(a == b);
    const auto c = split_plan(p, P, 100);
    CHECK(c.val_indices == a.val_indices);
    std::set<std::size_t> val(a.val_indices.begin(), a.val_indices.end());
    for (auto t : a.train_indices) CHECK_FALSE(val.contains(t));
  }
  CHECK(split_plan(p, 0.2, 1).train_indices != split_plan(p, 0.2, 2).train_indices);
}

TEST_CASE("split rejects fractions that would overlap validation", "[probe_plan]") {
  const auto p = generate_grid({1.0, 1.0}, 0.5, 1.0, 1);
  CHECK_THROWS_AS(split_plan(p, 0.81, 1), InvalidArgument);
  CHECK_THROWS_AS(split_plan(p, 0.0, 1), InvalidArgument);
}

TEST_CASE("plan CSV parses the canonical example", "[probe_plan][csv]") {
  const auto p = read_plan_csv("x_mm,y_mm,depth_mm\n0.5,1.0,0.8");
  REQUIRE(p.size() == 1);
  CHECK(p.points[0] == ProbePoint{0.5, 1.0, 0.8});
}

TEST_CASE("plan CSV errors carry line numbers", "[probe_plan][csv]") {
  try {
    (void)read_plan_csv("x_mm,y_mm,depth_mm\n0.5,abc,0.8\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(read_plan_csv("x_mm,y_mm,depth_mm\n0.5,1.0,-0.8\n"), ValidationError);
  CHECK_THROWS_AS(read_plan_csv("x_mm,y_mm,depth_mm\n0.5,1.0,0.8,9\n"), ParseError);
  CHECK_THROWS_AS(read_plan_csv("x,y,z\n0.5,1.0,0.8\n"), ParseError);
  CHECK_THROWS_AS(read_plan_csv("x_mm,y_mm,depth_mm\n1,1,1\n1,1,1\n"), ValidationError);
  // whitespace is tolerated
  CHECK(read_plan_csv("x_mm,y_mm,depth_mm\n 0.5 , 1.0 ,0.8 \n").points[0] == ProbePoint{0.5, 1.0, 0.8});
}

TEST_CASE("plan CSV round trip of a generated grid", "[probe_plan][csv]") {
  const auto p = generate_grid({1.0, 1.0}, 0.5, 0.8, 30);
  const auto q = read_plan_csv(write_plan_csv(p), 30);
  CHECK(q.points == p.points);
  CHECK(q.frames_per_indent == p.frames_per_indent);
}

TEST_CASE("plan CSV round trip over random plans", "[probe_plan][csv][property]") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    ProbePlan p;
    const auto n = 1 + rng.index(50);
    for (std::size_t i = 0; i < n; ++i) {
      auto q6 = [&](double lo, double hi) { return std::round(rng.uniform(lo, hi) * 1e6) / 1e6; };
      p.points.push_back({q6(0, 300), q6(0, 300), q6(0, 2)});
    }
    const auto q = read_plan_csv(write_plan_csv(p));
    REQUIRE(q.points == p.points);
  }
}

TEST_CASE("split CSV round trip", "[probe_plan][csv]") {
  const auto p = generate_grid({4.5, 4.5}, 0.5, 1.0, 1);
  const auto s = split_plan(p, 0.4, 3);
  const auto r = read_split_csv(write_split_csv(s), p.size());
  CHECK(r.train_indices == s.train_indices);
  CHECK(r.val_indices == s.val_indices);
  CHECK_THROWS_AS(read_split_csv("index,role\n0,test\n", 10), ParseError);
  CHECK_THROWS_AS(read_split_csv("index,role\n11,val\n", 10), ValidationError);
}
