#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "kinegraph/bone_select.hpp"
#include "kinegraph/error.hpp"
#include "test_support.hpp"

using namespace kinegraph;

namespace {

CandidateScores random_scores(std::mt19937_64& rng, std::size_t joints) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CandidateScores s{Matrix(joints, joints), 1};
  for (std::size_t i = 0; i < joints; ++i)
    for (std::size_t j = i + 1; j < joints; ++j) s.score(i, j) = s.score(j, i) = u(rng);
  return s;
}

void check_invariants(const BoneMatrix& b) {
  CHECK(b.complete());
  CHECK(b.source_of(b.base()) == BoneMatrix::kNoSource);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const Bone& bone : b.bones()) {
    CHECK(bone.source != bone.target);
    CHECK(pairs.insert(std::minmax(bone.source, bone.target)).second);
  }
  CHECK(pairs.size() == b.joints() - 1);
}

}  // namespace

TEST_CASE("bone_std examples") {
  SkeletonSequence s = SkeletonSequence::zeros(4, 2, 3);
  for (std::size_t t = 0; t < 4; ++t) {
    s.at(t, 0, 1) = 0.3;
    s.at(t, 1, 0) = static_cast<double>(t);
    s.at(t, 1, 1) = 0.3;
  }
  CHECK(bone_std(s, 0, 1) == doctest::Approx(std::sqrt(1.25) / 3.0).epsilon(1e-14));
  CHECK(bone_std(s, 0, 1) == doctest::Approx(0.37268).epsilon(1e-5));
  CHECK(bone_std(s, 1, 0) == bone_std(s, 0, 1));

  SkeletonSequence constant = SkeletonSequence::zeros(5, 2, 3);
  for (std::size_t t = 0; t < 5; ++t) constant.at(t, 1, 2) = 0.7;
  CHECK(bone_std(constant, 0, 1) == 0.0);

  SkeletonSequence single = SkeletonSequence::zeros(1, 2, 3);
  single.at(0, 1, 0) = 3.0;
  CHECK(bone_std(single, 0, 1) == 0.0);

  try {
    bone_std(s, 1, 1);
    FAIL("expected SameJoint");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SameJoint);
  }
}

TEST_CASE("dataset_scores averages and weights") {
  std::mt19937_64 rng(8);
  const auto a = testing::random_sequence(rng, 6, 4);
  const auto one = dataset_scores({a});
  CHECK(one.score == bone_std_matrix(a));
  CHECK(one.n_samples == 1);

  // Two samples whose (0,1) bone stds are 0.2 and 0.4.
  auto ramp = [](double step) {
    SkeletonSequence s = SkeletonSequence::zeros(2, 2, 1);
    s.at(1, 1, 0) = step;
    return s;
  };
  const auto pair = dataset_scores({ramp(0.4), ramp(0.8)});
  CHECK(pair.score(0, 1) == doctest::Approx(0.3).epsilon(1e-15));

  GprGraph uniform{Matrix(4, 4, 2.5)};
  for (std::size_t i = 0; i < 4; ++i) uniform.dist(i, i) = 0.0;
  const auto weighted = dataset_scores({a}, uniform);
  CHECK(max_abs_diff(weighted.score, one.score) == 0.0);
  CHECK(select_min_assignment(weighted, 0) == select_min_assignment(one, 0));

  GprGraph scaled{Matrix{{0, 1, 2, 4}, {1, 0, 1, 1}, {2, 1, 0, 1}, {4, 1, 1, 0}}};
  const auto w2 = dataset_scores({a}, scaled);
  CHECK(w2.score(0, 3) == one.score(0, 3));
  CHECK(w2.score(0, 1) == doctest::Approx(one.score(0, 1) * 0.25));
}

TEST_CASE("dataset_scores is independent of thread count") {
  std::mt19937_64 rng(10);
  std::vector<SkeletonSequence> samples;
  for (int i = 0; i < 9; ++i) samples.push_back(testing::random_sequence(rng, 8, 6));
  CHECK(dataset_scores(samples, std::nullopt, 1).score == dataset_scores(samples, std::nullopt, 4).score);
}

TEST_CASE("dataset_scores errors") {
  CHECK_THROWS_AS(dataset_scores({}), Error);
  std::mt19937_64 rng(1);
  try {
    dataset_scores({testing::random_sequence(rng, 3, 4), testing::random_sequence(rng, 3, 5)});
    FAIL("expected InconsistentJointCount");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InconsistentJointCount);
  }
}

TEST_CASE("V=3 selection example") {
  CandidateScores s{Matrix{{0, 1.0, 2.0}, {1.0, 0, 0.5}, {2.0, 0.5, 0}}, 1};
  const auto sel = select_min_assignment(s, 0);
  CHECK(sel.source_of(1) == 0);
  CHECK(sel.source_of(2) == 1);
  CHECK(assignment_cost(s, sel) == 1.5);
  CHECK(assignment_cost(s, brute_force_select(s, 0)) == 1.5);

  // Hand enumeration of the feasible assignments (pair for joint 1, pair for joint 2).
  const double feasible[] = {1.0 + 2.0, 1.0 + 0.5, 0.5 + 2.0};
  CHECK(*std::min_element(std::begin(feasible), std::end(feasible)) == 1.5);
}

TEST_CASE("V=2 selection is forced") {
  CandidateScores s{Matrix{{0, 0.3}, {0.3, 0}}, 1};
  const auto sel = select_min_assignment(s, 0);
  CHECK(sel.source_of(1) == 0);
}

TEST_CASE("ties break lexicographically by (target, source)") {
  CandidateScores s{Matrix(5, 5, 1.0), 1};
  const auto sel = select_min_assignment(s, 0);
  check_invariants(sel);
  CHECK(sel == brute_force_select(s, 0));
  // Joint 1 <- 0, joint 2 <- 0, ... all sources are the base.
  for (std::size_t t = 1; t < 5; ++t) CHECK(sel.source_of(t) == 0);

  CandidateScores s2{Matrix(5, 5, 1.0), 1};
  const auto sel2 = select_min_assignment(s2, 2);
  CHECK(sel2 == brute_force_select(s2, 2));
  CHECK(sel2.source_of(0) == 1);
}

TEST_CASE("solver matches brute force on random instances") {
  std::mt19937_64 rng(2024);
  for (std::size_t joints : {3u, 4u, 5u, 6u}) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto s = random_scores(rng, joints);
      const std::size_t base = static_cast<std::size_t>(trial) % joints;
      const auto fast = select_min_assignment(s, base);
      const auto slow = brute_force_select(s, base);
      check_invariants(fast);
      CHECK(assignment_cost(s, fast) == assignment_cost(s, slow));
      CHECK(fast == slow);
    }
  }
}

TEST_CASE("argmin is invariant to positive score scaling") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_scores(rng, 7);
    const auto sel = select_min_assignment(s, 0);
    CandidateScores scaled{s.score * 3.5, 1};
    CHECK(select_min_assignment(scaled, 0) == sel);
  }
}

TEST_CASE("max assignment is at least the min assignment") {
  std::mt19937_64 rng(5);
  const auto s = random_scores(rng, 6);
  const auto lo = select_min_assignment(s, 0);
  const auto hi = select_max_assignment(s, 0);
  check_invariants(hi);
  CHECK(assignment_cost(s, hi) >= assignment_cost(s, lo));
}

TEST_CASE("brute force guard") {
  CandidateScores s{Matrix(8, 8, 1.0), 1};
  try {
    brute_force_select(s, 0);
    FAIL("expected TooLarge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooLarge);
  }
}

TEST_CASE("25-joint selection satisfies invariants and beats the physical skeleton") {
  std::mt19937_64 rng(25);
  std::vector<SkeletonSequence> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(testing::random_sequence(rng, 16, 25));
  const auto scores = dataset_scores(samples);
  const auto sel = select_min_assignment(scores, 0);
  check_invariants(sel);
  const auto physical = ntu_physical_bones();
  const auto physical_best = select_min_assignment(scores, physical.base());
  CHECK(assignment_cost(scores, physical_best) <= assignment_cost(scores, physical) + 1e-12);
}
