#include "kinegraph/bone_select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "kinegraph/error.hpp"

namespace kinegraph {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Min-cost assignment of every row to a distinct column (rows <= cols) by
// successive shortest augmenting paths with Johnson potentials (dense
// Dijkstra per augmentation). Infinite cost marks a missing edge. Returns the
// column per row, or nullopt when no perfect row matching exists.
std::optional<std::vector<std::size_t>> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return std::vector<std::size_t>{};
  const std::size_t m = cost.front().size();
  if (m < n) return std::nullopt;

  // 1-based; row 0 / column 0 are the virtual source.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double c = cost[i0 - 1][j - 1];
        if (c != kInf) {
          const double cur = c - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 == 0) return std::nullopt;
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (match[j] != 0) col_of_row[match[j] - 1] = j - 1;
  return col_of_row;
}

struct PairIndex {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // i < j, lexicographic
  std::vector<std::vector<std::size_t>> id;                // id[i][j] == id[j][i]

  explicit PairIndex(std::size_t joints) : id(joints, std::vector<std::size_t>(joints, 0)) {
    for (std::size_t i = 0; i < joints; ++i)
      for (std::size_t j = i + 1; j < joints; ++j) {
        id[i][j] = id[j][i] = pairs.size();
        pairs.emplace_back(i, j);
      }
  }
};

void check_scores(const CandidateScores& scores, std::size_t base) {
  scores.validate();
  if (base >= scores.joints()) throw Error(ErrorKind::InvalidArgument, "base joint out of range");
}

BoneMatrix select_assignment(const CandidateScores& scores, std::size_t base, bool maximize) {
  check_scores(scores, base);
  const std::size_t joints = scores.joints();
  const PairIndex index(joints);

  std::vector<std::size_t> targets;
  for (std::size_t t = 0; t < joints; ++t)
    if (t != base) targets.push_back(t);

  double top = 0.0;
  if (maximize)
    for (double s : scores.score.data()) top = std::max(top, s);

  std::vector<std::vector<double>> cost(targets.size(), std::vector<double>(index.pairs.size(), kInf));
  for (std::size_t r = 0; r < targets.size(); ++r)
    for (std::size_t other = 0; other < joints; ++other) {
      if (other == targets[r]) continue;
      const double s = scores.score(other, targets[r]);
      cost[r][index.id[other][targets[r]]] = maximize ? top - s : s;
    }

  auto to_bones = [&](const std::vector<std::size_t>& cols) {
    std::vector<long> source_of(joints, BoneMatrix::kNoSource);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const auto [a, b] = index.pairs[cols[r]];
      source_of[targets[r]] = static_cast<long>(a == targets[r] ? b : a);
    }
    return BoneMatrix(joints, base, std::move(source_of));
  };
  auto objective = [&](const BoneMatrix& bm) {
    double total = 0.0;
    for (const Bone& b : bm.bones()) {
      const double s = scores.score(b.source, b.target);
      total += maximize ? top - s : s;
    }
    return total;
  };

  auto solved = solve_assignment(cost);
  if (!solved) throw Error(ErrorKind::DomainError, "no feasible bone assignment");
  const double best = objective(to_bones(*solved));
  const double tol = 1e-12 * std::max(1.0, std::abs(best));

  // Lexicographic refinement: pin each target to its smallest source that
  // still admits an optimal completion.
  std::vector<std::size_t> current = *solved;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const std::size_t t = targets[r];
    for (std::size_t src = 0; src < joints; ++src) {
      if (src == t) continue;
      const std::size_t col = index.id[src][t];
      if (cost[r][col] == kInf) continue;
      if (current[r] == col) break;
      auto pinned = cost;
      for (std::size_t c = 0; c < pinned[r].size(); ++c)
        if (c != col) pinned[r][c] = kInf;
      for (std::size_t rr = 0; rr < pinned.size(); ++rr)
        if (rr != r) pinned[rr][col] = kInf;
      auto trial = solve_assignment(pinned);
      if (trial && objective(to_bones(*trial)) <= best + tol) {
        current = *trial;
        break;
      }
    }
    // Freeze row r for the remaining refinement steps.
    const std::size_t col = current[r];
    for (std::size_t c = 0; c < cost[r].size(); ++c)
      if (c != col) cost[r][c] = kInf;
    for (std::size_t rr = 0; rr < cost.size(); ++rr)
      if (rr != r) cost[rr][col] = kInf;
  }
  return to_bones(current);
}

}  // namespace

void CandidateScores::validate() const {
  if (!score.square() || score.rows() < 2) throw Error(ErrorKind::DimensionMismatch, "scores must be V x V, V >= 2");
  if (!all_finite(score)) throw Error(ErrorKind::InvalidArgument, "scores must be finite");
  if (!is_symmetric(score, 1e-12)) throw Error(ErrorKind::InvalidArgument, "scores must be symmetric");
}

double bone_std(const SkeletonSequence& seq, std::size_t i, std::size_t j) {
  if (i == j) throw Error(ErrorKind::SameJoint, "joint " + std::to_string(i));
  if (i >= seq.joints || j >= seq.joints) throw Error(ErrorKind::InvalidArgument, "joint out of range");
  if (seq.frames < 1) throw Error(ErrorKind::InvalidArgument, "empty sequence");
  const auto n = static_cast<double>(seq.frames);
  double sum_sigma = 0.0;
  for (std::size_t d = 0; d < seq.dims; ++d) {
    double mean = 0.0;
    for (std::size_t t = 0; t < seq.frames; ++t) mean += seq.at(t, j, d) - seq.at(t, i, d);
    mean /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < seq.frames; ++t) {
      const double e = seq.at(t, j, d) - seq.at(t, i, d) - mean;
      var += e * e;
    }
    sum_sigma += std::sqrt(var / n);
  }
  return sum_sigma / static_cast<double>(seq.dims);
}

Matrix bone_std_matrix(const SkeletonSequence& seq) {
  Matrix out(seq.joints, seq.joints);
  for (std::size_t i = 0; i < seq.joints; ++i)
    for (std::size_t j = i + 1; j < seq.joints; ++j) out(i, j) = out(j, i) = bone_std(seq, i, j);
  return out;
}

CandidateScores dataset_scores(const std::vector<SkeletonSequence>& samples, const std::optional<GprGraph>& gpr,
                               unsigned threads) {
  if (samples.empty()) throw Error(ErrorKind::EmptySampleSet, "no samples");
  const std::size_t joints = samples.front().joints;
  for (std::size_t s = 0; s < samples.size(); ++s)
    if (samples[s].joints != joints)
      throw Error(ErrorKind::InconsistentJointCount, "sample " + std::to_string(s) + " has " +
                                                         std::to_string(samples[s].joints) + " joints, expected " +
                                                         std::to_string(joints));
  if (gpr && gpr->joints() != joints)
    throw Error(ErrorKind::InconsistentJointCount, "GPR graph covers " + std::to_string(gpr->joints()) + " joints");

  std::vector<Matrix> per_sample(samples.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(samples.size())));
  if (workers == 1) {
    for (std::size_t s = 0; s < samples.size(); ++s) per_sample[s] = bone_std_matrix(samples[s]);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < samples.size(); s += workers) per_sample[s] = bone_std_matrix(samples[s]);
      });
    for (auto& th : pool) th.join();
  }

  CandidateScores out{Matrix(joints, joints), samples.size()};
  for (const Matrix& m : per_sample) out.score += m;
  out.score *= 1.0 / static_cast<double>(samples.size());

  if (gpr) {
    const double top = max_abs(gpr->dist);
    if (top > 0.0)
      for (std::size_t i = 0; i < joints; ++i)
        for (std::size_t j = 0; j < joints; ++j) out.score(i, j) *= gpr->dist(i, j) / top;
  }
  return out;
}

double assignment_cost(const CandidateScores& scores, const BoneMatrix& bones) {
  if (bones.joints() != scores.joints()) throw Error(ErrorKind::DimensionMismatch, "bone matrix vs scores");
  double total = 0.0;
  for (const Bone& b : bones.bones()) total += scores.score(b.source, b.target);
  return total;
}

double mean_pair_score(const CandidateScores& scores) {
  const std::size_t n = scores.joints();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) total += scores.score(i, j);
  return total / static_cast<double>(n * (n - 1) / 2);
}

BoneMatrix select_min_assignment(const CandidateScores& scores, std::size_t base) {
  return select_assignment(scores, base, false);
}

BoneMatrix select_max_assignment(const CandidateScores& scores, std::size_t base) {
  return select_assignment(scores, base, true);
}

BoneMatrix brute_force_select(const CandidateScores& scores, std::size_t base) {
  check_scores(scores, base);
  const std::size_t joints = scores.joints();
  if (joints > 7) throw Error(ErrorKind::TooLarge, "brute force supports V <= 7, got " + std::to_string(joints));

  std::vector<std::size_t> targets;
  for (std::size_t t = 0; t < joints; ++t)
    if (t != base) targets.push_back(t);

  std::vector<long> current(joints, BoneMatrix::kNoSource), best_sources;
  std::vector<std::vector<char>> used(joints, std::vector<char>(joints, 0));
  double best = kInf;

  // Depth-first in lexicographic (target, source) order. The first pass finds
  // the optimum; the second keeps the first assignment within the same tie
  // tolerance the solver uses, so cycle reorientations resolve identically.
  double tol = -1.0;
  bool done = false;
  auto recurse = [&](auto&& self, std::size_t r, double partial) -> void {
    if (done) return;
    if (r == targets.size()) {
      if (tol < 0.0) {
        if (partial < best) best = partial;
      } else if (partial <= best + tol) {
        best_sources = current;
        done = true;
      }
      return;
    }
    const std::size_t t = targets[r];
    for (std::size_t src = 0; src < joints; ++src) {
      if (src == t || used[src][t]) continue;
      used[src][t] = used[t][src] = 1;
      current[t] = static_cast<long>(src);
      self(self, r + 1, partial + scores.score(src, t));
      current[t] = BoneMatrix::kNoSource;
      used[src][t] = used[t][src] = 0;
    }
  };
  recurse(recurse, 0, 0.0);
  tol = 1e-12 * std::max(1.0, std::abs(best));
  recurse(recurse, 0, 0.0);
  return BoneMatrix(joints, base, best_sources);
}

}  // namespace kinegraph
