#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "kinegraph/bone_matrix.hpp"
#include "kinegraph/matrix.hpp"
#include "kinegraph/prior_graphs.hpp"
#include "kinegraph/skeleton_io.hpp"

namespace kinegraph {

// Symmetric V x V score over unordered joint pairs; the diagonal is unused.
struct CandidateScores {
  Matrix score;
  std::size_t n_samples = 0;

  std::size_t joints() const noexcept { return score.rows(); }
  void validate() const;
};

// Mean over coordinates of the population standard deviation over time of
// x_j(t) - x_i(t).
double bone_std(const SkeletonSequence& seq, std::size_t i, std::size_t j);

// All pairs at once; entry (i, j) equals bone_std(seq, i, j).
Matrix bone_std_matrix(const SkeletonSequence& seq);

// Sample-mean of bone_std_matrix, optionally multiplied by dist / max(dist).
// Per-sample work is spread over `threads` workers; the reduction runs in
// input order so the result does not depend on the thread count.
CandidateScores dataset_scores(const std::vector<SkeletonSequence>& samples,
                               const std::optional<GprGraph>& gpr = std::nullopt, unsigned threads = 1);

// Sum of score(source, target) over the bones of `bones`, in target order.
double assignment_cost(const CandidateScores& scores, const BoneMatrix& bones);

// Mean score over all V(V-1)/2 unordered pairs.
double mean_pair_score(const CandidateScores& scores);

// Minimum-cost bone set: every non-base joint takes exactly one incident
// unordered pair as its incoming bone and no pair is taken twice.
//
// Solved as a min-cost bipartite matching (targets x unordered pairs) with
// successive shortest augmenting paths. A feasible matching always exists:
// target t can take the pair {base, t}, and these V-1 pairs are distinct.
//
// Totals within 1e-12 (relative, floor 1) of the optimum count as ties and
// resolve to the lexicographically smallest assignment, comparing the source
// of each target in increasing target order.
BoneMatrix select_min_assignment(const CandidateScores& scores, std::size_t base);

// Maximum-cost counterpart, for diagnostics.
BoneMatrix select_max_assignment(const CandidateScores& scores, std::size_t base);

// Exhaustive enumeration with the same tie-break. Throws TooLarge for V > 7.
BoneMatrix brute_force_select(const CandidateScores& scores, std::size_t base);

}  // namespace kinegraph
