#pragma once

// Stochastic gradient oracles with counter-based randomness and
// oracle-query accounting (one query = every honest node drawing once).

#include "byzopt/problems.hpp"

#include <cstdint>
#include <mutex>
#include <vector>

namespace byzopt {

enum class NoiseKind { gaussian_iid, sample_subsampling, bernoulli_chain };

struct OracleSpec {
  double sigma_sq = 0.0;  // gaussian_iid: total variance; bernoulli_chain: sets p; subsampling: informational
  NoiseKind noise_kind = NoiseKind::gaussian_iid;
  std::uint64_t seed = 0;
  double chain_p = 1.0;   // success probability for bernoulli_chain
};

/// Oracle query tally. `record` is thread-safe; rounds are appended in call order.
class QueryLedger {
 public:
  void record(std::int64_t queries);
  std::int64_t count() const { return count_; }
  const std::vector<std::int64_t>& per_round() const { return per_round_; }

 private:
  mutable std::mutex mu_;
  std::int64_t count_ = 0;
  std::vector<std::int64_t> per_round_;
};

/// Draw streams are keyed by (seed, node, round, slot); `stream` separates
/// independent users of one seed (e.g. restart calls).
class Oracle {
 public:
  explicit Oracle(OracleSpec spec) : spec_(spec) {}

  const OracleSpec& spec() const { return spec_; }
  /// Same noise model with a derived seed.
  Oracle fork(std::uint64_t tag) const;

  Vector sample_gradient(const Problem& problem, int node, const Vector& x, std::uint32_t round,
                         std::uint32_t slot) const;

  /// Average of m draws with slots [0, m). Does not touch any ledger.
  Vector minibatch_gradient(const Problem& problem, int node, const Vector& x, int m, std::uint32_t round) const;

  /// Mini-batch gradients of all honest nodes (honest-set order), computed in
  /// parallel; records m queries in the ledger.
  std::vector<Vector> honest_minibatch(const Problem& problem, const Vector& x, int m, std::uint32_t round,
                                       QueryLedger* ledger) const;

  /// Label-flip gradients for the Byzantine ids (problem.byzantine() order).
  std::vector<Vector> poisoned_minibatch(const Problem& problem, const Vector& x, int m, std::uint32_t round) const;

 private:
  Vector draw(const NodeLoss& loss, int node, const Vector& x, int m, std::uint32_t round) const;

  OracleSpec spec_;
};

}  // namespace byzopt
