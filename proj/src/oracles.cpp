#include "byzopt/oracles.hpp"

#include "byzopt/kernels.hpp"
#include "byzopt/rng.hpp"

#include <cmath>

namespace byzopt {

void QueryLedger::record(std::int64_t queries) {
  std::lock_guard lock(mu_);
  count_ += queries;
  per_round_.push_back(queries);
}

Oracle Oracle::fork(std::uint64_t tag) const {
  OracleSpec s = spec_;
  s.seed = derive_seed(spec_.seed, tag);
  return Oracle(s);
}

Vector Oracle::sample_gradient(const Problem& problem, int node, const Vector& x, std::uint32_t round,
                               std::uint32_t slot) const {
  require_same_dim(x, problem.d, "sample_gradient");
  const NodeLoss& loss = problem.loss(node);
  // A single draw is the m = 1 batch of the given slot.
  switch (spec_.noise_kind) {
    case NoiseKind::gaussian_iid: {
      Vector g = loss.gradient(x);
      if (spec_.sigma_sq == 0.0) return g;
      KeyedStream rng(spec_.seed, static_cast<std::uint32_t>(node), round, slot);
      const double sd = std::sqrt(spec_.sigma_sq / static_cast<double>(x.size()));
      for (Index j = 0; j < g.size(); ++j) g[j] += sd * rng.normal();
      return g;
    }
    case NoiseKind::sample_subsampling: {
      KeyedStream rng(spec_.seed, static_cast<std::uint32_t>(node), round, slot);
      const Index pick = static_cast<Index>(rng.below(static_cast<std::uint64_t>(loss.sample_count())));
      return loss.batch_gradient(x, std::span<const Index>(&pick, 1));
    }
    case NoiseKind::bernoulli_chain: {
      KeyedStream rng(spec_.seed, static_cast<std::uint32_t>(node), round, slot);
      return loss.masked_gradient(x, rng.bernoulli(spec_.chain_p), spec_.chain_p);
    }
  }
  throw InvalidArgument("unknown noise kind");
}

Vector Oracle::draw(const NodeLoss& loss, int node, const Vector& x, int m, std::uint32_t round) const {
  switch (spec_.noise_kind) {
    case NoiseKind::gaussian_iid: {
      Vector g = loss.gradient(x);
      if (spec_.sigma_sq == 0.0) return g;
      const double sd = std::sqrt(spec_.sigma_sq / static_cast<double>(x.size()));
      Vector noise = Vector::Zero(x.size());
      for (int l = 0; l < m; ++l) {
        KeyedStream rng(spec_.seed, static_cast<std::uint32_t>(node), round, static_cast<std::uint32_t>(l));
        for (Index j = 0; j < noise.size(); ++j) noise[j] += sd * rng.normal();
      }
      return g + noise / static_cast<double>(m);
    }
    case NoiseKind::sample_subsampling: {
      std::vector<Index> picks(static_cast<std::size_t>(m));
      const auto count = static_cast<std::uint64_t>(loss.sample_count());
      require(count > 0, "sample_subsampling oracle needs a data-backed loss");
      for (int l = 0; l < m; ++l) {
        KeyedStream rng(spec_.seed, static_cast<std::uint32_t>(node), round, static_cast<std::uint32_t>(l));
        picks[static_cast<std::size_t>(l)] = static_cast<Index>(rng.below(count));
      }
      return loss.batch_gradient(x, picks);
    }
    case NoiseKind::bernoulli_chain: {
      Vector acc = Vector::Zero(x.size());
      for (int l = 0; l < m; ++l) {
        KeyedStream rng(spec_.seed, static_cast<std::uint32_t>(node), round, static_cast<std::uint32_t>(l));
        acc += loss.masked_gradient(x, rng.bernoulli(spec_.chain_p), spec_.chain_p);
      }
      return acc / static_cast<double>(m);
    }
  }
  throw InvalidArgument("unknown noise kind");
}

Vector Oracle::minibatch_gradient(const Problem& problem, int node, const Vector& x, int m,
                                  std::uint32_t round) const {
  require(m >= 1, "minibatch_gradient: batch size must be at least 1");
  require_same_dim(x, problem.d, "minibatch_gradient");
  return draw(problem.loss(node), node, x, m, round);
}

std::vector<Vector> Oracle::honest_minibatch(const Problem& problem, const Vector& x, int m, std::uint32_t round,
                                             QueryLedger* ledger) const {
  require(m >= 1, "minibatch_gradient: batch size must be at least 1");
  require_same_dim(x, problem.d, "minibatch_gradient");
  std::vector<Vector> out(problem.honest.size());
  kernels::for_each_index(static_cast<Index>(out.size()), [&](Index k) {
    const int node = problem.honest[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(k)] = draw(problem.loss(node), node, x, m, round);
  });
  if (ledger) ledger->record(m);
  return out;
}

std::vector<Vector> Oracle::poisoned_minibatch(const Problem& problem, const Vector& x, int m,
                                               std::uint32_t round) const {
  require(m >= 1, "poisoned_minibatch: batch size must be at least 1");
  const auto byz = problem.byzantine();
  require(!problem.poisoned.empty(), "label_flip needs a problem with label-flipped losses");
  std::vector<Vector> out(byz.size());
  kernels::for_each_index(static_cast<Index>(out.size()), [&](Index k) {
    const int node = byz[static_cast<std::size_t>(k)];
    const auto& loss = problem.poisoned[static_cast<std::size_t>(node)];
    require(loss != nullptr, "missing label-flipped loss for Byzantine node");
    out[static_cast<std::size_t>(k)] = draw(*loss, node, x, m, round);
  });
  return out;
}

}  // namespace byzopt
