#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "unisp/corpus.hpp"
#include "unisp/domain_spec.hpp"

namespace unisp {

/// Samples a knowledge base of min..max entities. Every number property has
/// a unique global maximum and minimum.
KnowledgeBase sample_kb(const DomainSpec& spec, std::mt19937_64& rng);

/// Deterministic in (specs, per_domain_count, seed). Per domain the instances
/// are split 80/10/10 into (train pool, dev, test) and the pool 80/20 into
/// (train, valid). Instances with empty denotations are redrawn.
Corpus generate_corpus(const std::vector<DomainSpec>& specs, int per_domain_count, std::uint64_t seed);

}  // namespace unisp
