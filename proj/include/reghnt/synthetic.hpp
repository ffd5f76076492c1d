#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "reghnt/corpus.hpp"

namespace reghnt {

// Templated table-text questions over small generated financial tables:
// differences and per-employee ratios (arithmetic), product and cell lookups
// (span), listed items (multi-span) and item counts (count).
std::vector<HybridExample> synthetic_corpus(std::size_t questions, std::uint64_t seed);

}  // namespace reghnt
