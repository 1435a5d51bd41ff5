#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cspace/embedding.hpp"

namespace cspace {

struct WeightedEdge {
    std::uint32_t u = 0;  // canonical orientation: u < v
    std::uint32_t v = 0;
    double w = 0.0;
};

// The one total order used wherever edges are ranked: weight descending, then
// (u, v) ascending. Gives exact top-K cuts and reproducible exports.
inline bool edge_rank_before(const WeightedEdge& a, const WeightedEdge& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.u != b.u) return a.u < b.u;
    return a.v < b.v;
}

// P = n(n-1)/2 (true unordered pair count) or P = n^2/2 (the convention that
// puts n=32000, K=0.002 at exactly 1,024,000 edges).
enum class PairConvention { half_off_diagonal, half_square };
PairConvention parse_pair_convention(std::string_view name);
const char* pair_convention_name(PairConvention pc);

struct SimParams {
    int threads = 0;                       // 0 = runtime default
    std::size_t block_rows = 128;          // row-block edge for pairwise passes
    std::uint64_t edge_cap = 50'000'000;   // edges_above refuses larger results
    std::uint64_t sample_pairs = 200'000;  // threshold calibration sample
    std::uint64_t sample_seed = 0x5eed;
};

// Cosine similarity between rows i and j of m, accumulated in doubles in a
// fixed index order, so the value is identical no matter which code path or
// thread computes it. Rows with norm < 1e-12 yield 0 (flagged at load time).
double cosine(const EmbeddingMatrix& m, std::uint32_t i, std::uint32_t j);

// ceil(k_ratio * P) computed in exact decimal arithmetic. Naive double math
// puts 0.002 * 32000^2/2 a hair above 1,024,000 and ceils one edge too high.
std::uint64_t requested_edge_count(double k_ratio, std::uint64_t n, PairConvention pc);

struct TopKSelection {
    std::vector<WeightedEdge> edges;  // sorted by edge_rank_before
    double k_ratio = 0.0;
    PairConvention convention = PairConvention::half_off_diagonal;
    double threshold = 0.0;  // weight of the last retained edge
};

// Exact global top-K selection over the implicit complete graph. Requires a
// centered matrix. Deterministic: the result is bit-identical across block
// sizes and thread counts.
TopKSelection top_k_edges(const EmbeddingMatrix& m, double k_ratio, PairConvention pc,
                          const SimParams& params = {});

// Exact selection of the `count` highest-similarity pairs (the engine behind
// top_k_edges and the connectivity sweeps).
std::vector<WeightedEdge> top_edges_by_count(const EmbeddingMatrix& m, std::uint64_t count,
                                             const SimParams& params = {});

// Number of unordered pairs (i<j) with cosine >= tau.
std::uint64_t count_above(const EmbeddingMatrix& m, double tau, const SimParams& params = {});

// All pairs with cosine >= tau in rank order. Errors out past params.edge_cap.
std::vector<WeightedEdge> edges_above(const EmbeddingMatrix& m, double tau,
                                      const SimParams& params = {});

// CSV lines "u,v,w" with w printed to 6 significant digits, ordering as given.
void save_edges_csv(std::span<const WeightedEdge> edges, const std::filesystem::path& path);

}  // namespace cspace
