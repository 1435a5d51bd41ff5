#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cspace {

// SentencePiece word-boundary marker (U+2581), the prefix that distinguishes
// word-initial tokens from word-internal ones in the Llama vocabulary.
inline constexpr std::string_view kWordInitialMarker = "\xE2\x96\x81";

enum class EmbeddingFormat { npy, rawbin, csv };
EmbeddingFormat parse_embedding_format(std::string_view name);

// Dense row-major matrix of concept vectors. Values are held as doubles no
// matter the on-disk dtype; means and dot products stay in 64-bit arithmetic
// so centering and similarity remain stable at large dimension.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::vector<double> data;  // rows * dims
    bool centered = false;
    std::vector<double> norms;  // Euclidean norm per row, kept in sync with data
    std::size_t zero_norm_rows = 0;

    const double* row(std::size_t i) const { return data.data() + i * dims; }
    double* row(std::size_t i) { return data.data() + i * dims; }
};

// Rebuilds the per-row norm cache (called by the loaders and center()).
void recompute_norms(EmbeddingMatrix& m);

// Formats:
//   npy    - NPY version 1.0, C-order, 2-D, dtype f4 or f8
//   rawbin - packed little-endian f32, row-major, sidecar JSON header at <path>.json
//   csv    - one row per line, comma-separated decimal floats, no header
EmbeddingMatrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format);

void save_embeddings_csv(const EmbeddingMatrix& m, const std::filesystem::path& path);
void save_embeddings_npy(const EmbeddingMatrix& m, const std::filesystem::path& path, bool as_f32 = false);
void save_embeddings_rawbin(const EmbeddingMatrix& m, const std::filesystem::path& path);

// Subtracts the column-wise mean vector from every row. Re-centering a
// centered matrix is an error.
EmbeddingMatrix center(const EmbeddingMatrix& m);

struct Vocabulary {
    std::vector<std::string> tokens;                       // entry i = node id i
    std::unordered_map<std::string, std::uint32_t> index;  // reverse lookup

    std::size_t size() const { return tokens.size(); }
};

// Builds the reverse map; duplicate tokens are a hard error (silent aliasing
// would corrupt every downstream node-id mapping).
Vocabulary make_vocabulary(std::vector<std::string> tokens);

// UTF-8 text, one escaped token per line; line number = node id.
// Escapes understood: \n \t \r \\ and \uXXXX (with surrogate pairs).
Vocabulary load_vocab(const std::filesystem::path& path,
                      std::optional<std::size_t> expected_n = std::nullopt);
void save_vocab(const Vocabulary& v, const std::filesystem::path& path);

std::string escape_token(std::string_view token);
std::string unescape_token(std::string_view line);

enum class ResolvePolicy { prefer_initial, exact };
ResolvePolicy parse_resolve_policy(std::string_view name);

// Maps a human-facing surface form to a vocabulary row. Under prefer_initial,
// "man" tries the word-initial token (marker + "man") before the raw token,
// and "#man" addresses the raw word-internal token "man". Under exact the
// string is looked up verbatim.
std::uint32_t resolve(const Vocabulary& v, std::string_view surface, ResolvePolicy policy,
                      std::string_view marker = kWordInitialMarker);

// Display convention, inverse of resolve: marker-prefixed tokens display
// without the marker; unmarked tokens display with a leading "#".
std::string display_name(std::string_view token, std::string_view marker = kWordInitialMarker);

}  // namespace cspace
