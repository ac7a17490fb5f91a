#pragma once

#include <map>
#include <string>
#include <vector>

#include "kdsm/tensor.hpp"

namespace kdsm {

/// A (species, keypoint category) pair and its rendered prompt sentence.
struct PromptSpec {
    std::string species;
    std::string keypoint_category;
    std::string rendered;
};

/// "The {keypoint category} of a {animal species} in the photo."
PromptSpec build_prompt(const std::string& species,
                        const std::string& keypoint_category);

/// The fixed sentence embedded into unused prompt slots.
const std::string& placeholder_prompt();

/// Lowercase and split on non-alphanumeric characters.
std::vector<std::string> tokenize(const std::string& text);

/// Deterministic stand-in for a frozen text encoder: each token seeds a
/// pseudo-random Gaussian vector (FNV-1a hash mixed with `seed`), token
/// vectors are summed position-independently and L2-normalized.
Eigen::VectorXd synthetic_encode(const std::string& text, int dim,
                                 std::uint64_t seed);

struct EmbeddingTable {
    int dim = 0;
    bool normalized = true;
    std::map<std::string, Eigen::VectorXd> entries;
};

/// KEMB binary format: magic "KEMB", u32 version=1, u32 dim, u32 count,
/// u8 normalized, then count records of {u16 key length, key bytes,
/// dim little-endian f32}. All integers little-endian.
EmbeddingTable load_table(const std::string& path);
void save_table(const EmbeddingTable& table, const std::string& path);

/// Where raw embeddings come from: an ingested table, the synthetic
/// encoder, or a table with synthetic fallback for missing keys.
struct TextSource {
    int dim = 512;          // C0
    std::uint64_t seed = 0; // synthetic encoder seed
    const EmbeddingTable* table = nullptr;
    bool allow_synth_fallback = false;

    Eigen::VectorXd encode(const std::string& text) const;
    void validate() const;
};

struct PromptBatch {
    std::vector<PromptSpec> prompts; // length K_valid
    Tensor raw;                      // [K x C0]
    int K = 0;
    int K_valid = 0;
};

/// Rows 0..K_valid-1 are prompt embeddings, the rest all equal the
/// placeholder embedding.
PromptBatch embed_batch(const std::vector<PromptSpec>& prompts,
                        const TextSource& source, int K);

} // namespace kdsm
