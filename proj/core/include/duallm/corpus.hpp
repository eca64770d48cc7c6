// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace duallm {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Reserved ids. Bytes occupy [0, 256); specials follow; merges start at kFirstMergeId.
namespace special {
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kMask = 257;
inline constexpr TokenId kPad = 258;
inline constexpr TokenId kDocSep = 259;
inline constexpr int kCount = 4;
}  // namespace special

inline constexpr TokenId kFirstMergeId = 256 + special::kCount;

/// Byte-level BPE vocabulary. Ids are dense in [0, size()): 256 byte tokens,
/// the four specials, then one id per merge in training order.
class Vocab {
public:
    using Merge = std::pair<TokenId, TokenId>;

    Vocab();
    explicit Vocab(std::vector<Merge> merges);

    std::size_t size() const { return kFirstMergeId + merges_.size(); }
    const std::vector<Merge>& merges() const { return merges_; }

    static constexpr bool is_special(TokenId id) {
        return id >= 256 && id < kFirstMergeId;
    }
    TokenId bos() const { return special::kBos; }
    TokenId mask() const { return special::kMask; }
    TokenId pad() const { return special::kPad; }
    TokenId docsep() const { return special::kDocSep; }

    /// Byte content of a token; empty for specials.
    const std::string& bytes(TokenId id) const;

    TokenSequence encode(std::string_view text) const;

    /// Specials are skipped. Throws InputError on ids outside [0, size()).
    std::string decode(std::span<const TokenId> ids) const;

    /// `bpe-v1 <vocab_size>` header then one `<left> <right>` merge per line.
    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);
    std::string serialize() const;
    static Vocab deserialize(std::string_view text);

private:
    void encode_chunk(std::string_view chunk, TokenSequence& out) const;
    int merge_rank(TokenId left, TokenId right) const;

    std::vector<Merge> merges_;
    std::vector<std::string> token_bytes_;
    // (left << 32 | right) -> merge index, as a sorted vector for lookup
    std::vector<std::pair<std::uint64_t, int>> rank_index_;
};

/// Splits text into BPE chunks: a chunk starts at every space that follows a
/// non-space byte, so merges never cross word boundaries.
std::vector<std::string_view> bpe_chunks(std::string_view text);

/// Trains byte-level BPE. Most frequent adjacent pair merges first; ties go to
/// the pair whose (left bytes, right bytes) is lexicographically smallest.
/// Stops early when no pair occurs at least twice.
Vocab train_bpe(std::span<const std::string> texts, std::size_t vocab_size);

/// Fixed-length windows of length L, each starting with BOS.
struct PackedDataset {
    std::vector<TokenSequence> sequences;
    std::size_t window_length = 0;
    std::size_t unique_token_count = 0;
    std::uint64_t seed = 0;
};

/// Shuffles documents by seed, joins them with DOCSEP, and cuts BOS-prefixed
/// windows of exactly L tokens (L-1 content tokens each). The trailing
/// partial window is dropped.
PackedDataset pack(const Vocab& vocab, std::span<const std::string> texts,
                   std::size_t window_length, std::uint64_t seed);

struct RepetitionPlan {
    std::size_t repetitions = 1;
    std::size_t total_budget_tokens = 0;

    std::size_t subset_tokens() const { return total_budget_tokens / repetitions; }
};

/// Window indices into `ds.sequences`: the first subset_tokens/L windows,
/// each epoch reshuffled, repeated R times.
std::vector<std::size_t> repetition_stream(const PackedDataset& ds, const RepetitionPlan& plan,
                                           std::uint64_t seed);

/// Splits off the final `fraction` of windows (at least one) as a held-out set.
std::pair<PackedDataset, PackedDataset> split_holdout(const PackedDataset& ds, double fraction);

enum class DocumentSplit { kPerFile, kBlankLine };

/// Reads UTF-8 documents from files or directories (directories are walked in
/// sorted path order).
std::vector<std::string> load_documents(std::span<const std::filesystem::path> paths,
                                        DocumentSplit split);

}  // namespace duallm
