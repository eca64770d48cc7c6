// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/corpus.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

#include "duallm/errors.hpp"
#include "duallm/io.hpp"
#include "duallm/rng.hpp"

namespace duallm {
namespace {

constexpr std::uint64_t pair_key(TokenId left, TokenId right) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
           static_cast<std::uint32_t>(right);
}

std::vector<std::string> base_token_bytes() {
    std::vector<std::string> bytes;
    bytes.reserve(kFirstMergeId);
    for (int b = 0; b < 256; ++b) {
        bytes.emplace_back(1, static_cast<char>(static_cast<unsigned char>(b)));
    }
    for (int s = 0; s < special::kCount; ++s) {
        bytes.emplace_back();
    }
    return bytes;
}

}  // namespace

Vocab::Vocab() : token_bytes_(base_token_bytes()) {}

Vocab::Vocab(std::vector<Merge> merges) : merges_(std::move(merges)), token_bytes_(base_token_bytes()) {
    rank_index_.reserve(merges_.size());
    for (std::size_t i = 0; i < merges_.size(); ++i) {
        const auto [l, r] = merges_[i];
        const auto next = static_cast<TokenId>(kFirstMergeId + i);
        if (l < 0 || r < 0 || l >= next || r >= next || is_special(l) || is_special(r)) {
            throw FormatError("merge " + std::to_string(i) + " references an unavailable token");
        }
        token_bytes_.push_back(token_bytes_[l] + token_bytes_[r]);
        rank_index_.emplace_back(pair_key(l, r), static_cast<int>(i));
    }
    std::sort(rank_index_.begin(), rank_index_.end());
    for (std::size_t i = 1; i < rank_index_.size(); ++i) {
        if (rank_index_[i].first == rank_index_[i - 1].first) {
            throw FormatError("duplicate merge in vocabulary");
        }
    }
}

const std::string& Vocab::bytes(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= size()) {
        throw InputError("unknown token id " + std::to_string(id));
    }
    return token_bytes_[id];
}

int Vocab::merge_rank(TokenId left, TokenId right) const {
    const auto key = pair_key(left, right);
    auto it = std::lower_bound(rank_index_.begin(), rank_index_.end(),
                               std::pair<std::uint64_t, int>{key, -1});
    if (it != rank_index_.end() && it->first == key) {
        return it->second;
    }
    return -1;
}

void Vocab::encode_chunk(std::string_view chunk, TokenSequence& out) const {
    TokenSequence sym;
    sym.reserve(chunk.size());
    for (char c : chunk) {
        sym.push_back(static_cast<unsigned char>(c));
    }
    while (sym.size() > 1) {
        int best_rank = -1;
        std::size_t best_pos = 0;
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
            const int rank = merge_rank(sym[i], sym[i + 1]);
            if (rank >= 0 && (best_rank < 0 || rank < best_rank)) {
                best_rank = rank;
                best_pos = i;
            }
        }
        if (best_rank < 0) {
            break;
        }
        const auto [l, r] = merges_[best_rank];
        const auto merged = static_cast<TokenId>(kFirstMergeId + best_rank);
        TokenSequence next;
        next.reserve(sym.size());
        for (std::size_t i = 0; i < sym.size(); ++i) {
            if (i >= best_pos && i + 1 < sym.size() && sym[i] == l && sym[i + 1] == r) {
                next.push_back(merged);
                ++i;
            } else {
                next.push_back(sym[i]);
            }
        }
        sym.swap(next);
    }
    out.insert(out.end(), sym.begin(), sym.end());
}

TokenSequence Vocab::encode(std::string_view text) const {
    TokenSequence out;
    out.reserve(text.size());
    for (auto chunk : bpe_chunks(text)) {
        encode_chunk(chunk, out);
    }
    return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        out += bytes(id);
    }
    return out;
}

std::string Vocab::serialize() const {
    std::ostringstream os;
    os << "bpe-v1 " << size() << '\n';
    for (const auto& [l, r] : merges_) {
        os << l << ' ' << r << '\n';
    }
    return os.str();
}

Vocab Vocab::deserialize(std::string_view text) {
    const auto lines = split(text, '\n');
    if (lines.empty()) {
        throw FormatError("empty tokenizer file");
    }
    std::istringstream header{std::string(trim(lines[0]))};
    std::string magic;
    std::size_t declared = 0;
    if (!(header >> magic >> declared) || magic != "bpe-v1") {
        throw FormatError("tokenizer header must be 'bpe-v1 <vocab_size>'");
    }
    std::vector<Merge> merges;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line.empty()) {
            continue;
        }
        std::istringstream ls{std::string(line)};
        long long l = 0;
        long long r = 0;
        std::string rest;
        if (!(ls >> l >> r) || (ls >> rest)) {
            throw FormatError("bad merge line " + std::to_string(i + 1));
        }
        merges.emplace_back(static_cast<TokenId>(l), static_cast<TokenId>(r));
    }
    Vocab vocab(std::move(merges));
    if (vocab.size() != declared) {
        throw FormatError("tokenizer declares " + std::to_string(declared) + " tokens but has " +
                          std::to_string(vocab.size()));
    }
    return vocab;
}

void Vocab::save(const std::filesystem::path& path) const {
    const auto text = serialize();
    write_file_atomic(path, [&](std::ostream& os) { os << text; });
}

Vocab Vocab::load(const std::filesystem::path& path) {
    return deserialize(read_file(path));
}

std::vector<std::string_view> bpe_chunks(std::string_view text) {
    std::vector<std::string_view> chunks;
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (text[i] == ' ' && text[i - 1] != ' ') {
            chunks.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) {
        chunks.push_back(text.substr(start));
    }
    return chunks;
}

Vocab train_bpe(std::span<const std::string> texts, std::size_t vocab_size) {
    if (texts.empty()) {
        throw ConfigError("train_bpe: no training texts");
    }
    if (vocab_size < static_cast<std::size_t>(kFirstMergeId)) {
        throw ConfigError("train_bpe: vocab_size " + std::to_string(vocab_size) +
                          " is smaller than the byte alphabet plus specials (" +
                          std::to_string(kFirstMergeId) + ")");
    }

    // Unique chunks with multiplicities; std::map keeps iteration deterministic.
    std::map<std::string_view, std::int64_t> chunk_counts;
    for (const auto& t : texts) {
        for (auto c : bpe_chunks(t)) {
            ++chunk_counts[c];
        }
    }
    std::vector<TokenSequence> words;
    std::vector<std::int64_t> counts;
    words.reserve(chunk_counts.size());
    for (const auto& [chunk, n] : chunk_counts) {
        TokenSequence w;
        for (char c : chunk) {
            w.push_back(static_cast<unsigned char>(c));
        }
        words.push_back(std::move(w));
        counts.push_back(n);
    }

    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> pair_words;
    for (std::size_t w = 0; w < words.size(); ++w) {
        const auto& sym = words[w];
        for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
            const auto key = pair_key(sym[i], sym[i + 1]);
            pair_counts[key] += counts[w];
            pair_words[key].push_back(static_cast<std::uint32_t>(w));
        }
    }

    std::vector<std::string> tok_bytes = base_token_bytes();
    std::vector<Vocab::Merge> merges;
    std::vector<std::uint32_t> visited(words.size(), 0);
    std::uint32_t epoch = 0;

    auto pair_less = [&](std::uint64_t a, std::uint64_t b) {
        const auto& al = tok_bytes[a >> 32];
        const auto& bl = tok_bytes[b >> 32];
        if (al != bl) {
            return al < bl;
        }
        return tok_bytes[a & 0xffffffffU] < tok_bytes[b & 0xffffffffU];
    };

    while (kFirstMergeId + merges.size() < vocab_size) {
        std::uint64_t best = 0;
        std::int64_t best_count = 1;
        for (const auto& [key, n] : pair_counts) {
            if (n > best_count || (n == best_count && n >= 2 && pair_less(key, best))) {
                best = key;
                best_count = n;
            }
        }
        if (best_count < 2) {
            break;
        }
        const auto left = static_cast<TokenId>(best >> 32);
        const auto right = static_cast<TokenId>(best & 0xffffffffU);
        const auto merged = static_cast<TokenId>(kFirstMergeId + merges.size());
        merges.emplace_back(left, right);
        tok_bytes.push_back(tok_bytes[left] + tok_bytes[right]);

        ++epoch;
        const auto affected = std::move(pair_words[best]);
        pair_words.erase(best);
        for (auto w : affected) {
            if (visited[w] == epoch) {
                continue;
            }
            visited[w] = epoch;
            auto& sym = words[w];
            const auto n = counts[w];
            bool found = false;
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
                if (sym[i] == left && sym[i + 1] == right) {
                    found = true;
                    break;
                }
            }
            if (!found) {
                continue;
            }
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
                auto it = pair_counts.find(pair_key(sym[i], sym[i + 1]));
                if ((it->second -= n) == 0) {
                    pair_counts.erase(it);
                }
            }
            TokenSequence next;
            next.reserve(sym.size());
            for (std::size_t i = 0; i < sym.size(); ++i) {
                if (i + 1 < sym.size() && sym[i] == left && sym[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(sym[i]);
                }
            }
            sym.swap(next);
            for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
                const auto key = pair_key(sym[i], sym[i + 1]);
                pair_counts[key] += n;
                pair_words[key].push_back(w);
            }
        }
    }
    return Vocab(std::move(merges));
}

PackedDataset pack(const Vocab& vocab, std::span<const std::string> texts, std::size_t window_length,
                   std::uint64_t seed) {
    if (window_length < 2) {
        throw ConfigError("pack: window length must be at least 2");
    }
    std::vector<std::size_t> order(texts.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(derive_seed(seed, "pack-shuffle"));
    rng.shuffle(order.begin(), order.end());

    TokenSequence stream;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k > 0) {
            stream.push_back(vocab.docsep());
        }
        const auto ids = vocab.encode(texts[order[k]]);
        stream.insert(stream.end(), ids.begin(), ids.end());
    }

    PackedDataset ds;
    ds.window_length = window_length;
    ds.seed = seed;
    const std::size_t body = window_length - 1;
    for (std::size_t start = 0; start + body <= stream.size(); start += body) {
        TokenSequence w;
        w.reserve(window_length);
        w.push_back(vocab.bos());
        w.insert(w.end(), stream.begin() + static_cast<std::ptrdiff_t>(start),
                 stream.begin() + static_cast<std::ptrdiff_t>(start + body));
        ds.sequences.push_back(std::move(w));
    }
    ds.unique_token_count = ds.sequences.size() * window_length;
    return ds;
}

std::vector<std::size_t> repetition_stream(const PackedDataset& ds, const RepetitionPlan& plan,
                                           std::uint64_t seed) {
    if (plan.repetitions == 0) {
        throw ConfigError("repetition plan needs at least one repetition");
    }
    const auto L = ds.window_length;
    if (L == 0 || plan.subset_tokens() < L) {
        throw ConfigError("repetition plan subset (" + std::to_string(plan.subset_tokens()) +
                          " tokens) is smaller than one window");
    }
    const std::size_t unique = plan.subset_tokens() / L;
    if (unique > ds.sequences.size()) {
        throw ConfigError("repetition plan needs " + std::to_string(unique) +
                          " unique windows but the dataset has " +
                          std::to_string(ds.sequences.size()));
    }
    std::vector<std::size_t> stream;
    stream.reserve(unique * plan.repetitions);
    std::vector<std::size_t> epoch(unique);
    for (std::size_t r = 0; r < plan.repetitions; ++r) {
        for (std::size_t i = 0; i < unique; ++i) {
            epoch[i] = i;
        }
        Rng rng(derive_seed(derive_seed(seed, "epoch-shuffle"), r));
        rng.shuffle(epoch.begin(), epoch.end());
        stream.insert(stream.end(), epoch.begin(), epoch.end());
    }
    return stream;
}

std::pair<PackedDataset, PackedDataset> split_holdout(const PackedDataset& ds, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0) || ds.sequences.size() < 2) {
        throw ConfigError("split_holdout: need a fraction in (0,1) and at least two windows");
    }
    auto held = static_cast<std::size_t>(static_cast<double>(ds.sequences.size()) * fraction + 0.5);
    held = std::clamp<std::size_t>(held, 1, ds.sequences.size() - 1);
    const auto cut = ds.sequences.size() - held;
    PackedDataset train;
    PackedDataset val;
    for (auto* part : {&train, &val}) {
        part->window_length = ds.window_length;
        part->seed = ds.seed;
    }
    train.sequences.assign(ds.sequences.begin(), ds.sequences.begin() + static_cast<std::ptrdiff_t>(cut));
    val.sequences.assign(ds.sequences.begin() + static_cast<std::ptrdiff_t>(cut), ds.sequences.end());
    train.unique_token_count = train.sequences.size() * ds.window_length;
    val.unique_token_count = val.sequences.size() * ds.window_length;
    return {std::move(train), std::move(val)};
}

std::vector<std::string> load_documents(std::span<const std::filesystem::path> paths,
                                        DocumentSplit mode) {
    std::vector<std::filesystem::path> files;
    for (const auto& p : paths) {
        if (std::filesystem::is_directory(p)) {
            std::vector<std::filesystem::path> found;
            for (const auto& e : std::filesystem::recursive_directory_iterator(p)) {
                if (e.is_regular_file()) {
                    found.push_back(e.path());
                }
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else if (std::filesystem::is_regular_file(p)) {
            files.push_back(p);
        } else {
            throw ConfigError("corpus path does not exist: " + p.string());
        }
    }
    std::vector<std::string> docs;
    for (const auto& f : files) {
        auto text = read_file(f);
        if (mode == DocumentSplit::kPerFile) {
            if (!trim(text).empty()) {
                docs.push_back(std::move(text));
            }
            continue;
        }
        std::string current;
        for (const auto& line : split(text, '\n')) {
            if (trim(line).empty()) {
                if (!current.empty()) {
                    docs.push_back(std::move(current));
                    current.clear();
                }
                continue;
            }
            if (!current.empty()) {
                current += '\n';
            }
            current += line;
        }
        if (!current.empty()) {
            docs.push_back(std::move(current));
        }
    }
    return docs;
}

}  // namespace duallm
