// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cstring>
#include <map>
#include <sstream>

#include "duallm/errors.hpp"
#include "duallm/io.hpp"
#include "duallm/model.hpp"

namespace duallm {
namespace {

constexpr std::string_view kMagic = "duallm-checkpoint-v1";

std::uint32_t to_little(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
    }
    return v;
}

}  // namespace

std::string serialize_checkpoint(const ModelConfig& config, const Params<float>& params) {
    std::ostringstream manifest;
    manifest << kMagic << '\n';
    manifest << "config n_layers " << config.n_layers << '\n';
    manifest << "config hidden_size " << config.hidden_size << '\n';
    manifest << "config n_heads " << config.n_heads << '\n';
    manifest << "config ffn_inner " << config.ffn_inner << '\n';
    manifest << "config vocab_size " << config.vocab_size << '\n';
    manifest << "config max_len " << config.max_len << '\n';
    manifest << "config rope_base " << format_double(config.rope_base) << '\n';
    manifest << "config norm_eps " << format_double(config.norm_eps) << '\n';
    manifest << "config init_std " << format_double(config.init_std) << '\n';
    manifest << "config tie_embeddings " << (config.tie_embeddings ? 1 : 0) << '\n';

    std::string payload;
    params.for_each([&](std::string_view name, const Matrix<float>& m, ParamKind) {
        manifest << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << payload.size() << '\n';
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const auto bits = to_little(std::bit_cast<std::uint32_t>(m.data()[i]));
            char buf[4];
            std::memcpy(buf, &bits, 4);
            payload.append(buf, 4);
        }
    });
    manifest << "data\n";
    return manifest.str() + payload;
}

std::pair<ModelConfig, Params<float>> deserialize_checkpoint(std::string_view bytes) {
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string_view {
        const auto end = bytes.find('\n', pos);
        if (end == std::string_view::npos) {
            throw FormatError("checkpoint: truncated manifest");
        }
        auto line = bytes.substr(pos, end - pos);
        pos = end + 1;
        return line;
    };
    if (next_line() != kMagic) {
        throw FormatError("checkpoint: bad magic line");
    }
    std::map<std::string, std::string, std::less<>> cfg;
    struct Entry {
        Eigen::Index rows, cols;
        std::size_t offset;
    };
    std::map<std::string, Entry, std::less<>> tensors;
    while (true) {
        const auto line = next_line();
        if (line == "data") {
            break;
        }
        std::istringstream ls{std::string(line)};
        std::string kind, name;
        ls >> kind >> name;
        if (kind == "config") {
            std::string value;
            if (!(ls >> value)) {
                throw FormatError("checkpoint: bad config line");
            }
            cfg[name] = value;
        } else if (kind == "tensor") {
            Entry e{};
            if (!(ls >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0) {
                throw FormatError("checkpoint: bad tensor line for " + name);
            }
            tensors[name] = e;
        } else {
            throw FormatError("checkpoint: unknown manifest entry '" + kind + "'");
        }
    }
    const auto payload = bytes.substr(pos);

    auto get = [&](std::string_view key) -> const std::string& {
        auto it = cfg.find(key);
        if (it == cfg.end()) {
            throw FormatError("checkpoint: missing config key " + std::string(key));
        }
        return it->second;
    };
    auto get_size = [&](std::string_view key) { return static_cast<std::size_t>(std::stoull(get(key))); };
    ModelConfig config;
    config.n_layers = get_size("n_layers");
    config.hidden_size = get_size("hidden_size");
    config.n_heads = get_size("n_heads");
    config.ffn_inner = get_size("ffn_inner");
    config.vocab_size = get_size("vocab_size");
    config.max_len = get_size("max_len");
    config.rope_base = parse_double(get("rope_base"));
    config.norm_eps = parse_double(get("norm_eps"));
    config.init_std = parse_double(get("init_std"));
    config.tie_embeddings = get("tie_embeddings") == "1";
    config.validate();

    // Build the expected layout from the config, then fill from the payload.
    Params<float> params = init_params<float>(config, 0);
    std::size_t seen = 0;
    params.for_each([&](std::string_view name, Matrix<float>& m, ParamKind) {
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw FormatError("checkpoint: missing tensor " + std::string(name));
        }
        const auto& e = it->second;
        if (e.rows != m.rows() || e.cols != m.cols()) {
            throw FormatError("checkpoint: shape mismatch for " + std::string(name));
        }
        const auto nbytes = static_cast<std::size_t>(m.size()) * 4;
        if (e.offset + nbytes > payload.size()) {
            throw FormatError("checkpoint: payload too short for " + std::string(name));
        }
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, payload.data() + e.offset + static_cast<std::size_t>(i) * 4, 4);
            m.data()[i] = std::bit_cast<float>(to_little(bits));
        }
        ++seen;
    });
    if (seen != tensors.size()) {
        throw FormatError("checkpoint: unexpected extra tensors");
    }
    return {config, std::move(params)};
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const Params<float>& params) {
    const auto bytes = serialize_checkpoint(config, params);
    write_file_atomic(path, [&](std::ostream& os) { os.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); },
                      true);
}

std::pair<ModelConfig, Params<float>> load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path));
}

}  // namespace duallm
