#include "ctok/generation.hpp"

#include "ctok/errors.hpp"

namespace ctok {

std::optional<std::string> validate(const PromptEmbeddingSequence& seq) {
    if (seq.tokens.empty()) return "sequence must contain at least one token";
    const std::size_t d = seq.tokens.front().dim();
    for (const auto& t : seq.tokens) {
        if (t.dim() != d) return "all embeddings must share dimension d";
        if (auto err = validate(t)) return err;
    }
    return std::nullopt;
}

PromptEmbeddingSequence append_count_token(const PromptEmbeddingSequence& seq, const TokenEmbedding& e) {
    if (!seq.tokens.empty() && e.dim() != seq.dim()) {
        throw InvalidEmbedding("count token has dimension " + std::to_string(e.dim()) +
                               " but the sequence uses " + std::to_string(seq.dim()));
    }
    if (auto err = validate(e)) throw InvalidEmbedding(*err);
    PromptEmbeddingSequence out = seq;
    out.tokens.push_back(e);
    return out;
}

PromptEmbeddingSequence remove_last_token(const PromptEmbeddingSequence& seq) {
    if (seq.tokens.empty()) throw InvalidInput("cannot remove a token from an empty sequence");
    PromptEmbeddingSequence out = seq;
    out.tokens.pop_back();
    return out;
}

std::vector<TokenEmbedding> Generator::backward(const PromptEmbeddingSequence&, std::uint64_t,
                                                const ImageTensor&) const {
    throw GenerationError("generator '" + name() + "' does not support gradient flow");
}

}  // namespace ctok
