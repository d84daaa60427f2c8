#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctok/core_types.hpp"

namespace ctok {

// Encoded prompt: one embedding per token, all of the same dimension.
struct PromptEmbeddingSequence {
    std::vector<TokenEmbedding> tokens;
    std::string text;  // the decoded prompt the tokens were produced from

    std::size_t length() const { return tokens.size(); }
    std::size_t dim() const { return tokens.empty() ? 0 : tokens.front().dim(); }

    bool operator==(const PromptEmbeddingSequence&) const = default;
};

std::optional<std::string> validate(const PromptEmbeddingSequence& seq);

// Returns seq with e appended as its last token. Throws InvalidEmbedding when
// the dimensions disagree.
PromptEmbeddingSequence append_count_token(const PromptEmbeddingSequence& seq, const TokenEmbedding& e);

// Inverse of append_count_token.
PromptEmbeddingSequence remove_last_token(const PromptEmbeddingSequence& seq);

struct GenerationResult {
    ImageTensor image;
    bool supports_gradient = false;
};

// Text-conditioned, single-step image generator. Implementations are
// immutable after construction and may be called concurrently.
//
// Real-model adapters implement the same surface: encode a prompt, render one
// image from an embedding sequence and a seed, and declare whether gradients
// flow back to the embeddings. Adapter-specific knobs (guidance scale,
// resolution) are passed as options at construction time.
class Generator {
public:
    virtual ~Generator() = default;

    virtual std::string name() const = 0;
    virtual std::size_t embedding_dim() const = 0;
    // Per-entry standard deviation used to initialise a fresh counting token.
    virtual double embedding_scale() const = 0;
    virtual bool differentiable() const = 0;

    virtual PromptEmbeddingSequence encode_prompt(const PromptSpec& spec) const = 0;
    virtual GenerationResult generate(const PromptEmbeddingSequence& seq, std::uint64_t seed) const = 0;

    // Vector-Jacobian product: gradient of sum(upstream * image) with respect
    // to every token of seq. Only meaningful when differentiable().
    virtual std::vector<TokenEmbedding> backward(const PromptEmbeddingSequence& seq, std::uint64_t seed,
                                                 const ImageTensor& upstream) const;
};

}  // namespace ctok
