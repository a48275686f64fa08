#pragma once

#include "freetuner/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace ft {

/// Token budget (77-slot analog). The longest in-template prompt,
/// "a photo of a <color> <shape> with <texture> background", takes 10
/// positions including the start token; 12 leaves headroom for composition
/// prompts.
inline constexpr int kMaxTokens = 12;

/// Closed vocabulary; index 0 is the start token.
const std::vector<std::string>& vocabulary();
int token_id(const std::string& word);  // throws UnknownTokenError

/// Start token followed by the word ids; "" yields just the start token.
/// Throws UnknownTokenError / invalid_argument (over budget).
std::vector<int> tokenize_ids(const std::string& prompt);

struct PromptEmbedding {
    std::vector<int> tokens;    // tokens[0] == 0 (start)
    Tensor embeddings;          // [L, d_text]
    std::map<std::string, std::vector<int>> word_index_map;  // word -> positions

    int length() const { return static_cast<int>(tokens.size()); }
    bool is_null() const { return tokens.size() == 1; }
};

/// Builds the embedding from a token table [V, d_text].
PromptEmbedding tokenize(const std::string& prompt, const Tensor& token_table);

}  // namespace ft
