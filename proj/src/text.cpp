#include "freetuner/text.hpp"

#include "freetuner/errors.hpp"

#include <sstream>

namespace ft {

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> vocab = {
        "<start>", "a",      "photo",  "of",       "with",  "background",
        "red",     "green",  "blue",   "yellow",   "circle", "square",
        "triangle", "star",  "plain",  "stripes",  "checker", "dots",
    };
    return vocab;
}

int token_id(const std::string& word) {
    const auto& v = vocabulary();
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v[i] == word) return static_cast<int>(i);
    throw UnknownTokenError(word);
}

std::vector<int> tokenize_ids(const std::string& prompt) {
    std::vector<int> ids{0};
    std::istringstream ss(prompt);
    std::string word;
    while (ss >> word) ids.push_back(token_id(word));
    check_arg(static_cast<int>(ids.size()) <= kMaxTokens,
              "prompt exceeds the " + std::to_string(kMaxTokens) + "-token budget");
    return ids;
}

PromptEmbedding tokenize(const std::string& prompt, const Tensor& token_table) {
    check_arg(token_table.rank() == 2 &&
                  token_table.dim(0) == static_cast<int>(vocabulary().size()),
              "token table must be [vocab, d_text]");
    PromptEmbedding p;
    p.tokens = tokenize_ids(prompt);
    p.embeddings = gather_rows(token_table, p.tokens);
    std::istringstream ss(prompt);
    std::string word;
    int pos = 1;  // position 0 is the start token
    while (ss >> word) p.word_index_map[word].push_back(pos++);
    return p;
}

}  // namespace ft
