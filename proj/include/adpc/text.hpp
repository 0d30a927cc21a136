#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "adpc/errors.hpp"

namespace adpc::text {

// Frequency-ordered token table with four reserved ids.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    static Vocabulary from_tokens(std::vector<std::string> ordered_tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const { return tokens_[static_cast<size_t>(id)]; }
    int id_of(const std::string& token) const;  // kUnk when absent
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::string& path) const;  // one token per line, line = id
    static Vocabulary load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

struct TokenSequence {
    std::vector<int> ids;            // length exactly max_len
    std::vector<uint8_t> mask;       // true prefix marking real tokens
};

struct SummaryRecord {
    std::map<std::string, std::string> sections;  // canonical name -> body
    std::set<std::string> unrecorded;             // present but marked unrecorded
    std::map<std::string, std::string> extra;     // unrecognized headers
};

// Lowercases and splits on whitespace; punctuation becomes its own token.
std::vector<std::string> split_tokens(const std::string& text);

// Tokens ordered by descending frequency, ties broken lexicographically;
// tokens under min_freq dropped; total size (specials included) capped.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_freq = 1,
                       int cap = 2048);

// BOS + words + EOS, truncated so EOS stays the final real token, padded to
// max_len. Unknown words map to UNK.
TokenSequence tokenize(const std::string& txt, const Vocabulary& vocab, int max_len);

// Space-joins the real non-special tokens.
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

// The five canonical section names of the structured summary template.
const std::vector<std::string>& required_sections();

// Parses "<Name>:" header lines into the canonical section set. A section
// whose body is exactly "unrecorded" is kept and flagged; a section missing
// entirely raises MissingRequiredSection listing every absent name.
SummaryRecord validate_summary(const std::string& txt);

}  // namespace adpc::text
