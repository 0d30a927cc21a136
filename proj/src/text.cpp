#include "adpc/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace adpc::text {

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>"};

bool is_word_char(unsigned char c) {
    return !std::isspace(c) && !std::ispunct(c);
}

std::string to_lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> ordered_tokens) {
    Vocabulary v;
    v.tokens_ = std::move(ordered_tokens);
    for (size_t i = 0; i < v.tokens_.size(); ++i)
        v.ids_.emplace(v.tokens_[i], static_cast<int>(i));
    if (v.tokens_.size() < kSpecials.size() ||
        !std::equal(kSpecials.begin(), kSpecials.end(), v.tokens_.begin()))
        throw ParseError("vocabulary must start with <pad>, <unk>, <bos>, <eos>");
    if (v.ids_.size() != v.tokens_.size()) throw ParseError("duplicate vocabulary token");
    return v;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot write vocabulary: " + path);
    for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot read vocabulary: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

std::vector<std::string> split_tokens(const std::string& txt) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    for (unsigned char c : txt) {
        if (std::isspace(c)) {
            flush();
        } else if (std::ispunct(c)) {
            flush();
            out.emplace_back(1, static_cast<char>(c));
        } else {
            word.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    flush();
    return out;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int min_freq, int cap) {
    if (corpus.empty()) throw EmptyCorpus("build_vocab: empty corpus");
    if (cap < static_cast<int>(kSpecials.size()))
        throw ParseError("build_vocab: cap smaller than the special tokens");
    std::map<std::string, long> freq;
    for (const auto& doc : corpus)
        for (const auto& tok : split_tokens(doc)) ++freq[tok];

    std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::vector<std::string> tokens = kSpecials;
    for (const auto& [tok, n] : entries) {
        if (n < min_freq) continue;
        if (static_cast<int>(tokens.size()) >= cap) break;
        tokens.push_back(tok);
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

TokenSequence tokenize(const std::string& txt, const Vocabulary& vocab, int max_len) {
    if (max_len < 2) throw ParseError("tokenize: max_len must be >= 2");
    std::vector<std::string> words = split_tokens(txt);
    const size_t keep = std::min(words.size(), static_cast<size_t>(max_len - 2));

    TokenSequence seq;
    seq.ids.assign(static_cast<size_t>(max_len), Vocabulary::kPad);
    seq.mask.assign(static_cast<size_t>(max_len), 0);
    size_t pos = 0;
    seq.ids[pos++] = Vocabulary::kBos;
    for (size_t i = 0; i < keep; ++i) seq.ids[pos++] = vocab.id_of(words[i]);
    seq.ids[pos++] = Vocabulary::kEos;
    for (size_t i = 0; i < pos; ++i) seq.mask[i] = 1;
    return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (!seq.mask[i]) break;
        int id = seq.ids[i];
        if (id < 4) continue;  // skip specials
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

const std::vector<std::string>& required_sections() {
    static const std::vector<std::string> kSections = {
        "Basic Information",
        "Medical History and Neurological Assessment",
        "Physical status",
        "Daily Behavior",
        "Language proficiency",
    };
    return kSections;
}

SummaryRecord validate_summary(const std::string& txt) {
    SummaryRecord rec;
    std::map<std::string, std::string> canonical;  // lowercase -> canonical
    for (const auto& s : required_sections()) canonical[to_lower(s)] = s;

    std::istringstream in(txt);
    std::string line;
    std::string current;           // canonical name or extra header
    bool current_is_extra = false;
    auto append_body = [&](const std::string& body) {
        if (current.empty()) return;  // preamble outside any section
        auto& slot = current_is_extra ? rec.extra[current] : rec.sections[current];
        if (!slot.empty() && !body.empty()) slot += '\n';
        slot += body;
    };

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        size_t colon = t.find(':');
        bool handled = false;
        if (colon != std::string::npos) {
            std::string head = to_lower(trim(t.substr(0, colon)));
            auto it = canonical.find(head);
            if (it != canonical.end()) {
                current = it->second;
                current_is_extra = false;
                rec.sections[current];  // mark present even with empty body
                append_body(trim(t.substr(colon + 1)));
                handled = true;
            } else if (colon == t.size() - 1 && !head.empty()) {
                current = head;
                current_is_extra = true;
                rec.extra[current];
                handled = true;
            }
        }
        if (!handled) append_body(t);
    }

    std::vector<std::string> missing;
    for (const auto& s : required_sections())
        if (!rec.sections.count(s)) missing.push_back(s);
    if (!missing.empty()) {
        std::string msg = "missing required sections:";
        for (const auto& m : missing) msg += " '" + m + "'";
        throw MissingRequiredSection(msg);
    }
    for (auto& [name, body] : rec.sections)
        if (to_lower(trim(body)) == "unrecorded") rec.unrecorded.insert(name);
    return rec;
}

}  // namespace adpc::text
