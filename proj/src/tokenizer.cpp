#include "icon2/tokenizer.hpp"

#include "icon2/errors.hpp"

namespace icon2 {

std::vector<TokenId> ByteTokenizer::tokenize(const std::string& text, bool fresh_sequence) {
    std::vector<TokenId> out;
    out.reserve(text.size() + (fresh_sequence ? 1 : 0));
    if (fresh_sequence) out.push_back(kBos);
    for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
    return out;
}

std::string ByteTokenizer::detokenize(const std::vector<TokenId>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (TokenId t : tokens) {
        if (t < 0 || t >= kVocabSize)
            raise(ErrorKind::UnknownTokenId, "token id " + std::to_string(t) + " outside vocab");
        if (t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

}  // namespace icon2
