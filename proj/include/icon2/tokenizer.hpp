#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace icon2 {

using TokenId = int32_t;

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by three specials.
// Exact roundtrip for arbitrary byte strings, no external vocab files.
struct ByteTokenizer {
    static constexpr TokenId kBos = 256;
    static constexpr TokenId kEos = 257;
    static constexpr TokenId kSep = 258;
    static constexpr int kVocabSize = 259;

    // fresh_sequence prepends BOS
    static std::vector<TokenId> tokenize(const std::string& text, bool fresh_sequence = false);

    // drops special ids; throws UnknownTokenId for ids outside the vocab
    static std::string detokenize(const std::vector<TokenId>& tokens);
};

}  // namespace icon2
