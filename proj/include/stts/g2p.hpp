#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stts/alignment.hpp"

namespace stts {

// Text token -> phoneme list. Any callable with this shape can be plugged in.
using G2pFn = std::function<std::vector<Phoneme>(std::string_view)>;

inline constexpr int kUnkSymbol = 0;

// ARPAbet-style inventory: ids 1..39 are phonemes, 40.. punctuation.
struct PhonemeInventory {
  static int symbol(std::string_view arpabet);  // -1 when unknown
  static std::string_view name(int symbol);
  static bool is_vowel(int symbol);
  static int punctuation(char c);  // -1 when c is not punctuation we keep
};

// Small built-in pronunciation dictionary with a letter-to-sound fallback.
// Good enough for demos; tests use pre-phonemized input.
std::vector<Phoneme> builtin_g2p(std::string_view token);

// Split free text on whitespace into word tokens.
std::vector<std::string> split_words(std::string_view text);

// Line-delimited "symbol_id, is_punct, is_nucleus" records. Blank lines and
// lines starting with '#' are skipped.
std::vector<Phoneme> read_phoneme_file(std::istream& in);
void write_phoneme_file(std::ostream& out, std::span<const Phoneme> phonemes);

}  // namespace stts
