#include "stts/g2p.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace stts {

namespace {

constexpr std::array<std::string_view, 40> kNames{
    "<unk>", "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY",
    "UH",    "UW", "B",  "CH", "D",  "DH", "F",  "G",  "HH", "JH", "K",  "L",  "M",  "N",
    "NG",    "P",  "R",  "S",  "SH", "T",  "TH", "V",  "W",  "Y",  "Z",  "ZH"};
constexpr int kFirstConsonant = 16;
constexpr std::string_view kPunctuation = ".,?!;:-\"'()";
constexpr int kFirstPunct = 40;

const std::unordered_map<std::string, std::string>& dictionary() {
  static const std::unordered_map<std::string, std::string> dict{
      {"a", "AH"}, {"an", "AE N"}, {"and", "AE N D"}, {"are", "AA R"}, {"as", "AE Z"},
      {"at", "AE T"}, {"be", "B IY"}, {"but", "B AH T"}, {"by", "B AY"}, {"can", "K AE N"},
      {"do", "D UW"}, {"for", "F AO R"}, {"from", "F R AH M"}, {"good", "G UH D"},
      {"have", "HH AE V"}, {"he", "HH IY"}, {"hello", "HH AH L OW"}, {"her", "HH ER"},
      {"here", "HH IH R"}, {"how", "HH AW"}, {"i", "AY"}, {"in", "IH N"}, {"is", "IH Z"},
      {"it", "IH T"}, {"just", "JH AH S T"}, {"know", "N OW"}, {"like", "L AY K"},
      {"me", "M IY"}, {"my", "M AY"}, {"no", "N OW"}, {"not", "N AA T"}, {"now", "N AW"},
      {"of", "AH V"}, {"on", "AA N"}, {"one", "W AH N"}, {"or", "AO R"}, {"our", "AW ER"},
      {"out", "AW T"}, {"please", "P L IY Z"}, {"say", "S EY"}, {"see", "S IY"},
      {"she", "SH IY"}, {"so", "S OW"}, {"speech", "S P IY CH"}, {"stream", "S T R IY M"},
      {"text", "T EH K S T"}, {"that", "DH AE T"}, {"the", "DH AH"}, {"there", "DH EH R"},
      {"they", "DH EY"}, {"think", "TH IH NG K"}, {"this", "DH IH S"}, {"time", "T AY M"},
      {"to", "T UW"}, {"today", "T AH D EY"}, {"up", "AH P"}, {"voice", "V OY S"},
      {"want", "W AA N T"}, {"was", "W AA Z"}, {"way", "W EY"}, {"we", "W IY"},
      {"well", "W EH L"}, {"what", "W AH T"}, {"when", "W EH N"}, {"will", "W IH L"},
      {"with", "W IH DH"}, {"world", "W ER L D"}, {"would", "W UH D"}, {"yes", "Y EH S"},
      {"you", "Y UW"}, {"your", "Y AO R"}, {"slowly", "S L OW L IY"}, {"quickly", "K W IH K L IY"},
      {"speaking", "S P IY K IH NG"}, {"rate", "R EY T"}, {"fast", "F AE S T"}, {"slow", "S L OW"},
  };
  return dict;
}

// Letter-to-sound fallback: one phoneme per letter, runs of vowel letters
// collapse into a single nucleus.
std::string_view letter_sound(char c) {
  switch (c) {
    case 'a': return "AE";
    case 'b': return "B";
    case 'c': return "K";
    case 'd': return "D";
    case 'e': return "EH";
    case 'f': return "F";
    case 'g': return "G";
    case 'h': return "HH";
    case 'i': return "IH";
    case 'j': return "JH";
    case 'k': return "K";
    case 'l': return "L";
    case 'm': return "M";
    case 'n': return "N";
    case 'o': return "AA";
    case 'p': return "P";
    case 'q': return "K";
    case 'r': return "R";
    case 's': return "S";
    case 't': return "T";
    case 'u': return "AH";
    case 'v': return "V";
    case 'w': return "W";
    case 'x': return "K";
    case 'y': return "IY";
    case 'z': return "Z";
    default: return {};
  }
}

Phoneme make_phoneme(int symbol) { return Phoneme{symbol, false, PhonemeInventory::is_vowel(symbol)}; }

void append_word(std::string_view word, std::vector<Phoneme>& out) {
  if (word.empty()) return;
  const auto& dict = dictionary();
  if (auto it = dict.find(std::string(word)); it != dict.end()) {
    std::istringstream in(it->second);
    std::string name;
    while (in >> name) out.push_back(make_phoneme(PhonemeInventory::symbol(name)));
    return;
  }
  bool prev_vowel = false;
  for (char c : word) {
    const auto sound = letter_sound(c);
    if (sound.empty()) {
      prev_vowel = false;
      continue;
    }
    const int sym = PhonemeInventory::symbol(sound);
    const bool vowel = PhonemeInventory::is_vowel(sym);
    if (vowel && prev_vowel) continue;
    out.push_back(make_phoneme(sym));
    prev_vowel = vowel;
  }
}

bool parse_flag(const std::string& s, std::size_t line_no) {
  if (s == "0") return false;
  if (s == "1") return true;
  throw std::invalid_argument("phoneme file: line " + std::to_string(line_no) + ": flag must be 0 or 1");
}

}  // namespace

int PhonemeInventory::symbol(std::string_view arpabet) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == arpabet) return static_cast<int>(i);
  }
  return -1;
}

std::string_view PhonemeInventory::name(int symbol) {
  if (symbol >= 0 && symbol < static_cast<int>(kNames.size())) return kNames[static_cast<std::size_t>(symbol)];
  if (symbol >= kFirstPunct && symbol < kFirstPunct + static_cast<int>(kPunctuation.size())) {
    return kPunctuation.substr(static_cast<std::size_t>(symbol - kFirstPunct), 1);
  }
  return "?";
}

bool PhonemeInventory::is_vowel(int symbol) { return symbol >= 1 && symbol < kFirstConsonant; }

int PhonemeInventory::punctuation(char c) {
  const auto pos = kPunctuation.find(c);
  return pos == std::string_view::npos ? -1 : kFirstPunct + static_cast<int>(pos);
}

std::vector<Phoneme> builtin_g2p(std::string_view token) {
  std::vector<Phoneme> out;
  std::string word;
  for (char raw : token) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(c);
      continue;
    }
    append_word(word, out);
    word.clear();
    // Apostrophes inside words ("don't") are dropped rather than emitted.
    if (c == '\'') continue;
    if (const int p = PhonemeInventory::punctuation(c); p >= 0) out.push_back(Phoneme{p, true, false});
  }
  append_word(word, out);
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::vector<Phoneme> read_phoneme_file(std::istream& in) {
  std::vector<Phoneme> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t;
    for (char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    }
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 3) {
      throw std::invalid_argument("phoneme file: line " + std::to_string(line_no) + ": expected 3 fields");
    }
    int symbol = 0;
    try {
      std::size_t used = 0;
      symbol = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::invalid_argument("phoneme file: line " + std::to_string(line_no) + ": bad symbol id");
    }
    Phoneme p{symbol, parse_flag(fields[1], line_no), parse_flag(fields[2], line_no)};
    if (p.is_punctuation && p.is_syllable_nucleus) {
      throw std::invalid_argument("phoneme file: line " + std::to_string(line_no) + ": punctuation marked as nucleus");
    }
    out.push_back(p);
  }
  return out;
}

void write_phoneme_file(std::ostream& out, std::span<const Phoneme> phonemes) {
  for (const auto& p : phonemes) {
    out << p.symbol << ", " << (p.is_punctuation ? 1 : 0) << ", " << (p.is_syllable_nucleus ? 1 : 0) << '\n';
  }
}

}  // namespace stts
