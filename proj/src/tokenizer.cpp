#include "ragaudit/tokenizer.hpp"

#include <cctype>

namespace ragaudit {

namespace special_token {
const char* name(int id) {
  switch (id) {
    case pad: return "[pad]";
    case unk: return "[unk]";
    case start: return "[start]";
    case end: return "[end]";
    case mask: return "[mask]";
  }
  return "[?]";
}
}  // namespace special_token

int TokenSequence::non_special_count() const {
  int n = 0;
  for (bool s : is_special)
    if (!s) ++n;
  return n;
}

void TokenSequence::check() const {
  if (tokens.size() != is_special.size() || tokens.size() != text_spans.size() ||
      tokens.size() != texts.size())
    throw RagError(ErrorCode::invalid_config, "TokenSequence field lengths disagree");
}

namespace {

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c == '\'';
}

void push_special(TokenSequence& seq, int id) {
  seq.tokens.push_back(id);
  seq.is_special.push_back(true);
  seq.text_spans.emplace_back(0, 0);
  seq.texts.emplace_back(special_token::name(id));
}

}  // namespace

TokenSequence tokenize(const std::string& text, int vocab_size) {
  if (vocab_size <= special_token::count)
    throw RagError(ErrorCode::invalid_config, "vocab size must exceed the special-token count");

  TokenSequence seq;
  seq.source = text;
  push_special(seq, special_token::start);

  const int word_ids = vocab_size - special_token::count;
  auto push_word = [&](int begin, int end) {
    const std::string surface = text.substr(static_cast<std::size_t>(begin), static_cast<std::size_t>(end - begin));
    const int id = special_token::count + static_cast<int>(fnv1a64(surface) % static_cast<std::uint64_t>(word_ids));
    seq.tokens.push_back(id);
    seq.is_special.push_back(false);
    seq.text_spans.emplace_back(begin, end);
    seq.texts.push_back(surface);
  };

  const int n = static_cast<int>(text.size());
  int i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[static_cast<std::size_t>(i)]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_word_char(c)) {
      int j = i;
      while (j < n && is_word_char(static_cast<unsigned char>(text[static_cast<std::size_t>(j)]))) ++j;
      push_word(i, j);
      i = j;
    } else {
      push_word(i, i + 1);  // punctuation, one char per token
      ++i;
    }
  }

  push_special(seq, special_token::end);
  return seq;
}

}  // namespace ragaudit
