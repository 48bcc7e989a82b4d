#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ragaudit/common.hpp"

namespace ragaudit {

/// Fixed special-token ids shared by the tokenizer and the reference
/// encoder's embedding table.
namespace special_token {
constexpr int pad = 0;
constexpr int unk = 1;
constexpr int start = 2;
constexpr int end = 3;
constexpr int mask = 4;
constexpr int count = 5;
const char* name(int id);
}  // namespace special_token

struct TokenSequence {
  std::vector<int> tokens;
  std::vector<bool> is_special;
  std::vector<std::pair<int, int>> text_spans;  // [begin, end) into source
  std::vector<std::string> texts;               // surface form per position
  std::string source;

  int size() const { return static_cast<int>(tokens.size()); }
  int non_special_count() const;
  void check() const;  // length agreement; throws invalid_config
};

/// Whitespace + punctuation splitting wrapped in [start] ... [end].
/// Word ids hash into [special_token::count, vocab_size).
TokenSequence tokenize(const std::string& text, int vocab_size);

}  // namespace ragaudit
