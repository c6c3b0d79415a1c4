#pragma once

// Closed-lexicon whitespace tokenizer. The corpus generator controls every
// surface form, so there is no subword machinery: one word, one id. Special
// tokens sit at the lowest ids so mask sentinels stay stable across worlds.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ckl/common.hpp"

namespace ckl {

constexpr int kSent0 = 0;
constexpr int kSent1 = 1;
constexpr int kPad = 2;
constexpr int kEos = 3;
constexpr int kUnk = 4;
constexpr int kNumSpecials = 5;

inline const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> toks = {"<mask_0>", "<mask_1>", "<pad>", "<eos>", "<unk>"};
  return toks;
}

struct Vocabulary {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocabulary over_lexicon(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    Vocabulary v;
    v.tokens = special_tokens();
    for (auto& w : words) {
      if (w.empty()) throw ConfigError("vocabulary: empty lexicon word");
      v.tokens.push_back(w);
    }
    v.rebuild_index();
    return v;
  }

  void rebuild_index() {
    index.clear();
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (!index.emplace(tokens[i], static_cast<int>(i)).second)
        throw ConfigError("vocabulary: duplicate token '" + tokens[i] + "'");
    }
  }

  int size() const { return static_cast<int>(tokens.size()); }

  int id(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
  }

  const std::string& token(int i) const {
    if (i < 0 || i >= size()) throw StateError("vocabulary: id " + std::to_string(i) + " out of range");
    return tokens[static_cast<size_t>(i)];
  }

  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> out;
    for (const auto& w : split_ws(text)) out.push_back(id(w));
    return out;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  void save(const std::string& path) const {
    std::string body;
    for (const auto& t : tokens) {
      body += t;
      body += '\n';
    }
    write_text_file(path, body);
  }

  static Vocabulary load(const std::string& path) {
    Vocabulary v;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) v.tokens.push_back(line);
    if (static_cast<int>(v.tokens.size()) < kNumSpecials)
      throw IoError("vocabulary file " + path + ": too few tokens");
    for (int i = 0; i < kNumSpecials; ++i) {
      if (v.tokens[static_cast<size_t>(i)] != special_tokens()[static_cast<size_t>(i)])
        throw IoError("vocabulary file " + path + ": special tokens missing or reordered");
    }
    v.rebuild_index();
    return v;
  }
};

}  // namespace ckl
