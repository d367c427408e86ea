#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcasr/ctc.hpp"

namespace dcasr {

// Character vocabulary. Index 0 is the CTC blank; "<eos>" doubles as
// start-of-speech; "<space>" spells ' '.
class Vocab {
 public:
  static constexpr const char* kBlankToken = "<blank>";
  static constexpr const char* kEosToken = "<eos>";
  static constexpr const char* kSpaceToken = "<space>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocab() = default;

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.empty() || tokens_[0] != kBlankToken) {
      throw std::invalid_argument("vocab: index 0 must be " + std::string(kBlankToken));
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) {
        throw std::invalid_argument("vocab: duplicate token '" + tokens_[i] + "'");
      }
      if (tokens_[i] != kBlankToken && tokens_[i] != kEosToken && tokens_[i] != kSpaceToken &&
          tokens_[i] != kUnkToken && tokens_[i].size() != 1) {
        throw std::invalid_argument("vocab: token '" + tokens_[i] +
                                    "' is neither reserved nor a single character");
      }
    }
    if (!index_.count(kEosToken)) throw std::invalid_argument("vocab: missing <eos>");
  }

  // Reserved tokens followed by the sorted distinct characters of corpus.
  static Vocab from_texts(const std::vector<std::string>& corpus) {
    std::set<char> chars;
    for (const auto& s : corpus)
      for (char c : s)
        if (c != ' ') chars.insert(c);
    std::vector<std::string> tokens{kBlankToken, kEosToken, kSpaceToken, kUnkToken};
    for (char c : chars) tokens.emplace_back(1, c);
    return Vocab(std::move(tokens));
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("vocab: cannot open " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      tokens.push_back(line);
    }
    return Vocab(std::move(tokens));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("vocab: cannot write " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t blank() const { return ctc::kBlank; }
  std::size_t eos() const { return index_.at(kEosToken); }
  std::optional<std::size_t> unk() const {
    auto it = index_.find(kUnkToken);
    return it == index_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
  }
  bool is_reserved(std::size_t id) const { return id == blank() || id == eos(); }

  LabelSequence encode(const std::string& text, bool allow_unk = true) const {
    LabelSequence ids;
    for (char c : text) {
      const std::string key = c == ' ' ? std::string(kSpaceToken) : std::string(1, c);
      auto it = index_.find(key);
      if (it != index_.end()) {
        ids.push_back(it->second);
      } else if (allow_unk && unk()) {
        ids.push_back(*unk());
      } else {
        throw std::invalid_argument(std::string("vocab: unknown character '") + c + "'");
      }
    }
    return ids;
  }

  std::string decode(const LabelSequence& ids) const {
    std::string out;
    for (std::size_t id : ids) {
      if (id >= tokens_.size()) throw std::out_of_range("vocab: id " + std::to_string(id));
      const std::string& t = tokens_[id];
      if (t == kSpaceToken) {
        out += ' ';
      } else if (t.size() == 1) {
        out += t;
      } else {
        out += t;
      }
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace dcasr
