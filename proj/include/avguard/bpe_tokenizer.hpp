#pragma once

// Byte-pair-encoding tokenizer driven by a tiktoken-style rank file
// (one "<base64 token> <rank>" pair per line), with the cl100k_base
// pre-tokenization rules.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace avguard::llm {

using TokenId = std::uint32_t;

enum class PreTokenizer {
  kCl100k,  // the cl100k_base split pattern
  kNone,    // the whole text is one piece
};

class BpeTokenizer {
 public:
  BpeTokenizer(std::unordered_map<std::string, TokenId> ranks,
               std::unordered_map<std::string, TokenId> special_tokens = {},
               PreTokenizer pre = PreTokenizer::kCl100k);

  /// Loads a rank file. Throws Error(kVocabLoadError) on unreadable files,
  /// bad base64, duplicate ranks or tokens.
  static BpeTokenizer load(const std::filesystem::path& rank_file, PreTokenizer pre = PreTokenizer::kCl100k);
  /// Parses rank-file content already in memory.
  static BpeTokenizer from_rank_text(std::string_view content, PreTokenizer pre = PreTokenizer::kCl100k);
  /// 256 single-byte tokens, rank = byte value, no merges.
  static BpeTokenizer byte_level(PreTokenizer pre = PreTokenizer::kCl100k);

  /// Special tokens are treated as ordinary text.
  std::vector<TokenId> encode_ordinary(std::string_view text) const;
  /// Special tokens present in the text are emitted as their own ids.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& tokens) const;
  std::size_t count_tokens(std::string_view text) const { return encode_ordinary(text).size(); }

  std::size_t vocab_size() const noexcept { return ranks_.size(); }
  PreTokenizer pre_tokenizer() const noexcept { return pre_; }

  /// Splits text into the pieces BPE is applied to.
  std::vector<std::string_view> split(std::string_view text) const;

 private:
  void encode_piece(std::string_view piece, std::vector<TokenId>& out) const;

  std::unordered_map<std::string, TokenId> ranks_;
  std::unordered_map<TokenId, std::string> decoder_;
  std::unordered_map<std::string, TokenId> special_;
  PreTokenizer pre_;
};

/// The cl100k_base split applied to UTF-8 text (exposed for testing).
std::vector<std::string_view> cl100k_split(std::string_view text);

/// Rough token estimate used when no vocabulary is available: the number of
/// whitespace-separated words.
std::size_t approximate_token_count(std::string_view text);

}  // namespace avguard::llm
