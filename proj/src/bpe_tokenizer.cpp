#include "avguard/bpe_tokenizer.hpp"

#include <openssl/evp.h>
#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <limits>

#include "avguard/error.hpp"
#include "avguard/text_util.hpp"

namespace avguard::llm {

namespace {

[[noreturn]] void vocab_error(const std::string& why) { throw Error(ErrorCode::kVocabLoadError, why); }

std::string decode_base64(std::string_view b64) {
  if (b64.empty() || b64.size() % 4 != 0) vocab_error("bad base64 token '" + std::string(b64) + "'");
  std::string out(b64.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(b64.data()), static_cast<int>(b64.size()));
  if (n < 0) vocab_error("bad base64 token '" + std::string(b64) + "'");
  std::size_t padding = 0;
  if (b64.back() == '=') ++padding;
  if (b64.size() >= 2 && b64[b64.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

// Character classes of the cl100k_base split pattern.
struct CodePoint {
  std::size_t offset;
  std::size_t length;
  UChar32 value;
  bool letter;
  bool number;
  bool space;

  bool other() const noexcept { return !letter && !number && !space; }
  bool newline() const noexcept { return value == '\r' || value == '\n'; }
};

std::vector<CodePoint> decode_utf8(std::string_view text) {
  std::vector<CodePoint> cps;
  cps.reserve(text.size());
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(s, i, length, c);
    CodePoint cp{static_cast<std::size_t>(start), static_cast<std::size_t>(i - start), c, false, false, false};
    if (c >= 0) {
      const auto mask = U_GET_GC_MASK(c);
      cp.letter = (mask & U_GC_L_MASK) != 0;
      cp.number = (mask & U_GC_N_MASK) != 0;
      cp.space = u_isUWhiteSpace(c);
    }
    cps.push_back(cp);
  }
  return cps;
}

UChar32 fold_ascii(UChar32 c) {
  if (c >= 'A' && c <= 'Z') return c - 'A' + 'a';
  if (c == 0x017F) return 's';  // LATIN SMALL LETTER LONG S case-folds to s
  return c;
}

// End (exclusive, in code points) of the piece starting at i.
std::size_t piece_end(const std::vector<CodePoint>& cps, std::size_t i) {
  const std::size_t n = cps.size();
  auto at = [&](std::size_t k) -> const CodePoint* { return k < n ? &cps[k] : nullptr; };

  // '(?i:'s|'t|'re|'ve|'m|'ll|'d)
  if (cps[i].value == '\'' && i + 1 < n) {
    const UChar32 a = fold_ascii(cps[i + 1].value);
    if (a == 's' || a == 't' || a == 'm' || a == 'd') return i + 2;
    if (i + 2 < n) {
      const UChar32 b = fold_ascii(cps[i + 2].value);
      if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) return i + 3;
    }
  }
  // [^\r\n\p{L}\p{N}]?\p{L}+
  {
    std::size_t j = i;
    if (!cps[i].letter && !cps[i].number && !cps[i].newline() && at(i + 1) && cps[i + 1].letter) j = i + 1;
    if (cps[j].letter) {
      while (j < n && cps[j].letter) ++j;
      return j;
    }
  }
  // \p{N}{1,3}
  if (cps[i].number) {
    std::size_t j = i;
    while (j < n && j - i < 3 && cps[j].number) ++j;
    return j;
  }
  // " ?[^\s\p{L}\p{N}]+[\r\n]*"
  {
    std::size_t k = i;
    if (cps[i].value == ' ' && at(i + 1) && cps[i + 1].other()) k = i + 1;
    if (cps[k].other()) {
      std::size_t j = k;
      while (j < n && cps[j].other()) ++j;
      while (j < n && cps[j].newline()) ++j;
      return j;
    }
  }
  // Remaining alternatives all start with whitespace.
  std::size_t run_end = i;
  while (run_end < n && cps[run_end].space) ++run_end;
  if (run_end == i) return i + 1;  // unreachable for classified input
  // \s*[\r\n]+
  for (std::size_t k = run_end; k > i; --k) {
    if (cps[k - 1].newline()) return k;
  }
  // \s+(?!\S)
  if (run_end == n) return run_end;
  if (run_end - 1 > i) return run_end - 1;
  // \s+
  return run_end;
}

constexpr TokenId kNoRank = std::numeric_limits<TokenId>::max();

}  // namespace

std::vector<std::string_view> cl100k_split(std::string_view text) {
  std::vector<std::string_view> pieces;
  const auto cps = decode_utf8(text);
  std::size_t i = 0;
  while (i < cps.size()) {
    const std::size_t j = piece_end(cps, i);
    const std::size_t begin = cps[i].offset;
    const std::size_t end = cps[j - 1].offset + cps[j - 1].length;
    pieces.push_back(text.substr(begin, end - begin));
    i = j;
  }
  return pieces;
}

std::size_t approximate_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

BpeTokenizer::BpeTokenizer(std::unordered_map<std::string, TokenId> ranks,
                           std::unordered_map<std::string, TokenId> special_tokens, PreTokenizer pre)
    : ranks_(std::move(ranks)), special_(std::move(special_tokens)), pre_(pre) {
  for (const auto& [bytes, rank] : ranks_) {
    if (bytes.empty()) vocab_error("empty token");
    if (rank == kNoRank) vocab_error("rank out of range");
    if (!decoder_.emplace(rank, bytes).second) vocab_error("duplicate rank " + std::to_string(rank));
  }
  for (const auto& [bytes, rank] : special_) {
    if (bytes.empty()) vocab_error("empty special token");
    if (!decoder_.emplace(rank, bytes).second) vocab_error("special token rank collides: " + std::to_string(rank));
  }
}

BpeTokenizer BpeTokenizer::from_rank_text(std::string_view content, PreTokenizer pre) {
  std::unordered_map<std::string, TokenId> ranks;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = text::trim(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos) vocab_error("line " + std::to_string(line_no) + ": expected '<base64> <rank>'");
    const auto rank_text = text::trim(line.substr(sp + 1));
    std::uint64_t rank = 0;
    if (rank_text.empty()) vocab_error("line " + std::to_string(line_no) + ": missing rank");
    for (char c : rank_text) {
      if (c < '0' || c > '9') vocab_error("line " + std::to_string(line_no) + ": bad rank");
      rank = rank * 10 + static_cast<std::uint64_t>(c - '0');
      if (rank >= kNoRank) vocab_error("line " + std::to_string(line_no) + ": rank too large");
    }
    auto bytes = decode_base64(line.substr(0, sp));
    if (!ranks.emplace(std::move(bytes), static_cast<TokenId>(rank)).second) {
      vocab_error("line " + std::to_string(line_no) + ": duplicate token");
    }
  }
  if (ranks.empty()) vocab_error("empty vocabulary");
  return BpeTokenizer(std::move(ranks), {}, pre);
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& rank_file, PreTokenizer pre) {
  std::string content;
  try {
    content = text::read_file(rank_file);
  } catch (const Error& e) {
    vocab_error(e.what());
  }
  return from_rank_text(content, pre);
}

BpeTokenizer BpeTokenizer::byte_level(PreTokenizer pre) {
  std::unordered_map<std::string, TokenId> ranks;
  for (int b = 0; b < 256; ++b) ranks.emplace(std::string(1, static_cast<char>(b)), static_cast<TokenId>(b));
  return BpeTokenizer(std::move(ranks), {}, pre);
}

std::vector<std::string_view> BpeTokenizer::split(std::string_view text) const {
  if (text.empty()) return {};
  if (pre_ == PreTokenizer::kNone) return {text};
  return cl100k_split(text);
}

void BpeTokenizer::encode_piece(std::string_view piece, std::vector<TokenId>& out) const {
  auto rank_of = [&](std::string_view bytes) -> TokenId {
    const auto it = ranks_.find(std::string(bytes));
    return it == ranks_.end() ? kNoRank : it->second;
  };
  if (const TokenId whole = rank_of(piece); whole != kNoRank) {
    out.push_back(whole);
    return;
  }
  // Lowest-rank adjacent merge until no pair is in the vocabulary. parts[k]
  // holds the start of segment k and the rank of merging it with segment k+1.
  struct Part {
    std::size_t start;
    TokenId rank;
  };
  std::vector<Part> parts;
  parts.reserve(piece.size() + 1);
  for (std::size_t i = 0; i + 1 < piece.size(); ++i) parts.push_back({i, rank_of(piece.substr(i, 2))});
  parts.push_back({piece.size() - 1, kNoRank});
  parts.push_back({piece.size(), kNoRank});

  auto pair_rank = [&](std::size_t k) -> TokenId {
    if (k + 3 >= parts.size()) return kNoRank;
    return rank_of(piece.substr(parts[k].start, parts[k + 3].start - parts[k].start));
  };
  while (true) {
    TokenId best = kNoRank;
    std::size_t at = 0;
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
      if (parts[k].rank < best) {
        best = parts[k].rank;
        at = k;
      }
    }
    if (best == kNoRank) break;
    if (at > 0) parts[at - 1].rank = pair_rank(at - 1);
    parts[at].rank = pair_rank(at);
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(at) + 1);
  }
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    const auto segment = piece.substr(parts[k].start, parts[k + 1].start - parts[k].start);
    const TokenId id = rank_of(segment);
    if (id == kNoRank) {
      throw Error(ErrorCode::kVocabLoadError, "vocabulary cannot encode byte sequence of length " +
                                                  std::to_string(segment.size()));
    }
    out.push_back(id);
  }
}

std::vector<TokenId> BpeTokenizer::encode_ordinary(std::string_view text) const {
  std::vector<TokenId> out;
  for (auto piece : split(text)) encode_piece(piece, out);
  return out;
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
  if (special_.empty()) return encode_ordinary(text);
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best = std::string_view::npos;
    const std::pair<const std::string, TokenId>* which = nullptr;
    for (const auto& entry : special_) {
      const auto at = text.find(entry.first, pos);
      if (at < best || (at == best && at != std::string_view::npos && entry.first.size() > which->first.size())) {
        best = at;
        which = &entry;
      }
    }
    const auto chunk = text.substr(pos, best == std::string_view::npos ? std::string_view::npos : best - pos);
    for (auto piece : split(chunk)) encode_piece(piece, out);
    if (best == std::string_view::npos) break;
    out.push_back(which->second);
    pos = best + which->first.size();
  }
  return out;
}

std::string BpeTokenizer::decode(const std::vector<TokenId>& tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    const auto it = decoder_.find(t);
    if (it == decoder_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown token id " + std::to_string(t));
    out += it->second;
  }
  return out;
}

}  // namespace avguard::llm
