#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include "avguard/bpe_tokenizer.hpp"
#include "avguard/error.hpp"
#include "reference_bpe.hpp"
#include "test_support.hpp"

using namespace avguard;
using namespace avguard::llm;

namespace {

const std::vector<std::string> kSamples = {
    "",
    "a",
    "abc",
    "hello world",
    "The vehicle keeps a safe distance.",
    "Current speed 32 km/h",
    "steering angle -12 degrees",
    "It's raining, we'll be late; don't worry.",
    "1234567890",
    "   leading and trailing spaces   ",
    "line one\nline two\r\n\nline three",
    "tabs\tand\tmore\t\ttabs",
    "Straße café naïve",
    "東京 ルート 안전 運転",
    "Привет водитель!",
    "emoji 🚗💨 on the road",
    "{\"drive\":{\"steer_deg\":10,\"speed_kmh\":25}}",
    "How many pedestrians are in the scene? There are 4 pedestrians.",
    "a  b   c    d",
    "!!!???...,,,",
};

// Counts produced by tiktoken over the same rank files (tests/tools/make_toy_vocab.py).
const std::vector<std::size_t> kToyCounts = {0, 1, 3, 8, 7, 6, 6, 22, 9, 21, 17, 15, 3, 4, 3, 20, 31, 14, 10, 12};
const std::vector<std::size_t> kCl100kCounts = {0, 1, 1, 2, 7, 6, 6, 13, 4, 6, 8, 7, 5, 14, 7, 9, 15, 14, 7, 4};

std::string toy_path() { return testing_support::data_path("toy_vocab.tiktoken"); }

const BpeTokenizer& toy() {
  static const BpeTokenizer tok = BpeTokenizer::load(toy_path());
  return tok;
}

bool is_ascii(const std::string& s) {
  for (unsigned char c : s) {
    if (c >= 0x80) return false;
  }
  return true;
}

std::vector<std::string> owned(const std::vector<std::string_view>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Bpe, EmptyAndByteLevel) {
  const auto bytes = BpeTokenizer::byte_level();
  EXPECT_EQ(bytes.count_tokens(""), 0u);
  EXPECT_EQ(bytes.count_tokens("abc"), 3u);
  EXPECT_EQ(bytes.encode_ordinary("abc"), (std::vector<TokenId>{97, 98, 99}));
  EXPECT_EQ(bytes.vocab_size(), 256u);
}

TEST(Bpe, ToyVocabularyMatchesFrozenCounts) {
  ASSERT_EQ(toy().vocab_size(), 550u);
  for (std::size_t i = 0; i < kSamples.size(); ++i) {
    EXPECT_EQ(toy().count_tokens(kSamples[i]), kToyCounts[i]) << i << ": " << kSamples[i];
  }
}

TEST(Bpe, ToyVocabularyMatchesReferenceMerge) {
  const auto ranks = reference::load_ranks(toy_path());
  for (const auto& s : kSamples) {
    EXPECT_EQ(toy().count_tokens(s), reference::count_pieces(ranks, owned(toy().split(s)))) << s;
  }
}

TEST(Bpe, SplitMatchesReferencePatternOnAscii) {
  for (const auto& s : kSamples) {
    if (!is_ascii(s)) continue;
    EXPECT_EQ(owned(cl100k_split(s)), reference::ascii_split(s)) << s;
  }
}

TEST(Bpe, SplitKeepsUnicodeLettersTogether) {
  EXPECT_EQ(owned(cl100k_split("Straße café")), (std::vector<std::string>{"Straße", " café"}));
  EXPECT_EQ(owned(cl100k_split("12345")), (std::vector<std::string>{"123", "45"}));
}

TEST(Bpe, DecodeEncodeIdentityOnRandomUtf8) {
  std::mt19937_64 rng(1234);
  const auto bytes = BpeTokenizer::byte_level();
  for (int i = 0; i < 1000; ++i) {
    const auto s = testing_support::random_utf8(rng, 40);
    ASSERT_EQ(toy().decode(toy().encode_ordinary(s)), s);
    ASSERT_EQ(bytes.decode(bytes.encode_ordinary(s)), s);
  }
}

TEST(Bpe, SpecialTokens) {
  std::unordered_map<std::string, TokenId> ranks;
  for (int b = 0; b < 256; ++b) ranks[std::string(1, static_cast<char>(b))] = static_cast<TokenId>(b);
  BpeTokenizer tok(ranks, {{"<|end|>", 1000}});
  EXPECT_EQ(tok.encode("a<|end|>"), (std::vector<TokenId>{97, 1000}));
  EXPECT_EQ(tok.encode_ordinary("a<|end|>").size(), 8u);
  EXPECT_EQ(tok.decode({97, 1000}), "a<|end|>");
}

TEST(Bpe, RankFileErrors) {
  EXPECT_THROW(BpeTokenizer::load("/nonexistent.tiktoken"), Error);
  EXPECT_THROW(BpeTokenizer::from_rank_text("!!!! 0\n"), Error);
  EXPECT_THROW(BpeTokenizer::from_rank_text("YQ== 0\nYg== 0\n"), Error);
  EXPECT_THROW(BpeTokenizer::from_rank_text("YQ== 0\nYQ== 1\n"), Error);
  EXPECT_NO_THROW(BpeTokenizer::from_rank_text("YQ== 0\n\nYg== 1\n"));
}

TEST(Bpe, ApproximateCount) {
  EXPECT_EQ(approximate_token_count(""), 0u);
  EXPECT_EQ(approximate_token_count("  one two\nthree  "), 3u);
}

// Runs only when a cl100k_base rank file is supplied through the environment.
TEST(Bpe, Cl100kMatchesFrozenCounts) {
  const char* path = std::getenv("AVGUARD_CL100K_RANKS");
  if (!path || !*path) GTEST_SKIP() << "AVGUARD_CL100K_RANKS not set";
  const auto tok = BpeTokenizer::load(path);
  EXPECT_EQ(tok.encode_ordinary("hello world"), (std::vector<TokenId>{15339, 1917}));
  const auto ranks = reference::load_ranks(path);
  for (std::size_t i = 0; i < kSamples.size(); ++i) {
    EXPECT_EQ(tok.count_tokens(kSamples[i]), kCl100kCounts[i]) << kSamples[i];
    EXPECT_EQ(tok.count_tokens(kSamples[i]), reference::count_pieces(ranks, owned(tok.split(kSamples[i]))));
  }
}
