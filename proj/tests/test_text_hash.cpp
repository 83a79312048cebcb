#include <gtest/gtest.h>

#include <random>
#include <string>

#include "rot/hash.hpp"
#include "rot/text.hpp"

using namespace rot;

TEST(Fnv1a, KnownVectors) {
  // published FNV-1a 64-bit test vectors
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Fnv1a, HexRoundTrip) {
  for (std::uint64_t v : {0ULL, 1ULL, 0xdeadbeefcafef00dULL, ~0ULL}) {
    const auto h = to_hex(v);
    EXPECT_EQ(h.size(), 16u);
    EXPECT_EQ(from_hex(h), v);
  }
}

TEST(Base64, RoundTripRandomBytes) {
  std::mt19937_64 gen(11);
  for (int n = 0; n < 200; ++n) {
    std::string bytes(gen() % 40, '\0');
    for (char& c : bytes) c = static_cast<char>(gen() & 0xff);
    const auto enc = base64::encode(bytes);
    const auto dec = base64::decode(enc);
    ASSERT_TRUE(dec);
    EXPECT_EQ(*dec, bytes);
  }
  EXPECT_EQ(base64::encode("foobar"), "Zm9vYmFy");
  EXPECT_EQ(base64::encode("fo"), "Zm8=");
  EXPECT_FALSE(base64::decode("Zm9v!mFy"));
}

TEST(Sanitize, DropsInvalidUtf8AndControlChars) {
  EXPECT_EQ(text::sanitize("ok\x01text"), "oktext");
  EXPECT_EQ(text::sanitize(std::string("a\xff" "b")), "ab");
  EXPECT_EQ(text::sanitize("tab\tnewline\ncr\r"), "tab\tnewline\ncr\r");
  EXPECT_EQ(text::sanitize("caf\xc3\xa9"), "caf\xc3\xa9");
  // overlong encoding of '/'
  EXPECT_EQ(text::sanitize(std::string("\xc0\xaf")), "");
}

TEST(Sanitize, IdempotentAndNeverLonger) {
  std::mt19937_64 gen(5);
  for (int n = 0; n < 2000; ++n) {
    std::string raw(gen() % 32, '\0');
    for (char& c : raw) c = static_cast<char>(gen() & 0xff);
    const auto once = text::sanitize(raw);
    EXPECT_LE(once.size(), raw.size());
    EXPECT_EQ(text::sanitize(once), once);
    EXPECT_TRUE(text::is_xml_safe(once));
  }
}

TEST(XmlEscape, ReservedCharacters) {
  EXPECT_EQ(text::xml_escape("<a & 'b' \"c\">\r"), "&lt;a &amp; &apos;b&apos; &quot;c&quot;&gt;&#13;");
}

TEST(Casefold, AsciiOnly) {
  EXPECT_EQ(text::casefold("HowEVER"), "however");
  EXPECT_TRUE(text::iequals("Algebra", "ALGEBRA"));
  EXPECT_FALSE(text::iequals("Algebra", "Algebr"));
}
