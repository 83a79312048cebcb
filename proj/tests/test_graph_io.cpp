#include <gtest/gtest.h>

#include <cstdlib>
#include <random>
#include <sstream>

#include "rot/graph_io.hpp"
#include "support.hpp"

using namespace rot;

namespace {

ThoughtGraph awkward_graph() {
  std::vector<Template> corpus{
      Template{"t<1>&\"q\"", "alg'ebra", {"tag & more", "<b>"},
               {"x < y && y > z", "]]> cdata end", "quote \" and apostrophe '", "carriage\rreturn\nnewline\ttab"}},
      Template{"t2", "algebra", {}, {"  leading and trailing spaces  ", "unicode \xce\xb1\xce\xb2 \xe2\x88\x91 \xf0\x9f\x99\x82"}},
      Template{"t3", "geo", {"x"}, {"control\x01" "char dropped", "plain"}},
  };
  HashEmbedder e(6, 3);
  return build_graph(corpus, e, 0.6);
}

bool python_parses(const std::filesystem::path& xml) {
  const std::string cmd = "python3 -c \"import sys, xml.etree.ElementTree as E; E.parse(sys.argv[1])\" '" +
                          xml.string() + "' >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

bool have_python() { return std::system("python3 -c 'import xml.etree.ElementTree' >/dev/null 2>&1") == 0; }

}  // namespace

TEST(GraphIO, BinaryRoundTripIsExact) {
  const auto g = awkward_graph();
  const auto back = decode_graph_binary(encode_graph_binary(g));
  EXPECT_TRUE(back.equivalent(g, 0.0));
  EXPECT_EQ(back.fingerprint(), g.fingerprint());
  EXPECT_EQ(encode_graph_binary(back), encode_graph_binary(g));
}

TEST(GraphIO, XmlRoundTripIsExact) {
  const auto g = awkward_graph();
  std::stringstream ss;
  write_graph_xml(g, ss);
  const auto back = read_graph_xml(ss);
  EXPECT_TRUE(back.equivalent(g, 0.0));
  EXPECT_EQ(back.fingerprint(), g.fingerprint());
  EXPECT_EQ(back.node(3).text, "carriage\rreturn\nnewline\ttab");
  EXPECT_EQ(back.node(4).text, "  leading and trailing spaces  ");
  EXPECT_EQ(back.node(6).text, "controlchar dropped");
}

TEST(GraphIO, XmlParsesWithPythonElementTree) {
  if (!have_python()) GTEST_SKIP() << "python3 not available";
  rot_test::TempDir dir("gio");
  save_graph(awkward_graph(), dir / "g.xml");
  EXPECT_TRUE(python_parses(dir / "g.xml"));
}

TEST(GraphIO, LoadDetectsFormat) {
  rot_test::TempDir dir("gio");
  const auto g = awkward_graph();
  save_graph(g, dir / "g.bin");
  save_graph(g, dir / "g.xml");
  EXPECT_EQ(load_graph(dir / "g.bin").fingerprint(), g.fingerprint());
  EXPECT_EQ(load_graph(dir / "g.xml").fingerprint(), g.fingerprint());
}

TEST(GraphIO, CorruptionDetected) {
  const auto bytes = encode_graph_binary(awkward_graph());
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_graph_binary(flipped), ParseError);
  EXPECT_THROW(decode_graph_binary(bytes.substr(0, bytes.size() - 9)), ParseError);
  EXPECT_THROW(decode_graph_binary("garbage"), ParseError);
}

TEST(GraphIO, FutureVersionRejected) {
  auto bytes = encode_graph_binary(awkward_graph());
  bytes[8] = 2;  // version field follows the 8-byte magic
  EXPECT_THROW(decode_graph_binary(bytes), FormatVersionError);

  std::stringstream ss;
  write_graph_xml(awkward_graph(), ss);
  auto xml = ss.str();
  const std::string tag = "<data key=\"format_version\">1</data>";
  xml.replace(xml.find(tag), tag.size(), "<data key=\"format_version\">9</data>");
  std::istringstream in(xml);
  EXPECT_THROW(read_graph_xml(in), FormatVersionError);
}

TEST(GraphIO, MalformedXmlRejected) {
  std::istringstream in("<graphml><graph>");
  EXPECT_THROW(read_graph_xml(in), ParseError);
}

TEST(GraphIO, RandomGraphsRoundTrip) {
  std::mt19937_64 gen(17);
  for (int k = 0; k < 30; ++k) {
    const auto corpus = rot_test::random_corpus(gen, 40);
    HashEmbedder e(3, gen());
    const auto g = build_graph(corpus, e, 0.75);
    std::stringstream ss;
    write_graph_xml(g, ss);
    EXPECT_TRUE(read_graph_xml(ss).equivalent(g, 0.0));
    EXPECT_TRUE(decode_graph_binary(encode_graph_binary(g)).equivalent(g, 0.0));
  }
}
