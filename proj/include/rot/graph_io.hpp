#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include "rot/errors.hpp"
#include "rot/graph.hpp"
#include "rot/hash.hpp"
#include "rot/text.hpp"

namespace rot {

static_assert(std::endian::native == std::endian::little, "graph.bin layout assumes a little-endian host");

inline constexpr std::uint32_t kGraphFormatVersion = 1;
inline constexpr std::string_view kGraphBinaryMagic = "ROTGRAPH";

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, const char* what) {
  s = text::trim(s);
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ParseError(std::string("bad ") + what + ": '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_u64(std::string_view s, const char* what) {
  s = text::trim(s);
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ParseError(std::string("bad ") + what + ": '" + std::string(s) + "'");
  return v;
}

class BinaryWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data) : data_(data) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const auto n = u64();
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw ParseError("graph file truncated or corrupted");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof v).data(), sizeof v);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace detail

/// graph.bin: magic, version, header (tau_edge, provider_id, dim, corpus fingerprint),
/// nodes, raw little-endian embeddings, per-node arc lists, FNV-1a trailer over all
/// preceding bytes.
inline std::string encode_graph_binary(const ThoughtGraph& g) {
  detail::BinaryWriter w;
  w.raw(kGraphBinaryMagic.data(), kGraphBinaryMagic.size());
  w.u32(kGraphFormatVersion);
  w.f64(g.params().tau_edge);
  w.str(g.params().provider_id);
  w.u64(g.params().dim);
  w.u64(g.corpus_fingerprint());
  w.u64(g.node_count());
  for (const auto& n : g.nodes()) {
    w.str(n.id.template_id);
    w.u64(n.id.step_index);
    w.str(n.text);
    w.str(n.template_type);
    w.u64(n.knowledge_tags.size());
    for (const auto& t : n.knowledge_tags) w.str(t);
  }
  const auto emb = g.embedding_matrix();
  w.raw(emb.data(), emb.size() * sizeof(double));
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const auto arcs = g.out_arcs(i);
    w.u64(arcs.size());
    for (const auto& a : arcs) {
      w.u32(a.target);
      w.u8(static_cast<std::uint8_t>(a.kind));
      w.f64(a.weight);
    }
  }
  const auto checksum = fnv1a64(w.buffer());
  w.u64(checksum);
  return std::move(w.buffer());
}

inline ThoughtGraph decode_graph_binary(std::string_view bytes) {
  if (bytes.size() < kGraphBinaryMagic.size() + 12 || bytes.substr(0, kGraphBinaryMagic.size()) != kGraphBinaryMagic)
    throw ParseError("not a thought-graph binary file");
  detail::BinaryReader r(bytes.substr(0, bytes.size() - 8));
  r.take(kGraphBinaryMagic.size());
  if (auto version = r.u32(); version != kGraphFormatVersion)
    throw FormatVersionError("graph.bin version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kGraphFormatVersion) + ")");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a64(bytes.substr(0, bytes.size() - 8))) throw ParseError("graph.bin checksum mismatch (corrupted file)");

  BuildParams params;
  params.tau_edge = r.f64();
  params.provider_id = r.str();
  params.dim = r.u64();
  const auto corpus_fp = r.u64();
  const auto n = r.u64();
  if (n > bytes.size()) throw ParseError("implausible node count");
  std::vector<NodeInfo> nodes(n);
  for (auto& node : nodes) {
    node.id.template_id = r.str();
    node.id.step_index = r.u64();
    node.text = r.str();
    node.template_type = r.str();
    const auto tags = r.u64();
    if (tags > bytes.size()) throw ParseError("implausible tag count");
    for (std::uint64_t k = 0; k < tags; ++k) node.knowledge_tags.insert(r.str());
  }
  if (params.dim != 0 && n > bytes.size() / 8 / params.dim) throw ParseError("implausible embedding size");
  std::vector<double> emb(n * params.dim);
  const auto raw = r.take(emb.size() * sizeof(double));
  std::memcpy(emb.data(), raw.data(), raw.size());
  std::vector<std::vector<Arc>> adjacency(n);
  for (auto& arcs : adjacency) {
    const auto count = r.u64();
    if (count > bytes.size()) throw ParseError("implausible arc count");
    arcs.resize(count);
    for (auto& a : arcs) {
      a.target = r.u32();
      const auto kind = r.u8();
      if (kind > 1) throw ParseError("unknown edge kind in graph.bin");
      a.kind = static_cast<EdgeKind>(kind);
      a.weight = r.f64();
    }
  }
  if (!r.done()) throw ParseError("trailing bytes in graph.bin");
  try {
    return ThoughtGraph::assemble(std::move(nodes), std::move(emb), std::move(adjacency), std::move(params), corpus_fp);
  } catch (const ValidationError& e) {
    throw ParseError(std::string("graph.bin decodes to an invalid graph: ") + e.what());
  }
}

/// GraphML-style XML. All text is sanitized and escaped; embeddings are base64 of
/// little-endian float64; weights use shortest round-trip decimal.
inline void write_graph_xml(const ThoughtGraph& g, std::ostream& out) {
  using text::xml_escape;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n";
  const char* keys[][4] = {
      {"format_version", "graph", "format_version", "int"}, {"tau_edge", "graph", "tau_edge", "double"},
      {"provider_id", "graph", "provider_id", "string"},    {"dim", "graph", "dim", "long"},
      {"corpus_fingerprint", "graph", "corpus_fingerprint", "string"},
      {"template_id", "node", "template_id", "string"},     {"step_index", "node", "step_index", "long"},
      {"template_type", "node", "template_type", "string"}, {"knowledge_tags", "node", "knowledge_tags", "string"},
      {"text", "node", "text", "string"},                   {"embedding", "node", "embedding", "string"},
      {"kind", "edge", "kind", "string"},                   {"weight", "edge", "weight", "double"},
  };
  for (const auto& k : keys)
    out << "  <key id=\"" << k[0] << "\" for=\"" << k[1] << "\" attr.name=\"" << k[2] << "\" attr.type=\"" << k[3]
        << "\"/>\n";
  out << "  <graph id=\"thought_graph\" edgedefault=\"directed\">\n";
  out << "    <data key=\"format_version\">" << kGraphFormatVersion << "</data>\n";
  out << "    <data key=\"tau_edge\">" << detail::format_double(g.params().tau_edge) << "</data>\n";
  out << "    <data key=\"provider_id\">" << xml_escape(g.params().provider_id) << "</data>\n";
  out << "    <data key=\"dim\">" << g.params().dim << "</data>\n";
  out << "    <data key=\"corpus_fingerprint\">" << to_hex(g.corpus_fingerprint()) << "</data>\n";
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const auto& n = g.node(i);
    const auto emb = g.embedding(i);
    out << "    <node id=\"n" << i << "\">"
        << "<data key=\"template_id\">" << xml_escape(n.id.template_id) << "</data>"
        << "<data key=\"step_index\">" << n.id.step_index << "</data>"
        << "<data key=\"template_type\">" << xml_escape(n.template_type) << "</data>"
        << "<data key=\"knowledge_tags\">" << xml_escape(nlohmann::json(n.knowledge_tags).dump()) << "</data>"
        << "<data key=\"text\">" << xml_escape(n.text) << "</data>"
        << "<data key=\"embedding\">"
        << base64::encode(std::string_view(reinterpret_cast<const char*>(emb.data()), emb.size() * sizeof(double)))
        << "</data></node>\n";
  }
  std::size_t e = 0;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    for (const auto& a : g.out_arcs(i))
      out << "    <edge id=\"e" << e++ << "\" source=\"n" << i << "\" target=\"n" << a.target << "\">"
          << "<data key=\"kind\">" << to_string(a.kind) << "</data>"
          << "<data key=\"weight\">" << detail::format_double(a.weight) << "</data></edge>\n";
  out << "  </graph>\n</graphml>\n";
}

inline ThoughtGraph read_graph_xml(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree doc;
  try {
    pt::read_xml(in, doc);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("malformed graph XML: ") + e.what());
  }
  try {
    const auto& graph = doc.get_child("graphml.graph");
    auto data_map = [](const pt::ptree& element) {
      std::map<std::string, std::string> out;
      for (const auto& [tag, child] : element)
        if (tag == "data") out[child.get<std::string>("<xmlattr>.key")] = child.data();
      return out;
    };
    auto need = [](const std::map<std::string, std::string>& m, const std::string& key) -> const std::string& {
      auto it = m.find(key);
      if (it == m.end()) throw ParseError("graph XML missing data '" + key + "'");
      return it->second;
    };
    const auto header = data_map(graph);
    const auto version = detail::parse_u64(need(header, "format_version"), "format_version");
    if (version != kGraphFormatVersion)
      throw FormatVersionError("graph XML version " + std::to_string(version) + " is not supported (expected " +
                               std::to_string(kGraphFormatVersion) + ")");
    BuildParams params;
    params.tau_edge = detail::parse_double(need(header, "tau_edge"), "tau_edge");
    params.provider_id = need(header, "provider_id");
    params.dim = detail::parse_u64(need(header, "dim"), "dim");
    const auto fp = from_hex(need(header, "corpus_fingerprint"));
    if (!fp) throw ParseError("bad corpus_fingerprint");

    std::vector<NodeInfo> nodes;
    std::vector<double> emb;
    std::map<std::string, std::uint32_t> xml_ids;
    for (const auto& [tag, child] : graph) {
      if (tag != "node") continue;
      const auto d = data_map(child);
      NodeInfo n;
      n.id.template_id = need(d, "template_id");
      n.id.step_index = detail::parse_u64(need(d, "step_index"), "step_index");
      n.template_type = need(d, "template_type");
      n.knowledge_tags = nlohmann::json::parse(need(d, "knowledge_tags")).get<TagSet>();
      n.text = need(d, "text");
      auto bytes = base64::decode(need(d, "embedding"));
      if (!bytes || bytes->size() != params.dim * sizeof(double)) throw ParseError("bad embedding for " + to_string(n.id));
      const auto offset = emb.size();
      emb.resize(offset + params.dim);
      std::memcpy(emb.data() + offset, bytes->data(), bytes->size());
      if (!xml_ids.emplace(child.get<std::string>("<xmlattr>.id"), static_cast<std::uint32_t>(nodes.size())).second)
        throw ParseError("duplicate XML node id");
      nodes.push_back(std::move(n));
    }
    std::vector<std::vector<Arc>> adjacency(nodes.size());
    auto lookup = [&](const std::string& id) {
      auto it = xml_ids.find(id);
      if (it == xml_ids.end()) throw ParseError("edge references unknown node '" + id + "'");
      return it->second;
    };
    for (const auto& [tag, child] : graph) {
      if (tag != "edge") continue;
      const auto d = data_map(child);
      const auto from = lookup(child.get<std::string>("<xmlattr>.source"));
      const auto to = lookup(child.get<std::string>("<xmlattr>.target"));
      adjacency[from].push_back(
          Arc{to, edge_kind_from_string(need(d, "kind")), detail::parse_double(need(d, "weight"), "weight")});
    }
    return ThoughtGraph::assemble(std::move(nodes), std::move(emb), std::move(adjacency), std::move(params), *fp);
  } catch (const pt::ptree_error& e) {
    throw ParseError(std::string("graph XML structure: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("graph XML tags: ") + e.what());
  } catch (const ValidationError& e) {
    throw ParseError(std::string("graph XML decodes to an invalid graph: ") + e.what());
  }
}

inline void save_graph_binary(const ThoughtGraph& g, const std::filesystem::path& path) {
  detail::write_file(path, encode_graph_binary(g));
}

inline void save_graph_xml(const ThoughtGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_graph_xml(g, out);
  if (!out) throw Error("write failed: " + path.string());
}

/// Writes graph.bin or graph.xml depending on the extension (`.xml` selects XML).
inline void save_graph(const ThoughtGraph& g, const std::filesystem::path& path) {
  if (path.extension() == ".xml") save_graph_xml(g, path);
  else save_graph_binary(g, path);
}

/// Loads either format, detected from the file's leading bytes.
inline ThoughtGraph load_graph(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (std::string_view(bytes).substr(0, kGraphBinaryMagic.size()) == kGraphBinaryMagic) return decode_graph_binary(bytes);
  std::istringstream in(bytes);
  return read_graph_xml(in);
}

}  // namespace rot
