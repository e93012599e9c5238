#pragma once

// Dataset bundle directory:
//   manifest.json    counts, facet names, per-file hashes, content hash
//   texts.tsv        item_id<TAB>template text, catalog order
//   sequences.tsv    user_id<TAB>space-separated item ids, chronological
//   facets.csv       item_id,facet_name,class_label

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "fame/data.hpp"
#include "fame/error.hpp"

namespace fame {

struct Bundle {
  Scheme scheme = Scheme::amazon;
  Catalog catalog;
  SequenceDataset data;
  FacetTable facets;
};

inline std::string sanitize_field(std::string s) {
  for (auto& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

struct PrepareOptions {
  Scheme scheme = Scheme::amazon;
  std::size_t k_core = 5;  // 0 disables the filter
  std::size_t max_len = kDefaultMaxLen;
  std::vector<double> price_edges = default_price_edges();
};

inline Bundle build_bundle(std::vector<Interaction> rows, const std::vector<MetadataRecord>& meta,
                           const PrepareOptions& opt) {
  if (opt.k_core > 0) rows = k_core_filter(std::move(rows), opt.k_core);
  if (rows.empty()) throw InputError("no interactions left after filtering");
  Bundle b;
  b.scheme = opt.scheme;
  b.data = build_sequences(rows, build_catalog(rows), opt.max_len);
  if (b.data.size() == 0) throw InputError("no user has at least 3 interactions");
  // Items only seen by dropped users leave the catalog.
  std::set<std::string> used;
  Catalog full = build_catalog(rows);
  for (const auto& s : b.data.sequences)
    for (auto i : s) used.insert(full.item_ids[i]);
  b.catalog = Catalog::from_ids(std::vector<std::string>(used.begin(), used.end()));
  for (auto& s : b.data.sequences)
    for (auto& i : s) i = *b.catalog.find(full.item_ids[i]);
  b.facets = attach_metadata(b.catalog, meta, opt.scheme, opt.price_edges);
  for (auto& t : b.catalog.texts) t = sanitize_field(t);
  return b;
}

namespace detail {

inline std::string texts_tsv(const Catalog& c) {
  std::string out;
  for (std::size_t i = 0; i < c.size(); ++i) out += c.item_ids[i] + "\t" + c.texts[i] + "\n";
  return out;
}

inline std::string sequences_tsv(const Bundle& b) {
  std::string out;
  for (std::size_t u = 0; u < b.data.size(); ++u) {
    out += b.data.user_ids[u] + "\t";
    const auto& s = b.data.sequences[u];
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (t) out += ' ';
      out += b.catalog.item_ids[s[t]];
    }
    out += "\n";
  }
  return out;
}

}  // namespace detail

inline std::string bundle_manifest(const Bundle& b, const std::string& texts,
                                   const std::string& seqs, const std::string& facets) {
  nlohmann::ordered_json m;
  m["format"] = "fame-bundle";
  m["version"] = 1;
  m["scheme"] = scheme_name(b.scheme);
  m["users"] = b.data.size();
  m["items"] = b.catalog.size();
  std::size_t n = 0;
  for (const auto& s : b.data.sequences) n += s.size();
  m["interactions"] = n;
  m["max_len"] = b.data.max_len;
  m["facets"] = b.facets.facet_names;
  nlohmann::ordered_json files;
  files["texts.tsv"] = hex64(fnv1a64(texts));
  files["sequences.tsv"] = hex64(fnv1a64(seqs));
  files["facets.csv"] = hex64(fnv1a64(facets));
  m["files"] = files;
  m["content_hash"] = hex64(fnv1a64(texts + '\0' + seqs + '\0' + facets));
  return m.dump(2) + "\n";
}

// Returns the content hash. Files are left untouched when the directory
// already holds an identical bundle.
inline std::string write_bundle(const Bundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string texts = detail::texts_tsv(b.catalog);
  const std::string seqs = detail::sequences_tsv(b);
  const std::string facets = facet_table_csv(b.facets, b.catalog);
  const std::string manifest = bundle_manifest(b, texts, seqs, facets);
  const std::string hash = nlohmann::json::parse(manifest)["content_hash"];
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create bundle directory '" + dir + "': " + ec.message());
  const fs::path mpath = root / "manifest.json";
  if (fs::exists(mpath)) {
    try {
      if (read_file(mpath.string()) == manifest) return hash;
    } catch (const IoError&) {
    }
  }
  write_file((root / "texts.tsv").string(), texts);
  write_file((root / "sequences.tsv").string(), seqs);
  write_file((root / "facets.csv").string(), facets);
  write_file(mpath.string(), manifest);
  return hash;
}

inline Bundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file((root / "manifest.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir + "/manifest.json: " + e.what());
  }
  if (m.value("format", "") != "fame-bundle") throw FormatError(dir + " is not a fame bundle");
  auto check = [&](const std::string& name) {
    std::string bytes = read_file((root / name).string());
    if (m["files"].value(name, "") != hex64(fnv1a64(bytes))) {
      throw ConsistencyError(dir + "/" + name + " does not match its manifest hash");
    }
    return bytes;
  };
  Bundle b;
  b.scheme = parse_scheme(m.at("scheme").get<std::string>());
  std::vector<std::string> ids, texts;
  for (const auto& line : split_lines(check("texts.tsv"))) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("texts.tsv: missing tab");
    ids.push_back(line.substr(0, tab));
    texts.push_back(line.substr(tab + 1));
  }
  b.catalog = Catalog::from_ids(ids);
  b.catalog.texts = texts;
  b.data.max_len = m.at("max_len").get<std::size_t>();
  for (const auto& line : split_lines(check("sequences.tsv"))) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("sequences.tsv: missing tab");
    b.data.user_ids.push_back(line.substr(0, tab));
    std::vector<std::size_t> seq;
    for (const auto& tok : whitespace_tokens(std::string_view(line).substr(tab + 1))) {
      auto idx = b.catalog.find(tok);
      if (!idx) throw ConsistencyError("sequences.tsv: unknown item '" + tok + "'");
      seq.push_back(*idx);
    }
    b.data.sequences.push_back(std::move(seq));
  }
  b.facets = parse_facet_table_csv(check("facets.csv"), b.catalog);
  return b;
}

}  // namespace fame
