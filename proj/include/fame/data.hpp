#pragma once

// Interaction ingest, k-core filtering, catalog/sequence construction, the
// leave-one-out protocol, facet extraction, text templating, the FEMB matrix
// format and the deterministic pseudo text encoder.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fame/error.hpp"
#include "fame/numerics.hpp"
#include "json.hpp"

namespace fame {

// ---------------------------------------------------------------------------
// Small shared utilities.

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ull) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

inline std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t end = s.find(sep, start);
    out.emplace_back(s.substr(start, end == std::string_view::npos ? end : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

inline std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interactions.

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

// `user<TAB>item<TAB>timestamp` per line; blank lines are skipped.
inline std::vector<Interaction> parse_interactions(const std::string& text) {
  std::vector<Interaction> out;
  const auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto& line = lines[n];
    if (line.empty()) continue;
    const auto fields = split_on(line, '\t');
    const std::string where = "line " + std::to_string(n + 1);
    if (fields.size() != 3) {
      throw ParseError(where + ": expected 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(where + ": empty id");
    std::int64_t ts = 0;
    std::size_t used = 0;
    try {
      ts = std::stoll(fields[2], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != fields[2].size()) {
      throw ParseError(where + ": timestamp '" + fields[2] + "' is not an integer");
    }
    if (ts < 0) throw ParseError(where + ": negative timestamp");
    out.push_back({fields[0], fields[1], ts});
  }
  return out;
}

inline std::vector<Interaction> load_interactions(const std::string& path) {
  try {
    return parse_interactions(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Iteratively drops users and items with fewer than k interactions until no
// more can be removed. Surviving interactions keep their input order.
inline std::vector<Interaction> k_core_filter(std::vector<Interaction> rows, std::size_t k) {
  if (k == 0) throw ParameterError("k_core_filter: k must be >= 1");
  while (true) {
    std::unordered_map<std::string, std::size_t> user_deg, item_deg;
    for (const auto& r : rows) {
      ++user_deg[r.user];
      ++item_deg[r.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(rows.size());
    for (auto& r : rows) {
      if (user_deg[r.user] >= k && item_deg[r.item] >= k) kept.push_back(std::move(r));
    }
    const bool changed = kept.size() != rows.size();
    rows = std::move(kept);
    if (!changed) return rows;
  }
}

// ---------------------------------------------------------------------------
// Catalog and sequences.

struct Catalog {
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::size_t> index_of;
  std::vector<std::string> texts;

  std::size_t size() const noexcept { return item_ids.size(); }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_of.find(id);
    if (it == index_of.end()) return std::nullopt;
    return it->second;
  }

  static Catalog from_ids(std::vector<std::string> ids) {
    Catalog c;
    c.item_ids = std::move(ids);
    for (std::size_t i = 0; i < c.item_ids.size(); ++i) {
      if (!c.index_of.emplace(c.item_ids[i], i).second) {
        throw ConsistencyError("duplicate item id '" + c.item_ids[i] + "' in catalog");
      }
    }
    c.texts.assign(c.item_ids.size(), std::string());
    return c;
  }
};

// Dense indices in ascending external-id order.
inline Catalog build_catalog(const std::vector<Interaction>& rows) {
  std::set<std::string> ids;
  for (const auto& r : rows) ids.insert(r.item);
  return Catalog::from_ids(std::vector<std::string>(ids.begin(), ids.end()));
}

inline constexpr std::size_t kMinSequenceLength = 3;
inline constexpr std::size_t kDefaultMaxLen = 50;

struct SequenceDataset {
  std::vector<std::string> user_ids;
  std::vector<std::vector<std::size_t>> sequences;
  std::size_t max_len = kDefaultMaxLen;

  std::size_t size() const noexcept { return sequences.size(); }
};

// Users in ascending id order; items per user by timestamp with ties kept in
// input order; most recent max_len items retained; users below three items
// dropped.
inline SequenceDataset build_sequences(const std::vector<Interaction>& rows,
                                       const Catalog& catalog,
                                       std::size_t max_len = kDefaultMaxLen) {
  if (max_len < kMinSequenceLength) throw ParameterError("max_len must be at least 3");
  std::map<std::string, std::vector<std::pair<std::int64_t, std::size_t>>> per_user;
  for (const auto& r : rows) {
    auto idx = catalog.find(r.item);
    if (!idx) throw ConsistencyError("item '" + r.item + "' is not in the catalog");
    per_user[r.user].emplace_back(r.timestamp, *idx);
  }
  SequenceDataset ds;
  ds.max_len = max_len;
  for (auto& [user, events] : per_user) {
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::size_t> seq;
    seq.reserve(events.size());
    for (const auto& e : events) seq.push_back(e.second);
    if (seq.size() > max_len) seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(max_len));
    if (seq.size() < kMinSequenceLength) continue;
    ds.user_ids.push_back(user);
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

// Views into one user's sequence under leave-one-out. The training region is
// fed as a single causal input whose row i predicts train_targets[i].
struct LeaveOneOut {
  std::span<const std::size_t> train_input;
  std::span<const std::size_t> train_targets;
  std::span<const std::size_t> valid_input;
  std::size_t valid_target = 0;
  std::span<const std::size_t> test_input;
  std::size_t test_target = 0;
};

inline LeaveOneOut leave_one_out_split(std::span<const std::size_t> seq) {
  if (seq.size() < kMinSequenceLength) {
    throw SplitError("leave-one-out needs at least 3 items, got " + std::to_string(seq.size()));
  }
  const std::size_t t = seq.size();
  LeaveOneOut s;
  s.test_input = seq.first(t - 1);
  s.test_target = seq[t - 1];
  s.valid_input = seq.first(t - 2);
  s.valid_target = seq[t - 2];
  // first t-2 items: inputs [0, t-3), targets [1, t-2)
  s.train_input = seq.first(t - 3);
  s.train_targets = seq.subspan(1, t - 3);
  return s;
}

enum class Split { valid, test };

inline Split parse_split(const std::string& s) {
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ConfigError("split must be 'valid' or 'test', got '" + s + "'");
}

inline const char* split_name(Split s) { return s == Split::valid ? "valid" : "test"; }

// ---------------------------------------------------------------------------
// Item metadata, facets and text templates.

enum class Scheme { amazon, movielens };

inline Scheme parse_scheme(const std::string& s) {
  if (s == "amazon") return Scheme::amazon;
  if (s == "movielens") return Scheme::movielens;
  throw ConfigError("scheme must be 'amazon' or 'movielens', got '" + s + "'");
}

inline const char* scheme_name(Scheme s) { return s == Scheme::amazon ? "amazon" : "movielens"; }

inline std::vector<std::string> facet_names(Scheme s) {
  if (s == Scheme::amazon) return {"category", "brand", "price"};
  return {"genre", "director", "cast"};
}

struct MetadataRecord {
  std::string item_id;
  std::string title;
  std::string description;
  std::vector<std::string> category;  // hierarchy, root first
  std::optional<std::string> brand;
  std::optional<double> price;
  std::vector<std::string> genres;
  std::vector<std::string> directors;
  std::vector<std::string> cast;
};

namespace detail {

inline std::vector<std::string> string_list(const nlohmann::json& j) {
  std::vector<std::string> out;
  if (j.is_string()) {
    out.push_back(j.get<std::string>());
  } else if (j.is_array()) {
    // Raw Amazon dumps nest the hierarchy one level deeper; take the first path.
    if (!j.empty() && j.front().is_array()) return string_list(j.front());
    for (const auto& e : j)
      if (e.is_string()) out.push_back(e.get<std::string>());
  }
  return out;
}

inline std::string opt_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

}  // namespace detail

inline MetadataRecord parse_metadata_record(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ParseError("metadata record is not a JSON object");
  MetadataRecord r;
  for (const char* key : {"item_id", "asin", "id", "movieId"}) {
    auto it = obj.find(key);
    if (it == obj.end()) continue;
    r.item_id = it->is_string() ? it->get<std::string>() : it->dump();
    break;
  }
  if (r.item_id.empty()) throw ParseError("metadata record has no item id");
  r.title = detail::opt_string(obj, "title");
  r.description = detail::opt_string(obj, "description");
  if (auto it = obj.find("category"); it != obj.end()) r.category = detail::string_list(*it);
  if (auto it = obj.find("brand"); it != obj.end() && it->is_string() &&
                                   !it->get<std::string>().empty()) {
    r.brand = it->get<std::string>();
  }
  if (auto it = obj.find("price"); it != obj.end() && it->is_number()) {
    r.price = it->get<double>();
  }
  if (auto it = obj.find("genres"); it != obj.end()) r.genres = detail::string_list(*it);
  if (auto it = obj.find("directors"); it != obj.end()) r.directors = detail::string_list(*it);
  if (auto it = obj.find("cast"); it != obj.end()) r.cast = detail::string_list(*it);
  return r;
}

inline std::vector<MetadataRecord> load_metadata(const std::string& path) {
  std::vector<MetadataRecord> out;
  const auto lines = split_lines(read_file(path));
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    try {
      out.push_back(parse_metadata_record(nlohmann::json::parse(lines[n])));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": line " + std::to_string(n + 1) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ": line " + std::to_string(n + 1) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<double> default_price_edges() {
  return {0, 50, 100, 150, 200, 250, 300, 350, 400, 450};
}

// Bin i covers [edges[i], edges[i+1]); the last bin is open-ended and values
// below edges[0] fall into bin 0.
inline std::size_t price_bin(double price, std::span<const double> edges) {
  if (edges.empty()) throw ParameterError("price edges must not be empty");
  std::size_t bin = 0;
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (price >= edges[i]) bin = i;
  return bin;
}

// Equal-frequency alternative: lower edges of `bins` quantile groups.
inline std::vector<double> quantile_price_edges(std::vector<double> prices, std::size_t bins) {
  if (bins == 0) throw ParameterError("bin count must be positive");
  if (prices.empty()) return default_price_edges();
  std::sort(prices.begin(), prices.end());
  std::vector<double> edges{0.0};
  for (std::size_t b = 1; b < bins; ++b) {
    const double q = prices[std::min(prices.size() - 1, b * prices.size() / bins)];
    if (q > edges.back()) edges.push_back(q);
  }
  return edges;
}

inline std::string price_bin_label(std::size_t bin, std::span<const double> edges) {
  auto fmt = [](double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  };
  if (bin + 1 < edges.size()) return "[" + fmt(edges[bin]) + "," + fmt(edges[bin + 1]) + ")";
  return "[" + fmt(edges[bin]) + ",inf)";
}

// One label per scheme facet; nullopt marks a missing value.
inline std::vector<std::optional<std::string>> extract_facets(
    const MetadataRecord& r, Scheme scheme, std::span<const double> price_edges) {
  auto first_of = [](const std::vector<std::string>& v) -> std::optional<std::string> {
    if (v.empty() || v.front().empty()) return std::nullopt;
    return v.front();
  };
  if (scheme == Scheme::amazon) {
    std::optional<std::string> category;
    if (r.category.size() >= 2 && !r.category[1].empty()) {
      category = r.category[1];
    } else {
      category = first_of(r.category);
    }
    std::optional<std::string> price;
    if (r.price) price = price_bin_label(price_bin(*r.price, price_edges), price_edges);
    return {category, r.brand, price};
  }
  return {first_of(r.genres), first_of(r.directors), first_of(r.cast)};
}

namespace detail {
inline std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}
}  // namespace detail

inline std::string build_text_string(const MetadataRecord& r, Scheme scheme) {
  std::string s = "\"title\": " + r.title + "; \"description\": " + r.description + "; ";
  if (scheme == Scheme::amazon) {
    s += "\"category\": " + detail::join(r.category, ", ") + "; \"brand\": " + r.brand.value_or("");
  } else {
    s += "\"genres\": " + detail::join(r.genres, ", ") +
         "; \"directors\": " + detail::join(r.directors, ", ") +
         "; \"cast\": " + detail::join(r.cast, ", ");
  }
  return s;
}

// Per-facet dense class labels. Class 0 is the missing-value sentinel; the
// observed labels take 1.. in ascending string order.
struct FacetTable {
  std::vector<std::string> facet_names;
  std::vector<std::vector<std::uint32_t>> labels;        // [facet][item]
  std::vector<std::vector<std::string>> class_names;     // [facet][class], [0] = ""

  std::size_t facet_count() const noexcept { return facet_names.size(); }
  std::size_t item_count() const noexcept { return labels.empty() ? 0 : labels.front().size(); }
  std::size_t class_count(std::size_t f) const { return class_names.at(f).size(); }

  // Builds a table from raw per-item labels (nullopt = missing).
  static FacetTable from_raw(std::vector<std::string> names,
                             const std::vector<std::vector<std::optional<std::string>>>& raw) {
    FacetTable t;
    t.facet_names = std::move(names);
    for (std::size_t f = 0; f < t.facet_names.size(); ++f) {
      std::set<std::string> distinct;
      for (const auto& item : raw)
        if (item.at(f)) distinct.insert(*item.at(f));
      std::vector<std::string> classes{""};
      classes.insert(classes.end(), distinct.begin(), distinct.end());
      std::unordered_map<std::string, std::uint32_t> idx;
      for (std::size_t c = 1; c < classes.size(); ++c)
        idx.emplace(classes[c], static_cast<std::uint32_t>(c));
      std::vector<std::uint32_t> lab(raw.size(), 0);
      for (std::size_t i = 0; i < raw.size(); ++i)
        if (raw[i].at(f)) lab[i] = idx.at(*raw[i].at(f));
      t.labels.push_back(std::move(lab));
      t.class_names.push_back(std::move(classes));
    }
    return t;
  }

  // Keeps the listed facets (0-based) in the given order.
  FacetTable select(std::span<const std::size_t> facets) const {
    FacetTable t;
    for (std::size_t f : facets) {
      if (f >= facet_count()) {
        throw ConfigError("facet " + std::to_string(f + 1) + " does not exist (table has " +
                          std::to_string(facet_count()) + ")");
      }
      t.facet_names.push_back(facet_names[f]);
      t.labels.push_back(labels[f]);
      t.class_names.push_back(class_names[f]);
    }
    return t;
  }
};

// Joins metadata onto the catalog: fills catalog texts and returns the facet
// table. Items without a metadata record get empty text and sentinel labels.
inline FacetTable attach_metadata(Catalog& catalog, const std::vector<MetadataRecord>& records,
                                  Scheme scheme, std::span<const double> price_edges) {
  std::unordered_map<std::string, const MetadataRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.item_id, &r);
  const auto names = facet_names(scheme);
  std::vector<std::vector<std::optional<std::string>>> raw(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    auto it = by_id.find(catalog.item_ids[i]);
    MetadataRecord empty;
    empty.item_id = catalog.item_ids[i];
    const MetadataRecord& r = it == by_id.end() ? empty : *it->second;
    catalog.texts[i] = build_text_string(r, scheme);
    raw[i] = extract_facets(r, scheme, price_edges);
  }
  return FacetTable::from_raw(names, raw);
}

// ---------------------------------------------------------------------------
// CSV for facet tables: `item_id,facet_name,class_label`.

namespace detail {
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_parse_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}
}  // namespace detail

inline std::string facet_table_csv(const FacetTable& t, const Catalog& catalog) {
  std::string out = "item_id,facet_name,class_label\n";
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    for (std::size_t f = 0; f < t.facet_count(); ++f) {
      out += detail::csv_field(catalog.item_ids[i]) + "," + detail::csv_field(t.facet_names[f]) +
             "," + detail::csv_field(t.class_names[f][t.labels[f][i]]) + "\n";
    }
  }
  return out;
}

inline FacetTable parse_facet_table_csv(const std::string& text, const Catalog& catalog) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "item_id,facet_name,class_label") {
    throw FormatError("facet CSV header must be 'item_id,facet_name,class_label'");
  }
  std::vector<std::string> names;
  std::unordered_map<std::string, std::size_t> facet_idx;
  std::vector<std::vector<std::optional<std::string>>> raw(catalog.size());
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    auto fields = detail::csv_parse_line(lines[n], n + 1);
    if (fields.size() != 3) {
      throw FormatError("facet CSV line " + std::to_string(n + 1) + ": expected 3 fields");
    }
    auto item = catalog.find(fields[0]);
    if (!item) throw FormatError("facet CSV line " + std::to_string(n + 1) + ": unknown item '" + fields[0] + "'");
    auto [it, inserted] = facet_idx.emplace(fields[1], names.size());
    if (inserted) names.push_back(fields[1]);
    auto& row = raw[*item];
    if (row.size() < names.size()) row.resize(names.size());
    if (!fields[2].empty()) row[it->second] = fields[2];
  }
  for (auto& row : raw) row.resize(names.size());
  return FacetTable::from_raw(names, raw);
}

// ---------------------------------------------------------------------------
// FEMB: "FEMB", u32 version=1, u32 rows, u32 cols, rows*cols f32, all
// little-endian. The sidecar lists one external id per row.

inline constexpr std::uint32_t kFembVersion = 1;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated");
  }
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};
}  // namespace detail

template <typename T>
void append_femb(std::string& out, const Matrix<T>& m) {
  out += "FEMB";
  detail::put_u32(out, kFembVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (T v : m.values()) detail::put_f32(out, static_cast<float>(v));
}

template <typename T>
std::string encode_femb(const Matrix<T>& m) {
  std::string out;
  out.reserve(16 + 4 * m.size());
  append_femb(out, m);
  return out;
}

inline Matrix<float> read_femb(detail::ByteReader& r) {
  if (r.take(4) != "FEMB") throw FormatError("FEMB magic mismatch");
  const std::uint32_t version = r.u32();
  if (version != kFembVersion) {
    throw FormatError("unsupported FEMB version " + std::to_string(version));
  }
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  Matrix<float> m(rows, cols);
  for (auto& v : m.values()) v = r.f32();
  return m;
}

inline Matrix<float> decode_femb(std::string_view bytes) {
  detail::ByteReader r(bytes, "FEMB");
  auto m = read_femb(r);
  if (!r.done()) throw FormatError("FEMB: trailing bytes after payload");
  return m;
}

template <typename T>
void write_embedding_files(const std::string& femb_path, const std::string& ids_path,
                           const Matrix<T>& m, const std::vector<std::string>& ids) {
  if (ids.size() != m.rows()) throw ConsistencyError("id list length differs from row count");
  write_file(femb_path, encode_femb(m));
  std::string sidecar;
  for (const auto& id : ids) sidecar += id + "\n";
  write_file(ids_path, sidecar);
}

// Rows come back in catalog index order regardless of file order.
inline Matrix<float> load_embedding_matrix(const std::string& femb_path,
                                           const std::string& ids_path,
                                           const Catalog& catalog) {
  auto m = decode_femb(read_file(femb_path));
  std::vector<std::string> ids;
  // '#' lines are header comments (the exporter records its encoder there).
  for (auto& line : split_lines(read_file(ids_path)))
    if (!line.empty() && line[0] != '#') ids.push_back(std::move(line));
  if (ids.size() != m.rows()) {
    throw FormatError("sidecar lists " + std::to_string(ids.size()) + " ids but FEMB has " +
                      std::to_string(m.rows()) + " rows");
  }
  if (m.rows() != catalog.size()) {
    throw FormatError("FEMB has " + std::to_string(m.rows()) + " rows but catalog has " +
                      std::to_string(catalog.size()) + " items");
  }
  Matrix<float> out(catalog.size(), m.cols());
  std::vector<bool> seen(catalog.size(), false);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto idx = catalog.find(ids[r]);
    if (!idx) throw FormatError("FEMB sidecar id '" + ids[r] + "' is not in the catalog");
    if (seen[*idx]) throw FormatError("FEMB sidecar repeats id '" + ids[r] + "'");
    seen[*idx] = true;
    std::copy(m.row(r).begin(), m.row(r).end(), out.row(*idx).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic stand-in for a text encoder: the mean of per-token seeded
// Gaussian vectors, L2-normalized.

inline std::vector<float> pseudo_embed(std::string_view text, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ParameterError("pseudo_embed: dim must be >= 1");
  std::vector<double> acc(dim, 0.0);
  const auto tokens = whitespace_tokens(text);
  if (tokens.empty()) return std::vector<float>(dim, 0.0f);
  for (const auto& tok : tokens) {
    Rng rng(fnv1a64(tok) ^ (seed * 0x9E3779B97F4A7C15ull));
    for (auto& a : acc) a += rng.normal();
  }
  double norm = 0.0;
  for (auto& a : acc) {
    a /= static_cast<double>(tokens.size());
    norm += a * a;
  }
  norm = std::sqrt(norm);
  std::vector<float> out(dim);
  for (std::size_t k = 0; k < dim; ++k) out[k] = static_cast<float>(norm > 0 ? acc[k] / norm : 0.0);
  return out;
}

inline Matrix<float> pseudo_embed_catalog(const Catalog& catalog, std::size_t dim,
                                          std::uint64_t seed) {
  Matrix<float> m(catalog.size(), dim);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    auto v = pseudo_embed(catalog.texts[i], dim, seed);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

}  // namespace fame
