#pragma once

// Planted-facet synthetic data. Items carry ground-truth classes in every
// facet; each user has a dominant facet and one or two preferred classes per
// facet, and draws the next item from a preferred class of the dominant facet
// with probability match_prob, otherwise from outside those classes.

#include <cstdint>
#include <string>
#include <vector>

#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/numerics.hpp"

namespace fame {

struct SynthConfig {
  std::size_t users = 300;
  std::size_t items = 60;
  std::size_t facets = 2;
  std::size_t classes = 7;  // per facet
  std::size_t min_len = 8;
  std::size_t max_len = 20;
  double match_prob = 0.9;
  // Chance that a matching draw stays in the class of the previous matching
  // draw instead of picking uniformly among the preferred classes.
  double class_persistence = 0.75;
  std::uint64_t seed = 0;

  void validate() const {
    if (users == 0 || items == 0) throw ParameterError("synth needs users and items");
    if (facets == 0 || facets > 3) throw ParameterError("synth supports 1 to 3 facets");
    if (classes < 2 || classes > items) throw ParameterError("synth classes must be in [2, items]");
    if (min_len < kMinSequenceLength || max_len < min_len) {
      throw ParameterError("synth sequence lengths must satisfy 3 <= min_len <= max_len");
    }
    if (!(match_prob >= 0.0 && match_prob <= 1.0)) throw ParameterError("match_prob must be in [0, 1]");
    if (!(class_persistence >= 0.0 && class_persistence <= 1.0)) {
      throw ParameterError("class_persistence must be in [0, 1]");
    }
  }
};

struct SynthUser {
  std::size_t dominant = 0;
  std::vector<std::vector<std::uint32_t>> preferred;  // [facet] -> classes (0-based)
};

struct SynthData {
  std::vector<Interaction> interactions;
  std::vector<MetadataRecord> metadata;
  std::vector<std::vector<std::uint32_t>> item_class;  // [facet][item], 0-based
  std::vector<SynthUser> users;
};

inline std::string synth_item_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "item%03zu", i);
  return buf;
}

inline std::string synth_user_id(std::size_t u) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "user%04zu", u);
  return buf;
}

inline std::string synth_class_label(std::size_t facet, std::uint32_t c) {
  static const char* names[] = {"genre", "director", "cast"};
  return std::string(names[facet]) + "_" + std::to_string(c);
}

namespace detail {
// Pick uniformly from items whose class (in `facet`) is / is not in `classes`.
inline std::size_t draw_item(Rng& rng, const std::vector<std::uint32_t>& item_class,
                             const std::vector<std::uint32_t>& classes, bool inside) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < item_class.size(); ++i) {
    const bool in = std::find(classes.begin(), classes.end(), item_class[i]) != classes.end();
    if (in == inside) pool.push_back(i);
  }
  if (pool.empty()) return rng.below(item_class.size());
  return pool[rng.below(pool.size())];
}
}  // namespace detail

inline SynthData generate_synth(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthData out;
  // Balanced classes, independently permuted per facet.
  for (std::size_t f = 0; f < cfg.facets; ++f) {
    std::vector<std::size_t> perm(cfg.items);
    for (std::size_t i = 0; i < cfg.items; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    std::vector<std::uint32_t> cls(cfg.items);
    for (std::size_t r = 0; r < cfg.items; ++r)
      cls[perm[r]] = static_cast<std::uint32_t>(r % cfg.classes);
    out.item_class.push_back(std::move(cls));
  }
  for (std::size_t i = 0; i < cfg.items; ++i) {
    MetadataRecord m;
    m.item_id = synth_item_id(i);
    m.title = "Item " + std::to_string(i);
    std::vector<std::string> labels;
    for (std::size_t f = 0; f < cfg.facets; ++f)
      labels.push_back(synth_class_label(f, out.item_class[f][i]));
    m.description = "A " + labels[0] + " title";
    m.genres = {labels[0]};
    if (cfg.facets > 1) m.directors = {labels[1]};
    if (cfg.facets > 2) m.cast = {labels[2]};
    out.metadata.push_back(std::move(m));
  }
  for (std::size_t u = 0; u < cfg.users; ++u) {
    SynthUser user;
    user.dominant = rng.below(cfg.facets);
    for (std::size_t f = 0; f < cfg.facets; ++f) {
      const std::size_t count = 1 + rng.below(2);
      std::vector<std::uint32_t> prefs;
      while (prefs.size() < count) {
        auto c = static_cast<std::uint32_t>(rng.below(cfg.classes));
        if (std::find(prefs.begin(), prefs.end(), c) == prefs.end()) prefs.push_back(c);
      }
      user.preferred.push_back(std::move(prefs));
    }
    const std::size_t len = cfg.min_len + rng.below(cfg.max_len - cfg.min_len + 1);
    const auto& cls = out.item_class[user.dominant];
    const auto& prefs = user.preferred[user.dominant];
    std::uint32_t current = prefs[rng.below(prefs.size())];
    for (std::size_t t = 0; t < len; ++t) {
      const bool match = rng.uniform() < cfg.match_prob;
      std::size_t item;
      if (match) {
        if (rng.uniform() >= cfg.class_persistence) current = prefs[rng.below(prefs.size())];
        item = detail::draw_item(rng, cls, {current}, true);
      } else {
        item = detail::draw_item(rng, cls, prefs, false);
      }
      out.interactions.push_back({synth_user_id(u), synth_item_id(item),
                                  static_cast<std::int64_t>(1000 + t)});
    }
    out.users.push_back(std::move(user));
  }
  return out;
}

}  // namespace fame
