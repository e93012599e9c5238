#pragma once

// Full-ranking leave-one-out evaluation and the gate explanation report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/fame_layer.hpp"

namespace fame {

// 1 + #(strictly higher) + #(equal score at a lower index).
template <typename T>
std::size_t rank_of_target(std::span<const T> scores, std::size_t target) {
  if (target >= scores.size()) {
    throw IndexError("target " + std::to_string(target) + " outside " +
                     std::to_string(scores.size()) + " scores");
  }
  const T st = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > st || (j < target && scores[j] == st)) ++rank;
  }
  return rank;
}

inline double hr_at_k(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

inline double ndcg_at_k(std::size_t rank, std::size_t k) {
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline std::vector<std::size_t> default_ks() { return {5, 10, 20}; }

struct MetricsReport {
  std::string split;
  std::vector<std::size_t> ks;
  std::vector<double> hr;
  std::vector<double> ndcg;
  std::size_t users = 0;

  double hr_at(std::size_t k) const { return hr.at(index_of(k)); }
  double ndcg_at(std::size_t k) const { return ndcg.at(index_of(k)); }

  std::size_t index_of(std::size_t k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw ConfigError("metric cutoff " + std::to_string(k) + " was not evaluated");
    return static_cast<std::size_t>(it - ks.begin());
  }
};

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsReport>& reports) {
  std::string out = "split,k,HR,NDCG,users\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.ks.size(); ++i)
      out += r.split + "," + std::to_string(r.ks[i]) + "," + format_metric(r.hr[i]) + "," +
             format_metric(r.ndcg[i]) + "," + std::to_string(r.users) + "\n";
  return out;
}

inline std::string metrics_table(const std::vector<MetricsReport>& reports) {
  std::string out = "split   k     HR        NDCG      users\n";
  char buf[128];
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%-7s %-5zu %-9.4f %-9.4f %zu\n", r.split.c_str(), r.ks[i],
                    r.hr[i], r.ndcg[i], r.users);
      out += buf;
    }
  return out;
}

// FAME_NUM_THREADS, defaulting to the hardware concurrency.
inline std::size_t eval_threads() {
  if (const char* env = std::getenv("FAME_NUM_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError(std::string("FAME_NUM_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

using Scorer = std::function<std::vector<float>(std::span<const std::size_t>)>;

struct EvalOptions {
  std::vector<std::size_t> ks = default_ks();
  bool filter_history = false;
  std::size_t threads = 1;
};

// Rank of the split target for every user, in dataset order.
inline std::vector<std::size_t> split_ranks(const Scorer& score, const SequenceDataset& data,
                                            Split split, const EvalOptions& opt) {
  const std::size_t n = data.size();
  std::vector<std::size_t> ranks(n, 0);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t u = begin; u < end; ++u) {
      auto s = leave_one_out_split(data.sequences[u]);
      auto input = split == Split::valid ? s.valid_input : s.test_input;
      const std::size_t target = split == Split::valid ? s.valid_target : s.test_target;
      auto scores = score(input);
      if (opt.filter_history) {
        for (auto i : input)
          if (i != target) scores[i] = -std::numeric_limits<float>::infinity();
      }
      ranks[u] = rank_of_target<float>(scores, target);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.threads, n));
  if (threads <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return ranks;
}

inline MetricsReport metrics_from_ranks(const std::vector<std::size_t>& ranks, Split split,
                                        const std::vector<std::size_t>& ks) {
  MetricsReport r;
  r.split = split_name(split);
  r.ks = ks;
  r.users = ranks.size();
  r.hr.assign(ks.size(), 0.0);
  r.ndcg.assign(ks.size(), 0.0);
  for (std::size_t rank : ranks)
    for (std::size_t i = 0; i < ks.size(); ++i) {
      r.hr[i] += hr_at_k(rank, ks[i]);
      r.ndcg[i] += ndcg_at_k(rank, ks[i]);
    }
  if (!ranks.empty())
    for (std::size_t i = 0; i < ks.size(); ++i) {
      r.hr[i] /= static_cast<double>(ranks.size());
      r.ndcg[i] /= static_cast<double>(ranks.size());
    }
  return r;
}

inline MetricsReport evaluate(const Scorer& score, const SequenceDataset& data, Split split,
                              const EvalOptions& opt = {}) {
  return metrics_from_ranks(split_ranks(score, data, split, opt), split, opt.ks);
}

template <typename Model>
Scorer model_scorer(const Model& m) {
  return [&m](std::span<const std::size_t> seq) { return m.score_next(seq); };
}

// ---------------------------------------------------------------------------
// Explanation report.

inline std::vector<std::size_t> top_k(std::span<const float> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

inline nlohmann::ordered_json explain_user(const FameModel<float>& model, const Catalog& catalog,
                                           const std::string& user,
                                           std::span<const std::size_t> history,
                                           std::size_t k = 10) {
  if (history.empty()) throw InputError("user '" + user + "' has an empty history");
  auto b = model.breakdown_next(history);
  auto list = [&](const std::vector<float>& scores) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (auto i : top_k(scores, k))
      arr.push_back({{"item", catalog.item_ids.at(i)}, {"score", scores[i]}});
    return arr;
  };
  nlohmann::ordered_json j;
  j["user"] = user;
  nlohmann::ordered_json hist = nlohmann::ordered_json::array();
  for (auto i : history) hist.push_back(catalog.item_ids.at(i));
  j["history"] = hist;
  j["gate"] = b.gate;
  nlohmann::ordered_json heads = nlohmann::ordered_json::array();
  for (std::size_t h = 0; h < b.per_head.size(); ++h)
    heads.push_back({{"head", h}, {"weight", b.gate[h]}, {"top", list(b.per_head[h])}});
  j["heads"] = heads;
  j["fused"] = list(b.fused);
  return j;
}

}  // namespace fame
