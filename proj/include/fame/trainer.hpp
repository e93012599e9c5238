#pragma once

// Two-stage pipeline: train the SASRec backbone, swap its final block for the
// FAME layer and fine-tune everything end to end.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fame/backbone.hpp"
#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/eval.hpp"
#include "fame/fame_layer.hpp"

namespace fame {

enum class InitMode { random, text_raw, text_facet };

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "random") return InitMode::random;
  if (s == "text_raw") return InitMode::text_raw;
  if (s == "text_facet") return InitMode::text_facet;
  throw ConfigError("init_mode must be random, text_raw or text_facet; got '" + s + "'");
}

inline const char* init_mode_name(InitMode m) {
  switch (m) {
    case InitMode::random: return "random";
    case InitMode::text_raw: return "text_raw";
    case InitMode::text_facet: return "text_facet";
  }
  return "?";
}

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch = 256;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  InitMode init_mode = InitMode::random;
  double text_scale = 1.0;
  // Valid-split metrics every `eval_every` epochs; 0 turns evaluation off.
  std::size_t eval_every = 0;
  bool early_stopping = false;
  std::size_t patience = 10;
  EvalOptions eval;

  void validate() const {
    if (batch == 0) throw ConfigError("batch must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (early_stopping && eval_every == 0) throw ConfigError("early stopping needs eval_every > 0");
  }
};

struct EpochLog {
  std::string stage;
  std::size_t epoch = 0;  // 1-based; 0 is the untrained model
  double loss = 0.0;      // mean cross-entropy per training pair
  std::optional<MetricsReport> valid;
};

inline nlohmann::ordered_json to_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["stage"] = e.stage;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  if (e.valid) {
    nlohmann::ordered_json v;
    for (std::size_t i = 0; i < e.valid->ks.size(); ++i) {
      v["HR@" + std::to_string(e.valid->ks[i])] = e.valid->hr[i];
      v["NDCG@" + std::to_string(e.valid->ks[i])] = e.valid->ndcg[i];
    }
    j["valid"] = v;
  }
  return j;
}

using EpochCallback = std::function<void(const EpochLog&)>;

// Builds the item representation requested by the init mode.
//   random      Normal(0, 0.02^2) table (already drawn by init)
//   text_raw    frozen text matrix mapped to d by a trainable affine layer
//   text_facet  pre-trained e' rows, times text_scale, as the initial table
template <typename T>
void apply_init_mode(BackboneParams<T>& p, const BackboneConfig& cfg, InitMode mode,
                     const Matrix<T>* text, double scale, Rng& rng) {
  if (mode == InitMode::random) return;
  if (!text || text->empty()) {
    throw ConfigError(std::string("init_mode ") + init_mode_name(mode) + " needs an embedding file");
  }
  if (text->rows() != cfg.items) {
    throw ConsistencyError("embedding matrix has " + std::to_string(text->rows()) +
                           " rows but the catalog has " + std::to_string(cfg.items) + " items");
  }
  if (mode == InitMode::text_raw) {
    p.items.text = *text;
    p.items.proj_w = Param<T>(text->cols(), cfg.d);
    fill_xavier_uniform(p.items.proj_w.value, rng);
    p.items.proj_b = Param<T>(1, cfg.d);
    p.items.table = Param<T>();
    return;
  }
  if (text->cols() != cfg.d) {
    throw DimensionError("pre-trained embeddings have width " + std::to_string(text->cols()) +
                         " but d=" + std::to_string(cfg.d));
  }
  Matrix<T> table = *text;
  scale_inplace(table, static_cast<T>(scale));
  p.items.table = Param<T>(std::move(table));
}

namespace detail {

inline std::size_t count_pairs(const SequenceDataset& data) {
  std::size_t n = 0;
  for (const auto& s : data.sequences) n += leave_one_out_split(s).train_input.size();
  return n;
}

// One epoch of user mini-batches; returns the mean loss per training pair.
template <typename Model>
double run_epoch(Model& model, const SequenceDataset& data, const TrainConfig& cfg, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  auto params = model.parameters();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
    const std::size_t end = std::min(order.size(), start + cfg.batch);
    std::size_t batch_pairs = 0;
    for (std::size_t k = start; k < end; ++k)
      batch_pairs += leave_one_out_split(data.sequences[order[k]]).train_input.size();
    if (batch_pairs == 0) continue;
    const float scale = 1.0f / static_cast<float>(batch_pairs);
    zero_grads(params);
    model.prepare();
    for (std::size_t k = start; k < end; ++k) {
      auto split = leave_one_out_split(data.sequences[order[k]]);
      auto input = model.tail(split.train_input);
      auto targets = split.train_targets.last(input.size());
      if (input.empty()) continue;
      typename Model::Trace trace;
      auto logits = model.forward(input, &rng, true, &trace);
      Matrix<float> dlogits;
      total += cross_entropy_rows<float>(logits, targets, &dlogits, scale);
      model.backward(trace, dlogits);
    }
    model.flush_gradients();
    for (auto* p : params) adam_step(*p, cfg.adam);
    pairs += batch_pairs;
  }
  model.prepare();
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

template <typename Model>
double mean_loss(const Model& model, const SequenceDataset& data) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (const auto& s : data.sequences) {
    auto split = leave_one_out_split(s);
    auto input = model.tail(split.train_input);
    if (input.empty()) continue;
    auto logits = model.forward(input, nullptr, false, nullptr);
    total += cross_entropy_rows<float>(logits, split.train_targets.last(input.size()), nullptr);
    pairs += input.size();
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

// Trains `model` in place, logging each epoch; keeps the best-valid weights
// when early stopping is on.
template <typename Model>
std::vector<EpochLog> fit(Model& model, const std::string& stage, const SequenceDataset& data,
                          const TrainConfig& cfg, Rng& rng, const EpochCallback& on_epoch) {
  std::vector<EpochLog> history;
  auto log = [&](std::size_t epoch, double loss) {
    EpochLog e{stage, epoch, loss, std::nullopt};
    if (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)
      e.valid = evaluate(model_scorer(model), data, Split::valid, cfg.eval);
    if (on_epoch) on_epoch(e);
    history.push_back(e);
  };
  log(0, mean_loss(model, data));
  double best = -1.0;
  std::size_t since_best = 0;
  std::optional<Model> best_model;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double loss = run_epoch(model, data, cfg, rng);
    log(epoch, loss);
    if (cfg.early_stopping && history.back().valid) {
      const double v = history.back().valid->ndcg_at(10);
      if (v > best) {
        best = v;
        since_best = 0;
        best_model = model;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
  }
  if (best_model) {
    model = std::move(*best_model);
    model.prepare();
  }
  return history;
}

}  // namespace detail

inline std::size_t training_pairs(const SequenceDataset& data) { return detail::count_pairs(data); }

struct BackboneRun {
  SasRec<float> model;
  std::vector<EpochLog> history;
};

inline BackboneRun train_backbone(const SequenceDataset& data, BackboneConfig bcfg,
                                  const TrainConfig& cfg, const Matrix<float>* text = nullptr,
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw InputError("cannot train on an empty dataset");
  bcfg.validate();
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork();
  auto params = init_backbone_params<float>(bcfg, init_rng);
  apply_init_mode(params, bcfg, cfg.init_mode, text, cfg.text_scale, init_rng);
  BackboneRun run{SasRec<float>(bcfg, std::move(params)), {}};
  run.history = detail::fit(run.model, "backbone", data, cfg, rng, on_epoch);
  return run;
}

struct FameRun {
  FameModel<float> model;
  std::vector<EpochLog> history;
};

inline FameRun finetune_fame(const SasRec<float>& backbone, const SequenceDataset& data,
                             const FameConfig& fcfg, const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw InputError("cannot fine-tune on an empty dataset");
  Rng rng(cfg.seed);
  Rng init_rng = rng.fork();
  FameRun run{init_from_backbone(backbone, fcfg, init_rng), {}};
  run.history = detail::fit(run.model, "finetune", data, cfg, rng, on_epoch);
  return run;
}

// ---------------------------------------------------------------------------
// Grid over (H, N). Each cell trains its own backbone with H heads (the FAME
// layer needs matching heads) and fine-tunes with N experts; cells share the
// seed so a cell equals the corresponding single run.

struct SweepCell {
  std::size_t heads = 0;
  std::size_t experts = 0;
  MetricsReport valid;
};

inline std::vector<SweepCell> grid_sweep(const SequenceDataset& data, const BackboneConfig& bcfg,
                                         const FameConfig& fcfg,
                                         const std::vector<std::size_t>& heads,
                                         const std::vector<std::size_t>& experts,
                                         const TrainConfig& backbone_cfg,
                                         const TrainConfig& finetune_cfg,
                                         const Matrix<float>* text = nullptr) {
  std::vector<SweepCell> out;
  for (std::size_t h : heads) {
    BackboneConfig b = bcfg;
    b.heads = h;
    auto backbone = train_backbone(data, b, backbone_cfg, text);
    for (std::size_t n : experts) {
      FameConfig f = fcfg;
      f.heads = h;
      f.experts = n;
      auto run = finetune_fame(backbone.model, data, f, finetune_cfg);
      out.push_back({h, n, evaluate(model_scorer(run.model), data, Split::valid, finetune_cfg.eval)});
    }
  }
  return out;
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "H,N,HR@20,NDCG@20\n";
  for (const auto& c : cells)
    out += std::to_string(c.heads) + "," + std::to_string(c.experts) + "," +
           format_metric(c.valid.hr_at(20)) + "," + format_metric(c.valid.ndcg_at(20)) + "\n";
  return out;
}

}  // namespace fame
