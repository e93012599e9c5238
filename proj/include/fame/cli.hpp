#pragma once

// Command-line front end. Every command accepts --config FILE plus one flag
// per config key; outputs go to --out or to <runs_dir>/<command>-<hash>.

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fame/fame.hpp"

namespace fame::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kInput = 3,
  kConsistency = 4,
  kTraining = 5,
};

inline int exit_code_for(const std::string& category) {
  if (category == "config") return kUsage;
  if (category == "parse" || category == "format" || category == "io" || category == "input") return kInput;
  if (category == "consistency" || category == "dimension" || category == "index" || category == "split")
    return kConsistency;
  if (category == "parameter" || category == "batch" || category == "sampler") return kTraining;
  return kInternal;
}

// Writes only when the content differs, so reruns leave files untouched.
inline void write_if_changed(const fs::path& p, const std::string& bytes) {
  std::error_code ec;
  if (fs::exists(p, ec)) {
    try {
      if (read_file(p.string()) == bytes) return;
    } catch (const IoError&) {
    }
  }
  write_file(p.string(), bytes);
}

inline std::string sidecar_path(const std::string& femb) {
  fs::path p(femb);
  if (p.extension() == ".femb") return p.replace_extension(".ids").string();
  return femb + ".ids";
}

class JsonLog {
 public:
  JsonLog(std::ostream& echo, bool quiet) : echo_(echo), quiet_(quiet) {}
  void add(const nlohmann::ordered_json& j) {
    const std::string line = j.dump() + "\n";
    text_ += line;
    if (!quiet_) echo_ << line << std::flush;
  }
  const std::string& text() const noexcept { return text_; }

 private:
  std::ostream& echo_;
  bool quiet_;
  std::string text_;
};

struct Command {
  CLI::App* app = nullptr;
  std::string name;
  std::string config_file;
  std::string out;
  bool quiet = false;
  std::map<std::string, std::string> flags;  // storage bound to CLI11
  std::vector<std::string> inputs;          // paths hashed into the run name

  ConfigMap config() const {
    ConfigMap c;
    if (!config_file.empty()) c.merge_file(config_file);
    for (const auto& k : config_keys()) {
      auto* opt = app->get_option_no_throw("--" + std::string(k.name));
      if (opt && opt->count() > 0) c.set(k.name, flags.at(k.name), "--" + std::string(k.name));
    }
    return c;
  }

  // Run directory: --out, else <runs_dir>/<command>-<hash of config + inputs>.
  fs::path output_dir(const ConfigMap& c) const {
    fs::path dir;
    if (!out.empty()) {
      dir = out;
    } else {
      std::string key = name + "\n" + c.dump();
      for (const auto& in : inputs) key += in + "\n";
      dir = fs::path(c.get("runs_dir")) / (name + "-" + hex64(fnv1a64(key)));
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
  }
};

inline Command& add_command(CLI::App& app, std::vector<std::unique_ptr<Command>>& cmds,
                            const std::string& name, const std::string& help) {
  cmds.push_back(std::make_unique<Command>());
  Command& c = *cmds.back();
  c.name = name;
  c.app = app.add_subcommand(name, help);
  c.app->add_option("--config", c.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  c.app->add_option("--out", c.out, "output directory (default: run directory under runs_dir)");
  c.app->add_flag("--quiet", c.quiet, "do not echo JSON log lines to stderr");
  auto* group = c.app->add_option_group("config", "config keys (flag > file > default)");
  for (const auto& k : config_keys()) {
    c.flags[k.name];
    group->add_option("--" + std::string(k.name), c.flags[k.name],
                      std::string(k.help) + " [" + k.fallback + "]");
  }
  return c;
}

inline std::vector<double> prices_of(const std::vector<MetadataRecord>& meta) {
  std::vector<double> out;
  for (const auto& m : meta)
    if (m.price) out.push_back(*m.price);
  return out;
}

inline Matrix<float> load_aligned(const std::string& femb, const std::string& ids, const Catalog& cat) {
  return load_embedding_matrix(femb, ids.empty() ? sidecar_path(femb) : ids, cat);
}

inline nlohmann::ordered_json metrics_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["users"] = r.users;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    j["HR@" + std::to_string(r.ks[i])] = r.hr[i];
    j["NDCG@" + std::to_string(r.ks[i])] = r.ndcg[i];
  }
  return j;
}

inline std::size_t model_items(const SasRec<float>& m) { return m.config.items; }
inline std::size_t model_items(const FameModel<float>& m) { return m.backbone.items; }

inline std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& what) {
  ConfigMap tmp;
  tmp.set("ks", s, what);
  try {
    return detail::as_size_list(tmp, "ks");
  } catch (const ConfigError&) {
    throw ConfigError(what + ": '" + s + "' is not a comma-separated integer list");
  }
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FAME: facet-aware multi-head mixture-of-experts sequential recommendation"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> cmds;

  // prepare-data
  std::string interactions, metadata;
  auto& prep = add_command(app, cmds, "prepare-data", "build a dataset bundle from raw files");
  prep.app->add_option("--interactions", interactions, "user<TAB>item<TAB>timestamp lines")->required();
  prep.app->add_option("--metadata", metadata, "JSON-lines item metadata")->required();

  // synth
  auto& synth = add_command(app, cmds, "synth", "generate the planted-facet synthetic bundle");

  // embed
  std::string bundle_dir, embed_mode = "pseudo", femb_file, ids_file;
  std::size_t dim = 0;
  auto& embed = add_command(app, cmds, "embed", "write catalog-aligned item text embeddings");
  embed.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  embed.app->add_option("--mode", embed_mode, "pseudo | import")->check(CLI::IsMember({"pseudo", "import"}));
  embed.app->add_option("--dim", dim, "pseudo embedding width (alias of --embed_dim)");
  embed.app->add_option("--femb-file", femb_file, "FEMB file to import");
  embed.app->add_option("--ids-file", ids_file, "id sidecar (default: next to the FEMB file)");

  // pretrain-facets
  std::string emb_path;
  auto& pre = add_command(app, cmds, "pretrain-facets", "facet-aware contrastive pre-training");
  pre.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  pre.app->add_option("--embeddings", emb_path, "text embeddings (FEMB)")->required();
  pre.app->add_option("--ids-file", ids_file, "id sidecar (default: next to the FEMB file)");

  // train-backbone
  auto& tb = add_command(app, cmds, "train-backbone", "train the SASRec backbone");
  tb.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  tb.app->add_option("--embeddings", emb_path, "item embeddings for text_raw / text_facet init");
  tb.app->add_option("--ids-file", ids_file, "id sidecar (default: next to the FEMB file)");

  // finetune
  std::string backbone_path;
  auto& ft = add_command(app, cmds, "finetune", "replace the last layer with FAME and fine-tune");
  ft.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  ft.app->add_option("--backbone", backbone_path, "backbone checkpoint")->required();

  // evaluate
  std::string model_path, split_opt = "both";
  auto& ev = add_command(app, cmds, "evaluate", "full-ranking HR@k / NDCG@k");
  ev.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  ev.app->add_option("--model", model_path, "backbone or FAME checkpoint")->required();
  ev.app->add_option("--split", split_opt, "valid | test | both")->check(CLI::IsMember({"valid", "test", "both"}));

  // sweep
  std::string heads_list = "1,2,4", experts_list = "1,2,3";
  auto& sw = add_command(app, cmds, "sweep", "grid over heads H and experts N");
  sw.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  sw.app->add_option("--heads", heads_list, "comma-separated H values");
  sw.app->add_option("--experts", experts_list, "comma-separated N values");
  sw.app->add_option("--embeddings", emb_path, "item embeddings for text_raw / text_facet init");
  sw.app->add_option("--ids-file", ids_file, "id sidecar (default: next to the FEMB file)");

  // explain
  std::string user;
  std::size_t top = 10;
  auto& ex = add_command(app, cmds, "explain", "per-head recommendations and gate weights for a user");
  ex.app->add_option("--bundle", bundle_dir, "dataset bundle")->required();
  ex.app->add_option("--model", model_path, "FAME checkpoint")->required();
  ex.app->add_option("--user", user, "user id")->required();
  ex.app->add_option("--top", top, "items listed per head");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  Command* cmd = nullptr;
  for (auto& c : cmds)
    if (c->app->parsed()) cmd = c.get();

  try {
    ConfigMap cm = cmd->config();
    if (cmd == &embed && embed.app->count("--dim")) cm.set("embed_dim", std::to_string(dim), "--dim");
    const RunConfig rc = resolve(cm);
    JsonLog log(err, cmd->quiet);
    for (const auto& p : {interactions, metadata, bundle_dir, emb_path, femb_file, backbone_path, model_path})
      if (!p.empty()) cmd->inputs.push_back(p);
    if (cmd == &sw) cmd->inputs.push_back(heads_list + "|" + experts_list);
    if (cmd == &ev) cmd->inputs.push_back(split_opt);
    if (cmd == &ex) cmd->inputs.push_back(user + "|" + std::to_string(top));
    if (cmd == &embed) cmd->inputs.push_back(embed_mode);

    auto finish = [&](const fs::path& dir, const std::string& log_name) {
      write_if_changed(dir / "config.txt", cm.dump());
      if (!log_name.empty()) write_if_changed(dir / log_name, log.text());
    };
    auto threads = eval_threads();
    TrainConfig bt = rc.backbone_train, fcfg_train = rc.finetune;
    bt.eval.threads = fcfg_train.eval.threads = threads;

    if (cmd == &prep) {
      auto rows = load_interactions(interactions);
      auto meta = load_metadata(metadata);
      PrepareOptions po;
      po.scheme = rc.scheme;
      po.k_core = rc.k_core;
      po.max_len = rc.backbone.max_len;
      po.price_edges = rc.price_bins > 0 ? quantile_price_edges(prices_of(meta), rc.price_bins) : rc.price_edges;
      auto b = build_bundle(std::move(rows), meta, po);
      const auto dir = cmd->output_dir(cm);
      const auto hash = write_bundle(b, dir.string());
      finish(dir, "");
      out << nlohmann::ordered_json{{"bundle", dir.string()}, {"content_hash", hash},
                                    {"users", b.data.size()}, {"items", b.catalog.size()}}.dump()
          << "\n";
      return kOk;
    }

    if (cmd == &synth) {
      auto s = generate_synth(rc.synth);
      PrepareOptions po;
      po.scheme = Scheme::movielens;
      po.k_core = 0;
      po.max_len = rc.backbone.max_len;
      auto b = build_bundle(s.interactions, s.metadata, po);
      const auto dir = cmd->output_dir(cm);
      const auto hash = write_bundle(b, dir.string());
      finish(dir, "");
      out << nlohmann::ordered_json{{"bundle", dir.string()}, {"content_hash", hash},
                                    {"users", b.data.size()}, {"items", b.catalog.size()}}.dump()
          << "\n";
      return kOk;
    }

    const Bundle bundle = load_bundle(bundle_dir);

    if (cmd == &embed) {
      Matrix<float> m;
      if (embed_mode == "pseudo") {
        m = pseudo_embed_catalog(bundle.catalog, rc.embed_dim, rc.seed);
      } else {
        if (femb_file.empty()) throw ConfigError("embed --mode import needs --femb-file");
        m = load_aligned(femb_file, ids_file, bundle.catalog);
      }
      const auto dir = cmd->output_dir(cm);
      write_if_changed(dir / "text.femb", encode_femb(m));
      std::string ids;
      for (const auto& id : bundle.catalog.item_ids) ids += id + "\n";
      write_if_changed(dir / "text.ids", ids);
      finish(dir, "");
      out << nlohmann::ordered_json{{"embeddings", (dir / "text.femb").string()},
                                    {"rows", m.rows()}, {"cols", m.cols()}}.dump()
          << "\n";
      return kOk;
    }

    if (cmd == &pre) {
      auto text = load_aligned(emb_path, ids_file, bundle.catalog);
      auto facets = bundle.facets.select(rc.pretrain_facets);
      Rng rng(rc.seed);
      auto proj = ProjectorParams<float>::init(text.cols(), rc.mid_dim, rc.backbone.d,
                                               facets.facet_count(), rng);
      alternating_pretrain(text, facets, proj, rc.pretrain, [&](const PretrainLogEntry& e) {
        log.add({{"stage", "pretrain"}, {"step", e.step}, {"epoch", e.epoch}, {"head", e.head},
                 {"facet", facets.facet_names[e.head]}, {"loss", e.loss}});
      });
      auto e = export_item_embeddings(proj, text);
      const auto dir = cmd->output_dir(cm);
      write_if_changed(dir / "facet.femb", encode_femb(e));
      std::string ids;
      for (const auto& id : bundle.catalog.item_ids) ids += id + "\n";
      write_if_changed(dir / "facet.ids", ids);
      nlohmann::ordered_json stats = nlohmann::ordered_json::array();
      const std::size_t width = proj.head_dim();
      for (std::size_t h = 0; h < facets.facet_count(); ++h) {
        auto st = facet_cluster_stats(e, h * width, width, facets.labels[h]);
        stats.push_back({{"facet", facets.facet_names[h]}, {"intra", st.intra}, {"inter", st.inter}});
      }
      write_if_changed(dir / "clusters.json", stats.dump(2) + "\n");
      finish(dir, "pretrain_log.jsonl");
      out << nlohmann::ordered_json{{"embeddings", (dir / "facet.femb").string()}, {"clusters", stats}}.dump()
          << "\n";
      return kOk;
    }

    auto load_text = [&]() -> std::optional<Matrix<float>> {
      if (emb_path.empty()) return std::nullopt;
      return load_aligned(emb_path, ids_file, bundle.catalog);
    };
    auto on_epoch = [&](const EpochLog& e) { log.add(to_json(e)); };
    BackboneConfig bcfg = rc.backbone;
    bcfg.items = bundle.catalog.size();

    if (cmd == &tb) {
      auto text = load_text();
      auto run = train_backbone(bundle.data, bcfg, bt, text ? &*text : nullptr, on_epoch);
      const auto dir = cmd->output_dir(cm);
      save_backbone(run.model, (dir / "backbone.fckp").string());
      finish(dir, "train_log.jsonl");
      out << nlohmann::ordered_json{{"checkpoint", (dir / "backbone.fckp").string()},
                                    {"final_loss", run.history.back().loss}}.dump()
          << "\n";
      return kOk;
    }

    if (cmd == &ft) {
      auto backbone = load_backbone(backbone_path);
      if (backbone.config.items != bundle.catalog.size()) {
        throw ConsistencyError("backbone was trained on " + std::to_string(backbone.config.items) +
                               " items but the bundle has " + std::to_string(bundle.catalog.size()));
      }
      FameConfig f = rc.fame;
      f.heads = backbone.config.heads;
      f.d = backbone.config.d;
      auto run = finetune_fame(backbone, bundle.data, f, fcfg_train, on_epoch);
      const auto dir = cmd->output_dir(cm);
      save_fame(run.model, (dir / "fame.fckp").string());
      finish(dir, "finetune_log.jsonl");
      out << nlohmann::ordered_json{{"checkpoint", (dir / "fame.fckp").string()},
                                    {"final_loss", run.history.back().loss}}.dump()
          << "\n";
      return kOk;
    }

    if (cmd == &ev) {
      const std::string bytes = read_file(model_path);
      EvalOptions opt = bt.eval;
      std::vector<Split> splits;
      if (split_opt != "test") splits.push_back(Split::valid);
      if (split_opt != "valid") splits.push_back(Split::test);
      std::vector<MetricsReport> reports;
      auto run_eval = [&](const auto& model) {
        if (model_items(model) != bundle.catalog.size()) {
          throw ConsistencyError("model scores " + std::to_string(model_items(model)) +
                                 " items but the bundle has " + std::to_string(bundle.catalog.size()));
        }
        for (Split s : splits) reports.push_back(evaluate(model_scorer(model), bundle.data, s, opt));
      };
      if (checkpoint_kind(bytes) == CheckpointKind::backbone) {
        run_eval(decode_backbone(bytes));
      } else {
        run_eval(decode_fame(bytes));
      }
      out << metrics_table(reports);
      if (!cmd->out.empty()) {
        const auto dir = cmd->output_dir(cm);
        write_if_changed(dir / "metrics.csv", metrics_csv(reports));
        for (const auto& r : reports) log.add(metrics_json(r));
        finish(dir, "metrics.jsonl");
      }
      return kOk;
    }

    if (cmd == &sw) {
      auto heads = parse_size_list(heads_list, "--heads");
      auto experts = parse_size_list(experts_list, "--experts");
      auto text = load_text();
      auto cells = grid_sweep(bundle.data, bcfg, rc.fame, heads, experts, bt, fcfg_train,
                              text ? &*text : nullptr);
      for (const auto& c : cells) {
        auto j = metrics_json(c.valid);
        j["H"] = c.heads;
        j["N"] = c.experts;
        log.add(j);
      }
      const std::string csv = sweep_csv(cells);
      const auto dir = cmd->output_dir(cm);
      write_if_changed(dir / "sweep.csv", csv);
      finish(dir, "sweep_log.jsonl");
      out << csv;
      return kOk;
    }

    if (cmd == &ex) {
      auto model = load_fame(model_path);
      std::optional<std::size_t> u;
      for (std::size_t k = 0; k < bundle.data.size(); ++k)
        if (bundle.data.user_ids[k] == user) u = k;
      if (!u) throw InputError("user '" + user + "' is not in the bundle");
      auto j = explain_user(model, bundle.catalog, user, bundle.data.sequences[*u], top);
      out << j.dump(2) << "\n";
      if (!cmd->out.empty()) {
        const auto dir = cmd->output_dir(cm);
        write_if_changed(dir / ("explain_" + user + ".json"), j.dump(2) + "\n");
        finish(dir, "");
      }
      return kOk;
    }
    throw ConfigError("no command given");
  } catch (const Error& e) {
    err << "fame: " << e.category() << " error: " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    err << "fame: internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace fame::cli
