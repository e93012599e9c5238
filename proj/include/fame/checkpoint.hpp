#pragma once

// FCKP container: "FCKP", u32 version, u32 section (1 backbone, 2 fame),
// u32 length + JSON config record, u32 has_text (+ FEMB frozen text matrix),
// u32 param count, then one FEMB payload per parameter in declaration order.

#include <string>
#include <vector>

#include "json.hpp"

#include "fame/backbone.hpp"
#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/fame_layer.hpp"

namespace fame {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { backbone = 1, fame = 2 };

inline nlohmann::ordered_json to_json(const BackboneConfig& c) {
  return {{"items", c.items}, {"d", c.d},           {"heads", c.heads}, {"layers", c.layers},
          {"max_len", c.max_len}, {"dropout", c.dropout}, {"eps", c.eps}};
}

inline BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.items = j.at("items").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.eps = j.at("eps").get<double>();
  return c;
}

inline nlohmann::ordered_json to_json(const FameConfig& c) {
  return {{"heads", c.heads},
          {"experts", c.experts},
          {"d", c.d},
          {"dropout", c.dropout},
          {"eps", c.eps},
          {"expert_noise", c.expert_noise},
          {"random_experts", c.random_experts},
          {"slice_facet_proj", c.slice_facet_proj}};
}

inline FameConfig fame_config_from_json(const nlohmann::json& j) {
  FameConfig c;
  c.heads = j.at("heads").get<std::size_t>();
  c.experts = j.at("experts").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.eps = j.at("eps").get<double>();
  c.expert_noise = j.at("expert_noise").get<double>();
  c.random_experts = j.at("random_experts").get<bool>();
  c.slice_facet_proj = j.at("slice_facet_proj").get<bool>();
  return c;
}

namespace detail {

inline void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

inline std::string encode_checkpoint(CheckpointKind kind, const nlohmann::ordered_json& config,
                                     const Matrix<float>& text,
                                     const std::vector<Param<float>*>& params) {
  std::string out = "FCKP";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(kind));
  put_string(out, config.dump());
  put_u32(out, text.empty() ? 0u : 1u);
  if (!text.empty()) append_femb(out, text);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) append_femb(out, p->value);
  return out;
}

struct DecodedCheckpoint {
  CheckpointKind kind;
  nlohmann::json config;
  Matrix<float> text;
  std::vector<Matrix<float>> params;
};

inline DecodedCheckpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.take(4) != "FCKP") throw FormatError("checkpoint: bad magic (expected FCKP)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  DecodedCheckpoint d;
  const auto kind = r.u32();
  if (kind != 1 && kind != 2) throw FormatError("checkpoint: unknown section tag " + std::to_string(kind));
  d.kind = static_cast<CheckpointKind>(kind);
  const auto len = r.u32();
  try {
    d.config = nlohmann::json::parse(r.take(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad config record: ") + e.what());
  }
  if (r.u32() != 0) d.text = read_femb(r);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) d.params.push_back(read_femb(r));
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return d;
}

inline void assign_params(const std::vector<Param<float>*>& dst, std::vector<Matrix<float>> src) {
  if (dst.size() != src.size()) {
    throw FormatError("checkpoint holds " + std::to_string(src.size()) + " parameters, model expects " +
                      std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->rows() != src[i].rows() || dst[i]->cols() != src[i].cols()) {
      throw FormatError("checkpoint parameter " + std::to_string(i) + " has shape " +
                        shape_str(src[i].rows(), src[i].cols()) + ", expected " +
                        shape_str(dst[i]->rows(), dst[i]->cols()));
    }
    *dst[i] = Param<float>(std::move(src[i]));
  }
}

// Parameter skeleton matching a config, so shapes are known before loading.
inline BackboneParams<float> backbone_skeleton(const BackboneConfig& cfg, std::size_t layers,
                                               const Matrix<float>& text) {
  Rng rng(0);
  BackboneConfig c = cfg;
  c.layers = std::max<std::size_t>(layers, 1);
  auto p = init_backbone_params<float>(c, rng);
  p.layers.resize(layers);
  if (!text.empty()) {
    p.items.text = text;
    p.items.proj_w = Param<float>(text.cols(), cfg.d);
    p.items.proj_b = Param<float>(1, cfg.d);
  }
  return p;
}

}  // namespace detail

inline std::string encode_backbone(SasRec<float>& m) {
  return detail::encode_checkpoint(CheckpointKind::backbone, to_json(m.config), m.params.items.text,
                                   m.parameters());
}

inline std::string encode_fame(FameModel<float>& m) {
  nlohmann::ordered_json cfg;
  cfg["backbone"] = to_json(m.backbone);
  cfg["fame"] = to_json(m.config);
  return detail::encode_checkpoint(CheckpointKind::fame, cfg, m.trunk.items.text, m.parameters());
}

inline SasRec<float> decode_backbone(std::string_view bytes) {
  auto d = detail::decode_checkpoint(bytes);
  if (d.kind != CheckpointKind::backbone) throw FormatError("checkpoint holds a FAME model, not a backbone");
  const auto cfg = backbone_config_from_json(d.config);
  cfg.validate();
  SasRec<float> m;
  m.config = cfg;
  m.params = detail::backbone_skeleton(cfg, cfg.layers, d.text);
  detail::assign_params(m.parameters(), std::move(d.params));
  m.prepare();
  return m;
}

inline FameModel<float> decode_fame(std::string_view bytes) {
  auto d = detail::decode_checkpoint(bytes);
  if (d.kind != CheckpointKind::fame) throw FormatError("checkpoint holds a backbone, not a FAME model");
  const auto bcfg = backbone_config_from_json(d.config.at("backbone"));
  const auto fcfg = fame_config_from_json(d.config.at("fame"));
  bcfg.validate();
  fcfg.validate();
  Rng rng(0);
  auto trunk = detail::backbone_skeleton(bcfg, bcfg.layers - 1, d.text);
  auto fp = init_fame_params<float>(fcfg, rng);
  FameModel<float> m(bcfg, fcfg, std::move(trunk), std::move(fp));
  detail::assign_params(m.parameters(), std::move(d.params));
  m.prepare();
  return m;
}

inline CheckpointKind checkpoint_kind(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.take(4) != "FCKP") throw FormatError("checkpoint: bad magic (expected FCKP)");
  r.u32();
  const auto kind = r.u32();
  if (kind != 1 && kind != 2) throw FormatError("checkpoint: unknown section tag " + std::to_string(kind));
  return static_cast<CheckpointKind>(kind);
}

inline void save_backbone(SasRec<float>& m, const std::string& path) { write_file(path, encode_backbone(m)); }
inline void save_fame(FameModel<float>& m, const std::string& path) { write_file(path, encode_fame(m)); }
inline SasRec<float> load_backbone(const std::string& path) { return decode_backbone(read_file(path)); }
inline FameModel<float> load_fame(const std::string& path) { return decode_fame(read_file(path)); }

}  // namespace fame
