#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "capt/io.hpp"
#include "capt/model.hpp"
#include "capt/serde.hpp"

namespace capt {

// Single-file checkpoint: 8-byte magic, u64 header length, JSON header
// (configs, vocabulary, freeze flags, seed, provenance, tensor table), then
// the tensors as little-endian float32 payloads in table order.
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'P', 'T', 'C', 'K', 'P', '1'};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& state) {
  json header;
  header["format"] = "capt-checkpoint";
  header["version"] = 1;
  header["seed"] = state.seed;
  header["stage_provenance"] = stage_provenance_name(state.provenance);
  header["init_from_stage1"] = state.init_from_stage1;
  header["freeze"] = {{"encoder", state.freeze_flags[0]},
                      {"adapter", state.freeze_flags[1]},
                      {"lm", state.freeze_flags[2]}};
  header["encoder_config"] = to_json(state.encoder_config);
  header["adapter_config"] = to_json(state.adapter_config);
  header["lm_config"] = to_json(state.lm_config);
  header["vocabulary"] = {{"size", state.vocab.size()}, {"alphabet", state.vocab.alphabet()}};

  json tensors = json::array();
  uint64_t offset = 0;
  for (int i = 0; i < state.params.count(); ++i) {
    const auto& e = state.params.entry(i);
    tensors.push_back({{"name", e.name},
                       {"group", param_group_name(e.group)},
                       {"rows", e.value.rows()},
                       {"cols", e.value.cols()},
                       {"offset", offset}});
    offset += e.value.size() * sizeof(float);
  }
  header["tensors"] = tensors;

  const std::string header_str = header.dump();
  std::string blob;
  blob.reserve(sizeof(kCheckpointMagic) + 8 + header_str.size() + offset);
  blob.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t header_len = header_str.size();
  blob.append(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  blob += header_str;
  for (int i = 0; i < state.params.count(); ++i) {
    const Mat<T>& value = state.params.value(i);
    for (size_t j = 0; j < value.size(); ++j) {
      const float f = static_cast<float>(value.data()[j]);
      blob.append(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  write_file_atomic(path, blob);
}

template <typename T>
ModelState<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  require(blob.size() >= sizeof(kCheckpointMagic) + 8, errc::checkpoint_format,
          "checkpoint truncated: " + path.string());
  require(std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
          errc::checkpoint_format, "bad checkpoint magic: " + path.string());
  uint64_t header_len = 0;
  std::memcpy(&header_len, blob.data() + sizeof(kCheckpointMagic), sizeof(header_len));
  const size_t header_off = sizeof(kCheckpointMagic) + 8;
  require(blob.size() >= header_off + header_len, errc::checkpoint_format,
          "checkpoint header truncated: " + path.string());
  const json header = json::parse(blob.substr(header_off, header_len), nullptr, false);
  require(!header.is_discarded(), errc::checkpoint_format, "checkpoint header is not JSON");
  require(header.value("format", "") == std::string("capt-checkpoint"), errc::checkpoint_format,
          "not a capt checkpoint");

  const EncoderConfig enc = encoder_config_from_json(header.at("encoder_config"));
  const AdapterConfig adap = adapter_config_from_json(header.at("adapter_config"));
  const LMConfig lm = lm_config_from_json(header.at("lm_config"));
  const uint64_t seed = header.at("seed").get<uint64_t>();

  ModelState<T> state = init_model_state<T>(enc, adap, lm, seed);
  require(header.at("vocabulary").at("size").get<int>() == state.vocab.size(),
          errc::checkpoint_format, "checkpoint vocabulary size mismatch");
  state.provenance = stage_provenance_from_name(header.at("stage_provenance").get<std::string>());
  state.init_from_stage1 = header.value("init_from_stage1", false);
  const json& freeze = header.at("freeze");
  state.freeze_flags = {freeze.at("encoder").get<bool>(), freeze.at("adapter").get<bool>(),
                        freeze.at("lm").get<bool>()};

  const json& tensors = header.at("tensors");
  require(static_cast<int>(tensors.size()) == state.params.count(), errc::checkpoint_format,
          "checkpoint tensor count mismatch");
  const size_t payload_off = header_off + header_len;
  for (int i = 0; i < state.params.count(); ++i) {
    const json& t = tensors[static_cast<size_t>(i)];
    auto& entry = state.params.entry(i);
    require(t.at("name").get<std::string>() == entry.name, errc::checkpoint_format,
            "checkpoint tensor order mismatch at " + entry.name);
    require(t.at("rows").get<int>() == entry.value.rows() &&
                t.at("cols").get<int>() == entry.value.cols(),
            errc::shape_mismatch, "checkpoint tensor shape mismatch at " + entry.name);
    const size_t off = payload_off + t.at("offset").get<uint64_t>();
    require(off + entry.value.size() * sizeof(float) <= blob.size(), errc::checkpoint_format,
            "checkpoint payload truncated at " + entry.name);
    const char* src = blob.data() + off;
    for (size_t j = 0; j < entry.value.size(); ++j) {
      float f;
      std::memcpy(&f, src + j * sizeof(float), sizeof(float));
      entry.value.data()[j] = static_cast<T>(f);
    }
  }
  return state;
}

}  // namespace capt
