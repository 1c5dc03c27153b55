#include "affinity/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "affinity/errors.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace affinity {

using nlohmann::json;

void save_checkpoint(Checkpoint& cp, const std::string& path) {
  auto named = cp.params.named();

  json manifest;
  manifest["format"] = "abaffinity-checkpoint";
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["model_config"] = json::parse(cp.model.to_json());
  manifest["train_config"] = json::parse(cp.train.to_json());
  manifest["metadata"] = {{"fold", cp.fold}, {"epoch", cp.epoch}, {"seed", cp.seed}};

  json tensors = json::array();
  uint64_t offset = 0;
  for (auto& [name, t] : named) {
    const uint64_t nbytes = t->numel() * sizeof(float);
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = std::move(tensors);

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  const uint64_t manifest_size = text.size();
  out.write(reinterpret_cast<const char*>(&manifest_size), sizeof(manifest_size));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto& [name, t] : named)
    out.write(reinterpret_cast<const char*>(t->ptr()),
              static_cast<std::streamsize>(t->numel() * sizeof(float)));
  if (!out) throw Error("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("cannot open " + path);
  const uint64_t file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0);

  uint64_t manifest_size = 0;
  if (file_size < sizeof(manifest_size))
    throw CheckpointTruncatedError(path + ": file too small for the manifest header");
  in.read(reinterpret_cast<char*>(&manifest_size), sizeof(manifest_size));
  if (file_size < sizeof(manifest_size) + manifest_size)
    throw CheckpointTruncatedError(path + ": file ends inside the manifest");

  std::string text(manifest_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(manifest_size));

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointManifestError(path + ": manifest is not valid JSON: " + e.what());
  }
  if (!manifest.contains("format_version"))
    throw CheckpointManifestError(path + ": manifest has no format_version");
  const int version = manifest["format_version"].get<int>();
  if (version != kCheckpointFormatVersion)
    throw CheckpointVersionError(path + ": format_version " + std::to_string(version) +
                                 ", expected " + std::to_string(kCheckpointFormatVersion));

  Checkpoint cp;
  try {
    cp.model = ModelConfig::from_json(manifest["model_config"].dump());
    cp.train = TrainConfig::from_json(manifest["train_config"].dump());
    cp.fold = manifest["metadata"]["fold"].get<int>();
    cp.epoch = manifest["metadata"]["epoch"].get<int>();
    cp.seed = manifest["metadata"]["seed"].get<uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointManifestError(path + ": bad manifest field: " + e.what());
  }

  // Allocate parameters from the config, then require the manifest to agree
  // exactly on names, shapes, sizes, and offsets.
  Rng dummy(0);
  cp.params = init_params<float>(cp.model, dummy);
  auto named = cp.params.named();
  if (!manifest.contains("tensors") || manifest["tensors"].size() != named.size())
    throw CheckpointManifestError(path + ": manifest lists " +
                                  std::to_string(manifest.contains("tensors")
                                                     ? manifest["tensors"].size()
                                                     : 0) +
                                  " tensors, model needs " + std::to_string(named.size()));

  uint64_t expected_offset = 0;
  for (size_t i = 0; i < named.size(); ++i) {
    const json& entry = manifest["tensors"][i];
    auto& [name, tensor] = named[i];
    const std::string entry_name = entry["name"].get<std::string>();
    if (entry_name != name)
      throw CheckpointManifestError(path + ": tensor " + std::to_string(i) + " is " + entry_name +
                                    ", expected " + name);
    const auto shape = entry["shape"].get<std::vector<int>>();
    if (shape != tensor->shape())
      throw CheckpointManifestError(path + ": " + name + " has manifest shape " +
                                    detail::shape_str(shape) + ", config implies " +
                                    detail::shape_str(tensor->shape()));
    const uint64_t nbytes = entry["nbytes"].get<uint64_t>();
    if (nbytes != tensor->numel() * sizeof(float))
      throw CheckpointManifestError(path + ": " + name + " has " + std::to_string(nbytes) +
                                    " bytes, shape implies " +
                                    std::to_string(tensor->numel() * sizeof(float)));
    const uint64_t offset = entry["offset"].get<uint64_t>();
    if (offset != expected_offset)
      throw CheckpointManifestError(path + ": " + name + " at offset " + std::to_string(offset) +
                                    ", expected " + std::to_string(expected_offset));
    expected_offset += nbytes;
  }

  const uint64_t data_bytes = file_size - sizeof(manifest_size) - manifest_size;
  if (data_bytes < expected_offset)
    throw CheckpointTruncatedError(path + ": holds " + std::to_string(data_bytes) +
                                   " data bytes, manifest promises " +
                                   std::to_string(expected_offset));
  if (data_bytes > expected_offset)
    throw CheckpointManifestError(path + ": " + std::to_string(data_bytes - expected_offset) +
                                  " trailing bytes after the last tensor");

  for (auto& [name, tensor] : named) {
    in.read(reinterpret_cast<char*>(tensor->ptr()),
            static_cast<std::streamsize>(tensor->numel() * sizeof(float)));
    if (!in) throw CheckpointTruncatedError(path + ": read failed inside " + name);
  }
  return cp;
}

}  // namespace affinity
