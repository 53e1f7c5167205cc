#include <array>
#include <fstream>
#include <json.hpp>

#include "byte_io.hpp"
#include "config_json.hpp"
#include "viewsel/errors.hpp"
#include "viewsel/training.hpp"

namespace viewsel {

namespace {

constexpr std::array<char, 5> kCheckpointMagic = {'V', 'S', 'P', 'C', '1'};

std::string_view group_name(ad::ParamGroup g) { return g == ad::ParamGroup::head ? "head" : "fusion"; }

}  // namespace

void save_checkpoint(const Regressor& model, const std::filesystem::path& path) {
  using nlohmann::json;
  json manifest = json::array();
  for (const auto* p : model.params.parameters()) {
    manifest.push_back({{"name", p->name}, {"group", group_name(p->group)}, {"shape", p->value.shape()}});
  }
  const json header = {{"fusion", detail::fusion_to_json(model.params.config)},
                       {"params", manifest},
                       {"scaler", {{"mean", model.scaler.mean}, {"scale", model.scaler.scale}}},
                       {"task", to_string(model.task)},
                       {"mode", to_string(mode_of(model.selection))},
                       {"selection", serialize(model.selection)},
                       {"level", model.level ? json(*model.level) : json(nullptr)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : model.params.parameters()) detail::put_f32s(out, p->value.data());
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Regressor load_checkpoint(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  std::uint32_t version = 0;
  std::uint32_t header_len = 0;
  if (!detail::get_u32(in, version) || !detail::get_u32(in, header_len)) {
    throw FormatError(path.string() + ": truncated checkpoint header");
  }
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(header_len, '\0');
  in.read(text.data(), header_len);
  if (!in) throw FormatError(path.string() + ": truncated checkpoint header");

  Regressor model;
  try {
    const json header = json::parse(text);
    FusionConfig fusion;
    detail::fusion_from_json(header.at("fusion"), fusion);
    Rng unused(0);
    model.params = init_params<float>(unused, fusion);
    model.scaler.mean = header.at("scaler").at("mean").get<double>();
    model.scaler.scale = header.at("scaler").at("scale").get<double>();
    model.task = parse_task(header.at("task").get<std::string>());
    model.selection = parse_selection(header.at("selection").get<std::string>());
    if (!header.at("level").is_null()) model.level = header.at("level").get<std::size_t>();

    const auto params = model.params.parameters();
    const json& manifest = header.at("params");
    if (manifest.size() != params.size()) {
      throw FormatError(path.string() + ": parameter count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = manifest[i];
      if (entry.at("name").get<std::string>() != params[i]->name ||
          entry.at("shape").get<std::vector<std::size_t>>() != params[i]->value.shape()) {
        throw FormatError(path.string() + ": parameter " + std::to_string(i) + " ('" +
                          entry.at("name").get<std::string>() + "') does not match the model");
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint header: " + e.what());
  }
  for (auto* p : model.params.parameters()) {
    if (!detail::get_f32s(in, p->value.data())) {
      throw FormatError(path.string() + ": truncated payload at " + p->name);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after payload");
  }
  return model;
}

}  // namespace viewsel
