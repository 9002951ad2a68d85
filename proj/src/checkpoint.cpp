#include "lensflow/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lensflow {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint tensors are stored little-endian");

using nlohmann::json;

std::string role_of(const std::string& name) {
  // "layer{i}.{s|t}.{param}"
  const auto first = name.find('.');
  return name.substr(first + 1, 1);
}

std::string param_of(const std::string& name) { return name.substr(name.rfind('.') + 1); }

CouplingKind kind_from_string(const std::string& s) {
  if (s == to_string(CouplingKind::fix_circle)) return CouplingKind::fix_circle;
  if (s == to_string(CouplingKind::fix_disk)) return CouplingKind::fix_disk;
  throw CheckpointError("unknown coupling kind '" + s + "'");
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint) {
  std::filesystem::create_directories(dir);
  auto& flow = const_cast<FlowTransform&>(checkpoint.flow);
  const auto tensors = named_tensors(flow);

  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["dtype"] = "float64-le";
  manifest["order"] = "column-major";
  manifest["lens"] = {{"p", checkpoint.lens_p}, {"q", checkpoint.lens_q}};
  manifest["chart"] = chart_index(checkpoint.chart) + 1;
  manifest["prior"] = {{"kappa", checkpoint.prior.kappa}, {"sigma", checkpoint.prior.sigma}};
  manifest["n_pairs"] = flow.n_pairs();
  manifest["hidden"] = flow.layers.empty() ? kHiddenWidth : flow.layers.front().s.hidden();
  json layers = json::array();
  for (const auto& layer : flow.layers) layers.push_back(to_string(layer.kind));
  manifest["layers"] = layers;
  manifest["circle"] = to_string(flow.circle);
  manifest["seam"] = flow.seam;

  std::ofstream bin(dir / kCheckpointTensors, std::ios::binary | std::ios::trunc);
  if (!bin) throw CheckpointError("cannot write " + (dir / kCheckpointTensors).string());
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    const auto count = static_cast<std::size_t>(t.tensor->size());
    entries.push_back({{"name", t.name},
                       {"layer", t.layer},
                       {"kind", to_string(t.kind)},
                       {"net", role_of(t.name)},
                       {"param", param_of(t.name)},
                       {"rows", t.tensor->rows()},
                       {"cols", t.tensor->cols()},
                       {"offset", offset},
                       {"count", count}});
    bin.write(reinterpret_cast<const char*>(t.tensor->data()),
              static_cast<std::streamsize>(count * sizeof(double)));
    offset += count;
  }
  bin.close();
  if (!bin) throw CheckpointError("failed writing " + (dir / kCheckpointTensors).string());
  manifest["tensors"] = entries;
  manifest["total_count"] = offset;

  std::ofstream out(dir / kCheckpointManifest, std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + (dir / kCheckpointManifest).string());
  out << manifest.dump(2) << '\n';
  out.close();
  if (!out) throw CheckpointError("failed writing " + (dir / kCheckpointManifest).string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / kCheckpointManifest);
  if (!in) throw CheckpointError("cannot read " + (dir / kCheckpointManifest).string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest: " + std::string(e.what()));
  }

  Checkpoint cp;
  std::vector<double> data;
  try {
    if (manifest.at("format").get<int>() != kCheckpointFormat) {
      throw CheckpointError("unsupported checkpoint format");
    }
    cp.lens_p = manifest.at("lens").at("p").get<int>();
    cp.lens_q = manifest.at("lens").at("q").get<int>();
    cp.chart = chart_from_int(manifest.at("chart").get<int>());
    cp.prior.kappa = manifest.at("prior").at("kappa").get<double>();
    cp.prior.sigma = manifest.at("prior").at("sigma").get<double>();
    const int n_pairs = manifest.at("n_pairs").get<int>();
    const int hidden = manifest.at("hidden").get<int>();
    if (n_pairs < 1 || hidden < 1) throw CheckpointError("invalid flow dimensions");
    cp.flow = FlowTransform::zeros(n_pairs, hidden);
    cp.flow.circle = circle_mode_from_string(manifest.at("circle").get<std::string>());
    cp.flow.seam = manifest.at("seam").get<double>();
    if (!std::isfinite(cp.flow.seam)) throw CheckpointError("non-finite seam");

    const auto& kinds = manifest.at("layers");
    if (kinds.size() != cp.flow.layers.size()) throw CheckpointError("layer count mismatch");
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      if (kind_from_string(kinds[i].get<std::string>()) != cp.flow.layers[i].kind) {
        throw CheckpointError("layer " + std::to_string(i) + " has an unexpected kind");
      }
    }

    const std::size_t total = manifest.at("total_count").get<std::size_t>();
    std::ifstream bin(dir / kCheckpointTensors, std::ios::binary);
    if (!bin) throw CheckpointError("cannot read " + (dir / kCheckpointTensors).string());
    data.resize(total);
    bin.read(reinterpret_cast<char*>(data.data()),
             static_cast<std::streamsize>(total * sizeof(double)));
    if (bin.gcount() != static_cast<std::streamsize>(total * sizeof(double)) ||
        bin.peek() != std::char_traits<char>::eof()) {
      throw CheckpointError("tensor file size does not match the manifest");
    }

    auto tensors = named_tensors(cp.flow);
    const auto& entries = manifest.at("tensors");
    if (entries.size() != tensors.size()) throw CheckpointError("tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& e = entries[i];
      auto& t = tensors[i];
      const auto rows = e.at("rows").get<Eigen::Index>();
      const auto cols = e.at("cols").get<Eigen::Index>();
      const auto offset = e.at("offset").get<std::size_t>();
      if (e.at("name").get<std::string>() != t.name || rows != t.tensor->rows() ||
          cols != t.tensor->cols()) {
        throw CheckpointError("tensor " + std::to_string(i) + " does not match " + t.name);
      }
      const auto count = static_cast<std::size_t>(rows * cols);
      if (offset + count > total) throw CheckpointError("tensor " + t.name + " out of range");
      std::memcpy(t.tensor->data(), data.data() + offset, count * sizeof(double));
    }
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest: " + std::string(e.what()));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid checkpoint: ") + e.what());
  }
  return cp;
}

}  // namespace lensflow
