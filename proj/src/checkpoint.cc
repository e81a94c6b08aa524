#include "dss/checkpoint.h"

#include <fstream>
#include <sstream>

namespace dss {

using nlohmann::json;

void WriteCheckpoint(const std::filesystem::path& path,
                     const std::string& kind, const json& config,
                     std::span<const nn::Dense* const> layers,
                     std::span<const double> values) {
  json j;
  j["format"] = "dss-checkpoint";
  j["version"] = kCheckpointVersion;
  j["kind"] = kind;
  j["config"] = config;
  json shapes = json::array();
  for (const nn::Dense* d : layers) {
    shapes.push_back({{"name", d->name}, {"rows", d->out}, {"cols", d->in}});
  }
  j["shapes"] = shapes;
  j["values"] = std::vector<double>(values.begin(), values.end());
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out << j.dump() << '\n';
}

Checkpoint ReadCheckpoint(const std::filesystem::path& path,
                          const std::string& expected_kind) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "dss-checkpoint") {
      throw CheckpointError(path.string() + ": not a checkpoint");
    }
    if (j.at("version") != kCheckpointVersion) {
      throw CheckpointError(path.string() + ": unsupported version");
    }
    Checkpoint c;
    c.kind = j.at("kind").get<std::string>();
    if (c.kind != expected_kind) {
      throw CheckpointError(path.string() + ": expected a " + expected_kind +
                            " checkpoint, found " + c.kind);
    }
    c.config = j.at("config");
    std::size_t cursor = 0;
    for (const json& s : j.at("shapes")) {
      c.shapes.push_back(nn::AddDense(cursor, s.at("name").get<std::string>(),
                                      s.at("rows").get<int>(),
                                      s.at("cols").get<int>()));
    }
    c.values = j.at("values").get<std::vector<double>>();
    if (c.values.size() != cursor) {
      throw CheckpointError(path.string() + ": " +
                            std::to_string(c.values.size()) +
                            " values for shapes totalling " +
                            std::to_string(cursor));
    }
    return c;
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void CheckShapes(const Checkpoint& ckpt,
                 std::span<const nn::Dense* const> layers) {
  if (ckpt.shapes.size() != layers.size()) {
    throw CheckpointError("checkpoint has " +
                          std::to_string(ckpt.shapes.size()) +
                          " layers, expected " +
                          std::to_string(layers.size()));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const nn::Dense& a = ckpt.shapes[i];
    const nn::Dense& b = *layers[i];
    if (a.name != b.name || a.out != b.out || a.in != b.in) {
      std::ostringstream msg;
      msg << "shape mismatch at layer " << b.name << ": checkpoint " << a.name
          << " " << a.out << "x" << a.in << ", expected " << b.out << "x"
          << b.in;
      throw CheckpointError(msg.str());
    }
  }
}

}  // namespace dss
