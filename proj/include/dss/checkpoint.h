#pragma once

// Versioned JSON parameter files: {format, version, kind, config,
// shapes: [{name, rows, cols}], values: [...]}; each layer contributes
// rows * cols weights followed by rows biases, in shape order.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dss/nn.h"
#include "json.hpp"

namespace dss {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  std::vector<nn::Dense> shapes;
  std::vector<double> values;
};

void WriteCheckpoint(const std::filesystem::path& path,
                     const std::string& kind, const nlohmann::json& config,
                     std::span<const nn::Dense* const> layers,
                     std::span<const double> values);

Checkpoint ReadCheckpoint(const std::filesystem::path& path,
                          const std::string& expected_kind);

// Throws CheckpointError naming the first layer whose shape differs.
void CheckShapes(const Checkpoint& ckpt,
                 std::span<const nn::Dense* const> layers);

}  // namespace dss
