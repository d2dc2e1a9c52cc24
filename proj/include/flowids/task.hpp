#pragma once

#include <string>

#include "flowids/errors.hpp"

namespace flowids {

enum class TaskMode { kMulticlass, kBinary };

inline std::string to_string(TaskMode mode) {
  return mode == TaskMode::kMulticlass ? "multiclass" : "binary";
}

inline TaskMode task_mode_from_string(const std::string& s) {
  if (s == "multiclass") return TaskMode::kMulticlass;
  if (s == "binary") return TaskMode::kBinary;
  throw ConfigError("unknown task mode '" + s +
                    "' (expected multiclass or binary)");
}

}  // namespace flowids
