// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "mslb/pipeline/stages.h"

namespace mslb::pipeline {

/// Append-only JSON-lines log: one object per record, flushed per line.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);

  void write(const ProgressRecord& r);
  /// Free-form record with task metrics, e.g. {"text_accuracy": 99.0}.
  void write(int stage, const std::string& phase, const std::map<std::string, double>& metrics);

 private:
  std::ofstream out_;
};

}  // namespace mslb::pipeline
