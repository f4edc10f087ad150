// SPDX-License-Identifier: Apache-2.0
#include "mslb/pipeline/metrics.h"

#include <json.hpp>

#include "mslb/error.h"

namespace mslb::pipeline {

MetricsLog::MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw FormatError("cannot open metrics log " + path.string());
}

void MetricsLog::write(const ProgressRecord& r) {
  nlohmann::json j = {{"stage", r.stage},          {"phase", r.phase}, {"step", r.step.step},
                      {"loss", r.step.loss},       {"lr", r.step.lr},  {"grad_norm", r.step.grad_norm}};
  out_ << j.dump() << '\n' << std::flush;
}

void MetricsLog::write(int stage, const std::string& phase, const std::map<std::string, double>& metrics) {
  nlohmann::json j = {{"stage", stage}, {"phase", phase}};
  for (const auto& [k, v] : metrics) j[k] = v;
  out_ << j.dump() << '\n' << std::flush;
}

}  // namespace mslb::pipeline
