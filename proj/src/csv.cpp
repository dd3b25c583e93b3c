// SPDX-License-Identifier: Apache-2.0
#include "egfuse/csv.hpp"

#include <cmath>
#include <cstdio>

#include "egfuse/errors.hpp"
#include "egfuse/io.hpp"

namespace egfuse {

std::string MetricsCsv::format_double(double v) {
  if (!std::isfinite(v)) throw NumericError("csv: non-finite value");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void MetricsCsv::add(Row row) {
  if (row.iou) format_double(*row.iou);  // reject non-finite cells up front
  if (row.miou) format_double(*row.miou);
  if (row.loss_adapt) format_double(*row.loss_adapt);
  if (row.loss_kl) format_double(*row.loss_kl);
  rows_.push_back(std::move(row));
}

std::string MetricsCsv::serialize() const {
  std::string out = kHeader;
  out += "\n";
  for (const auto& r : rows_) {
    out += r.run_id + "," + r.command + "," + r.subset + "," + r.cls + ",";
    out += (r.iou ? format_double(*r.iou) : "") + std::string(",");
    out += (r.miou ? format_double(*r.miou) : "") + std::string(",");
    out += (r.loss_adapt ? format_double(*r.loss_adapt) : "") + std::string(",");
    out += (r.loss_kl ? format_double(*r.loss_kl) : "") + std::string(",");
    out += (r.flops ? std::to_string(*r.flops) : "") + std::string(",");
    out += (r.params ? std::to_string(*r.params) : "") + std::string(",");
    out += r.epoch ? std::to_string(*r.epoch) : "";
    out += "\n";
  }
  return out;
}

void MetricsCsv::write(const std::string& path) const { write_file_atomic(path, serialize()); }

std::string make_run_id(const std::string& config_text, const std::string& command,
                        uint64_t seed) {
  uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const std::string& s) {
    for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
  };
  feed(config_text);
  feed("|");
  feed(command);
  feed("|");
  feed(std::to_string(seed));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace egfuse
