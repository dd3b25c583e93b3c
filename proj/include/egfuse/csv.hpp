// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace egfuse {

/// Accumulates rows of the fixed metrics schema and serializes them with
/// stable formatting, so identical runs produce identical bytes.
class MetricsCsv {
public:
  static constexpr const char* kHeader =
      "run_id,command,subset,class,iou,miou,loss_adapt,loss_kl,flops,params,epoch";

  struct Row {
    std::string run_id;
    std::string command;
    std::string subset;
    std::string cls;
    std::optional<double> iou;
    std::optional<double> miou;
    std::optional<double> loss_adapt;
    std::optional<double> loss_kl;
    std::optional<int64_t> flops;
    std::optional<int64_t> params;
    std::optional<int64_t> epoch;
  };

  void add(Row row);
  std::string serialize() const;
  void write(const std::string& path) const;  // atomic

  /// Six-decimal fixed-point rendering; rejects non-finite values.
  static std::string format_double(double v);

private:
  std::vector<Row> rows_;
};

/// Deterministic run identifier derived from the canonical config text, the
/// command name, and the effective seed.
std::string make_run_id(const std::string& config_text, const std::string& command, uint64_t seed);

}  // namespace egfuse
