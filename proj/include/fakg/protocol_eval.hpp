#pragma once

// ACC/FAR/FRR/HTER under the binary, coarse and fine-grained protocols.
// Per-category ACC is recall; FAR is one-vs-rest over all non-category
// records; totals are support-weighted.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fakg/labels.hpp"

namespace fakg {

enum class Protocol { kP1 = 1, kP2 = 2, kP3 = 3 };

Protocol parse_protocol(std::string_view text);  // "1".."3", "P1".."P3"
std::string_view to_string(Protocol p);

// P1: {Real Face, Attack}; P2: {Real Face, Physical, Digital}; P3: fine labels.
const std::vector<std::string>& label_space(Protocol p);
std::size_t category_index(Protocol p, std::string_view category);  // throws kUnknownLabel

std::size_t coarsen(FineLabel label, Protocol p);
std::string_view coarsen_name(FineLabel label, Protocol p);

struct PredictionRecord {
  std::string sample_id;
  FineLabel truth;
  FineLabel predicted;
};

// Labels already expressed as indices into label_space(p).
struct CoarseRecord {
  std::string sample_id;
  std::size_t truth;
  std::size_t predicted;
};

struct CategoryMetrics {
  std::string category;
  std::size_t support = 0;
  double acc = 0;
  double far = 0;
  double frr = 0;
  double hter = 0;
};

struct BinaryHter {
  double far = 0;
  double frr = 0;
  double hter = 0;
  std::vector<std::string> diagnostics;
};

struct EvalReport {
  Protocol protocol = Protocol::kP3;
  std::vector<CategoryMetrics> categories;  // label_space order
  double total_acc = 0;
  double total_hter = 0;
  std::size_t total_support = 0;
  std::optional<BinaryHter> binary;  // P1 only
  std::vector<std::string> diagnostics;
};

// Throws Error(kInvalidArgument) on empty input.
BinaryHter binary_hter(std::span<const PredictionRecord> records);
CategoryMetrics category_metrics(std::span<const PredictionRecord> records, Protocol p,
                                 std::string_view category);
EvalReport evaluate(std::span<const PredictionRecord> records, Protocol p);
EvalReport evaluate_coarse(std::span<const CoarseRecord> records, Protocol p);

// {"sample_id", "truth", "predicted"}; throws Error(kParse).
PredictionRecord parse_prediction(std::string_view json_line);
CoarseRecord parse_coarse_prediction(std::string_view json_line, Protocol p);

nlohmann::ordered_json report_to_json(const EvalReport& report);
// Aligned table, percentages with one decimal.
std::string render_table(const EvalReport& report);

}  // namespace fakg
