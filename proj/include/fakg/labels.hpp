#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace fakg {

// Fine-grained label space shared by the graph, the reward engine, and the
// protocol evaluator.
enum class FineLabel {
  kRealFace,
  kPrint,
  kReplay,
  kFaceSwap,
  kAttributeEdit,
  kVideoDriven,
  kAdversarial,
};

inline constexpr std::array<FineLabel, 7> kAllFineLabels = {
    FineLabel::kRealFace,      FineLabel::kPrint,       FineLabel::kReplay,
    FineLabel::kFaceSwap,      FineLabel::kAttributeEdit, FineLabel::kVideoDriven,
    FineLabel::kAdversarial};

// Canonical display names: "Real Face", "Print", "Replay", "FaceSwap",
// "Attribute-Edit", "Video-Driven", "Adversarial".
std::string_view to_string(FineLabel label);

// Accepts the canonical names and spelling variants that differ only in
// case, spaces, hyphens or underscores ("realface", "attribute_edit", ...).
std::optional<FineLabel> parse_fine_label(std::string_view text);

// Throws Error(kUnknownLabel) when the text is not a fine label.
FineLabel require_fine_label(std::string_view text);

// Lowercase alphanumeric folding used for label comparisons.
std::string label_key(std::string_view text);

}  // namespace fakg
