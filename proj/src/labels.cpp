#include "fakg/labels.hpp"

#include <cctype>

#include "fakg/error.hpp"

namespace fakg {

std::string_view to_string(FineLabel label) {
  switch (label) {
    case FineLabel::kRealFace: return "Real Face";
    case FineLabel::kPrint: return "Print";
    case FineLabel::kReplay: return "Replay";
    case FineLabel::kFaceSwap: return "FaceSwap";
    case FineLabel::kAttributeEdit: return "Attribute-Edit";
    case FineLabel::kVideoDriven: return "Video-Driven";
    case FineLabel::kAdversarial: return "Adversarial";
  }
  return "?";
}

std::string label_key(std::string_view text) {
  std::string key;
  key.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isalnum(c)) key.push_back(static_cast<char>(std::tolower(c)));
  }
  return key;
}

std::optional<FineLabel> parse_fine_label(std::string_view text) {
  const std::string key = label_key(text);
  if (key.empty()) return std::nullopt;
  for (FineLabel label : kAllFineLabels) {
    if (label_key(to_string(label)) == key) return label;
  }
  return std::nullopt;
}

FineLabel require_fine_label(std::string_view text) {
  if (auto label = parse_fine_label(text)) return *label;
  throw Error(ErrorCode::kUnknownLabel,
              "unknown fine-grained label '" + std::string(text) + "'");
}

}  // namespace fakg
