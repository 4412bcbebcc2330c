#include "fakg/protocol_eval.hpp"

#include <algorithm>
#include <array>
#include <iomanip>
#include <sstream>

#include "fakg/error.hpp"

namespace fakg {

namespace {

using Matrix = std::vector<std::vector<std::size_t>>;

struct Counts {
  Matrix confusion;  // [truth][predicted]
  std::size_t n = 0;
};

Counts count(std::span<const CoarseRecord> records, std::size_t width) {
  Counts c{Matrix(width, std::vector<std::size_t>(width, 0)), records.size()};
  for (const auto& r : records) {
    if (r.truth >= width || r.predicted >= width) {
      throw Error(ErrorCode::kInvalidArgument, "record '" + r.sample_id + "' is outside the label space");
    }
    ++c.confusion[r.truth][r.predicted];
  }
  return c;
}

CategoryMetrics metrics_for(const Counts& counts, std::size_t category, const std::string& name,
                            std::vector<std::string>* diagnostics) {
  CategoryMetrics m;
  m.category = name;
  std::size_t predicted_as = 0;
  for (std::size_t t = 0; t < counts.confusion.size(); ++t) {
    m.support += counts.confusion[category][t];
    predicted_as += counts.confusion[t][category];
  }
  const std::size_t correct = counts.confusion[category][category];
  const std::size_t negatives = counts.n - m.support;
  if (m.support == 0) {
    m.acc = 0;
    if (diagnostics) diagnostics->push_back("zero_support:" + name);
  } else {
    m.acc = static_cast<double>(correct) / static_cast<double>(m.support);
  }
  m.frr = 1.0 - m.acc;
  if (negatives == 0) {
    m.far = 0;
    if (diagnostics) diagnostics->push_back("no_negatives:" + name);
  } else {
    m.far = static_cast<double>(predicted_as - correct) / static_cast<double>(negatives);
  }
  m.hter = (m.far + m.frr) / 2.0;
  return m;
}

std::vector<CoarseRecord> to_coarse(std::span<const PredictionRecord> records, Protocol p) {
  std::vector<CoarseRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.sample_id, coarsen(r.truth, p), coarsen(r.predicted, p)});
  return out;
}

std::string percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << v * 100.0;
  return s.str();
}

}  // namespace

Protocol parse_protocol(std::string_view text) {
  std::string t(text);
  if (!t.empty() && (t[0] == 'P' || t[0] == 'p')) t.erase(0, 1);
  if (t == "1") return Protocol::kP1;
  if (t == "2") return Protocol::kP2;
  if (t == "3") return Protocol::kP3;
  throw Error(ErrorCode::kInvalidArgument, "unknown protocol '" + std::string(text) + "'");
}

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::kP1: return "P1";
    case Protocol::kP2: return "P2";
    case Protocol::kP3: return "P3";
  }
  return "?";
}

const std::vector<std::string>& label_space(Protocol p) {
  static const std::vector<std::string> kP1 = {"Real Face", "Attack"};
  static const std::vector<std::string> kP2 = {"Real Face", "Physical", "Digital"};
  static const std::vector<std::string> kP3 = [] {
    std::vector<std::string> out;
    for (FineLabel l : kAllFineLabels) out.emplace_back(to_string(l));
    return out;
  }();
  switch (p) {
    case Protocol::kP1: return kP1;
    case Protocol::kP2: return kP2;
    case Protocol::kP3: return kP3;
  }
  return kP3;
}

std::size_t category_index(Protocol p, std::string_view category) {
  const auto& space = label_space(p);
  const std::string key = label_key(category);
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (label_key(space[i]) == key) return i;
  }
  throw Error(ErrorCode::kUnknownLabel, "'" + std::string(category) + "' is not a " +
                                            std::string(to_string(p)) + " category");
}

std::size_t coarsen(FineLabel label, Protocol p) {
  switch (p) {
    case Protocol::kP3: return static_cast<std::size_t>(label);
    case Protocol::kP2:
      if (label == FineLabel::kRealFace) return 0;
      if (label == FineLabel::kPrint || label == FineLabel::kReplay) return 1;
      return 2;
    case Protocol::kP1: return label == FineLabel::kRealFace ? 0 : 1;
  }
  return 0;
}

std::string_view coarsen_name(FineLabel label, Protocol p) {
  return label_space(p)[coarsen(label, p)];
}

BinaryHter binary_hter(std::span<const PredictionRecord> records) {
  if (records.empty()) throw Error(ErrorCode::kInvalidArgument, "binary_hter: no records");
  std::size_t reals = 0, attacks = 0, false_accept = 0, false_reject = 0;
  for (const auto& r : records) {
    const bool real = r.truth == FineLabel::kRealFace;
    const bool predicted_real = r.predicted == FineLabel::kRealFace;
    if (real) {
      ++reals;
      if (!predicted_real) ++false_reject;
    } else {
      ++attacks;
      if (predicted_real) ++false_accept;
    }
  }
  BinaryHter out;
  if (attacks == 0) {
    out.diagnostics.push_back("no true attacks: FAR reported as 0");
  } else {
    out.far = static_cast<double>(false_accept) / static_cast<double>(attacks);
  }
  if (reals == 0) {
    out.diagnostics.push_back("no true real faces: FRR reported as 0");
  } else {
    out.frr = static_cast<double>(false_reject) / static_cast<double>(reals);
  }
  out.hter = (out.far + out.frr) / 2.0;
  return out;
}

CategoryMetrics category_metrics(std::span<const PredictionRecord> records, Protocol p,
                                 std::string_view category) {
  const std::size_t c = category_index(p, category);
  const auto coarse = to_coarse(records, p);
  return metrics_for(count(coarse, label_space(p).size()), c, label_space(p)[c], nullptr);
}

EvalReport evaluate_coarse(std::span<const CoarseRecord> records, Protocol p) {
  if (records.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluate: no records");
  const auto& space = label_space(p);
  const Counts counts = count(records, space.size());
  EvalReport report;
  report.protocol = p;
  report.total_support = records.size();
  double acc_sum = 0, hter_sum = 0;
  for (std::size_t c = 0; c < space.size(); ++c) {
    CategoryMetrics m = metrics_for(counts, c, space[c], &report.diagnostics);
    acc_sum += static_cast<double>(m.support) * m.acc;
    hter_sum += static_cast<double>(m.support) * m.hter;
    report.categories.push_back(std::move(m));
  }
  report.total_acc = acc_sum / static_cast<double>(records.size());
  report.total_hter = hter_sum / static_cast<double>(records.size());
  return report;
}

EvalReport evaluate(std::span<const PredictionRecord> records, Protocol p) {
  const auto coarse = to_coarse(records, p);
  EvalReport report = evaluate_coarse(coarse, p);
  if (p == Protocol::kP1) report.binary = binary_hter(records);
  return report;
}

namespace {

nlohmann::json parse_object(std::string_view line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::kParse, "prediction must be a JSON object");
  for (const char* key : {"truth", "predicted"}) {
    if (!doc.contains(key) || !doc[key].is_string()) {
      throw Error(ErrorCode::kParse, std::string("prediction needs a string '") + key + "'");
    }
  }
  return doc;
}

std::string sample_id_of(const nlohmann::json& doc) {
  auto it = doc.find("sample_id");
  if (it == doc.end()) return {};
  return it->is_string() ? it->get<std::string>() : it->dump();
}

}  // namespace

PredictionRecord parse_prediction(std::string_view json_line) {
  const auto doc = parse_object(json_line);
  auto fine = [](const std::string& text) {
    if (auto l = parse_fine_label(text)) return *l;
    throw Error(ErrorCode::kParse, "unknown fine label '" + text + "'");
  };
  return {sample_id_of(doc), fine(doc["truth"].get<std::string>()),
          fine(doc["predicted"].get<std::string>())};
}

CoarseRecord parse_coarse_prediction(std::string_view json_line, Protocol p) {
  const auto doc = parse_object(json_line);
  auto idx = [p](const std::string& text) {
    try {
      return category_index(p, text);
    } catch (const Error& e) {
      throw Error(ErrorCode::kParse, e.what());
    }
  };
  return {sample_id_of(doc), idx(doc["truth"].get<std::string>()),
          idx(doc["predicted"].get<std::string>())};
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json out;
  out["protocol"] = std::string(to_string(report.protocol));
  out["categories"] = nlohmann::ordered_json::array();
  for (const auto& m : report.categories) {
    nlohmann::ordered_json c;
    c["category"] = m.category;
    c["support"] = m.support;
    c["acc"] = m.acc;
    c["far"] = m.far;
    c["frr"] = m.frr;
    c["hter"] = m.hter;
    out["categories"].push_back(std::move(c));
  }
  nlohmann::ordered_json total;
  total["support"] = report.total_support;
  total["acc"] = report.total_acc;
  total["hter"] = report.total_hter;
  out["total"] = std::move(total);
  if (report.binary) {
    nlohmann::ordered_json b;
    b["far"] = report.binary->far;
    b["frr"] = report.binary->frr;
    b["hter"] = report.binary->hter;
    b["diagnostics"] = report.binary->diagnostics;
    out["binary"] = std::move(b);
  }
  out["diagnostics"] = report.diagnostics;
  return out;
}

std::string render_table(const EvalReport& report) {
  std::vector<std::array<std::string, 4>> rows;
  rows.push_back({"Category", "Support", "ACC(%)", "HTER(%)"});
  for (const auto& m : report.categories) {
    rows.push_back({m.category, std::to_string(m.support), percent(m.acc), percent(m.hter)});
  }
  rows.push_back({"#Total", std::to_string(report.total_support), percent(report.total_acc),
                  percent(report.total_hter)});
  std::array<std::size_t, 4> width{};
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  out << "Protocol " << to_string(report.protocol) << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == 0) {
        out << std::left << std::setw(static_cast<int>(width[i])) << row[i];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[i])) << row[i];
      }
    }
    out << "\n";
  }
  if (report.binary) {
    out << "Binary FAR " << percent(report.binary->far) << "  FRR " << percent(report.binary->frr)
        << "  HTER " << percent(report.binary->hter) << "\n";
  }
  return out.str();
}

}  // namespace fakg
