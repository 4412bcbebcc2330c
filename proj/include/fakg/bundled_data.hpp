#pragma once

#include <string_view>

namespace fakg {

// Reference FAKG document (graph file format, version 1).
std::string_view reference_graph_json();

// Reference template set for the GCRO sandbox (truth label "Replay").
std::string_view reference_templates_json();

}  // namespace fakg
