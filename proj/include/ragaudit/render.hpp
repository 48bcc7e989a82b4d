#pragma once

#include <string>

#include "ragaudit/audit.hpp"

namespace ragaudit {

enum class RenderFormat { ansi, html, json };

RenderFormat render_format_from_string(const std::string& s);

/// Renders an audit report. json is the canonical report itself; ansi uses
/// 256-color backgrounds for token heat; html is a static page with token
/// heat coloring and per-document chips labelled by signed share of total
/// absolute influence. The report is schema-validated first.
std::string render_report(const Report& report, RenderFormat format);

/// Signed percentage label for a document chip: importance over the sum of
/// absolute importances, e.g. "54%" or "-19%".
std::string chip_label(double importance, double total_abs);

}  // namespace ragaudit
