#include "ragaudit/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ragaudit {

namespace {

std::string escape_html(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double max_abs(const Report& scores) {
  double m = 0.0;
  for (const Report& v : scores)
    if (v.is_number()) m = std::max(m, std::fabs(v.get<double>()));
  return m;
}

// 256-color ANSI ramps, low to high intensity.
const int kPositiveRamp[] = {153, 117, 75, 33, 27, 21};
const int kNegativeRamp[] = {224, 217, 210, 203, 196, 160};

int ramp_color(double value, double scale) {
  const double a = scale > 0.0 ? std::min(1.0, std::fabs(value) / scale) : 0.0;
  const int idx = std::min(5, static_cast<int>(a * 6.0));
  return value >= 0.0 ? kPositiveRamp[idx] : kNegativeRamp[idx];
}

std::string ansi_tokens(const Report& saliency) {
  const Report& tokens = saliency.at("tokens");
  const Report& scores = saliency.at("scores");
  const Report& special = saliency.at("special");
  const double scale = max_abs(scores);
  std::ostringstream out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string text = tokens[i].get<std::string>();
    if (special[i].get<bool>()) {
      out << "\x1b[2m" << text << "\x1b[0m ";
      continue;
    }
    const double v = scores[i].is_number() ? scores[i].get<double>() : 0.0;
    out << "\x1b[48;5;" << ramp_color(v, scale) << "m\x1b[30m" << text << "\x1b[0m ";
  }
  return out.str();
}

std::string html_tokens(const Report& saliency) {
  const Report& tokens = saliency.at("tokens");
  const Report& scores = saliency.at("scores");
  const Report& special = saliency.at("special");
  const double scale = max_abs(scores);
  std::ostringstream out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string text = escape_html(tokens[i].get<std::string>());
    if (special[i].get<bool>()) {
      out << "<span class=\"special\">" << text << "</span> ";
      continue;
    }
    const double v = scores[i].is_number() ? scores[i].get<double>() : 0.0;
    const double alpha = scale > 0.0 ? std::min(1.0, std::fabs(v) / scale) : 0.0;
    char style[96];
    if (v >= 0.0) {
      std::snprintf(style, sizeof(style), "background: rgba(33,150,243,%.3f)", alpha);
    } else {
      std::snprintf(style, sizeof(style), "background: rgba(230,81,0,%.3f)", alpha);
    }
    out << "<span class=\"tok\" style=\"" << style << "\">" << text << "</span> ";
  }
  return out.str();
}

// Chip palette in Fig-style rotation.
const char* kChipColors[] = {"#3f51b5", "#e65100", "#2e7d32", "#c62828", "#6a1b9a",
                             "#00838f", "#9e9d24", "#4e342e", "#37474f", "#ad1457"};

}  // namespace

std::string chip_label(double importance, double total_abs) {
  if (total_abs <= 0.0) return "0%";
  const long pct = std::lround(100.0 * importance / total_abs);
  return std::to_string(pct) + "%";
}

RenderFormat render_format_from_string(const std::string& s) {
  if (s == "ansi") return RenderFormat::ansi;
  if (s == "html") return RenderFormat::html;
  if (s == "json") return RenderFormat::json;
  throw RagError(ErrorCode::invalid_config, "render format must be ansi, html or json");
}

std::string render_report(const Report& report, RenderFormat format) {
  validate_report(report);
  if (format == RenderFormat::json) return report.dump(2) + "\n";

  std::ostringstream out;
  const bool html = format == RenderFormat::html;
  if (html) {
    out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>RAG audit report</title>\n"
        << "<style>\n"
        << "body { font-family: sans-serif; margin: 2em; max-width: 70em; }\n"
        << ".tok { padding: 0 2px; border-radius: 2px; }\n"
        << ".special { color: #999; font-size: 85%; }\n"
        << ".chip { display: inline-block; width: 0.8em; height: 0.8em; border-radius: 2px; margin-right: 4px; }\n"
        << ".doc { margin: 0.4em 0; }\n"
        << "h3 { border-bottom: 1px solid #ddd; padding-bottom: 4px; }\n"
        << "table { border-collapse: collapse; } td, th { padding: 2px 10px; text-align: left; }\n"
        << "</style></head><body>\n";
    out << "<h1>RAG audit report</h1>\n";
    out << "<p>condition: " << escape_html(report.at("condition").get<std::string>())
        << ", seed: " << report.at("provenance").at("seed") << ", config "
        << escape_html(report.at("provenance").at("config_hash").get<std::string>()) << "</p>\n";
  } else {
    out << "RAG audit report (condition " << report.at("condition").get<std::string>() << ", seed "
        << report.at("provenance").at("seed") << ")\n\n";
  }

  for (const Report& q : report.at("queries")) {
    const std::string query = q.at("query").get<std::string>();
    if (q.at("status").get<std::string>() != "ok") {
      if (html) {
        out << "<h3>" << escape_html(query) << "</h3><p class=\"special\">failed: "
            << escape_html(q.at("error").at("code").get<std::string>()) << "</p>\n";
      } else {
        out << "== " << query << " ==\n  failed: " << q.at("error").at("code").get<std::string>() << "\n\n";
      }
      continue;
    }

    const Report& retriever = q.at("retriever");
    const Report& gen = q.at("generator");
    const Report& alignment = q.at("alignment");

    double total_abs = 0.0;
    for (const Report& v : gen.at("importance"))
      if (v.is_number()) total_abs += std::fabs(v.get<double>());

    if (html) {
      out << "<h3>" << escape_html(query) << "</h3>\n";
      out << "<div class=\"doc\"><b>Query:</b> " << html_tokens(retriever.at("query_saliency")) << "</div>\n";
      std::size_t di = 0;
      for (const Report& doc : retriever.at("documents")) {
        out << "<div class=\"doc\"><b>Document " << (di + 1) << ":</b> " << html_tokens(doc) << "</div>\n";
        ++di;
      }
      out << "<div class=\"doc\"><b>Answer:</b> ";
      for (const Report& tok : gen.at("answer_tokens")) out << escape_html(tok.get<std::string>()) << ' ';
      out << "</div>\n<div class=\"doc\"><b>Document influence:</b> ";
      const Report& imp = gen.at("importance");
      for (std::size_t i = 0; i < imp.size(); ++i) {
        const double v = imp[i].is_number() ? imp[i].get<double>() : 0.0;
        out << "<span class=\"chip\" style=\"background:" << kChipColors[i % 10] << "\"></span>Doc. "
            << (i + 1) << " " << chip_label(v, total_abs) << " &nbsp; ";
      }
      out << "</div>\n";
      out << "<table><tr><th>p</th>";
      for (auto it = alignment.at("warg").begin(); it != alignment.at("warg").end(); ++it)
        out << "<th>" << escape_html(it.key()) << "</th>";
      out << "</tr><tr><td>WARG</td>";
      for (auto it = alignment.at("warg").begin(); it != alignment.at("warg").end(); ++it)
        out << "<td>" << it.value() << "</td>";
      out << "</tr></table>\n";
      out << "<p>spearman: " << alignment.at("spearman")
          << ", wasted retrieval: " << (alignment.at("wasted_retrieval").get<bool>() ? "yes" : "no")
          << ", noise distraction: " << (alignment.at("noise_distraction").get<bool>() ? "yes" : "no")
          << "</p>\n";
    } else {
      out << "== " << query << " ==\n";
      out << "  query:  " << ansi_tokens(retriever.at("query_saliency")) << "\n";
      std::size_t di = 0;
      for (const Report& doc : retriever.at("documents")) {
        out << "  doc " << (di + 1) << ":  " << ansi_tokens(doc) << "\n";
        ++di;
      }
      out << "  answer: ";
      for (const Report& tok : gen.at("answer_tokens")) out << tok.get<std::string>() << ' ';
      out << "\n  influence: ";
      const Report& imp = gen.at("importance");
      for (std::size_t i = 0; i < imp.size(); ++i) {
        const double v = imp[i].is_number() ? imp[i].get<double>() : 0.0;
        out << "Doc." << (i + 1) << " " << chip_label(v, total_abs) << "  ";
      }
      out << "\n  warg:";
      for (auto it = alignment.at("warg").begin(); it != alignment.at("warg").end(); ++it)
        out << "  p=" << it.key() << " " << it.value();
      out << "\n  flags: wasted_retrieval=" << (alignment.at("wasted_retrieval").get<bool>() ? "yes" : "no")
          << " noise_distraction=" << (alignment.at("noise_distraction").get<bool>() ? "yes" : "no") << "\n\n";
    }
  }

  const Report& agg = report.at("aggregate");
  if (agg.contains("failure_rates")) {
    char wasted[32], noise[32];
    std::snprintf(wasted, sizeof(wasted), "%.1f",
                  agg.at("failure_rates").at("wasted_retrieval_pct").get<double>());
    std::snprintf(noise, sizeof(noise), "%.1f",
                  agg.at("failure_rates").at("noise_distraction_pct").get<double>());
    if (html) {
      out << "<h3>Aggregate</h3><p>wasted retrieval " << wasted << "%, noise distraction " << noise
          << "%</p>\n";
    } else {
      out << "aggregate: wasted retrieval " << wasted << "%, noise distraction " << noise << "%\n";
    }
  }
  if (html) out << "</body></html>\n";
  return out.str();
}

}  // namespace ragaudit
