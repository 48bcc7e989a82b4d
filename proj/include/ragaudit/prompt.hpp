#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ragaudit/common.hpp"

namespace ragaudit {

/// Prompt construction for the generator. Documents are numbered by their
/// position within the rendered subset (1..|docs|), so a coalition never
/// leaks which original slots were dropped.
struct PromptTemplate {
  enum class Variant { ranked, generic, custom };
  enum class Layout { system_user, user_only };

  Variant variant = Variant::ranked;
  Layout layout = Layout::system_user;
  std::string instruction;
  std::string document_format = "Document {index}: {text}";
  std::string query_format = "Query: {text}";

  static PromptTemplate ranked();
  static PromptTemplate generic();
  /// JSON file with named slots {instruction, documents, query} and an
  /// optional layout: {"instruction": "...", "documents": "Document {index}: {text}",
  /// "query": "Query: {text}", "layout": "system_user"|"user_only"}.
  static PromptTemplate from_file(const std::string& path);

  /// Role/content pairs; the flat render joins contents with blank lines.
  std::vector<std::pair<std::string, std::string>> render_messages(
      const std::string& query, const std::vector<std::string>& docs) const;

  std::string render(const std::string& query, const std::vector<std::string>& docs) const;
};

std::string create_prompt(const std::string& query, const std::vector<std::string>& docs,
                          const PromptTemplate& tmpl);

}  // namespace ragaudit
