#include "ragaudit/prompt.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace ragaudit {

namespace {

const char* kRankedInstruction =
    "Use the following retrieved documents, ranked from highest to lowest relevance, "
    "to answer the user's query. Be thorough and accurate, and cite documents when useful. "
    "Keep the answer under 200 words.";

const char* kGenericInstruction =
    "Use the following documents to answer the user's query. Be thorough and accurate, "
    "and cite documents when useful. Keep the answer under 200 words.";

std::string substitute(std::string format, const std::string& key, const std::string& value) {
  const std::string needle = "{" + key + "}";
  std::size_t pos = 0;
  while ((pos = format.find(needle, pos)) != std::string::npos) {
    format.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return format;
}

}  // namespace

PromptTemplate PromptTemplate::ranked() {
  PromptTemplate t;
  t.variant = Variant::ranked;
  t.layout = Layout::system_user;
  t.instruction = kRankedInstruction;
  return t;
}

PromptTemplate PromptTemplate::generic() {
  PromptTemplate t;
  t.variant = Variant::generic;
  t.layout = Layout::user_only;
  t.instruction = kGenericInstruction;
  return t;
}

PromptTemplate PromptTemplate::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RagError(ErrorCode::io, "cannot open template file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw RagError(ErrorCode::schema, std::string("template file is not valid JSON: ") + e.what());
  }
  PromptTemplate t;
  t.variant = Variant::custom;
  t.instruction = j.at("instruction").get<std::string>();
  t.document_format = j.value("documents", t.document_format);
  t.query_format = j.value("query", t.query_format);
  const std::string layout = j.value("layout", "system_user");
  if (layout == "system_user") {
    t.layout = Layout::system_user;
  } else if (layout == "user_only") {
    t.layout = Layout::user_only;
  } else {
    throw RagError(ErrorCode::schema, "template layout must be system_user or user_only");
  }
  if (t.document_format.find("{text}") == std::string::npos)
    throw RagError(ErrorCode::schema, "document slot format must contain {text}");
  if (t.query_format.find("{text}") == std::string::npos)
    throw RagError(ErrorCode::schema, "query slot format must contain {text}");
  return t;
}

std::vector<std::pair<std::string, std::string>> PromptTemplate::render_messages(
    const std::string& query, const std::vector<std::string>& docs) const {
  std::string body;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::string slot = substitute(document_format, "index", std::to_string(i + 1));
    slot = substitute(slot, "text", docs[i]);
    body += slot;
    body += "\n\n";
  }
  body += substitute(query_format, "text", query);

  std::vector<std::pair<std::string, std::string>> messages;
  if (layout == Layout::system_user) {
    messages.emplace_back("system", instruction);
    messages.emplace_back("user", body);
  } else {
    messages.emplace_back("user", instruction + "\n\n" + body);
  }
  return messages;
}

std::string PromptTemplate::render(const std::string& query, const std::vector<std::string>& docs) const {
  const auto messages = render_messages(query, docs);
  std::string flat;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) flat += "\n\n";
    flat += messages[i].second;
  }
  return flat;
}

std::string create_prompt(const std::string& query, const std::vector<std::string>& docs,
                          const PromptTemplate& tmpl) {
  return tmpl.render(query, docs);
}

}  // namespace ragaudit
