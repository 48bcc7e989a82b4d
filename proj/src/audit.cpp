#include "ragaudit/audit.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "ragaudit/faithfulness.hpp"
#include "ragaudit/retriever.hpp"

namespace ragaudit {

namespace {

using nlohmann::json;

constexpr const char* kSchemaVersion = "rag-audit-report/1";
constexpr const char* kToolVersion = "0.1.0";

std::string normalize_for_dedup(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

double round1(double v) { return std::round(v * 10.0) / 10.0; }

Report finite_or_null(double v) {
  if (std::isfinite(v)) return Report(v);
  return Report(nullptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RagError(ErrorCode::io, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string join_path(const std::string& base, const std::string& path) {
  if (path.empty() || path.front() == '/' || base.empty()) return path;
  return base + "/" + path;
}

std::vector<std::string> load_queries_file(const std::string& path) {
  const std::string text = read_text_file(path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    json j;
    try {
      j = json::parse(text);
    } catch (const std::exception& e) {
      throw RagError(ErrorCode::schema, std::string("query file is not valid JSON: ") + e.what());
    }
    return j.get<std::vector<std::string>>();
  }
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

struct QueryWork {
  int index = 0;
  std::string query;
  Report entry;
  bool ok = false;
  AlignmentRecord alignment;
  std::size_t distinct_coalitions = 0;
};

}  // namespace

OrderingCondition condition_from_string(const std::string& s) {
  if (s == "original") return OrderingCondition::original;
  if (s == "shuffled") return OrderingCondition::shuffled;
  if (s == "no-duplicates") return OrderingCondition::no_duplicates;
  if (s == "shuffled-no-duplicates") return OrderingCondition::shuffled_no_duplicates;
  throw RagError(ErrorCode::invalid_config, "unknown ordering condition '" + s + "'");
}

const char* condition_name(OrderingCondition condition) {
  switch (condition) {
    case OrderingCondition::original: return "original";
    case OrderingCondition::shuffled: return "shuffled";
    case OrderingCondition::no_duplicates: return "no-duplicates";
    case OrderingCondition::shuffled_no_duplicates: return "shuffled-no-duplicates";
  }
  return "?";
}

std::string format_persistence(double p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", p);
  return buf;
}

AuditConfig AuditConfig::from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const RagError&) {
    throw;
  } catch (const std::exception& e) {
    throw RagError(ErrorCode::schema, std::string("config is not valid JSON: ") + e.what());
  }
  const std::size_t slash = path.find_last_of('/');
  const std::string base_dir = slash == std::string::npos ? std::string(".") : path.substr(0, slash);
  return from_json(j, base_dir);
}

AuditConfig AuditConfig::from_json(const json& j, const std::string& base_dir) {
  AuditConfig cfg;
  try {
    if (!j.contains("seed")) throw RagError(ErrorCode::invalid_config, "config requires an explicit seed");
    cfg.seed = j.at("seed").get<std::uint64_t>();

    const json& queries = j.at("queries");
    if (queries.is_array()) {
      cfg.queries = queries.get<std::vector<std::string>>();
    } else if (queries.is_object() && queries.contains("file")) {
      cfg.queries = load_queries_file(join_path(base_dir, queries.at("file").get<std::string>()));
    } else {
      throw RagError(ErrorCode::invalid_config, "queries must be an array or {\"file\": path}");
    }

    const json& docs = j.at("documents");
    int sources = 0;
    if (docs.contains("inline")) {
      ++sources;
      for (const json& d : docs.at("inline"))
        cfg.corpus.push_back({d.at("id").get<std::string>(), d.at("text").get<std::string>()});
    }
    if (docs.contains("corpus_file")) {
      ++sources;
      const json corpus = json::parse(read_text_file(join_path(base_dir, docs.at("corpus_file").get<std::string>())));
      for (const json& d : corpus)
        cfg.corpus.push_back({d.at("id").get<std::string>(), d.at("text").get<std::string>()});
    }
    if (docs.contains("ranking_file")) {
      ++sources;
      const json ranking = json::parse(read_text_file(join_path(base_dir, docs.at("ranking_file").get<std::string>())));
      for (const json& r : ranking) {
        PreRetrievedEntry e;
        e.query = r.at("query").get<std::string>();
        e.ranked_doc_ids = r.at("ranked_doc_ids").get<std::vector<std::string>>();
        e.scores = r.at("scores").get<Vec>();
        e.docs = r.at("docs").get<std::vector<std::string>>();
        cfg.pre_retrieved.push_back(std::move(e));
      }
    }
    if (sources != 1)
      throw RagError(ErrorCode::invalid_config, "config needs exactly one document source, got " +
                                                    std::to_string(sources));

    cfg.top_k = j.value("k", 10);
    cfg.condition = condition_from_string(j.value("condition", "original"));

    if (j.contains("retriever")) {
      const json& r = j.at("retriever");
      cfg.retriever.seed = r.value("seed", static_cast<std::uint64_t>(7));
      cfg.retriever.shape.vocab = r.value("vocab", 256);
      cfg.retriever.shape.hidden = r.value("hidden", 16);
      cfg.retriever.shape.max_len = r.value("max_len", 64);
      if (r.contains("weights_file"))
        cfg.retriever.weights_file = join_path(base_dir, r.at("weights_file").get<std::string>());
      cfg.retriever.baseline_mode = baseline_mode_from_string(r.value("baseline_mode", "unk"));
      cfg.retriever.steps = r.value("steps", 100);
      cfg.retriever.gradient_endpoint = r.value("gradient_endpoint", "");
    }

    const json& g = j.at("generator");
    if (g.contains("mock")) {
      cfg.generator.mock = MockLMSpec::from_json_text(g.at("mock").dump());
    } else if (g.contains("mock_spec_file")) {
      cfg.generator.mock = MockLMSpec::from_file(join_path(base_dir, g.at("mock_spec_file").get<std::string>()));
    }
    if (g.contains("client")) {
      const json& c = g.at("client");
      LMClientConfig lc;
      lc.base_url = c.at("base_url").get<std::string>();
      lc.model = c.value("model", "default");
      lc.timeout_s = c.value("timeout_s", 30.0);
      lc.max_parallel = c.value("max_parallel", 1);
      lc.retries = c.value("retries", 3);
      lc.backoff_ms = c.value("backoff_ms", 50.0);
      lc.auth_env = c.value("auth_env", "");
      cfg.generator.client = lc;
    }
    if (g.contains("template")) {
      const json& t = g.at("template");
      if (t.is_string()) {
        const std::string name = t.get<std::string>();
        if (name == "ranked") {
          cfg.generator.prompt_template = PromptTemplate::ranked();
        } else if (name == "generic") {
          cfg.generator.prompt_template = PromptTemplate::generic();
        } else {
          throw RagError(ErrorCode::invalid_config, "template must be ranked, generic or {\"file\": path}");
        }
      } else {
        cfg.generator.prompt_template =
            PromptTemplate::from_file(join_path(base_dir, t.at("file").get<std::string>()));
      }
    }
    cfg.generator.max_tokens = g.value("max_tokens", 64);
    cfg.generator.scale = value_scale_from_string(g.value("value_scale", "probability"));

    if (j.contains("attribution")) {
      const json& a = j.at("attribution");
      cfg.attribution.method = attribution_method_from_string(a.value("method", "pmc"));
      cfg.attribution.sampler.perturbations = a.value("N", 20);
      cfg.attribution.sampler.mc_samples = a.value("M", 200);
      cfg.attribution.sampler.mc_size = a.value("N_prime", 15);
      const std::string strategy = a.value("strategy", "complementary");
      if (strategy == "uniform") {
        cfg.attribution.sampler.strategy = SamplerConfig::Strategy::uniform;
      } else if (strategy == "complementary") {
        cfg.attribution.sampler.strategy = SamplerConfig::Strategy::complementary;
      } else {
        throw RagError(ErrorCode::invalid_config, "sampling strategy must be uniform or complementary");
      }
      cfg.attribution.sampler.dedup = a.value("dedup", false);
      cfg.attribution.enumeration_cap = a.value("enumeration_cap", 12);
    }

    if (j.contains("metrics")) {
      const json& m = j.at("metrics");
      if (m.contains("p_grid")) cfg.metrics.p_grid = m.at("p_grid").get<std::vector<double>>();
      cfg.metrics.failure_threshold = m.value("failure_threshold", 2);
      cfg.metrics.bootstrap_resamples = m.value("bootstrap_B", 1000);
      cfg.metrics.bootstrap_level = m.value("bootstrap_level", 0.95);
    }

    cfg.parallelism = j.value("parallelism", 1);
  } catch (const RagError&) {
    throw;
  } catch (const json::exception& e) {
    throw RagError(ErrorCode::invalid_config, std::string("config parse error: ") + e.what());
  }

  cfg.validate();
  return cfg;
}

void AuditConfig::validate() const {
  if (queries.empty()) throw RagError(ErrorCode::invalid_config, "config lists no queries");
  if (corpus.empty() == pre_retrieved.empty())
    throw RagError(ErrorCode::invalid_config, "config needs exactly one document source");
  if (top_k < 1) throw RagError(ErrorCode::invalid_config, "k must be >= 1");
  if (retriever.steps < 1) throw RagError(ErrorCode::invalid_config, "integration steps must be >= 1");
  if (generator.mock.has_value() == generator.client.has_value())
    throw RagError(ErrorCode::invalid_config, "generator needs exactly one of mock or client");
  if (generator.max_tokens < 1) throw RagError(ErrorCode::invalid_config, "max_tokens must be >= 1");
  for (double p : metrics.p_grid)
    if (!(p > 0.0 && p < 1.0)) throw RagError(ErrorCode::invalid_p, "persistence grid values must lie in (0,1)");
  if (metrics.p_grid.empty()) throw RagError(ErrorCode::invalid_config, "persistence grid is empty");
  if (metrics.failure_threshold < 0)
    throw RagError(ErrorCode::invalid_config, "failure threshold must be >= 0");
  if (metrics.bootstrap_resamples < 1)
    throw RagError(ErrorCode::invalid_config, "bootstrap_B must be >= 1");
  if (!(metrics.bootstrap_level > 0.0 && metrics.bootstrap_level < 1.0))
    throw RagError(ErrorCode::invalid_config, "bootstrap_level must lie in (0,1)");
  if (parallelism < 1) throw RagError(ErrorCode::invalid_config, "parallelism must be >= 1");
  if (generator.client) generator.client->validate();
}

nlohmann::ordered_json AuditConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["queries"] = queries;
  if (!corpus.empty()) {
    nlohmann::ordered_json docs = nlohmann::ordered_json::array();
    for (const DocumentEntry& d : corpus) docs.push_back({{"id", d.id}, {"text", d.text}});
    j["documents"] = {{"inline", docs}};
  } else {
    nlohmann::ordered_json ranking = nlohmann::ordered_json::array();
    for (const PreRetrievedEntry& e : pre_retrieved)
      ranking.push_back({{"query", e.query},
                         {"ranked_doc_ids", e.ranked_doc_ids},
                         {"scores", e.scores},
                         {"docs", e.docs}});
    j["documents"] = {{"pre_retrieved", ranking}};
  }
  j["k"] = top_k;
  j["condition"] = condition_name(condition);
  j["retriever"] = {{"seed", retriever.seed},
                    {"vocab", retriever.shape.vocab},
                    {"hidden", retriever.shape.hidden},
                    {"max_len", retriever.shape.max_len},
                    {"weights_file", retriever.weights_file},
                    {"baseline_mode", baseline_mode_name(retriever.baseline_mode)},
                    {"steps", retriever.steps},
                    {"gradient_endpoint", retriever.gradient_endpoint}};
  j["generator"] = {{"backend", generator.mock ? "mock" : "http"},
                    {"mock_hash", generator.mock ? to_hex(fnv1a64(generator.mock->to_json_text())) : ""},
                    {"template_instruction", generator.prompt_template.instruction},
                    {"max_tokens", generator.max_tokens},
                    {"value_scale", value_scale_name(generator.scale)}};
  j["attribution"] = {{"method", attribution_method_name(attribution.method)},
                      {"N", attribution.sampler.perturbations},
                      {"M", attribution.sampler.mc_samples},
                      {"N_prime", attribution.sampler.mc_size},
                      {"strategy",
                       attribution.sampler.strategy == SamplerConfig::Strategy::uniform ? "uniform"
                                                                                        : "complementary"},
                      {"dedup", attribution.sampler.dedup},
                      {"enumeration_cap", attribution.enumeration_cap}};
  nlohmann::ordered_json grid = nlohmann::ordered_json::array();
  for (double p : metrics.p_grid) grid.push_back(p);
  j["metrics"] = {{"p_grid", grid},
                  {"failure_threshold", metrics.failure_threshold},
                  {"bootstrap_B", metrics.bootstrap_resamples},
                  {"bootstrap_level", metrics.bootstrap_level}};
  j["parallelism"] = parallelism;
  return j;
}

std::string AuditConfig::config_hash() const { return to_hex(fnv1a64(to_json().dump())); }

namespace {

struct RetrievedDoc {
  std::string id;
  std::string text;
  double score = 0.0;
};

struct AuditContext {
  const AuditConfig& config;
  const ReferenceEncoder& encoder;
  std::shared_ptr<LMClient> client;
  GradientOracleClient* grad_client;  // nullptr for in-process gradients
};

std::vector<RetrievedDoc> retrieve_for_query(const AuditContext& ctx, const std::string& query) {
  const AuditConfig& cfg = ctx.config;
  std::vector<RetrievedDoc> out;
  if (!cfg.corpus.empty()) {
    std::vector<TokenSequence> corpus_tokens;
    corpus_tokens.reserve(cfg.corpus.size());
    for (const DocumentEntry& d : cfg.corpus) corpus_tokens.push_back(tokenize(d.text, ctx.encoder.vocab()));
    const TokenSequence q = tokenize(query, ctx.encoder.vocab());
    const int k = std::min<int>(cfg.top_k, static_cast<int>(cfg.corpus.size()));
    for (const auto& [idx, score] : retrieve_topk(ctx.encoder, ctx.encoder, q, corpus_tokens, k))
      out.push_back({cfg.corpus[static_cast<std::size_t>(idx)].id,
                     cfg.corpus[static_cast<std::size_t>(idx)].text, score});
    return out;
  }
  for (const PreRetrievedEntry& e : cfg.pre_retrieved) {
    if (e.query != query) continue;
    const int k = std::min<int>(cfg.top_k, static_cast<int>(e.ranked_doc_ids.size()));
    for (int i = 0; i < k; ++i)
      out.push_back({e.ranked_doc_ids[static_cast<std::size_t>(i)], e.docs[static_cast<std::size_t>(i)],
                     e.scores[static_cast<std::size_t>(i)]});
    return out;
  }
  throw RagError(ErrorCode::invalid_config, "ranking file has no entry for query '" + query + "'");
}

SaliencyVector ig_for_side(const AuditContext& ctx, const TokenSequence& q, const TokenSequence& d,
                           AttributionTarget target) {
  const AuditConfig::Retriever& rcfg = ctx.config.retriever;
  if (ctx.grad_client == nullptr)
    return integrated_gradients(ctx.encoder, ctx.encoder, q, d, target, rcfg.baseline_mode, rcfg.steps);

  // Wire path: the gradient endpoint supplies score/gradient; token and
  // baseline embeddings plus the companion encoding stay local.
  const TokenSequence& side = target == AttributionTarget::query ? q : d;
  const TokenSequence& other = target == AttributionTarget::query ? d : q;
  const Eigen::VectorXd companion = ctx.encoder.encode(other);
  const std::vector<bool> pooled = ReferenceEncoder::pool_mask(side);
  const EmbeddingSequence input = ctx.encoder.embed(side);
  const EmbeddingSequence baseline = build_baseline(side, ctx.encoder, rcfg.baseline_mode);

  SaliencyVector sal = integrated_gradients_over(
      [&](const Eigen::MatrixXd& rows) {
        GradientOracleRequest req;
        req.side = target == AttributionTarget::query ? "query" : "context";
        req.embeddings = rows;
        req.pooled = pooled;
        req.companion_encoding = companion;
        const GradientOracleResponse resp = ctx.grad_client->evaluate(req);
        return ReferenceEncoder::ScoreGrad{resp.score, resp.gradient};
      },
      input.rows, baseline.rows, rcfg.steps);
  sal.target = target;
  sal.baseline_mode = rcfg.baseline_mode;
  return sal;
}

Report saliency_to_json(const TokenSequence& seq, const SaliencyVector& sal) {
  Report j;
  j["tokens"] = seq.texts;
  Report special = Report::array();
  for (bool s : seq.is_special) special.push_back(s);
  j["special"] = std::move(special);
  Report scores = Report::array();
  for (double v : sal.scores) scores.push_back(finite_or_null(v));
  j["scores"] = std::move(scores);
  j["score_full"] = finite_or_null(sal.score_full);
  j["score_baseline"] = finite_or_null(sal.score_baseline);
  try {
    j["additivity_ratio"] = additivity_ratio(sal, sal.score_full, sal.score_baseline);
  } catch (const RagError& e) {
    j["additivity_ratio"] = nullptr;
    j["additivity_reason"] = error_code_name(e.code());
  }
  return j;
}

QueryWork process_query(const AuditContext& ctx, int index, const std::string& query,
                        std::uint64_t query_seed) {
  const AuditConfig& cfg = ctx.config;
  QueryWork work;
  work.index = index;
  work.query = query;
  Report& entry = work.entry;
  entry["query"] = query;

  // Retrieval (or the pre-retrieved ranking); always reported in retriever
  // order, independent of the ordering condition.
  const std::vector<RetrievedDoc> retrieved = retrieve_for_query(ctx, query);
  if (retrieved.empty()) throw RagError(ErrorCode::empty_corpus, "no documents available for the query");
  Report retrieval = Report::array();
  for (std::size_t r = 0; r < retrieved.size(); ++r)
    retrieval.push_back({{"rank", r}, {"id", retrieved[r].id}, {"score", finite_or_null(retrieved[r].score)}});
  entry["retrieval"] = std::move(retrieval);

  // Retriever attributions over the retrieved list.
  const TokenSequence q_tokens = tokenize(query, ctx.encoder.vocab());
  Report retriever_section;
  {
    const TokenSequence top_doc = tokenize(retrieved[0].text, ctx.encoder.vocab());
    SaliencyVector query_sal = ig_for_side(ctx, q_tokens, top_doc, AttributionTarget::query);
    Report qj = saliency_to_json(q_tokens, query_sal);
    qj["target_doc_id"] = retrieved[0].id;
    retriever_section["query_saliency"] = std::move(qj);

    Report docs = Report::array();
    for (const RetrievedDoc& doc : retrieved) {
      const TokenSequence d_tokens = tokenize(doc.text, ctx.encoder.vocab());
      SaliencyVector doc_sal = ig_for_side(ctx, q_tokens, d_tokens, AttributionTarget::document);
      Report dj = saliency_to_json(d_tokens, doc_sal);
      dj["id"] = doc.id;
      docs.push_back(std::move(dj));
    }
    retriever_section["documents"] = std::move(docs);
  }
  entry["retriever"] = std::move(retriever_section);

  // Ordering condition: dedup first, then shuffle.
  std::vector<int> retained;
  const bool dedup = cfg.condition == OrderingCondition::no_duplicates ||
                     cfg.condition == OrderingCondition::shuffled_no_duplicates;
  const bool shuffle = cfg.condition == OrderingCondition::shuffled ||
                       cfg.condition == OrderingCondition::shuffled_no_duplicates;
  std::set<std::string> seen_texts;
  for (int i = 0; i < static_cast<int>(retrieved.size()); ++i) {
    if (dedup && !seen_texts.insert(normalize_for_dedup(retrieved[static_cast<std::size_t>(i)].text)).second)
      continue;
    retained.push_back(i);
  }
  std::vector<int> prompt_order = retained;  // prompt position -> retrieval rank
  if (shuffle) {
    Rng rng(splitmix64(query_seed ^ 0x73687566ULL));
    rng.shuffle(prompt_order);
  }
  const int k_prompt = static_cast<int>(prompt_order.size());
  entry["k"] = k_prompt;
  Report order = Report::array();
  for (int rank : prompt_order)
    order.push_back({{"id", retrieved[static_cast<std::size_t>(rank)].id}, {"retrieval_rank", rank}});
  entry["prompt_order"] = std::move(order);

  // Generator attribution over the conditioned document list.
  std::vector<std::string> prompt_docs;
  prompt_docs.reserve(static_cast<std::size_t>(k_prompt));
  for (int rank : prompt_order) prompt_docs.push_back(retrieved[static_cast<std::size_t>(rank)].text);

  SamplerConfig sampler = cfg.attribution.sampler;
  sampler.seed = splitmix64(query_seed ^ 0x73616d70ULL);
  // Small prompts cannot absorb the configured budget; clamp it.
  if (k_prompt < 31) {
    const int limit = 1 << k_prompt;
    if (sampler.perturbations > limit) sampler.perturbations = limit;
  }
  if (sampler.strategy == SamplerConfig::Strategy::complementary && sampler.perturbations % 2 != 0)
    --sampler.perturbations;
  if (sampler.mc_size >= sampler.perturbations) sampler.mc_size = sampler.perturbations - 1;

  GenerationRecord record = generate_unperturbed(query, prompt_docs, cfg.generator.prompt_template,
                                                 *ctx.client, cfg.generator.max_tokens);
  ConstrainedValueOracle oracle(query, prompt_docs, cfg.generator.prompt_template, std::move(record),
                                ctx.client, cfg.generator.scale);
  const AttributionMatrix matrix =
      attribute_recorded(oracle, sampler, cfg.attribution.method, cfg.attribution.enumeration_cap, 1);
  const Vec importance = document_importance(matrix);
  work.distinct_coalitions = oracle.distinct_coalitions();

  Report generator_section;
  generator_section["answer_tokens"] = oracle.record().answer_tokens;
  Report rows = Report::array();
  for (const Vec& row : matrix.entries) {
    Report r = Report::array();
    for (double v : row) r.push_back(finite_or_null(v));
    rows.push_back(std::move(r));
  }
  generator_section["attribution"] = std::move(rows);
  Report base = Report::array(), full = Report::array(), imp = Report::array();
  for (double v : matrix.baseline_value) base.push_back(finite_or_null(v));
  for (double v : matrix.full_value) full.push_back(finite_or_null(v));
  for (double v : importance) imp.push_back(finite_or_null(v));
  generator_section["baseline_value"] = std::move(base);
  generator_section["full_value"] = std::move(full);
  generator_section["importance"] = std::move(imp);

  // Additivity diagnostics at the document level.
  double efficiency_gap = 0.0;
  const Vec sums = matrix.column_sums();
  for (int j = 0; j < matrix.outputs; ++j) {
    const double target = matrix.full_value[static_cast<std::size_t>(j)] -
                          matrix.baseline_value[static_cast<std::size_t>(j)];
    efficiency_gap = std::max(efficiency_gap, std::fabs(sums[static_cast<std::size_t>(j)] - target));
  }
  double mean_gap = 0.0;
  for (int j = 0; j < matrix.outputs; ++j)
    mean_gap += matrix.full_value[static_cast<std::size_t>(j)] -
                matrix.baseline_value[static_cast<std::size_t>(j)];
  mean_gap /= matrix.outputs;
  double importance_sum = 0.0;
  for (double v : importance) importance_sum += v;
  generator_section["efficiency_gap"] = finite_or_null(efficiency_gap);
  generator_section["importance_sum_gap"] = finite_or_null(std::fabs(importance_sum - mean_gap));
  entry["generator"] = std::move(generator_section);

  // Alignment: retriever ranking over prompt positions (ascending
  // retrieval rank), generator ranking from signed mean attribution.
  Ranking r_ret;
  {
    std::vector<int> positions(static_cast<std::size_t>(k_prompt));
    std::iota(positions.begin(), positions.end(), 0);
    std::stable_sort(positions.begin(), positions.end(), [&](int a, int b) {
      return prompt_order[static_cast<std::size_t>(a)] < prompt_order[static_cast<std::size_t>(b)];
    });
    r_ret.items = positions;
  }
  work.alignment = align(r_ret, importance, cfg.metrics.p_grid, cfg.metrics.failure_threshold);

  Report alignment_section;
  Report warg_j;
  for (const auto& [p, value] : work.alignment.warg_by_p)
    warg_j[format_persistence(p)] = finite_or_null(value);
  alignment_section["warg"] = std::move(warg_j);
  if (work.alignment.spearman_rho) {
    alignment_section["spearman"] = finite_or_null(*work.alignment.spearman_rho);
  } else {
    alignment_section["spearman"] = nullptr;
    alignment_section["spearman_reason"] = "zero_variance";
  }
  alignment_section["wasted_retrieval"] = work.alignment.flags.wasted_retrieval;
  alignment_section["noise_distraction"] = work.alignment.flags.noise_distraction;
  alignment_section["retriever_ranking"] = work.alignment.retriever_ranking.items;
  alignment_section["generator_ranking"] = work.alignment.generator_ranking.items;
  entry["alignment"] = std::move(alignment_section);

  entry["status"] = "ok";
  work.ok = true;
  return work;
}

}  // namespace

AuditOutcome run_audit(const AuditConfig& config) {
  config.validate();

  const ReferenceEncoder encoder =
      config.retriever.weights_file.empty()
          ? ReferenceEncoder::seeded(config.retriever.shape, config.retriever.seed)
          : ReferenceEncoder::from_file(config.retriever.weights_file);

  std::shared_ptr<MockLM> mock;
  std::shared_ptr<LMClient> client;
  if (config.generator.mock) {
    mock = std::make_shared<MockLM>(*config.generator.mock);
    client = mock;
  } else {
    client = std::make_shared<HttpLMClient>(*config.generator.client);
  }

  std::unique_ptr<GradientOracleClient> grad_client;
  if (!config.retriever.gradient_endpoint.empty()) {
    LMClientConfig gc;
    gc.base_url = config.retriever.gradient_endpoint;
    grad_client = std::make_unique<HttpGradientOracle>(gc);
  }

  AuditContext ctx{config, encoder, client, grad_client.get()};

  const int n_queries = static_cast<int>(config.queries.size());
  std::vector<QueryWork> work(static_cast<std::size_t>(n_queries));
  auto run_one = [&](int qi) {
    const std::uint64_t query_seed = splitmix64(config.seed ^ splitmix64(0x71756572ULL + static_cast<std::uint64_t>(qi)));
    try {
      work[static_cast<std::size_t>(qi)] = process_query(ctx, qi, config.queries[static_cast<std::size_t>(qi)], query_seed);
    } catch (const RagError& e) {
      QueryWork& w = work[static_cast<std::size_t>(qi)];
      w.index = qi;
      w.query = config.queries[static_cast<std::size_t>(qi)];
      w.ok = false;
      w.entry["query"] = w.query;
      w.entry["status"] = "error";
      w.entry["error"] = {{"code", error_code_name(e.code())}, {"message", e.what()}};
    }
  };

  if (config.parallelism > 1 && n_queries > 1) {
    std::atomic<int> cursor{0};
    auto worker = [&] {
      for (;;) {
        const int qi = cursor.fetch_add(1);
        if (qi >= n_queries) return;
        run_one(qi);
      }
    };
    std::vector<std::thread> threads;
    const int n_threads = std::min(config.parallelism, n_queries);
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  } else {
    for (int qi = 0; qi < n_queries; ++qi) run_one(qi);
  }

  AuditOutcome outcome;
  Report& report = outcome.report;
  report["schema_version"] = kSchemaVersion;
  report["provenance"] = {{"config_hash", config.config_hash()},
                          {"seed", config.seed},
                          {"tool", "rag-audit"},
                          {"version", kToolVersion}};
  report["condition"] = condition_name(config.condition);
  report["k"] = config.top_k;

  Report queries = Report::array();
  std::vector<FailureFlags> flags;
  std::map<double, Vec> warg_values;
  Vec spearman_values;
  int ok_count = 0;
  for (const QueryWork& w : work) {
    queries.push_back(w.entry);
    if (!w.ok) continue;
    ++ok_count;
    outcome.distinct_coalitions += w.distinct_coalitions;
    flags.push_back(w.alignment.flags);
    for (const auto& [p, value] : w.alignment.warg_by_p) warg_values[p].push_back(value);
    if (w.alignment.spearman_rho) spearman_values.push_back(*w.alignment.spearman_rho);
  }
  report["queries"] = std::move(queries);

  Report aggregate;
  aggregate["queries_ok"] = ok_count;
  aggregate["queries_failed"] = n_queries - ok_count;
  if (ok_count > 0) {
    const FailureRates rates = failure_rates(flags);
    aggregate["failure_rates"] = {{"wasted_retrieval_pct", round1(rates.wasted_retrieval_pct)},
                                  {"noise_distraction_pct", round1(rates.noise_distraction_pct)}};
    Report warg_agg;
    int p_index = 0;
    for (const auto& [p, values] : warg_values) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      const std::uint64_t ci_seed = splitmix64(config.seed ^ splitmix64(0xb007ULL + static_cast<std::uint64_t>(p_index)));
      const auto [lo, hi] = bootstrap_ci(values, config.metrics.bootstrap_resamples,
                                         config.metrics.bootstrap_level, ci_seed);
      warg_agg[format_persistence(p)] = {{"mean", finite_or_null(mean)},
                                         {"ci_lower", finite_or_null(lo)},
                                         {"ci_upper", finite_or_null(hi)}};
      ++p_index;
    }
    aggregate["warg"] = std::move(warg_agg);
    if (!spearman_values.empty()) {
      double mean = 0.0;
      for (double v : spearman_values) mean += v;
      aggregate["spearman_mean"] = finite_or_null(mean / static_cast<double>(spearman_values.size()));
    } else {
      aggregate["spearman_mean"] = nullptr;
    }
    aggregate["bootstrap"] = {{"B", config.metrics.bootstrap_resamples},
                              {"level", config.metrics.bootstrap_level}};
  }
  report["aggregate"] = std::move(aggregate);

  outcome.partial_failures = ok_count != n_queries;
  if (mock) outcome.lm_logprob_calls = mock->logprob_call_count();
  return outcome;
}

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw RagError(ErrorCode::schema, "report schema violation: " + what);
}

void check_finite_or_null(const Report& node, const std::string& path) {
  if (node.is_number()) {
    require(std::isfinite(node.get<double>()), path + " must be finite");
  } else if (node.is_array()) {
    for (std::size_t i = 0; i < node.size(); ++i)
      check_finite_or_null(node[i], path + "[" + std::to_string(i) + "]");
  } else if (node.is_object()) {
    for (auto it = node.begin(); it != node.end(); ++it) check_finite_or_null(it.value(), path + "." + it.key());
  }
}

}  // namespace

void validate_report(const Report& report) {
  require(report.is_object(), "report must be an object");
  require(report.value("schema_version", "") == kSchemaVersion, "unknown schema_version");
  require(report.contains("provenance") && report["provenance"].is_object(), "missing provenance");
  const Report& prov = report["provenance"];
  require(prov.contains("config_hash") && prov["config_hash"].is_string(), "missing provenance.config_hash");
  require(prov.contains("seed"), "missing provenance.seed");
  require(report.contains("condition") && report["condition"].is_string(), "missing condition");
  require(report.contains("k"), "missing k");
  require(report.contains("queries") && report["queries"].is_array(), "missing queries");
  for (const Report& q : report["queries"]) {
    require(q.contains("query") && q["query"].is_string(), "query entry missing text");
    const std::string status = q.value("status", "");
    require(status == "ok" || status == "error", "query status must be ok or error");
    if (status == "error") {
      require(q.contains("error") && q["error"].is_object() && q["error"].contains("code"),
              "failed query needs an error code");
      continue;
    }
    require(q.contains("retrieval") && q["retrieval"].is_array() && !q["retrieval"].empty(),
            "query needs a retrieval section");
    require(q.contains("retriever") && q["retriever"].contains("query_saliency") &&
                q["retriever"].contains("documents"),
            "query needs retriever saliency");
    const Report& gen = q.at("generator");
    require(gen.contains("attribution") && gen["attribution"].is_array(), "generator needs attribution rows");
    require(gen.contains("importance") && gen["importance"].is_array(), "generator needs importances");
    require(gen.contains("baseline_value") && gen.contains("full_value"), "generator needs anchor values");
    const std::size_t k = gen["attribution"].size();
    require(gen["importance"].size() == k, "importance length must match attribution rows");
    const Report& al = q.at("alignment");
    require(al.contains("warg") && al["warg"].is_object() && !al["warg"].empty(), "alignment needs a warg sweep");
    require(al.contains("wasted_retrieval") && al["wasted_retrieval"].is_boolean(), "missing wasted_retrieval");
    require(al.contains("noise_distraction") && al["noise_distraction"].is_boolean(), "missing noise_distraction");
    require(al.contains("spearman"), "missing spearman");
    if (al["spearman"].is_null())
      require(al.contains("spearman_reason"), "null spearman needs a reason code");
    require(al.contains("retriever_ranking") && al["retriever_ranking"].is_array() &&
                al["retriever_ranking"].size() == k,
            "retriever ranking must cover the prompt documents");
    require(al.contains("generator_ranking") && al["generator_ranking"].is_array() &&
                al["generator_ranking"].size() == k,
            "generator ranking must cover the prompt documents");
    for (const Report& row : gen["attribution"])
      require(row.is_array() && row.size() == gen["answer_tokens"].size(),
              "attribution rows must span the answer tokens");
  }
  require(report.contains("aggregate") && report["aggregate"].is_object(), "missing aggregate");
  check_finite_or_null(report, "report");
}

}  // namespace ragaudit
