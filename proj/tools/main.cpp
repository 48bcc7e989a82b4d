#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "ragaudit/audit.hpp"
#include "ragaudit/bench.hpp"
#include "ragaudit/faithfulness.hpp"
#include "ragaudit/ig.hpp"
#include "ragaudit/render.hpp"
#include "ragaudit/retriever.hpp"

namespace {

using ragaudit::RagError;

void write_output(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw RagError(ragaudit::ErrorCode::io, "cannot write " + out_path);
  out << content;
}

int exit_code_for(const RagError& e) {
  switch (e.code()) {
    case ragaudit::ErrorCode::transport: return 3;
    default: return 1;
  }
}

ragaudit::AuditConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override,
                                  std::optional<int> parallelism_override) {
  ragaudit::AuditConfig cfg = ragaudit::AuditConfig::from_file(path);
  if (seed_override) cfg.seed = *seed_override;
  if (parallelism_override) cfg.parallelism = *parallelism_override;
  return cfg;
}

ragaudit::Report report_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RagError(ragaudit::ErrorCode::io, "cannot open report " + path);
  ragaudit::Report report;
  try {
    in >> report;
  } catch (const std::exception& e) {
    throw RagError(ragaudit::ErrorCode::schema, std::string("report is not valid JSON: ") + e.what());
  }
  return report;
}

// Context-document masking scorer: masked tokens are replaced by [unk]
// before scoring against the query encoding.
class UnkMaskScorer final : public ragaudit::MaskableScorer {
 public:
  UnkMaskScorer(const ragaudit::ReferenceEncoder& enc, ragaudit::TokenSequence doc,
                Eigen::VectorXd query_encoding)
      : enc_(enc), doc_(std::move(doc)), query_encoding_(std::move(query_encoding)) {
    for (int i = 0; i < doc_.size(); ++i)
      if (!doc_.is_special[static_cast<std::size_t>(i)]) maskable_.push_back(i);
  }

  int positions() const override { return static_cast<int>(maskable_.size()); }

  double score(const std::vector<bool>& masked) const override {
    ragaudit::TokenSequence perturbed = doc_;
    for (std::size_t m = 0; m < masked.size(); ++m)
      if (masked[m])
        perturbed.tokens[static_cast<std::size_t>(maskable_[m])] = ragaudit::special_token::unk;
    return enc_.encode(perturbed).dot(query_encoding_);
  }

  const std::vector<int>& maskable() const { return maskable_; }

 private:
  const ragaudit::ReferenceEncoder& enc_;
  ragaudit::TokenSequence doc_;
  Eigen::VectorXd query_encoding_;
  std::vector<int> maskable_;
};

int run_faithfulness(const ragaudit::AuditConfig& cfg, const std::string& out_dir) {
  using namespace ragaudit;
  const ReferenceEncoder encoder = cfg.retriever.weights_file.empty()
                                       ? ReferenceEncoder::seeded(cfg.retriever.shape, cfg.retriever.seed)
                                       : ReferenceEncoder::from_file(cfg.retriever.weights_file);
  if (cfg.corpus.empty())
    throw RagError(ErrorCode::invalid_config, "faithfulness needs an inline or file corpus");

  std::vector<TokenSequence> corpus_tokens;
  for (const DocumentEntry& d : cfg.corpus) corpus_tokens.push_back(tokenize(d.text, encoder.vocab()));

  Vec aipc_values;
  for (std::size_t qi = 0; qi < cfg.queries.size(); ++qi) {
    const TokenSequence q = tokenize(cfg.queries[qi], encoder.vocab());
    const Eigen::VectorXd q_enc = encoder.encode(q);
    const int k = std::min<int>(cfg.top_k, static_cast<int>(corpus_tokens.size()));
    for (const auto& [doc_idx, score] : retrieve_topk(encoder, encoder, q, corpus_tokens, k)) {
      (void)score;
      const TokenSequence& doc = corpus_tokens[static_cast<std::size_t>(doc_idx)];
      const SaliencyVector sal = integrated_gradients(encoder, encoder, q, doc, AttributionTarget::document,
                                                      cfg.retriever.baseline_mode, cfg.retriever.steps);
      UnkMaskScorer scorer(encoder, doc, q_enc);
      Vec maskable_saliency;
      for (int pos : scorer.maskable()) maskable_saliency.push_back(sal.scores[static_cast<std::size_t>(pos)]);
      if (maskable_saliency.empty()) continue;
      const PerturbationCurve morf =
          perturbation_curve(scorer, maskable_saliency, PerturbationCurve::Direction::morf);
      const PerturbationCurve lerf =
          perturbation_curve(scorer, maskable_saliency, PerturbationCurve::Direction::lerf);
      double value = 0.0;
      try {
        value = aipc(morf, lerf);
      } catch (const RagError&) {
        continue;  // degenerate span; skip the pair
      }
      aipc_values.push_back(value);
      if (!out_dir.empty()) {
        std::ostringstream name;
        name << out_dir << "/curve_q" << qi << "_d" << doc_idx << ".csv";
        std::ostringstream csv;
        csv << "level,morf_value,lerf_value\n";
        for (std::size_t level = 0; level < morf.values.size(); ++level)
          csv << level << ',' << morf.values[level] << ',' << lerf.values[level] << '\n';
        write_output(name.str(), csv.str());
      }
    }
  }
  if (aipc_values.empty())
    throw RagError(ErrorCode::empty_input, "no query/document pair produced a usable curve");

  double mean = 0.0;
  for (double v : aipc_values) mean += v;
  mean /= static_cast<double>(aipc_values.size());
  const auto [lo, hi] = bootstrap_ci(aipc_values, cfg.metrics.bootstrap_resamples,
                                     cfg.metrics.bootstrap_level, splitmix64(cfg.seed ^ 0xA1BCULL));
  nlohmann::ordered_json agg = {{"mean_aipc", mean},
                                {"ci_lower", lo},
                                {"ci_upper", hi},
                                {"B", cfg.metrics.bootstrap_resamples},
                                {"level", cfg.metrics.bootstrap_level},
                                {"inputs", aipc_values.size()}};
  const std::string text = agg.dump(2) + "\n";
  if (!out_dir.empty()) write_output(out_dir + "/aipc.json", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented generation audit toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_path, report_path, format = "json";
  std::optional<std::uint64_t> seed_override;
  std::optional<int> parallelism_override;
  int threshold = 2;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    if (needs_config) cmd->add_option("--config", config_path, "JSON config file")->required();
    cmd->add_option("--seed", seed_override, "Override the config seed");
    cmd->add_option("--out", out_path, "Output path ('-' for stdout)");
    cmd->add_option("--parallelism", parallelism_override, "Bounded parallelism");
  };

  CLI::App* audit = app.add_subcommand("audit", "Run the full audit pipeline");
  add_common(audit, true);

  CLI::App* attr_ret = app.add_subcommand("attribute-retriever", "Retriever token attributions only");
  add_common(attr_ret, true);

  CLI::App* attr_gen = app.add_subcommand("attribute-generator", "Generator document attributions only");
  add_common(attr_gen, true);

  CLI::App* metrics = app.add_subcommand("metrics", "Recompute alignment metrics from a stored report");
  metrics->add_option("--report", report_path, "Stored audit report")->required();
  metrics->add_option("--threshold", threshold, "Failure-classification rank threshold");
  metrics->add_option("--out", out_path, "Output path ('-' for stdout)");

  CLI::App* faith = app.add_subcommand("faithfulness", "MoRF/LeRF perturbation curves and AIPC");
  add_common(faith, true);

  CLI::App* bench = app.add_subcommand("bench-shap", "Estimator benchmark against exact Shapley values");
  add_common(bench, true);

  CLI::App* render = app.add_subcommand("render", "Render a report as ansi, html or json");
  render->add_option("--report", report_path, "Stored audit report")->required();
  render->add_option("--format", format, "ansi, html or json");
  render->add_option("--out", out_path, "Output path ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (audit->parsed() || attr_ret->parsed() || attr_gen->parsed()) {
      const ragaudit::AuditConfig cfg = load_config(config_path, seed_override, parallelism_override);
      const ragaudit::AuditOutcome outcome = ragaudit::run_audit(cfg);
      ragaudit::Report payload = outcome.report;
      if (attr_ret->parsed() || attr_gen->parsed()) {
        // Project the full report down to the requested section.
        const char* key = attr_ret->parsed() ? "retriever" : "generator";
        ragaudit::Report slim = ragaudit::Report::array();
        for (const ragaudit::Report& q : outcome.report.at("queries")) {
          ragaudit::Report item = {{"query", q.at("query")}, {"status", q.at("status")}};
          if (q.at("status") == "ok") {
            item[key] = q.at(key);
          } else {
            item["error"] = q.at("error");
          }
          slim.push_back(std::move(item));
        }
        payload = std::move(slim);
      }
      write_output(out_path, payload.dump(2) + "\n");
      return outcome.partial_failures ? 2 : 0;
    }

    if (metrics->parsed()) {
      const ragaudit::Report report = report_from_file(report_path);
      ragaudit::validate_report(report);
      ragaudit::Report out = ragaudit::Report::array();
      std::vector<ragaudit::FailureFlags> flags;
      for (const ragaudit::Report& q : report.at("queries")) {
        if (q.at("status") != "ok") continue;
        ragaudit::Vec importance;
        for (const ragaudit::Report& v : q.at("generator").at("importance"))
          importance.push_back(v.is_number() ? v.get<double>() : 0.0);
        ragaudit::Ranking r_ret;
        for (const ragaudit::Report& v : q.at("alignment").at("retriever_ranking"))
          r_ret.items.push_back(v.get<int>());
        const ragaudit::AlignmentRecord rec =
            ragaudit::align(r_ret, importance, ragaudit::default_persistence_grid(), threshold);
        flags.push_back(rec.flags);
        ragaudit::Report warg_j;
        for (const auto& [p, value] : rec.warg_by_p) warg_j[ragaudit::format_persistence(p)] = value;
        out.push_back({{"query", q.at("query")},
                       {"warg", warg_j},
                       {"spearman", rec.spearman_rho ? ragaudit::Report(*rec.spearman_rho)
                                                     : ragaudit::Report(nullptr)},
                       {"wasted_retrieval", rec.flags.wasted_retrieval},
                       {"noise_distraction", rec.flags.noise_distraction}});
      }
      ragaudit::Report result = {{"queries", out}};
      if (!flags.empty()) {
        const ragaudit::FailureRates rates = ragaudit::failure_rates(flags);
        result["failure_rates"] = {{"wasted_retrieval_pct", rates.wasted_retrieval_pct},
                                   {"noise_distraction_pct", rates.noise_distraction_pct}};
      }
      write_output(out_path, result.dump(2) + "\n");
      return 0;
    }

    if (faith->parsed()) {
      const ragaudit::AuditConfig cfg = load_config(config_path, seed_override, parallelism_override);
      return run_faithfulness(cfg, out_path == "-" ? "" : out_path);
    }

    if (bench->parsed()) {
      ragaudit::BenchConfig cfg = ragaudit::BenchConfig::from_file(config_path);
      if (seed_override) cfg.seed = *seed_override;
      write_output(out_path, ragaudit::bench_csv(ragaudit::bench_shap(cfg)));
      return 0;
    }

    if (render->parsed()) {
      const ragaudit::Report report = report_from_file(report_path);
      write_output(out_path, ragaudit::render_report(report, ragaudit::render_format_from_string(format)));
      return 0;
    }
  } catch (const RagError& e) {
    std::cerr << "error (" << ragaudit::error_code_name(e.code()) << "): " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
