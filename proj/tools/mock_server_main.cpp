#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <iostream>
#include <memory>
#include <thread>

#include "ragaudit/gateway.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mock model server: /v1/completions, /v1/embeddings and /grad"};
  std::string spec_path, weights_path, host = "127.0.0.1";
  int port = 8000;
  std::uint64_t encoder_seed = 7;
  int vocab = 256, hidden = 16, max_len = 64, embedding_dim = 16;
  app.add_option("--spec", spec_path, "Mock LM spec JSON")->required();
  app.add_option("--weights", weights_path, "Encoder weight file backing /grad");
  app.add_option("--encoder-seed", encoder_seed, "Seeded encoder when no weight file is given");
  app.add_option("--vocab", vocab, "Seeded encoder vocabulary size");
  app.add_option("--hidden", hidden, "Seeded encoder hidden size");
  app.add_option("--max-len", max_len, "Seeded encoder maximum sequence length");
  app.add_option("--embedding-dim", embedding_dim, "Dimension of /v1/embeddings fallback vectors");
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port (0 picks a free one)");
  CLI11_PARSE(app, argc, argv);

  try {
    using namespace ragaudit;
    ReferenceEncoder encoder = weights_path.empty()
                                   ? ReferenceEncoder::seeded({vocab, hidden, max_len}, encoder_seed)
                                   : ReferenceEncoder::from_file(weights_path);
    auto lm = std::make_shared<MockLM>(MockLMSpec::from_file(spec_path));
    auto grad = std::make_shared<LocalGradientOracle>(std::move(encoder));
    auto embeddings = std::make_shared<MockEmbeddingClient>(
        std::vector<std::pair<std::string, Vec>>{}, embedding_dim);

    MockServer server(lm, grad, embeddings);
    const int bound = server.start(host, port);
    std::cout << "mock server listening on " << host << ":" << bound << std::endl;

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  } catch (const ragaudit::RagError& e) {
    std::cerr << "error (" << ragaudit::error_code_name(e.code()) << "): " << e.what() << "\n";
    return 1;
  }
  return 0;
}
