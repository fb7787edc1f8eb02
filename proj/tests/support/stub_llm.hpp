#pragma once

// In-process chat-completion server for generator tests. Binds 127.0.0.1 on a
// free port and answers every POST through a scripted responder.

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace lirank::testing {

struct StubReply {
  int status = 200;
  std::string body;
  int delay_ms = 0;
};

/// Chat-completion response body carrying `content` as the assistant message.
std::string completion_body(const std::string& content);

/// Canned model answer in the template's JSON shape.
std::string answer_json(const std::string& letter, const std::string& relevant = "YES");

class StubLlm {
 public:
  /// `call` counts from 0 across all requests.
  using Responder = std::function<StubReply(const std::string& request_body, int call)>;

  explicit StubLlm(Responder responder);
  ~StubLlm();
  StubLlm(const StubLlm&) = delete;
  StubLlm& operator=(const StubLlm&) = delete;

  std::string endpoint() const;
  int calls() const { return calls_.load(); }
  std::vector<std::string> requests() const;
  std::vector<std::string> auth_headers() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::atomic<int> calls_{0};
};

/// Extracts the question line ("**Question:** ...") from a request body's user message.
std::string question_of(const std::string& request_body);

}  // namespace lirank::testing
