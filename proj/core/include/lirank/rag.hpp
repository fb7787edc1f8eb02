#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lirank/errors.hpp"
#include "lirank/evaluation.hpp"
#include "lirank/io.hpp"
#include "lirank/pipeline.hpp"

namespace lirank::rag {

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

/// The generator prompt, with {context_str}, {query} and {options} placeholders and
/// str.format-style {{ }} escapes. Role headers use Llama-3 special tokens.
extern const std::string_view kPromptTemplate;

struct PromptOptions {
  /// Placeholders: {doc_id} {title} {text}.
  std::string passage_format = "[{doc_id}] {title} — {text}";
  /// Used instead of passage_format when a passage has no title.
  std::string untitled_format = "[{doc_id}] {text}";
  std::string passage_separator = "\n\n";
};

std::string render_context(const ContextBundle& context, const PromptOptions& opts = {});
/// One `LETTER. text` line per option, in letter order, no trailing newline.
std::string render_options(const io::McqItem& item);
/// Throws InvalidArgument when the item has fewer than 2 options.
std::string render_prompt(const ContextBundle& context, const io::McqItem& item, const PromptOptions& opts = {});

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Splits a rendered prompt at its role headers into system and user messages,
/// dropping the special tokens. In literal mode the whole prompt becomes a single
/// user message.
std::vector<ChatMessage> to_messages(const std::string& prompt, bool literal = false);

// ---------------------------------------------------------------------------
// Generator client
// ---------------------------------------------------------------------------

struct GeneratorConfig {
  std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model = "llama-3.3-8b-instruct";
  double temperature = 0.0;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 2;
  std::chrono::milliseconds backoff{500};  // doubled after every failed attempt
  bool literal_template = false;
  /// Environment variable holding a bearer token; unset or empty sends no auth.
  std::string api_key_env = "LIRANK_API_KEY";

  void validate() const;
};

enum class GeneratorErrorKind { Timeout, Connection, HttpStatus, BadResponse, RetriesExhausted };

const char* to_string(GeneratorErrorKind kind);

class GeneratorError : public Error {
 public:
  GeneratorError(GeneratorErrorKind kind, int attempts, const std::string& message, int status = 0,
                 std::optional<GeneratorErrorKind> last_cause = std::nullopt)
      : Error(std::string(to_string(kind)) + " after " + std::to_string(attempts) + " attempt(s): " + message),
        kind_(kind), attempts_(attempts), status_(status), last_cause_(last_cause) {}

  GeneratorErrorKind kind() const { return kind_; }
  int attempts() const { return attempts_; }
  int status() const { return status_; }
  /// For RetriesExhausted: the kind of the final failed attempt.
  std::optional<GeneratorErrorKind> last_cause() const { return last_cause_; }

 private:
  GeneratorErrorKind kind_;
  int attempts_;
  int status_;
  std::optional<GeneratorErrorKind> last_cause_;
};

class Generator {
 public:
  virtual ~Generator() = default;
  /// Returns the assistant text for a rendered prompt.
  virtual std::string generate(const std::string& prompt) = 0;
};

using SleepFn = std::function<void(std::chrono::milliseconds)>;

/// Chat-completion client: POSTs {model, temperature, messages} as JSON and reads
/// choices[0].message.content. Timeouts, connection failures, 408/429 and 5xx are
/// retried with exponential backoff; other non-2xx statuses fail immediately.
class HttpGenerator final : public Generator {
 public:
  explicit HttpGenerator(GeneratorConfig cfg, SleepFn sleep = {});

  std::string generate(const std::string& prompt) override;

  /// JSON body sent for `prompt`.
  std::string request_body(const std::string& prompt) const;

 private:
  GeneratorConfig cfg_;
  SleepFn sleep_;
  std::string host_;
  std::string path_;
};

/// Extracts the assistant text from a chat-completion response body. Throws
/// GeneratorError(BadResponse).
std::string extract_completion(const std::string& body);

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

enum class ParseErrorKind { NoJson, MissingField, BadChoice, BadRelevance };

const char* to_string(ParseErrorKind kind);

class ParseError : public Error {
 public:
  ParseError(ParseErrorKind kind, const std::string& detail = {})
      : Error(std::string(to_string(kind)) + (detail.empty() ? "" : ": " + detail)), kind_(kind), detail_(detail) {}

  ParseErrorKind kind() const { return kind_; }
  /// Field name for MissingField; offending value otherwise.
  const std::string& detail() const { return detail_; }

 private:
  ParseErrorKind kind_;
  std::string detail_;
};

enum class RelevantContext { Yes, Not };

struct GenerationResult {
  std::string step_by_step_thinking;
  RelevantContext relevant_context = RelevantContext::Not;
  std::string answer_choice;
  std::string raw_response;
  /// Text surrounded the JSON object, or raw control characters had to be escaped.
  bool lenient = false;
};

/// First balanced top-level JSON object in `raw` carrying the three required fields.
GenerationResult parse_generation(const std::string& raw);

// ---------------------------------------------------------------------------
// End-to-end evaluation
// ---------------------------------------------------------------------------

struct TraceRecord {
  std::string item_id;
  std::string prompt_hash;  // 16 hex digits, FNV-1a 64 of the prompt bytes
  std::vector<std::string> retrieved_doc_ids;
  std::string raw_response;
  std::optional<std::string> parsed_answer;
  std::string error;
  bool lenient = false;
};

struct RagEvalOptions {
  std::size_t concurrency = 1;
  PromptOptions prompt;
  std::string config_label;
};

struct RagEvalResult {
  AccuracyReport accuracy;
  std::vector<TraceRecord> trace;  // item order
  std::size_t generator_failures = 0;
  std::size_t parse_failures = 0;
};

/// Per item: two_stage_search -> assemble_context -> render_prompt -> generate ->
/// parse. `pipeline` may be null, which evaluates with an empty context. Query
/// inputs are looked up by item id. A failed or unparseable generation marks that
/// item wrong; if every item fails in the generator, throws GeneratorError.
RagEvalResult run_rag_eval(const std::vector<io::McqItem>& items,
                           const std::map<std::string, QueryInput>& query_inputs, const Pipeline* pipeline,
                           const Corpus& corpus, Generator& generator, const RagEvalOptions& opts = {});

void write_trace(const std::vector<TraceRecord>& trace, const std::filesystem::path& path);

}  // namespace lirank::rag
