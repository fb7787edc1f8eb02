#include <cctype>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lirank/rag.hpp"

namespace lirank::rag {

using nlohmann::json;

const char* to_string(GeneratorErrorKind kind) {
  switch (kind) {
    case GeneratorErrorKind::Timeout: return "timeout";
    case GeneratorErrorKind::Connection: return "connection failure";
    case GeneratorErrorKind::HttpStatus: return "http status error";
    case GeneratorErrorKind::BadResponse: return "bad response";
    case GeneratorErrorKind::RetriesExhausted: return "retries exhausted";
  }
  return "generator error";
}

void GeneratorConfig::validate() const {
  if (max_retries < 0) throw InvalidArgument("max_retries must be >= 0");
  if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  if (timeout.count() <= 0) throw InvalidArgument("timeout must be positive");
  if (model.empty()) throw InvalidArgument("model name must be set");
}

namespace {

/// Splits "http://host:port/path" into ("http://host:port", "/path").
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InvalidArgument("endpoint '" + url + "' has no scheme");
  if (url.compare(0, scheme, "http") != 0) {
    throw InvalidArgument("endpoint '" + url + "': only http:// endpoints are supported");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpGenerator::HttpGenerator(GeneratorConfig cfg, SleepFn sleep) : cfg_(std::move(cfg)), sleep_(std::move(sleep)) {
  cfg_.validate();
  std::tie(host_, path_) = split_url(cfg_.endpoint);
  if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpGenerator::request_body(const std::string& prompt) const {
  json messages = json::array();
  for (const auto& m : to_messages(prompt, cfg_.literal_template)) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  nlohmann::ordered_json body;
  body["model"] = cfg_.model;
  body["temperature"] = cfg_.temperature;
  body["messages"] = messages;
  return body.dump();
}

std::string extract_completion(const std::string& body) {
  try {
    const auto j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw GeneratorError(GeneratorErrorKind::BadResponse, 1, "content is not a string");
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw GeneratorError(GeneratorErrorKind::BadResponse, 1, std::string("unexpected response shape: ") + e.what());
  }
}

std::string HttpGenerator::generate(const std::string& prompt) {
  const auto body = request_body(prompt);
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    if (const char* token = std::getenv(cfg_.api_key_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  const int max_attempts = cfg_.max_retries + 1;
  auto backoff = cfg_.backoff;
  GeneratorErrorKind last = GeneratorErrorKind::Connection;
  std::string last_message;
  int last_status = 0;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    httplib::Client client(host_);
    client.set_connection_timeout(cfg_.timeout);
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(cfg_.timeout);
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      last = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) ? GeneratorErrorKind::Timeout
                                                                                        : GeneratorErrorKind::Connection;
      last_message = httplib::to_string(err);
      last_status = 0;
    } else if (res->status >= 200 && res->status < 300) {
      try {
        return extract_completion(res->body);
      } catch (const GeneratorError& e) {
        throw GeneratorError(GeneratorErrorKind::BadResponse, attempt, e.what());
      }
    } else if (retryable_status(res->status)) {
      last = GeneratorErrorKind::HttpStatus;
      last_status = res->status;
      last_message = "HTTP " + std::to_string(res->status);
    } else {
      throw GeneratorError(GeneratorErrorKind::HttpStatus, attempt, "HTTP " + std::to_string(res->status),
                           res->status);
    }
    if (attempt < max_attempts) {
      sleep_(backoff);
      backoff *= 2;
    }
  }
  throw GeneratorError(GeneratorErrorKind::RetriesExhausted, max_attempts, last_message, last_status, last);
}

// ---------------------------------------------------------------------------

const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::NoJson: return "no JSON object";
    case ParseErrorKind::MissingField: return "missing field";
    case ParseErrorKind::BadChoice: return "invalid answer choice";
    case ParseErrorKind::BadRelevance: return "invalid relevance flag";
  }
  return "parse error";
}

namespace {

/// End index (inclusive) of the balanced object starting at raw[start] == '{', or npos.
std::size_t balanced_end(const std::string& raw, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < raw.size(); ++i) {
    const char c = raw[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::string::npos;
}

/// Escapes raw control characters that appear inside JSON string literals.
std::string escape_controls_in_strings(const std::string& s, bool& changed) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  bool escaped = false;
  for (char c : s) {
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      } else if (static_cast<unsigned char>(c) < 0x20) {
        changed = true;
        out += c == '\n' ? "\\n" : c == '\r' ? "\\r" : c == '\t' ? "\\t" : " ";
        continue;
      }
    } else if (c == '"') {
      in_string = true;
    }
    out += c;
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

GenerationResult parse_generation(const std::string& raw) {
  for (std::size_t start = raw.find('{'); start != std::string::npos; start = raw.find('{', start + 1)) {
    const auto end = balanced_end(raw, start);
    if (end == std::string::npos) continue;
    const std::string candidate = raw.substr(start, end - start + 1);
    bool escaped = false;
    const std::string cleaned = escape_controls_in_strings(candidate, escaped);
    json j = json::parse(cleaned, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) continue;

    GenerationResult out;
    out.raw_response = raw;
    out.lenient = escaped || trim(raw) != candidate;

    auto field = [&](const char* name) -> std::string {
      auto it = j.find(name);
      if (it == j.end() || !it->is_string()) throw ParseError(ParseErrorKind::MissingField, name);
      return it->get<std::string>();
    };
    out.step_by_step_thinking = field("step_by_step_thinking");
    const auto relevance = upper(trim(field("relevant_context")));
    const auto choice = upper(trim(field("answer_choice")));
    if (relevance == "YES") {
      out.relevant_context = RelevantContext::Yes;
    } else if (relevance == "NOT") {
      out.relevant_context = RelevantContext::Not;
    } else {
      throw ParseError(ParseErrorKind::BadRelevance, relevance);
    }
    if (choice.size() != 1 || choice[0] < 'A' || choice[0] > 'Z') {
      throw ParseError(ParseErrorKind::BadChoice, choice);
    }
    out.answer_choice = choice;
    return out;
  }
  throw ParseError(ParseErrorKind::NoJson);
}

}  // namespace lirank::rag
