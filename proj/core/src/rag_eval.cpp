#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "lirank/rag.hpp"
#include "lirank/rng.hpp"

namespace lirank::rag {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct ItemOutcome {
  TraceRecord trace;
  bool generator_failed = false;
  bool parse_failed = false;
};

ItemOutcome evaluate_item(const io::McqItem& item, const std::map<std::string, QueryInput>& query_inputs,
                          const Pipeline* pipeline, const Corpus& corpus, Generator& generator,
                          const RagEvalOptions& opts) {
  ItemOutcome out;
  out.trace.item_id = item.id;
  ContextBundle context;
  context.query_text = item.question;
  if (pipeline) {
    auto it = query_inputs.find(item.id);
    if (it == query_inputs.end()) throw NotFound("no query embeddings for item '" + item.id + "'");
    const auto& q = it->second;
    const auto run = pipeline->search(q.dense, q.tokens ? &*q.tokens : nullptr, item.id);
    context = assemble_context(run, corpus, item.question);
    for (const auto& c : run.candidates) out.trace.retrieved_doc_ids.push_back(c.doc_id);
  }
  const auto prompt = render_prompt(context, item, opts.prompt);
  out.trace.prompt_hash = hex64(fnv1a64(prompt));
  try {
    out.trace.raw_response = generator.generate(prompt);
  } catch (const GeneratorError& e) {
    out.trace.error = e.what();
    out.generator_failed = true;
    return out;
  }
  try {
    const auto parsed = parse_generation(out.trace.raw_response);
    out.trace.parsed_answer = parsed.answer_choice;
    out.trace.lenient = parsed.lenient;
  } catch (const ParseError& e) {
    out.trace.error = e.what();
    out.parse_failed = true;
  }
  return out;
}

}  // namespace

RagEvalResult run_rag_eval(const std::vector<io::McqItem>& items,
                           const std::map<std::string, QueryInput>& query_inputs, const Pipeline* pipeline,
                           const Corpus& corpus, Generator& generator, const RagEvalOptions& opts) {
  for (const auto& item : items) io::validate_item(item);

  std::vector<ItemOutcome> outcomes(items.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.concurrency, items.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      outcomes[i] = evaluate_item(items[i], query_inputs, pipeline, corpus, generator, opts);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
          try {
            outcomes[i] = evaluate_item(items[i], query_inputs, pipeline, corpus, generator, opts);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  RagEvalResult result;
  std::map<std::string, std::string> predictions;
  for (auto& o : outcomes) {
    if (o.generator_failed) ++result.generator_failures;
    if (o.parse_failed) ++result.parse_failures;
    if (o.trace.parsed_answer) predictions[o.trace.item_id] = *o.trace.parsed_answer;
    result.trace.push_back(std::move(o.trace));
  }
  if (!items.empty() && result.generator_failures == items.size()) {
    throw GeneratorError(GeneratorErrorKind::RetriesExhausted, 0,
                         "all " + std::to_string(items.size()) + " items failed in the generator; first error: " +
                             result.trace.front().error);
  }
  result.accuracy = mcq_accuracy(predictions, items);
  result.accuracy.config = opts.config_label;
  return result;
}

void write_trace(const std::vector<TraceRecord>& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  for (const auto& t : trace) {
    nlohmann::ordered_json j;
    j["item_id"] = t.item_id;
    j["prompt_hash"] = t.prompt_hash;
    j["retrieved_doc_ids"] = t.retrieved_doc_ids;
    j["raw_response"] = t.raw_response;
    j["parsed_answer"] = t.parsed_answer ? nlohmann::ordered_json(*t.parsed_answer) : nlohmann::ordered_json();
    j["lenient"] = t.lenient;
    if (!t.error.empty()) j["error"] = t.error;
    out << j.dump() << '\n';
  }
}

}  // namespace lirank::rag
