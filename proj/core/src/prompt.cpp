#include <map>

#include "lirank/errors.hpp"
#include "lirank/rag.hpp"

namespace lirank::rag {

const std::string_view kPromptTemplate =
    "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n"
    "You are a meticulous and highly accurate medical AI assistant.\n"
    "Your sole purpose is to analyze provided medical documents \n"
    "to answer a multiple-choice question.\n"
    "You MUST strictly follow all instructions and provide your \n"
    "output ONLY in the specified JSON format.\n"
    "<|eot_id|><|start_header_id|>user<|end_header_id|>\n"
    "### TASK ###\n"
    "Analyze the documents and answer the question according to \n"
    "the rules below.\n"
    "\n"
    "### CONTEXT DOCUMENTS ###\n"
    "{context_str}\n"
    "\n"
    "### QUESTION AND OPTIONS ###\n"
    "**Question:** {query}\n"
    "\n"
    "**Options:**\n"
    "{options}\n"
    "\n"
    "### OUTPUT RULES ###\n"
    "1.  **Reasoning:** First, think step-by-step to arrive at \n"
    "your conclusion. Your entire thought process must be captured \n"
    "in the `step_by_step_thinking` field.\n"
    "2.  **Relevance Check:** Determine if the context documents \n"
    "were relevant and necessary to answer the question. Use \"YES\" \n"
    "or \"NOT\" for the `relevant_context` field.\n"
    "3.  **Final Answer:** Choose one single, definitive letter \n"
    "corresponding to the correct option. This will be the value \n"
    "for the `answer_choice` field.\n"
    "4.  **Strict JSON Format:** Your entire response MUST be a \n"
    "single, raw JSON object. Do not write any text, explanation, \n"
    "or markdown formatting (like ```json) before or after the \n"
    "JSON object.\n"
    "\n"
    "Your response must conform to this exact JSON structure:\n"
    "```json\n"
    "{{\n"
    "  \"step_by_step_thinking\": \"Your detailed analysis and \n"
    "  reasoning to reach the answer.\",\n"
    "  \"relevant_context\": \"YES\",\n"
    "  \"answer_choice\": \"C\"\n"
    "}}\n"
    "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n";

namespace {

constexpr std::string_view kSystemHeader = "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n";
constexpr std::string_view kUserHeader = "<|eot_id|><|start_header_id|>user<|end_header_id|>\n";
constexpr std::string_view kAssistantHeader = "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n";

/// Single-pass {name} substitution with {{ and }} escapes. Unknown names are kept
/// verbatim; substituted text is never rescanned.
std::string substitute(std::string_view tmpl, const std::map<std::string_view, std::string_view>& values) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 2, "{{") == 0) {
      out += '{';
      i += 2;
    } else if (tmpl.compare(i, 2, "}}") == 0) {
      out += '}';
      i += 2;
    } else if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close == std::string_view::npos) {
        out.append(tmpl.substr(i));
        break;
      }
      const auto name = tmpl.substr(i + 1, close - i - 1);
      auto it = values.find(name);
      if (it == values.end()) {
        out.append(tmpl.substr(i, close - i + 1));
      } else {
        out.append(it->second);
      }
      i = close + 1;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

}  // namespace

std::string render_context(const ContextBundle& context, const PromptOptions& opts) {
  std::string out;
  for (std::size_t i = 0; i < context.passages.size(); ++i) {
    const auto& p = context.passages[i];
    if (i) out += opts.passage_separator;
    const auto& fmt = p.title.empty() ? opts.untitled_format : opts.passage_format;
    out += substitute(fmt, {{"doc_id", p.doc_id}, {"title", p.title}, {"text", p.text}});
  }
  return out;
}

std::string render_options(const io::McqItem& item) {
  std::string out;
  for (const auto& [letter, text] : item.options) {
    if (!out.empty()) out += '\n';
    out += letter;
    out += ". ";
    out += text;
  }
  return out;
}

std::string render_prompt(const ContextBundle& context, const io::McqItem& item, const PromptOptions& opts) {
  if (item.options.size() < 2) throw InvalidArgument("item '" + item.id + "' needs at least 2 options");
  const auto context_str = render_context(context, opts);
  const auto options = render_options(item);
  return substitute(kPromptTemplate, {{"context_str", context_str}, {"query", item.question}, {"options", options}});
}

std::vector<ChatMessage> to_messages(const std::string& prompt, bool literal) {
  if (literal) return {ChatMessage{"user", prompt}};
  std::string_view p(prompt);
  const auto sys = p.find(kSystemHeader);
  const auto user = p.find(kUserHeader);
  const auto assistant = p.rfind(kAssistantHeader);
  if (sys != 0 || user == std::string_view::npos || assistant == std::string_view::npos || assistant < user) {
    // Not a template-shaped prompt; send it as-is.
    return {ChatMessage{"user", prompt}};
  }
  const auto sys_begin = kSystemHeader.size();
  const auto user_begin = user + kUserHeader.size();
  return {ChatMessage{"system", std::string(p.substr(sys_begin, user - sys_begin))},
          ChatMessage{"user", std::string(p.substr(user_begin, assistant - user_begin))}};
}

}  // namespace lirank::rag
