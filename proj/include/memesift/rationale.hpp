#pragma once

// Detection and reasoning prompts, and rationale generation through a
// pluggable completion backend.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "memesift/category.hpp"
#include "memesift/dataset.hpp"
#include "memesift/errors.hpp"
#include "memesift/parallel.hpp"
#include "memesift/random.hpp"

namespace memesift {

/// Body text with `{name}` placeholders.
struct PromptTemplate {
  std::string name;
  std::string body;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Names of `{identifier}` placeholders in order of appearance. Braces that do
/// not enclose a lowercase identifier are literal text.
inline std::vector<std::string> placeholders(std::string_view body) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < body.size() && (std::islower(static_cast<unsigned char>(body[j])) || body[j] == '_')) ++j;
    if (j < body.size() && body[j] == '}' && j > i + 1) {
      out.emplace_back(body.substr(i + 1, j - i - 1));
      i = j;
    }
  }
  return out;
}

/// Substitutes every placeholder; an unbound one raises RenderError.
inline std::string render(const PromptTemplate& tpl, const Bindings& bindings) {
  std::string out;
  const std::string_view body = tpl.body;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == '{') {
      std::size_t j = i + 1;
      while (j < body.size() && (std::islower(static_cast<unsigned char>(body[j])) || body[j] == '_')) ++j;
      if (j < body.size() && body[j] == '}' && j > i + 1) {
        const std::string_view key = body.substr(i + 1, j - i - 1);
        const auto it = bindings.find(key);
        if (it == bindings.end()) throw RenderError(std::string(key));
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out += body[i++];
  }
  return out;
}

inline constexpr std::string_view kDetectionTemplateBody =
    "{instructions}\n"
    "\n"
    "{shots}"
    "Meme text: \"{context_summary}\"\n"
    "Answer with a label (misogynous or non-misogynous) and one category "
    "(Kitchen, Leadership, Working, Shopping, Other).\n";

inline constexpr std::string_view kReasoningTemplateBody =
    "Aligned meme context:\n"
    "{context_summary}\n"
    "\n"
    "Detection label: {label}\n"
    "Identified category: {category}\n"
    "\n"
    "{instructions}\n";

inline constexpr std::string_view kDetectionInstructions =
    "Task: decide whether the meme below is misogynous, that is, whether it is undignified, hateful, mocking or "
    "stereotyping toward women, and name the social domain it concerns.";

inline constexpr std::string_view kReasoningInstructions =
    "Write a detailed explanation of why the meme received this label, specifically relating it to the identified "
    "category.";

inline PromptTemplate default_detection_template() { return {"detection", std::string(kDetectionTemplateBody)}; }
inline PromptTemplate default_reasoning_template() { return {"reasoning", std::string(kReasoningTemplateBody)}; }

inline PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template " + path.string());
  std::ostringstream body;
  body << in.rdbuf();
  return {path.stem().string(), body.str()};
}

inline std::string_view label_token(bool misogynous) noexcept {
  return misogynous ? "misogynous" : "non-misogynous";
}

struct FewShotExample {
  std::string text;
  bool label = false;
  Category category = Category::Other;
  std::string rationale;
};

/// JSON Lines with keys text, label, category, rationale.
inline std::vector<FewShotExample> load_fewshot_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open few-shot pool " + path.string());
  std::vector<FewShotExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FewShotExample ex;
      ex.text = j.at("text").get<std::string>();
      ex.label = j.at("label").get<bool>();
      const auto cat = parse_category(j.at("category").get<std::string>());
      if (!cat) throw ParseError("unknown category", line_no);
      ex.category = *cat;
      ex.rationale = j.at("rationale").get<std::string>();
      if (ex.rationale.empty()) throw ValidationError("few-shot example on line " + std::to_string(line_no) + " has empty rationale");
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

/// Built-in pool, identical to data/fewshot_pool.jsonl.
inline std::vector<FewShotExample> default_fewshot_pool() {
  return {
      {"Her place is in the kitchen, not in the conference room.", true, Category::Kitchen,
       "The meme is misogynous because it confines women to cooking and housework and denies them a place in "
       "professional life."},
      {"Grandma finally wrote down her secret soup recipe for the whole family.", false, Category::Kitchen,
       "The meme is non-misogynous because it celebrates a shared family recipe without judging women or "
       "assigning them a role."},
      {"A woman running the company? Bankrupt by Friday.", true, Category::Leadership,
       "The meme is misogynous because it claims a woman cannot lead an organization, mocking female "
       "leadership as a guaranteed failure."},
      {"When the new intern fixes the printer nobody else could.", false, Category::Working,
       "The meme is non-misogynous because its joke is about office equipment and a capable newcomer, not about "
       "women."},
      {"Hide the credit card, she heard there is a sale.", true, Category::Shopping,
       "The meme is misogynous because it stereotypes women as compulsive shoppers who cannot be trusted with "
       "money."},
  };
}

inline void write_fewshot_pool(std::ostream& out, const std::vector<FewShotExample>& pool) {
  for (const auto& ex : pool) {
    nlohmann::ordered_json j;
    j["text"] = ex.text;
    j["label"] = ex.label;
    j["category"] = std::string(category_name(ex.category));
    j["rationale"] = ex.rationale;
    out << j.dump() << '\n';
  }
}

/// Example block for the detection prompt; each shot ends with a blank line,
/// so a k-shot block is a prefix of any longer block over the same pool.
inline std::string format_shots(const std::vector<FewShotExample>& shots) {
  std::string out;
  for (std::size_t i = 0; i < shots.size(); ++i) {
    const auto& s = shots[i];
    out += "Example " + std::to_string(i + 1) + ":\n";
    out += "Meme text: \"" + s.text + "\"\n";
    out += "Label: " + std::string(label_token(s.label)) + "\n";
    out += "Category: " + std::string(category_name(s.category)) + "\n";
    out += "Rationale: " + s.rationale + "\n\n";
  }
  return out;
}

/// First k examples of the pool, k ∈ {0, 2, 5}.
inline std::vector<FewShotExample> select_shots(const std::vector<FewShotExample>& pool, std::size_t k) {
  if (k != 0 && k != 2 && k != 5) throw ArgumentError("shots must be 0, 2 or 5, got " + std::to_string(k));
  if (pool.size() < k) throw ArgumentError("few-shot pool holds " + std::to_string(pool.size()) + " examples, need " + std::to_string(k));
  return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k)};
}

inline std::string build_detection_prompt(const MemeRecord& meme, const std::vector<FewShotExample>& shots,
                                          const PromptTemplate& tpl = default_detection_template()) {
  if (shots.size() != 0 && shots.size() != 2 && shots.size() != 5) {
    throw ArgumentError("detection prompt: unsupported shot count " + std::to_string(shots.size()));
  }
  return render(tpl, {{"instructions", std::string(kDetectionInstructions)},
                      {"shots", format_shots(shots)},
                      {"context_summary", meme_text(meme)}});
}

/// Textual stand-in for the aligned multimodal context.
inline std::string context_summary(std::string_view text, Category predicted,
                                   const std::vector<std::string>& salient_tokens) {
  std::string out = "Meme text: \"" + std::string(text.empty() ? "(image only, no text)" : text) + "\"\n";
  out += "Predicted category: " + std::string(category_name(predicted)) + "\n";
  out += "Tokens most attended by the aligned image: ";
  if (salient_tokens.empty()) {
    out += "(none)";
  } else {
    for (std::size_t i = 0; i < salient_tokens.size(); ++i) out += (i ? ", " : "") + salient_tokens[i];
  }
  return out;
}

inline std::string build_reasoning_prompt(std::string_view summary, bool label, Category category,
                                          const PromptTemplate& tpl = default_reasoning_template()) {
  if (summary.empty()) throw ArgumentError("reasoning prompt: empty context summary");
  return render(tpl, {{"context_summary", std::string(summary)},
                      {"label", std::string(label_token(label))},
                      {"category", std::string(category_name(category))},
                      {"instructions", std::string(kReasoningInstructions)}});
}

// ---------------------------------------------------------------------------
// Backends

/// The prompt plus the decision it explains. Remote backends only see the
/// prompt; the stub fills its templates from the label and category.
struct RationaleRequest {
  std::string prompt;
  bool label = false;
  Category category = Category::Other;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const RationaleRequest& request) const = 0;
};

/// Deterministic offline backend: picks fixed sentence skeletons by a stable
/// hash of the prompt and seed.
class StubBackend final : public CompletionBackend {
 public:
  explicit StubBackend(std::uint64_t seed = 0) : seed_(seed) {}

  std::string complete(const RationaleRequest& r) const override {
    static constexpr std::array<std::string_view, 3> positive_open{
        "The meme is misogynous because it reduces women to a stereotype rooted in the {category} domain.",
        "This meme is misogynous: its joke depends on mocking women through the {category} setting.",
        "The meme is misogynous since it frames women as belonging to a narrow role in the {category} context."};
    static constexpr std::array<std::string_view, 3> positive_close{
        "The text and image together present that role as natural, which demeans women in the {category} domain.",
        "Its humor reinforces a gender stereotype tied to {category} rather than commenting on it.",
        "Read together, caption and picture turn the {category} theme into a claim about what women can do."};
    static constexpr std::array<std::string_view, 3> negative_open{
        "The meme is non-misogynous because it does not demean or stereotype women in the {category} domain.",
        "This meme is non-misogynous: its joke about the {category} setting does not target women.",
        "The meme is non-misogynous since nothing in it assigns women a fixed role in the {category} context."};
    static constexpr std::array<std::string_view, 3> negative_close{
        "The text and image describe a {category} situation without a gendered judgment.",
        "Its humor stays with the {category} theme itself rather than with women.",
        "No part of the caption or picture ties the {category} theme to women as a group."};
    const std::uint64_t h = stable_hash(r.prompt) ^ (seed_ * 0x9E3779B97F4A7C15ULL);
    const auto& open = r.label ? positive_open : negative_open;
    const auto& close = r.label ? positive_close : negative_close;
    const std::string cat(category_name(r.category));
    auto fill = [&](std::string_view s) {
      std::string out(s);
      for (std::size_t at = out.find("{category}"); at != std::string::npos; at = out.find("{category}", at)) {
        out.replace(at, 10, cat);
        at += cat.size();
      }
      return out;
    };
    return fill(open[h % open.size()]) + " " + fill(close[(h / open.size()) % close.size()]);
  }

 private:
  std::uint64_t seed_;
};

/// Validates the prompt and the completion around a backend call.
inline std::string generate(const RationaleRequest& request, const CompletionBackend& backend) {
  if (request.prompt.empty()) throw ArgumentError("generate: empty prompt");
  std::string out = backend.complete(request);
  if (out.find_first_not_of(" \t\r\n") == std::string::npos) throw BackendError("backend returned an empty completion");
  return out;
}

struct GenerationResult {
  std::string rationale;
  std::string error;  // non-empty when this item failed

  bool ok() const noexcept { return error.empty(); }
};

/// Runs generate over all requests with at most `workers` concurrent calls.
/// Results keep input order; failures are recorded per item.
inline std::vector<GenerationResult> generate_batch(const std::vector<RationaleRequest>& requests,
                                                    const CompletionBackend& backend, std::size_t workers = 4) {
  std::vector<GenerationResult> out(requests.size());
  parallel_for(requests.size(), workers, [&](std::size_t i) {
    try {
      out[i].rationale = generate(requests[i], backend);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace memesift
