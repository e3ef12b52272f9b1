#pragma once

// Command implementations behind the memesift CLI. Each command reads its
// inputs from a RunConfig, writes primary output to `out` (or to the
// configured file) and diagnostics to `err`, and returns a process exit code.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "memesift/config.hpp"
#include "memesift/dataset.hpp"
#include "memesift/encoders.hpp"
#include "memesift/errors.hpp"
#include "memesift/evalharness.hpp"
#include "memesift/http_backend.hpp"
#include "memesift/model.hpp"
#include "memesift/parallel.hpp"
#include "memesift/rationale.hpp"

namespace memesift {

enum ExitCode : int { kExitOk = 0, kExitIo = 1, kExitValidation = 2, kExitNumeric = 3 };

/// Maps an exception onto the stable exit-code contract.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const TransportError*>(&e) ||
      dynamic_cast<const BackendError*>(&e)) {
    return kExitIo;
  }
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const DegenerateEmbeddingError*>(&e) ||
      dynamic_cast<const DegenerateAgreementError*>(&e)) {
    return kExitNumeric;
  }
  if (dynamic_cast<const Error*>(&e) || dynamic_cast<const nlohmann::json::exception*>(&e)) return kExitValidation;
  return kExitIo;
}

/// Runs `body`, reporting any exception on `err` and translating it.
template <class F>
int run_guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

namespace pipeline_detail {

inline const std::string& require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw ArgumentError(std::string("missing required --") + flag);
  return value;
}

/// Writes `content` to `path`, or to `fallback` when path is empty.
inline void emit(const std::string& path, const std::string& content, std::ostream& fallback) {
  if (path.empty()) {
    fallback << content;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << content;
  if (!f) throw IoError("write failed for " + path);
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what(), line_no);
    }
    if (!out.back().is_object()) throw ParseError(path + ": expected a JSON object", line_no);
  }
  return out;
}

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// Model inputs

/// Turns manifest records into model inputs. Patch files and precomputed
/// embeddings are resolved relative to the manifest's directory.
inline std::vector<MemeExample> load_examples(const std::vector<MemeRecord>& records, const RunConfig& cfg,
                                              const EncoderConfig& enc, bool need_labels) {
  const std::filesystem::path base = std::filesystem::path(cfg.manifest).parent_path();
  std::vector<MemeExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    MemeExample ex;
    ex.id = r.id;
    ex.category = r.category;
    if (r.misogyny_label) {
      ex.label = *r.misogyny_label;
    } else if (need_labels) {
      throw ValidationError("record " + r.id + " has no misogyny_label");
    }
    ex.text = tokenize(meme_text(r), enc.vocab_size, enc.max_len);
    if (!cfg.text_emb.empty()) {
      ex.text_features = load_embeddings(std::filesystem::path(cfg.text_emb) / (r.id + ".mme")).values;
    }
    if (!cfg.image_emb.empty()) {
      ex.image_features = load_embeddings(std::filesystem::path(cfg.image_emb) / (r.id + ".mme")).values;
    } else {
      const std::filesystem::path ref(r.image_ref);
      if (ref.extension() != ".mme") {
        throw ValidationError("record " + r.id + ": image_ref '" + r.image_ref +
                              "' is not an MME1 patch file; pass --image-emb for precomputed features");
      }
      ex.patches = load_embeddings(ref.is_absolute() ? ref : base / ref).values;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

/// Up to k words of the meme text ranked by the attention mass the aligned
/// image places on their token ids. Ties keep first-occurrence order.
inline std::vector<std::string> salient_tokens(const ForwardTrace& t, std::string_view text,
                                               const EncoderConfig& enc, std::size_t k = 3) {
  const Matrix& w = t.align.attn.weights;
  std::vector<std::string> words = split_words(text);
  if (words.size() > enc.max_len) words.resize(enc.max_len);
  std::vector<std::pair<std::string, double>> scored;
  std::set<std::size_t> seen;
  for (const auto& word : words) {
    const std::size_t id = token_id(word, enc.vocab_size);
    if (!seen.insert(id).second || id >= w.cols()) continue;
    double mass = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) mass += w(r, id);
    scored.emplace_back(word, mass);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].first);
  return out;
}

struct PredictionRow {
  std::string id;
  bool label = false;
  double misogyny_prob = 0.0;
  Category category = Category::Other;
  std::array<double, kCategoryCount> category_dist{};
  std::vector<std::string> salient;
};

inline nlohmann::ordered_json prediction_to_json(const PredictionRow& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  j["label"] = p.label;
  j["misogyny_prob"] = p.misogyny_prob;
  j["category"] = std::string(category_name(p.category));
  nlohmann::ordered_json dist;
  for (Category c : kAllCategories) dist[std::string(category_name(c))] = p.category_dist[category_index(c)];
  j["category_dist"] = dist;
  j["salient_tokens"] = p.salient;
  return j;
}

inline PredictionRow prediction_from_json(const nlohmann::json& j) {
  PredictionRow p;
  p.id = j.at("id").get<std::string>();
  p.label = j.at("label").get<bool>();
  p.misogyny_prob = j.at("misogyny_prob").get<double>();
  const auto cat = parse_category(j.at("category").get<std::string>());
  if (!cat) throw ValidationError("prediction " + p.id + ": unknown category");
  p.category = *cat;
  for (Category c : kAllCategories) {
    p.category_dist[category_index(c)] = j.at("category_dist").at(std::string(category_name(c))).get<double>();
  }
  if (const auto it = j.find("salient_tokens"); it != j.end()) p.salient = it->get<std::vector<std::string>>();
  return p;
}

inline std::vector<PredictionRow> load_predictions(const std::string& path) {
  std::vector<PredictionRow> out;
  std::set<std::string> ids;
  for (const auto& j : pipeline_detail::read_jsonl(path)) {
    out.push_back(prediction_from_json(j));
    if (!ids.insert(out.back().id).second) throw ValidationError("duplicate prediction id " + out.back().id);
  }
  return out;
}

/// Loads the checkpoint and rejects one whose shape disagrees with the config.
inline ModelParams load_compatible_checkpoint(const RunConfig& cfg) {
  ModelParams p = load_checkpoint(pipeline_detail::require_path(cfg.checkpoint, "checkpoint"));
  const auto& c = p.encoder.config;
  if (c.d_model != cfg.d_h) {
    throw ValidationError("checkpoint d_h=" + std::to_string(c.d_model) + " but config d_h=" + std::to_string(cfg.d_h));
  }
  if (c.vocab_size != cfg.vocab) {
    throw ValidationError("checkpoint vocab=" + std::to_string(c.vocab_size) + " but config vocab=" +
                          std::to_string(cfg.vocab));
  }
  return p;
}

/// Library-level prediction over records, in input order.
inline std::vector<PredictionRow> predict_records(const std::vector<MemeRecord>& records, const ModelParams& p,
                                                  const RunConfig& cfg) {
  const std::vector<MemeExample> examples = load_examples(records, cfg, p.encoder.config, false);
  const InferenceOptions opt = default_inference_options(p.encoder, cfg.blend());
  const EmbeddingMemory memory = prepare_memory(p.encoder.token_embedding, p.alignment);
  std::vector<PredictionRow> rows(records.size());
  parallel_for(records.size(), cfg.workers, [&](std::size_t i) {
    const ForwardTrace t = forward(examples[i], p, memory, opt);
    PredictionRow& row = rows[i];
    row.id = records[i].id;
    row.label = t.prediction.label;
    row.misogyny_prob = t.prediction.misogyny_prob;
    row.category = t.prediction.category;
    row.category_dist = t.prediction.category_dist;
    row.salient = salient_tokens(t, meme_text(records[i]), p.encoder.config);
  });
  return rows;
}

inline std::unique_ptr<CompletionBackend> make_backend(const RunConfig& cfg) {
  if (cfg.backend == "stub") return std::make_unique<StubBackend>(cfg.seed);
  if (cfg.backend == "http") {
    HttpBackendConfig h;
    h.base_url = cfg.llm_base_url;
    h.model = cfg.llm_model;
    h.max_tokens = static_cast<int>(cfg.llm_max_tokens);
    h.timeout_seconds = static_cast<int>(cfg.llm_timeout);
    return std::make_unique<HttpBackend>(h);
  }
  throw ValidationError("unknown backend '" + cfg.backend + "'");
}

inline PromptTemplate template_from(const RunConfig& cfg, const char* name, PromptTemplate fallback) {
  if (cfg.templates.empty()) return fallback;
  return load_template(std::filesystem::path(cfg.templates) / (std::string(name) + ".txt"));
}

/// Canonical reference rationale used for SemSim when no references file is given.
inline std::string gold_reference(bool label, Category category) {
  return "The meme is " + std::string(label_token(label)) + " and concerns the " +
         std::string(category_name(category)) + " domain.";
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_stats(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    const auto records = load_manifest(pipeline_detail::require_path(cfg.manifest, "manifest"));
    const DatasetStats stats = compute_stats(records);
    const std::string table = format_stats_table(stats);
    const std::string csv = format_stats_csv(stats);
    out << table;
    if (cfg.report_dir.empty()) {
      out << '\n' << csv;
    } else {
      std::filesystem::create_directories(cfg.report_dir);
      pipeline_detail::emit((std::filesystem::path(cfg.report_dir) / "stats.txt").string(), table, out);
      pipeline_detail::emit((std::filesystem::path(cfg.report_dir) / "stats.csv").string(), csv, out);
    }
    return int{kExitOk};
  });
}

inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    cfg.validate();
    const std::string& ckpt = pipeline_detail::require_path(cfg.checkpoint, "checkpoint");
    const auto records = load_manifest(pipeline_detail::require_path(cfg.manifest, "manifest"));
    const ModelShape shape = cfg.model_shape();
    const auto examples = load_examples(records, cfg, shape.encoder, true);
    const TrainConfig tc = cfg.train_config();
    const TrainResult result = train(examples, tc, shape);
    const InferenceOptions opt = default_inference_options(result.params.encoder, tc.blend);
    const double final_loss = batch_loss(examples, result.params, opt, tc.lambda, false).loss;
    if (!std::isfinite(final_loss)) throw DivergenceError(tc.epochs);
    save_checkpoint(ckpt, result.params);

    std::string log = "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_history.size(); ++e)
      log += std::to_string(e) + "," + pipeline_detail::format_g17(result.loss_history[e]) + "\n";
    log += std::to_string(result.loss_history.size()) + "," + pipeline_detail::format_g17(final_loss) + "\n";
    pipeline_detail::emit(ckpt + ".loss.csv", log, out);

    out << "trained on " << examples.size() << " memes for " << tc.epochs << " epochs\n"
        << "initial loss " << pipeline_detail::format_g17(result.loss_history.front()) << '\n'
        << "final loss " << pipeline_detail::format_g17(final_loss) << '\n'
        << "checkpoint " << ckpt << '\n';
    return int{kExitOk};
  });
}

inline int cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    cfg.validate();
    const ModelParams p = load_compatible_checkpoint(cfg);
    const auto records = load_manifest(pipeline_detail::require_path(cfg.manifest, "manifest"));
    std::string text;
    for (const auto& row : predict_records(records, p, cfg)) text += prediction_to_json(row).dump() + "\n";
    pipeline_detail::emit(cfg.output, text, out);
    return int{kExitOk};
  });
}

inline int cmd_explain(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    cfg.validate();
    const auto predictions = load_predictions(pipeline_detail::require_path(cfg.predictions, "predictions"));
    const auto records = load_manifest(pipeline_detail::require_path(cfg.manifest, "manifest"));
    std::map<std::string, const MemeRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    const PromptTemplate tpl = template_from(cfg, "reasoning", default_reasoning_template());

    std::vector<RationaleRequest> requests;
    std::vector<std::string> missing;
    for (const auto& p : predictions) {
      const auto it = by_id.find(p.id);
      if (it == by_id.end()) {
        missing.push_back(p.id);
        continue;
      }
      const std::string summary = context_summary(meme_text(*it->second), p.category, p.salient);
      requests.push_back({build_reasoning_prompt(summary, p.label, p.category, tpl), p.label, p.category});
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
      throw ValidationError("predictions without manifest records: " + list);
    }

    const auto backend = make_backend(cfg);
    const auto results = generate_batch(requests, *backend, cfg.workers);
    std::string text;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      nlohmann::ordered_json j;
      j["id"] = predictions[i].id;
      if (results[i].ok()) {
        j["rationale"] = results[i].rationale;
      } else {
        j["error"] = results[i].error;
        ++failures;
        err << "warning: " << predictions[i].id << ": " << results[i].error << '\n';
      }
      text += j.dump() + "\n";
    }
    pipeline_detail::emit(cfg.output, text, out);
    if (failures > 0 && cfg.strict) {
      err << "error: " << failures << " rationale(s) failed under --strict\n";
      return int{kExitIo};
    }
    return int{kExitOk};
  });
}

struct EvaluationResult {
  MetricReport report;
  std::size_t evaluated = 0;
  std::size_t rationales_scored = 0;
};

/// Joins predictions, rationales and gold records by id and computes every metric.
inline EvaluationResult evaluate(const std::vector<PredictionRow>& predictions,
                                 const std::vector<std::pair<std::string, std::string>>& rationales,
                                 const std::vector<MemeRecord>& records,
                                 const std::map<std::string, std::string>& references, const EncoderParams& enc,
                                 const RunConfig& cfg) {
  std::map<std::string, const MemeRecord*> gold;
  for (const auto& r : records) gold[r.id] = &r;
  std::set<std::string> predicted;
  for (const auto& p : predictions) predicted.insert(p.id);
  std::set<std::string> explained;
  for (const auto& [id, text] : rationales) explained.insert(id);

  std::set<std::string> unmatched;
  for (const auto& p : predictions) {
    const auto it = gold.find(p.id);
    if (it == gold.end() || !it->second->misogyny_label) unmatched.insert(p.id);
    if (!explained.count(p.id)) unmatched.insert(p.id);
  }
  for (const auto& id : explained) {
    if (!predicted.count(id)) unmatched.insert(id);
  }
  if (!unmatched.empty()) {
    std::string list;
    for (const auto& id : unmatched) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("unmatched ids: " + list);
  }
  if (predictions.empty()) throw ValidationError("no predictions to evaluate");

  EvaluationResult r;
  r.report.setup = cfg.setup;
  r.report.model = cfg.model_name;
  std::vector<bool> pl, gl;
  std::vector<Category> pc, gc;
  for (const auto& p : predictions) {
    const MemeRecord& g = *gold.at(p.id);
    pl.push_back(p.label);
    gl.push_back(*g.misogyny_label);
    pc.push_back(p.category);
    gc.push_back(g.category);
  }
  r.evaluated = predictions.size();
  r.report.mmc_f1 = f1(pl, gl);
  r.report.macro_f1 = macro_f1(pc, gc);

  double rel = 0.0, coh = 0.0, read = 0.0, sem = 0.0;
  std::size_t rel_n = 0;
  for (const auto& [id, rationale] : rationales) {
    if (rationale.empty()) continue;
    const MemeRecord& g = *gold.at(id);
    const std::string text = meme_text(g);
    if (!split_words(text).empty()) {
      rel += relevance(rationale, text, enc);
      ++rel_n;
    }
    coh += coherence(rationale, enc);
    read += readability(rationale);
    const auto ref = references.find(id);
    sem += semsim(rationale, ref != references.end() ? ref->second : gold_reference(*g.misogyny_label, g.category),
                  enc);
    ++r.rationales_scored;
  }
  if (r.rationales_scored > 0) {
    const double n = static_cast<double>(r.rationales_scored);
    r.report.coherence = coh / n;
    r.report.readability = read / n;
    r.report.semsim = sem / n;
  }
  if (rel_n > 0) r.report.relevance = rel / static_cast<double>(rel_n);
  return r;
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    cfg.validate();
    const auto predictions = load_predictions(pipeline_detail::require_path(cfg.predictions, "predictions"));
    const auto records = load_manifest(pipeline_detail::require_path(cfg.manifest, "manifest"));
    std::vector<std::pair<std::string, std::string>> rationales;
    for (const auto& j : pipeline_detail::read_jsonl(pipeline_detail::require_path(cfg.rationales, "rationales"))) {
      const auto id = j.at("id").get<std::string>();
      const auto it = j.find("rationale");
      rationales.emplace_back(id, it == j.end() ? std::string() : it->get<std::string>());
    }
    std::map<std::string, std::string> references;
    if (!cfg.references.empty()) {
      for (const auto& j : pipeline_detail::read_jsonl(cfg.references))
        references[j.at("id").get<std::string>()] = j.at("rationale").get<std::string>();
    }
    const EncoderParams enc = cfg.checkpoint.empty()
                                  ? EncoderParams::initialize(cfg.model_shape().encoder, cfg.seed)
                                  : load_compatible_checkpoint(cfg).encoder;
    const EvaluationResult result = evaluate(predictions, rationales, records, references, enc, cfg);
    const std::vector<MetricReport> rows{result.report};
    std::string report = format_report(rows);
    report += "Macro category F1: " + fixed2(result.report.macro_f1) + "\n";
    report += "Evaluated " + std::to_string(result.evaluated) + " memes, " + std::to_string(result.rationales_scored) +
              " rationales.\n";
    report += std::string(kReportFooter) + "\n";
    out << report;
    if (!cfg.report_dir.empty()) {
      std::filesystem::create_directories(cfg.report_dir);
      pipeline_detail::emit((std::filesystem::path(cfg.report_dir) / "report.txt").string(), report, out);
      pipeline_detail::emit((std::filesystem::path(cfg.report_dir) / "report.csv").string(), format_report_csv(rows),
                            out);
    }
    return int{kExitOk};
  });
}

/// Detection prompts for the prompted (non-trained) path.
inline int cmd_prompts(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    cfg.validate();
    const auto records = load_manifest(pipeline_detail::require_path(cfg.manifest, "manifest"));
    const auto pool = cfg.fewshot.empty() ? default_fewshot_pool() : load_fewshot_pool(cfg.fewshot);
    const auto shots = select_shots(pool, cfg.shots);
    const PromptTemplate tpl = template_from(cfg, "detection", default_detection_template());
    std::string text;
    for (const auto& r : records) {
      nlohmann::ordered_json j;
      j["id"] = r.id;
      j["prompt"] = build_detection_prompt(r, shots, tpl);
      text += j.dump() + "\n";
    }
    pipeline_detail::emit(cfg.output, text, out);
    return int{kExitOk};
  });
}

/// Writes the planted toy corpus: all/train/test manifests plus MME1 patch files.
inline int cmd_make_toy(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    cfg.validate();
    const std::filesystem::path dir(pipeline_detail::require_path(cfg.out_dir, "out-dir"));
    PlantedConfig pc;
    pc.count = cfg.toy_count;
    pc.patch_dim = cfg.patch_dim;
    pc.seed = cfg.seed;
    pc.signal = cfg.toy_signal == "image_only" ? PlantedSignal::ImageOnly : PlantedSignal::TextAndImage;
    const auto memes = make_planted_dataset(pc);
    std::filesystem::create_directories(dir / "patches");
    std::vector<MemeRecord> records;
    for (const auto& m : memes) {
      write_file_bytes(dir / m.record.image_ref, encode_embedding(m.patches));
      records.push_back(m.record);
    }
    const SplitResult parts = split(records, cfg.seed, cfg.train_fraction);
    for (const auto& w : parts.warnings) err << "warning: " << w << '\n';
    save_manifest(dir / "all.jsonl", records);
    save_manifest(dir / "train.jsonl", parts.train);
    save_manifest(dir / "test.jsonl", parts.test);
    out << "wrote " << records.size() << " memes (" << parts.train.size() << " train, " << parts.test.size()
        << " test) to " << dir.string() << '\n';
    return int{kExitOk};
  });
}

/// Writes the placeholder manifest with the published per-category counts.
inline int cmd_make_wbms(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    std::ostringstream text;
    write_manifest(text, make_wbms_mirror());
    pipeline_detail::emit(cfg.output, text.str(), out);
    return int{kExitOk};
  });
}

}  // namespace memesift
