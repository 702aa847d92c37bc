// tamer: command-line front end for the toolkit.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tamer/tamer.hpp"

namespace {

using namespace tamer;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

struct RunConfig {
  bool json_out = false;
  std::uint64_t seed = 7;

  // text tools
  std::string text;
  bool raw = false;
  bool spaced = false;
  std::string vocab_path;

  // gen / ingest
  std::size_t n = 1000;
  int max_depth = 2;
  bool bare_groups = false;
  std::string dir;
  std::string out;

  // train
  std::string corpus;
  std::string heldout;
  std::string log;
  int epochs = 30;
  std::size_t batch = 32;
  double lr = 2e-3;
  double lambda_struct = 1.0;
  ModelConfig model = ModelConfig::toy(0);
  bool no_tam = false;

  // decode / eval
  std::string checkpoint;
  std::size_t beam = 10;
  std::size_t max_len = 64;
  double lambda_rerank = 1.0;
  bool compare = false;
  bool no_length_norm = false;
};

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open " + path + " for writing");
  f << bytes;
  if (!f) fail(ErrorKind::IoError, "write to " + path + " failed");
}

VocabPtr text_vocab(const RunConfig& rc) { return rc.vocab_path.empty() ? Vocab::crohme() : Vocab::load(rc.vocab_path); }

std::vector<std::string> input_tokens(const RunConfig& rc) {
  return (rc.raw ? tokenize_raw(rc.text, text_vocab(rc)) : tokenize_spaced(rc.text, text_vocab(rc))).strings();
}

int cmd_tokenize(const RunConfig& rc) {
  auto seq = rc.spaced ? tokenize_spaced(rc.text, text_vocab(rc)) : tokenize_raw(rc.text, text_vocab(rc));
  if (rc.json_out)
    std::cout << json{{"tokens", seq.strings()}, {"ids", seq.ids()}}.dump() << "\n";
  else
    std::cout << detokenize(seq) << "\n";
  return kExitOk;
}

int cmd_treeify(const RunConfig& rc) {
  const auto tokens = input_tokens(rc);
  const ParentAnnotation ann = treeify(tokens);
  if (rc.json_out)
    std::cout << json{{"tokens", tokens}, {"parents", ann.parents}}.dump() << "\n";
  else
    std::cout << format_tuples(ann) << "\n";
  return kExitOk;
}

int cmd_complexity(const RunConfig& rc) {
  const auto tokens = input_tokens(rc);
  const int c = complexity_of(tokens);
  if (rc.json_out)
    std::cout << json{{"tokens", tokens}, {"complexity", c}}.dump() << "\n";
  else
    std::cout << c << "\n";
  return kExitOk;
}

int cmd_gen(const RunConfig& rc) {
  GrammarConfig g;
  g.seed = rc.seed;
  g.max_depth = rc.max_depth;
  g.bare_groups = rc.bare_groups;
  const auto records = generate(g, rc.n);
  write_jsonl(rc.out, records);
  if (rc.json_out) std::cout << json{{"records", records.size()}, {"out", rc.out}}.dump() << "\n";
  return kExitOk;
}

int cmd_ingest(const RunConfig& rc) {
  const auto records = ingest_directory(rc.dir, text_vocab(rc));
  write_jsonl(rc.out, records);
  if (rc.json_out) std::cout << json{{"records", records.size()}, {"out", rc.out}}.dump() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& rc) {
  keep_large_allocations_on_heap();
  const auto train_set = read_jsonl(rc.corpus);
  const auto held = rc.heldout.empty() ? std::vector<CorpusRecord>{} : read_jsonl(rc.heldout);
  TrainConfig cfg;
  cfg.model = rc.model;
  cfg.model.tam_enabled = !rc.no_tam;
  cfg.epochs = rc.epochs;
  cfg.batch_size = rc.batch;
  cfg.lr = rc.lr;
  cfg.lambda_struct = rc.lambda_struct;
  cfg.seed = rc.seed;
  std::string log = std::string(kTrainLogHeader) + "\n";
  auto result = train(cfg, train_set, held, corpus_vocab(train_set, held), [&](const EpochStats& s) {
    log += train_log_line(s) + "\n";
    if (rc.json_out) return;
    std::fprintf(stderr, "epoch %d  l_seq %.4f  l_struct %.4f  token_acc %.4f", s.epoch, s.l_seq, s.l_struct,
                 s.token_acc);
    if (s.heldout_parent_acc) std::fprintf(stderr, "  heldout_parent_acc %.4f", *s.heldout_parent_acc);
    std::fprintf(stderr, "  (%.1fs)\n", s.seconds);
  });
  nn::save_checkpoint(rc.out, training_checkpoint(result.model, cfg));
  if (!rc.log.empty()) write_file(rc.log, log);
  if (rc.json_out) {
    json epochs = json::array();
    for (const auto& s : result.history) {
      json e{{"epoch", s.epoch}, {"l_seq", s.l_seq}, {"l_struct", s.l_struct}, {"token_acc", s.token_acc}};
      if (s.parent_acc) e["parent_acc"] = *s.parent_acc;
      if (s.heldout_parent_acc) e["heldout_parent_acc"] = *s.heldout_parent_acc;
      epochs.push_back(e);
    }
    std::cout << json{{"checkpoint", rc.out}, {"epochs", epochs}}.dump() << "\n";
  }
  return kExitOk;
}

BeamConfig beam_config(const RunConfig& rc) {
  BeamConfig b;
  b.beam_width = rc.beam;
  b.max_len = rc.max_len;
  b.length_normalize = !rc.no_length_norm;
  b.allow_unfinished = true;  // corpus runs report a best effort instead of aborting
  return b;
}

int cmd_decode(const RunConfig& rc) {
  const ToyModel m = ToyModel::from_checkpoint(nn::load_checkpoint(rc.checkpoint));
  std::vector<CorpusRecord> records;
  if (!rc.corpus.empty())
    records = read_jsonl(rc.corpus);
  else
    records.push_back(make_record("text", input_tokens(rc)));
  const auto runs = run_beams(m, records, beam_config(rc), rc.seed);
  const auto preds = select(m, runs, rc.lambda_rerank, !rc.no_length_norm);
  const std::string lines = predictions_jsonl(preds);
  if (!rc.out.empty()) write_file(rc.out, lines);
  if (rc.json_out)
    std::cout << lines;
  else
    for (const auto& p : preds) std::cout << p.id << "\t" << join_tokens(p.tokens) << "\n";
  return kExitOk;
}

struct Arm {
  std::string name;
  double lambda;
  std::vector<Prediction> preds;
  EvalReport report;
};

int cmd_eval(const RunConfig& rc) {
  const ToyModel m = ToyModel::from_checkpoint(nn::load_checkpoint(rc.checkpoint));
  const auto refs = read_jsonl(rc.corpus);
  if (refs.empty()) fail(ErrorKind::EmptyCorpus, rc.corpus + " holds no records");
  std::filesystem::create_directories(rc.out);
  const auto runs = run_beams(m, refs, beam_config(rc), rc.seed);
  const auto parent_acc = reference_parent_accuracy(m, refs, rc.seed);

  std::vector<Arm> arms;
  if (rc.compare) {
    arms.push_back({"off", 0.0, {}, {}});
    arms.push_back({"on", rc.lambda_rerank, {}, {}});
  } else {
    arms.push_back({"", rc.lambda_rerank, {}, {}});
  }
  json out = json::object();
  for (auto& arm : arms) {
    arm.preds = select(m, runs, arm.lambda, !rc.no_length_norm);
    arm.report = evaluate_predictions(arm.preds, refs);
    arm.report.parent_accuracy = parent_acc;
    const std::string suffix = arm.name.empty() ? "" : "_" + arm.name;
    const auto base = std::filesystem::path(rc.out);
    json j = to_json(arm.report);
    j["lambda_rerank"] = arm.lambda;
    write_file((base / ("predictions" + suffix + ".jsonl")).string(), predictions_jsonl(arm.preds));
    write_file((base / ("report" + suffix + ".json")).string(), j.dump(2) + "\n");
    write_file((base / ("report" + suffix + ".csv")).string(), report_csv(arm.report));
    out[arm.name.empty() ? "report" : arm.name] = j;
  }
  if (rc.compare) {
    const std::string delta = delta_csv(arms[0].report, arms[1].report);
    write_file((std::filesystem::path(rc.out) / "delta.csv").string(), delta);
    if (!rc.json_out) std::cout << delta;
  } else if (!rc.json_out) {
    std::cout << report_csv(arms[0].report);
  }
  if (rc.json_out) std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc) {
  const SuiteSummary s = run_gradcheck_suite(rc.seed);
  if (rc.json_out) {
    json cases = json::array();
    for (const auto& r : s.results)
      cases.push_back({{"name", r.name},
                       {"tolerance", r.tolerance},
                       {"max_rel_error", r.report.max_rel_error},
                       {"pass", r.report.pass}});
    std::cout << json{{"pass", s.pass()}, {"model_seed", s.model_seed}, {"seconds", s.seconds}, {"cases", cases}}.dump()
              << "\n";
  } else {
    for (const auto& r : s.results)
      std::printf("%-4s %-22s max_rel_error %.3e  (tol %.0e)\n", r.report.pass ? "ok" : "FAIL", r.name.c_str(),
                  r.report.max_rel_error, r.tolerance);
    std::printf("%s in %.2fs (model fixture seed %llu)\n", s.pass() ? "pass" : "FAIL", s.seconds,
                static_cast<unsigned long long>(s.model_seed));
  }
  return s.pass() ? kExitOk : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig rc;
  CLI::App app{"Tree-aware expression recognition toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("--json", rc.json_out, "Machine-readable output on stdout");
  app.add_option("--seed", rc.seed, "Root seed for every random stream")->capture_default_str();

  auto text_cmd = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("text", rc.text, "Expression")->required();
    c->add_option("--vocab", rc.vocab_path, "Vocabulary file, one token per line");
    return c;
  };
  auto* tokenize = text_cmd("tokenize", "Split a LaTeX string into tokens");
  tokenize->add_flag("--spaced", rc.spaced, "Input is already space-separated");
  auto* treeify_cmd = text_cmd("treeify", "Parent annotation of a space-separated token string");
  treeify_cmd->add_flag("--raw", rc.raw, "Scan unspaced LaTeX first");
  auto* complexity = text_cmd("complexity", "Structural complexity of a space-separated token string");
  complexity->add_flag("--raw", rc.raw, "Scan unspaced LaTeX first");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--n", rc.n, "Number of records")->capture_default_str();
  gen->add_option("--max-depth", rc.max_depth, "Maximum construct nesting")->capture_default_str();
  gen->add_flag("--bare-groups", rc.bare_groups, "Also emit bare brace groups");
  gen->add_option("--out", rc.out, "Output JSONL")->required();

  auto* ingest = app.add_subcommand("ingest", "Read InkML files into a corpus");
  ingest->add_option("--dir", rc.dir, "Directory of .inkml files")->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", rc.out, "Output JSONL")->required();
  ingest->add_option("--vocab", rc.vocab_path, "Vocabulary file, one token per line");

  auto* train_cmd = app.add_subcommand("train", "Train the toy recognizer");
  train_cmd->add_option("--corpus", rc.corpus, "Training JSONL")->required();
  train_cmd->add_option("--heldout", rc.heldout, "Held-out JSONL for per-epoch accuracy");
  train_cmd->add_option("--out", rc.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", rc.log, "Per-epoch CSV log");
  train_cmd->add_option("--epochs", rc.epochs)->capture_default_str();
  train_cmd->add_option("--batch", rc.batch)->capture_default_str();
  train_cmd->add_option("--lr", rc.lr)->capture_default_str();
  train_cmd->add_option("--lambda-struct", rc.lambda_struct, "Weight of the structure loss")->capture_default_str();
  train_cmd->add_option("--d-model", rc.model.d_model)->capture_default_str();
  train_cmd->add_option("--heads", rc.model.heads)->capture_default_str();
  train_cmd->add_option("--d-ff", rc.model.d_ff)->capture_default_str();
  train_cmd->add_option("--layers", rc.model.decoder_layers, "Decoder layers")->capture_default_str();
  train_cmd->add_option("--tam-layers", rc.model.tam_encoder_layers)->capture_default_str();
  train_cmd->add_option("--max-len", rc.model.max_len)->capture_default_str();
  train_cmd->add_option("--noise", rc.model.noise_sigma, "Source observation noise")->capture_default_str();
  train_cmd->add_flag("--no-tam", rc.no_tam, "Build the model without the tree-aware module");

  auto decode_opts = [&](CLI::App* c) {
    c->add_option("--checkpoint", rc.checkpoint)->required()->check(CLI::ExistingFile);
    c->add_option("--beam", rc.beam, "Beam width")->capture_default_str();
    c->add_option("--max-len", rc.max_len, "Decoding steps")->capture_default_str();
    c->add_option("--lambda-rerank", rc.lambda_rerank, "Weight of the structure score")->capture_default_str();
    c->add_flag("--no-length-norm", rc.no_length_norm, "Rank by total log-probability");
  };
  auto* decode_cmd = app.add_subcommand("decode", "Beam search plus structure reranking");
  decode_opts(decode_cmd);
  auto* source = decode_cmd->add_option_group("source");
  source->add_option("--corpus", rc.corpus, "JSONL of expressions to observe and decode");
  source->add_option("--text", rc.text, "One space-separated expression");
  source->require_option(1);
  decode_cmd->add_option("--out", rc.out, "Predictions JSONL");

  auto* eval_cmd = app.add_subcommand("eval", "Decode a corpus and write bucketed reports");
  decode_opts(eval_cmd);
  eval_cmd->add_option("--corpus", rc.corpus, "Reference JSONL")->required();
  eval_cmd->add_option("--out", rc.out, "Report directory")->required();
  eval_cmd->add_flag("--compare", rc.compare, "Report with and without structure reranking, plus deltas");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every op and the full model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*tokenize) return cmd_tokenize(rc);
    if (*treeify_cmd) return cmd_treeify(rc);
    if (*complexity) return cmd_complexity(rc);
    if (*gen) return cmd_gen(rc);
    if (*ingest) return cmd_ingest(rc);
    if (*train_cmd) return cmd_train(rc);
    if (*decode_cmd) return cmd_decode(rc);
    if (*eval_cmd) return cmd_eval(rc);
    if (*gradcheck) return cmd_gradcheck(rc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::InvalidConfig ? kExitUsage : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
