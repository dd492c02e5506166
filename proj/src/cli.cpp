#include "cattn/cli.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "cattn/analysis.hpp"
#include "cattn/checkpoint.hpp"
#include "cattn/errors.hpp"
#include "cattn/parsers.hpp"
#include "cattn/synth.hpp"
#include "cattn/trainer.hpp"

namespace cattn {

namespace {

// Pulls "--config FILE" out of the raw arguments and splices the file's
// key=value lines in as "--key=value" tokens right after the subcommand, so
// explicit flags (parsed later, TakeLast policy) win and unknown keys surface
// as ordinary unknown-option errors.
void print_error_record(const char* kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

std::vector<std::string> expand_config_args(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size();) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size())
        throw ConfigError("--config expects a file path");
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  if (config_path.empty()) return args;

  std::vector<std::string> expanded;
  std::istringstream in(read_file(config_path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(config_path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      std::size_t x = s.find_first_not_of(" \t\r");
      std::size_t y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string()
                                    : s.substr(x, y - x + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(config_path + ":" + std::to_string(line_no) +
                        ": empty key");
    expanded.push_back("--" + key + "=" + value);
  }
  // config tokens go directly after the subcommand name
  std::vector<std::string> out;
  std::size_t cursor = 0;
  if (!args.empty() && args[0].rfind("--", 0) != 0) {
    out.push_back(args[0]);
    cursor = 1;
  }
  out.insert(out.end(), expanded.begin(), expanded.end());
  out.insert(out.end(), args.begin() + static_cast<std::ptrdiff_t>(cursor),
             args.end());
  return out;
}

ParseResult load_corpus(const std::string& path, const std::string& format,
                        const std::string& name) {
  std::string content = read_file(path);
  ParseResult result;
  if (format == "dpr")
    result = parse_dpr(content, name);
  else if (format == "wsc-xml")
    result = parse_wsc_xml(content, name);
  else if (format == "winogrande")
    result = parse_winogrande_jsonl(content, name);
  else
    throw ConfigError("unknown corpus format \"" + format +
                      "\" (expected dpr, wsc-xml or winogrande)");
  if (result.record_errors > 0)
    std::cerr << "note: " << result.record_errors
              << " record(s) skipped while parsing " << path << "\n";
  return result;
}

// All tunables of one run, bound to CLI11 options; defaults follow the
// training setup the method was published with.
struct RunOptions {
  // model
  int layers = 3, heads = 4, model_dim = 64, ff_dim = 256, max_len = 64;
  std::uint64_t model_seed = 1;
  // loss
  double ca_weight = 1.0, cm_weight = 0.05, cm_margin = 0.02;
  int last_k = 3;
  std::string ca_form = "coherent";
  bool enable_ca = true, enable_cm = true;
  // training
  int epochs = 22, batch_pairs = 18, checkpoint_every = 0, ca_warmup = 0;
  double learning_rate = 1e-5, weight_decay = 0.0;
  double grad_clip = 0.0;  // 0 disables
  std::uint64_t train_seed = 1;
  bool from_scratch = false;

  void add_model_flags(CLI::App& cmd) {
    cmd.add_option("--layers", layers, "Encoder layer count")
        ->capture_default_str();
    cmd.add_option("--heads", heads, "Attention heads per layer")
        ->capture_default_str();
    cmd.add_option("--model-dim", model_dim, "Embedding width")
        ->capture_default_str();
    cmd.add_option("--ff-dim", ff_dim, "Feed-forward width")
        ->capture_default_str();
    cmd.add_option("--max-len", max_len, "Maximum sequence length")
        ->capture_default_str();
    cmd.add_option("--model-seed", model_seed, "Parameter init seed")
        ->capture_default_str();
  }

  void add_loss_flags(CLI::App& cmd) {
    cmd.add_option("--ca-weight", ca_weight,
                   "Binarization weight (lambda) of the attention loss")
        ->capture_default_str();
    cmd.add_option("--cm-weight", cm_weight,
                   "Margin loss weight (alpha)")
        ->capture_default_str();
    cmd.add_option("--cm-margin", cm_margin, "Margin offset (beta)")
        ->capture_default_str();
    cmd.add_option("--k", last_k,
                   "Last k layers entering the attention slice")
        ->capture_default_str();
    cmd.add_option("--ca-form", ca_form, "coherent or literal")
        ->check(CLI::IsMember({"coherent", "literal"}))
        ->capture_default_str();
    cmd.add_flag("--enable-ca,!--disable-ca", enable_ca,
                 "Attention-contrast term on/off")
        ->capture_default_str();
    cmd.add_flag("--enable-cm,!--disable-cm", enable_cm,
                 "Likelihood-margin term on/off")
        ->capture_default_str();
  }

  LossConfig loss_config() const {
    LossConfig cfg;
    cfg.ca_weight = ca_weight;
    cfg.cm_weight = cm_weight;
    cfg.cm_margin = cm_margin;
    cfg.last_k = last_k;
    cfg.ca_form = ca_form == "literal" ? CaForm::literal : CaForm::coherent;
    cfg.enable_ca = enable_ca;
    cfg.enable_cm = enable_cm;
    return cfg;
  }

  ModelConfig model_config() const {
    ModelConfig cfg;
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.model_dim = model_dim;
    cfg.ff_dim = ff_dim;
    cfg.max_len = max_len;
    cfg.vocab_size = 1;  // resolved from the corpus vocabulary
    cfg.seed = model_seed;
    return cfg;
  }

  TrainConfig train_config(const CLI::App& cmd) const {
    TrainConfig cfg;
    if (from_scratch) cfg = TrainConfig::from_scratch_defaults();
    cfg.epochs = epochs;
    cfg.batch_pairs = batch_pairs;
    cfg.checkpoint_every = checkpoint_every;
    cfg.seed = train_seed;
    cfg.loss = loss_config();
    if (!from_scratch || cmd.count("--learning-rate"))
      cfg.learning_rate = learning_rate;
    if (!from_scratch || cmd.count("--ca-warmup-epochs"))
      cfg.ca_warmup_epochs = ca_warmup;
    if (cmd.count("--weight-decay")) cfg.weight_decay = weight_decay;
    if (cmd.count("--grad-clip")) {
      if (grad_clip > 0.0)
        cfg.grad_clip = grad_clip;
      else
        cfg.grad_clip.reset();
    }
    return cfg;
  }

  nlohmann::ordered_json resolved_json(const TrainConfig& cfg) const {
    nlohmann::ordered_json j;
    j["layers"] = layers;
    j["heads"] = heads;
    j["model_dim"] = model_dim;
    j["ff_dim"] = ff_dim;
    j["max_len"] = max_len;
    j["model_seed"] = model_seed;
    j["epochs"] = cfg.epochs;
    j["batch_pairs"] = cfg.batch_pairs;
    j["learning_rate"] = cfg.learning_rate;
    j["weight_decay"] = cfg.weight_decay;
    j["grad_clip"] = cfg.grad_clip ? *cfg.grad_clip : 0.0;
    j["ca_warmup_epochs"] = cfg.ca_warmup_epochs;
    j["train_seed"] = cfg.seed;
    j["ca_weight"] = cfg.loss.ca_weight;
    j["cm_weight"] = cfg.loss.cm_weight;
    j["cm_margin"] = cfg.loss.cm_margin;
    j["k"] = cfg.loss.last_k;
    j["ca_form"] = cfg.loss.ca_form == CaForm::literal ? "literal" : "coherent";
    j["enable_ca"] = cfg.loss.enable_ca;
    j["enable_cm"] = cfg.loss.enable_cm;
    j["from_scratch"] = from_scratch;
    return j;
  }
};

int do_gen_synth(const std::string& spec_path, std::size_t pairs,
                 std::uint64_t seed, const std::string& out_path) {
  GeneratorSpec spec = spec_path.empty()
                           ? GeneratorSpec::builtin_default()
                           : parse_generator_spec(read_file(spec_path));
  Corpus corpus = generate_synthetic(spec, pairs, seed);
  write_file(out_path, serialize_dpr(corpus));
  std::cout << "wrote " << corpus.pairs.size() << " twin pairs to " << out_path
            << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"cattn: contrastive-attention laboratory for Winograd-style "
               "pronoun disambiguation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  auto with_config = [](CLI::App* cmd) {
    static std::string ignored;
    cmd->add_option("--config", ignored,
                    "Flat key=value config file; command-line flags take "
                    "precedence, unknown keys are rejected");
  };

  // gen-synth ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-synth",
                                 "Generate a synthetic twin-pair corpus");
  with_config(gen);
  std::string gen_spec, gen_out = "synth.dpr";
  std::size_t gen_pairs = 200;
  std::uint64_t gen_seed = 7;
  gen->add_option("--spec", gen_spec,
                  "Generator spec file (omit for the built-in lexicon)");
  gen->add_option("--pairs", gen_pairs, "Twin pairs to generate")
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output corpus file (dpr format)")
      ->capture_default_str();

  // train --------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Self-supervised training run");
  with_config(train);
  RunOptions opts;
  std::string train_path, eval_path, corpus_format = "dpr", out_dir = "run";
  train->add_option("--train", train_path, "Training corpus")->required();
  train->add_option("--eval", eval_path,
                    "Optional labeled corpus for per-epoch accuracy");
  train->add_option("--format", corpus_format,
                    "Corpus format: dpr, wsc-xml or winogrande")
      ->check(CLI::IsMember({"dpr", "wsc-xml", "winogrande"}))
      ->capture_default_str();
  train->add_option("--out", out_dir, "Output directory")
      ->capture_default_str();
  train->add_option("--epochs", opts.epochs, "Training epochs")
      ->capture_default_str();
  train->add_option("--batch-pairs", opts.batch_pairs,
                    "Twin pairs per optimizer step")
      ->capture_default_str();
  train->add_option("--learning-rate", opts.learning_rate,
                    "Adam learning rate")
      ->capture_default_str();
  train->add_option("--weight-decay", opts.weight_decay,
                    "Decoupled weight decay on matrices");
  train->add_option("--grad-clip", opts.grad_clip,
                    "Max global gradient norm (0 disables)");
  train->add_option("--ca-warmup-epochs", opts.ca_warmup,
                    "Epochs with the binarization weight at zero");
  train->add_option("--checkpoint-every", opts.checkpoint_every,
                    "Checkpoint every n epochs (0: final only)")
      ->capture_default_str();
  train->add_option("--seed", opts.train_seed, "Shuffle seed")
      ->capture_default_str();
  train->add_flag("--from-scratch", opts.from_scratch,
                  "Untrained-start preset: lr 3e-4, grad clip 1.0, "
                  "20 warm-up epochs");
  opts.add_model_flags(*train);
  opts.add_loss_flags(*train);

  // eval ---------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a checkpoint");
  with_config(eval_cmd);
  std::string ck_path, data_path, eval_format = "dpr", report_path;
  eval_cmd->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
  eval_cmd->add_option("--data", data_path, "Labeled corpus")->required();
  eval_cmd->add_option("--format", eval_format,
                       "Corpus format: dpr, wsc-xml or winogrande")
      ->check(CLI::IsMember({"dpr", "wsc-xml", "winogrande"}))
      ->capture_default_str();
  eval_cmd->add_option("--report", report_path,
                       "Write a JSON accuracy report here");

  // analyze -------------------------------------------------------------------
  auto* analyze_cmd =
      app.add_subcommand("analyze", "Attention-map statistics of a checkpoint");
  with_config(analyze_cmd);
  std::string an_ck, an_data, an_format = "dpr", an_out = "analysis.json",
              an_fmt = "json";
  int an_k = 3;
  analyze_cmd->add_option("--checkpoint", an_ck, "Checkpoint file")->required();
  analyze_cmd->add_option("--data", an_data, "Labeled corpus")->required();
  analyze_cmd->add_option("--format", an_format,
                          "Corpus format: dpr, wsc-xml or winogrande")
      ->check(CLI::IsMember({"dpr", "wsc-xml", "winogrande"}))
      ->capture_default_str();
  analyze_cmd->add_option("--k", an_k, "Last k layers (clamped to the model)")
      ->capture_default_str();
  analyze_cmd->add_option("--out", an_out, "Report path")
      ->capture_default_str();
  analyze_cmd->add_option("--report-format", an_fmt, "json or csv")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();

  std::vector<std::string> expanded;
  try {
    expanded = expand_config_args(args);
  } catch (const ConfigError& e) {
    print_error_record("config", e.what());
    return 1;
  } catch (const DataError& e) {
    print_error_record("data", e.what());
    return 1;
  }
  std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return do_gen_synth(gen_spec, gen_pairs, gen_seed, gen_out);

    if (train->parsed()) {
      ParseResult train_data = load_corpus(train_path, corpus_format, "train");
      if (train_data.corpus.pairs.empty())
        throw DataError("training corpus " + train_path + " has no twin pairs");
      ParseResult eval_data;
      bool have_eval = !eval_path.empty();
      if (have_eval) eval_data = load_corpus(eval_path, corpus_format, "eval");

      TrainConfig cfg = opts.train_config(*train);
      TrainResult result = run_training(
          opts.model_config(), cfg, train_data.corpus,
          have_eval ? &eval_data.corpus : nullptr, out_dir,
          opts.resolved_json(cfg).dump());
      std::cout << "checkpoint: " << result.checkpoint_path << "\n"
                << "metrics:    " << result.metrics_path << "\n";
      if (!result.history.empty()) {
        const EpochMetrics& last = result.history.back();
        std::cout << "final mean loss " << last.mean_loss;
        if (last.eval_accuracy)
          std::cout << ", eval accuracy " << *last.eval_accuracy;
        std::cout << "\n";
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      Checkpoint ck = load_checkpoint(ck_path);
      ParseResult data = load_corpus(data_path, eval_format, "eval");
      AccuracyResult acc =
          accuracy(ck.params, data.corpus, ck.vocab,
                   static_cast<std::size_t>(ck.params.config.max_len));
      std::cout << "accuracy " << acc.accuracy << " (" << acc.correct << "/"
                << acc.evaluated << ", ties " << acc.ties << ", unlabeled "
                << acc.skipped_unlabeled << ")\n";
      if (!report_path.empty()) {
        nlohmann::ordered_json j;
        j["dataset"] = data.corpus.name;
        j["evaluated"] = acc.evaluated;
        j["correct"] = acc.correct;
        j["accuracy"] = acc.accuracy;
        j["ties"] = acc.ties;
        j["skipped_unlabeled"] = acc.skipped_unlabeled;
        write_file(report_path, j.dump(2) + "\n");
      }
      return 0;
    }

    if (analyze_cmd->parsed()) {
      Checkpoint ck = load_checkpoint(an_ck);
      ParseResult data = load_corpus(an_data, an_format, "analyze");
      int k = an_k;
      if (k > ck.params.config.layers) {
        std::cerr << "warning: --k " << k << " exceeds the model's "
                  << ck.params.config.layers << " layers; clamping\n";
        k = ck.params.config.layers;
      }
      AnalysisReport report =
          analyze(ck.params, data.corpus, ck.vocab, k,
                  static_cast<std::size_t>(ck.params.config.max_len));
      emit_report(report, an_fmt, an_out);
      std::cout << "accuracy " << report.accuracy << ", mean gap (last-" << k
                << ") " << report.mean_gap_last_k << ", entropy gap (last-"
                << k << ") " << report.entropy_gap_last_k << "\n"
                << "report: " << an_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    print_error_record("config", e.what());
    return 1;
  } catch (const DataError& e) {
    print_error_record("data", e.what());
    return 2;
  } catch (const NumericError& e) {
    print_error_record("numeric", e.what());
    return 3;
  } catch (const ContractError& e) {
    print_error_record("contract", e.what());
    return 3;
  }
  return 1;
}

}  // namespace cattn
