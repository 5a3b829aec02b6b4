// mfcca/cli.cpp

// Copyright 2026  The mfcca authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mfcca/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfcca/gradcheck.hpp"
#include "mfcca/model.hpp"

namespace mfcca::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve(const std::string& workdir, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p.string();
  return (fs::path(workdir) / p).string();
}

std::string ensure_out_dir(const RunConfig& cfg, const std::string& workdir) {
  const std::string out = resolve(workdir, cfg.out_dir);
  fs::create_directories(out);
  return out;
}

void write_echo(const RunConfig& cfg, const std::string& out_dir) {
  std::ofstream echo(fs::path(out_dir) / "config_echo.ini");
  if (!echo) throw IoError("cannot write config echo under " + out_dir);
  echo << cfg.to_ini();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct LoadedData {
  std::vector<SimUtterance> records;
  Vocabulary vocab;
  std::size_t input_dim = 0;
};

LoadedData load_split(const RunConfig& cfg, const std::string& workdir, const char* file) {
  const std::string dir = resolve(workdir, cfg.data_dir);
  LoadedData data{load_records_jsonl((fs::path(dir) / file).string()),
                  Vocabulary::load((fs::path(dir) / "vocab.txt").string()), 0};
  if (data.records.empty()) throw ConfigError(std::string("dataset ") + file + " is empty");
  data.input_dim = data.records[0].features.dim(2);
  return data;
}

void write_loss_log(const std::string& path, const std::vector<EpochStats>& stats) {
  std::ofstream log(path);
  if (!log) throw IoError("cannot write " + path);
  log << "epoch,loss,token_accuracy\n";
  for (const EpochStats& s : stats) {
    log << s.epoch << ',' << fmt_double(s.loss) << ',' << fmt_double(s.token_accuracy) << '\n';
  }
}

// clears the fault-injection hook even on exceptions
struct SignFlipGuard {
  explicit SignFlipGuard(const std::string& op) { mfcca::testing::set_backward_sign_flip(op); }
  ~SignFlipGuard() { mfcca::testing::set_backward_sign_flip(""); }
};

}  // namespace

int cmd_gen(const RunConfig& cfg, const std::string& workdir) {
  const std::string out = ensure_out_dir(cfg, workdir);
  write_echo(cfg, out);
  const std::string data_dir = resolve(workdir, cfg.data_dir);
  make_corpus(cfg.corpus_spec(), data_dir, cfg.jobs);
  std::cout << "gen: wrote " << cfg.gen.train_count << " train / " << cfg.gen.eval_count
            << " eval records to " << data_dir << "\n";
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& workdir,
                  const std::string& inject_sign_flip) {
  const std::string out = ensure_out_dir(cfg, workdir);
  write_echo(cfg, out);
  std::vector<GradCheckRow> rows;
  {
    SignFlipGuard guard(inject_sign_flip);
    rows = run_gradcheck_suite(cfg.seed);
  }
  const std::string report_path = (fs::path(out) / "gradcheck_report.csv").string();
  std::ofstream report(report_path);
  if (!report) throw IoError("cannot write " + report_path);
  report << "target,max_rel_err,threshold,status\n";
  std::vector<std::string> failures;
  for (const GradCheckRow& row : rows) {
    report << row.target << ',' << fmt_double(row.max_rel_err) << ','
           << fmt_double(kGradCheckTolerance) << ',' << (row.pass ? "ok" : "fail") << '\n';
    if (!row.pass) failures.push_back(row.target);
  }
  if (!failures.empty()) {
    std::cerr << "gradcheck: FAILED targets:";
    for (const std::string& f : failures) std::cerr << ' ' << f;
    std::cerr << "\n";
    return kExitVerifyFailed;
  }
  std::cout << "gradcheck: " << rows.size() << " targets ok, report at " << report_path << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& workdir,
              const std::string& resume_checkpoint) {
  const std::string out = ensure_out_dir(cfg, workdir);
  write_echo(cfg, out);
  LoadedData data = load_split(cfg, workdir, "train.jsonl");
  const ModelConfig model_cfg = cfg.model_config(data.input_dim, data.vocab.size());

  ParamStore store;
  TrainOptions opts = cfg.train_options();
  if (!resume_checkpoint.empty()) {
    auto [loaded, epoch] = load_checkpoint(resolve(workdir, resume_checkpoint));
    store = std::move(loaded);
    opts.start_epoch = epoch;
  } else {
    init_model_params(store, model_cfg, cfg.seed);
  }

  std::vector<EpochStats> stats = train_model(store, model_cfg, data.records, data.vocab, opts);
  write_loss_log((fs::path(out) / "loss_log.csv").string(), stats);
  const std::size_t end_epoch = stats.empty() ? opts.start_epoch : stats.back().epoch + 1;
  save_checkpoint((fs::path(out) / "checkpoint.json").string(), store, end_epoch);
  if (!stats.empty()) {
    std::cout << "train: " << stats.size() << " epochs, final loss "
              << fmt_double(stats.back().loss) << ", token accuracy "
              << fmt_double(stats.back().token_accuracy) << "\n";
  } else {
    std::cout << "train: no epochs requested, checkpoint equals initialization\n";
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& workdir, const std::string& checkpoint) {
  const std::string out = ensure_out_dir(cfg, workdir);
  write_echo(cfg, out);
  LoadedData data = load_split(cfg, workdir, "eval.jsonl");
  const ModelConfig model_cfg = cfg.model_config(data.input_dim, data.vocab.size());
  auto [store, epoch] = load_checkpoint(resolve(workdir, checkpoint));
  (void)epoch;

  const std::string metrics_path = (fs::path(out) / "metrics.csv").string();
  std::ofstream metrics(metrics_path);
  if (!metrics) throw IoError("cannot write " + metrics_path);
  metrics << "channels,cer,utterances,ref_tokens,edit_errors\n";
  for (std::size_t k : cfg.channel_counts) {
    EvalResult r = evaluate_model(store, model_cfg, data.records, data.vocab, k,
                                  cfg.max_decode_len, cfg.keep_sc, cfg.jobs);
    metrics << r.channels << ',' << fmt_double(r.cer) << ',' << r.utterances << ','
            << r.ref_tokens << ',' << r.edit_errors << '\n';
    std::cout << "eval: " << k << "-ch CER " << fmt_double(r.cer) << "\n";
  }
  return kExitOk;
}

int cmd_sweep_f(const RunConfig& cfg, const std::string& workdir,
                const std::vector<std::size_t>& f_list) {
  if (f_list.empty()) throw ConfigError("sweep-f: empty radius list");
  const std::string out = ensure_out_dir(cfg, workdir);
  write_echo(cfg, out);
  LoadedData train = load_split(cfg, workdir, "train.jsonl");
  LoadedData eval = load_split(cfg, workdir, "eval.jsonl");
  const std::size_t channels = eval.records[0].features.dim(0);

  std::vector<double> cers;
  std::vector<std::size_t> widths;
  std::vector<EpochStats> finals;
  for (std::size_t f : f_list) {
    RunConfig run = cfg;
    run.context_radius = f;
    const ModelConfig model_cfg = run.model_config(train.input_dim, train.vocab.size());
    ParamStore store;
    init_model_params(store, model_cfg, cfg.seed);
    std::vector<EpochStats> stats =
        train_model(store, model_cfg, train.records, train.vocab, run.train_options());
    EvalResult r = evaluate_model(store, model_cfg, eval.records, eval.vocab, channels,
                                  cfg.max_decode_len, cfg.keep_sc, cfg.jobs);
    std::vector<AttentionTrace> traces;
    encode_memory(store, model_cfg, eval.records[0].features, &traces);
    widths.push_back(traces.front().weights.shape().back());
    cers.push_back(r.cer);
    finals.push_back(stats.empty() ? EpochStats{} : stats.back());
    std::cout << "sweep-f: F=" << f << " eval CER " << fmt_double(r.cer) << " key width "
              << widths.back() << "\n";
  }

  // two-row table: radii, then CER per radius
  const std::string table_path = (fs::path(out) / "sweep_table.csv").string();
  std::ofstream table(table_path);
  if (!table) throw IoError("cannot write " + table_path);
  table << "F";
  for (std::size_t f : f_list) table << ',' << f;
  table << "\neval_cer";
  for (double c : cers) table << ',' << fmt_double(c);
  table << '\n';

  std::ofstream details(fs::path(out) / "sweep_details.csv");
  details << "F,key_width,train_loss,train_token_accuracy,eval_cer\n";
  for (std::size_t i = 0; i < f_list.size(); ++i) {
    details << f_list[i] << ',' << widths[i] << ',' << fmt_double(finals[i].loss) << ','
            << fmt_double(finals[i].token_accuracy) << ',' << fmt_double(cers[i]) << '\n';
  }
  return kExitOk;
}

int cmd_export_attention(const RunConfig& cfg, const std::string& workdir,
                         const std::string& checkpoint, const std::string& utterance_id,
                         std::size_t layer, const std::string& head, bool diagnostic) {
  const std::string out = ensure_out_dir(cfg, workdir);
  write_echo(cfg, out);

  // find the utterance: eval split first, then train
  SimUtterance utt;
  bool found = false;
  for (const char* file : {"eval.jsonl", "train.jsonl"}) {
    const std::string path = resolve(workdir, cfg.data_dir) + "/" + file;
    if (!fs::exists(path)) continue;
    for (SimUtterance& r : load_records_jsonl(path)) {
      if (utterance_id.empty() || r.id == utterance_id) {
        utt = std::move(r);
        found = true;
        break;
      }
    }
    if (found) break;
  }
  if (!found) throw ConfigError("export-attention: utterance '" + utterance_id + "' not found");

  const std::size_t channels = utt.features.dim(0);
  const std::size_t frames = utt.features.dim(1);

  AttentionTrace trace;
  std::size_t used_layer = layer;
  if (diagnostic) {
    // identity projections over raw features, first-layer equivalent
    Graph g;
    AttentionParams p = identity_attention_params(g, utt.features.dim(2));
    auto [ignored, tr] =
        mfcca::mfcca(g.leaf(utt.features, false), p, ContextConfig{cfg.context_radius});
    (void)ignored;
    trace = std::move(tr);
    used_layer = 0;
  } else {
    if (checkpoint.empty()) throw ConfigError("export-attention: need --checkpoint or --diagnostic");
    const std::string dir = resolve(workdir, cfg.data_dir);
    Vocabulary vocab = Vocabulary::load((fs::path(dir) / "vocab.txt").string());
    const ModelConfig model_cfg = cfg.model_config(utt.features.dim(2), vocab.size());
    auto [store, epoch] = load_checkpoint(resolve(workdir, checkpoint));
    (void)epoch;
    std::vector<AttentionTrace> traces;
    encode_memory(store, model_cfg, utt.features, &traces);
    if (layer >= traces.size()) {
      throw ConfigError("export-attention: layer " + std::to_string(layer) + " beyond " +
                        std::to_string(traces.size()) + " encoder layers");
    }
    trace = std::move(traces[layer]);
  }

  const std::size_t heads = trace.weights.dim(0);
  const std::size_t width = trace.weights.shape().back();
  std::size_t head_index = 0;
  bool mean_heads = false;
  if (head == "mean") {
    mean_heads = true;
  } else {
    try {
      head_index = static_cast<std::size_t>(std::stoul(head));
    } catch (const std::exception&) {
      throw ConfigError("export-attention: head must be an index or 'mean'");
    }
    if (head_index >= heads) {
      throw ConfigError("export-attention: head " + std::to_string(head_index) + " beyond " +
                        std::to_string(heads));
    }
  }

  // matrix: rows are queries (t, c) in t-major order, columns the key axis
  const std::string tag = utt.id + (diagnostic ? "_diagnostic" : "_layer" +
                                    std::to_string(used_layer));
  const std::string matrix_path = (fs::path(out) / ("attention_" + tag + ".csv")).string();
  std::ofstream matrix(matrix_path);
  if (!matrix) throw IoError("cannot write " + matrix_path);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t w = 0; w < width; ++w) {
        double v = 0.0;
        if (mean_heads) {
          for (std::size_t h = 0; h < heads; ++h) v += trace.weights(h, t, c, w);
          v /= static_cast<double>(heads);
        } else {
          v = trace.weights(head_index, t, c, w);
        }
        matrix << (w ? "," : "") << fmt_double(v);
      }
      matrix << '\n';
    }
  }

  json meta;
  meta["utterance"] = utt.id;
  meta["matrix_file"] = fs::path(matrix_path).filename().string();
  meta["diagnostic"] = diagnostic;
  meta["layer"] = used_layer;
  meta["head"] = head;
  meta["channels"] = channels;
  meta["frames"] = frames;
  meta["context_radius"] = cfg.context_radius;
  meta["key_axis"] = "offset-major: key index = (offset + F) * C + channel";
  meta["rows"] = "query index = t * C + c";
  meta["delays"] = utt.delays;
  std::ofstream meta_out(fs::path(out) / ("attention_" + tag + ".meta.json"));
  meta_out << meta.dump(2) << '\n';

  std::cout << "export-attention: wrote " << frames * channels << " x " << width << " matrix to "
            << matrix_path << "\n";
  return kExitOk;
}

namespace {

// flags shared by all subcommands, folded into the config override list
struct CommonFlags {
  std::string config;
  std::string workdir = ".";
  std::vector<std::string> sets;  // raw section.key=value overrides
  std::string seed, out_dir, data_dir, jobs, preset;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "configuration file (key = value sections)");
    cmd->add_option("--workdir", workdir, "base directory for relative paths");
    cmd->add_option("--set", sets, "override as section.key=value")->take_all();
    cmd->add_option("--seed", seed, "run seed (also via MFCCA_SEED)");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--data", data_dir, "dataset directory");
    cmd->add_option("--jobs", jobs, "parallel workers for per-utterance work");
    cmd->add_option("--preset", preset, "model preset: desk or paper");
  }

  RunConfig resolve_with(std::vector<ConfigEntry> extra) const {
    std::vector<ConfigEntry> overrides;
    if (!preset.empty()) overrides.push_back({"run", "preset", preset});
    if (!seed.empty()) overrides.push_back({"run", "seed", seed});
    if (!out_dir.empty()) overrides.push_back({"run", "out_dir", out_dir});
    if (!data_dir.empty()) overrides.push_back({"run", "data_dir", data_dir});
    if (!jobs.empty()) overrides.push_back({"run", "jobs", jobs});
    for (const std::string& s : sets) {
      const std::size_t eq = s.find('=');
      const std::size_t dot = s.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("--set expects section.key=value, got '" + s + "'");
      }
      overrides.push_back({s.substr(0, dot), s.substr(dot + 1, eq - dot - 1),
                           s.substr(eq + 1)});
    }
    for (ConfigEntry& e : extra) overrides.push_back(std::move(e));
    return resolve_config(config, overrides);
  }
};

void push_if(std::vector<ConfigEntry>& out, const std::string& section, const std::string& key,
             const std::string& value) {
  if (!value.empty()) out.push_back({section, key, value});
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"multi-frame cross-channel attention toolkit"};
  app.require_subcommand(1);

  CommonFlags gen_flags, grad_flags, train_flags, eval_flags, sweep_flags, export_flags;

  // gen
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic multi-channel corpus");
  gen_flags.attach(gen);
  std::string g_train, g_eval, g_speakers, g_channels, g_vocab, g_sigma, g_fpm;
  gen->add_option("--train-utterances", g_train, "");
  gen->add_option("--eval-utterances", g_eval, "");
  gen->add_option("--speakers", g_speakers, "speakers per utterance (1..4)");
  gen->add_option("--channels", g_channels, "microphones / feature channels");
  gen->add_option("--vocab-size", g_vocab, "");
  gen->add_option("--noise-sigma", g_sigma, "");
  gen->add_option("--frames-per-meter", g_fpm, "delay exaggeration");

  // gradcheck
  CLI::App* grad = app.add_subcommand("gradcheck", "verify every backward rule against finite differences");
  grad_flags.attach(grad);
  std::string inject;
  grad->add_option("--inject-backward-sign-flip", inject,
                   "test hook: negate one primitive's backward rule");

  // train
  CLI::App* train = app.add_subcommand("train", "train the desk-scale model");
  train_flags.attach(train);
  std::string t_epochs, t_step, t_warmup, t_mask, t_stop, t_f, resume;
  train->add_option("--epochs", t_epochs, "");
  train->add_option("--step-size", t_step, "");
  train->add_option("--warmup-steps", t_warmup, "");
  train->add_option("--mask-prob", t_mask, "channel masking probability");
  train->add_option("--stop-token-acc", t_stop, "early-stop threshold on token accuracy");
  train->add_option("--f", t_f, "context radius F");
  train->add_option("--resume", resume, "checkpoint to continue from");

  // eval
  CLI::App* eval = app.add_subcommand("eval", "greedy-decode the eval split per channel count");
  eval_flags.attach(eval);
  std::string e_counts, e_maxlen, e_keepsc, e_ckpt, e_f;
  eval->add_option("--channels-list", e_counts, "comma list of channel counts");
  eval->add_option("--max-decode-len", e_maxlen, "");
  eval->add_option("--keep-sc", e_keepsc, "true|false: keep <sc> in scoring");
  eval->add_option("--checkpoint", e_ckpt, "")->required();
  eval->add_option("--f", e_f, "context radius F");

  // sweep-f
  CLI::App* sweep = app.add_subcommand("sweep-f", "train+eval once per context radius");
  sweep_flags.attach(sweep);
  std::string s_list = "0,1,2,3,4", s_epochs, s_step;
  sweep->add_option("--f-list", s_list, "comma list of radii (default 0,1,2,3,4)");
  sweep->add_option("--epochs", s_epochs, "");
  sweep->add_option("--step-size", s_step, "");

  // export-attention
  CLI::App* exp = app.add_subcommand("export-attention",
                                     "write one utterance's attention distributions");
  export_flags.attach(exp);
  std::string x_ckpt, x_utt, x_layer = "0", x_head = "mean", x_f;
  bool x_diag = false;
  exp->add_option("--checkpoint", x_ckpt, "");
  exp->add_option("--utterance", x_utt, "record id (default: first eval record)");
  exp->add_option("--layer", x_layer, "encoder layer (default first, as the analysis uses)");
  exp->add_option("--head", x_head, "head index or 'mean'");
  exp->add_option("--f", x_f, "context radius F");
  exp->add_flag("--diagnostic", x_diag, "identity projections over raw features");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (gen->parsed()) {
      std::vector<ConfigEntry> extra;
      push_if(extra, "gen", "train_utterances", g_train);
      push_if(extra, "gen", "eval_utterances", g_eval);
      push_if(extra, "gen", "speakers", g_speakers);
      push_if(extra, "gen", "channels", g_channels);
      push_if(extra, "gen", "vocab_size", g_vocab);
      push_if(extra, "gen", "noise_sigma", g_sigma);
      push_if(extra, "gen", "frames_per_meter", g_fpm);
      return cmd_gen(gen_flags.resolve_with(std::move(extra)), gen_flags.workdir);
    }
    if (grad->parsed()) {
      return cmd_gradcheck(grad_flags.resolve_with({}), grad_flags.workdir, inject);
    }
    if (train->parsed()) {
      std::vector<ConfigEntry> extra;
      push_if(extra, "train", "epochs", t_epochs);
      push_if(extra, "train", "step_size", t_step);
      push_if(extra, "train", "warmup_steps", t_warmup);
      push_if(extra, "train", "mask_prob", t_mask);
      push_if(extra, "train", "stop_token_accuracy", t_stop);
      push_if(extra, "model", "context_radius", t_f);
      return cmd_train(train_flags.resolve_with(std::move(extra)), train_flags.workdir, resume);
    }
    if (eval->parsed()) {
      std::vector<ConfigEntry> extra;
      push_if(extra, "eval", "channel_counts", e_counts);
      push_if(extra, "eval", "max_decode_len", e_maxlen);
      push_if(extra, "eval", "keep_sc", e_keepsc);
      push_if(extra, "model", "context_radius", e_f);
      return cmd_eval(eval_flags.resolve_with(std::move(extra)), eval_flags.workdir, e_ckpt);
    }
    if (sweep->parsed()) {
      std::vector<ConfigEntry> extra;
      push_if(extra, "train", "epochs", s_epochs);
      push_if(extra, "train", "step_size", s_step);
      RunConfig cfg = sweep_flags.resolve_with(std::move(extra));
      // reuse the list parser for the radii
      RunConfig listcfg = cfg;
      listcfg.apply("eval", "channel_counts", s_list);
      return cmd_sweep_f(cfg, sweep_flags.workdir, listcfg.channel_counts);
    }
    if (exp->parsed()) {
      std::vector<ConfigEntry> extra;
      push_if(extra, "model", "context_radius", x_f);
      RunConfig cfg = export_flags.resolve_with(std::move(extra));
      std::size_t layer = 0;
      try {
        layer = static_cast<std::size_t>(std::stoul(x_layer));
      } catch (const std::exception&) {
        throw ConfigError("export-attention: bad --layer '" + x_layer + "'");
      }
      return cmd_export_attention(cfg, export_flags.workdir, x_ckpt, x_utt, layer, x_head,
                                  x_diag);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const VocabularyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitVerifyFailed;
  }
  return kExitConfigError;
}

}  // namespace mfcca::cli
