// mfcca/cli.hpp
//
// Command-line entry points. Every command works on files and exit codes:
// 0 success, 1 verification failure, 2 usage/config error. Each run writes
// its resolved configuration to <out_dir>/config_echo.ini.

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

#pragma once

#include <string>
#include <vector>

#include "mfcca/config.hpp"

namespace mfcca::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitConfigError = 2;

// Generates the synthetic corpus into <workdir>/<data_dir>.
int cmd_gen(const RunConfig& cfg, const std::string& workdir);

// Runs the gradient-oracle suite; writes a CSV report. inject_sign_flip
// names a primitive whose backward rule is negated (test hook).
int cmd_gradcheck(const RunConfig& cfg, const std::string& workdir,
                  const std::string& inject_sign_flip = "");

// Trains on <data_dir>/train.jsonl; writes checkpoint.json and loss_log.csv.
int cmd_train(const RunConfig& cfg, const std::string& workdir,
              const std::string& resume_checkpoint = "");

// Greedy-decodes <data_dir>/eval.jsonl at each requested channel count.
int cmd_eval(const RunConfig& cfg, const std::string& workdir, const std::string& checkpoint);

// Trains + evaluates once per context radius; writes a two-row table plus a
// per-radius details file.
int cmd_sweep_f(const RunConfig& cfg, const std::string& workdir,
                const std::vector<std::size_t>& f_list);

// Writes the attention distribution of every query (t, c) over the
// (2F+1)*C key axis for one utterance: a T*C x (2F+1)*C numeric grid plus a
// metadata sidecar carrying the utterance's injected delays. head is an
// index or "mean"; diagnostic replaces the checkpointed first layer with
// identity projections over the raw features.
int cmd_export_attention(const RunConfig& cfg, const std::string& workdir,
                         const std::string& checkpoint, const std::string& utterance_id,
                         std::size_t layer, const std::string& head, bool diagnostic);

// Full argv interface (subcommands: gen, gradcheck, train, eval, sweep-f,
// export-attention).
int run_cli(int argc, const char* const* argv);

}  // namespace mfcca::cli
