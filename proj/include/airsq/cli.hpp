// Copyright 2026 The AIRSQ Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "airsq/anchors.hpp"
#include "airsq/checkpoint.hpp"
#include "airsq/common.hpp"
#include "airsq/metrics.hpp"
#include "airsq/model.hpp"
#include "airsq/prediction_io.hpp"
#include "airsq/raster.hpp"
#include "airsq/scenario_io.hpp"
#include "airsq/spline.hpp"
#include "airsq/synth.hpp"
#include "airsq/train.hpp"

namespace airsq::cli {

namespace fs = std::filesystem;

// Exit codes by error class.
inline int exit_code(std::string_view code) {
  if (code == "usage_error") return 2;
  if (code == errc::kParse) return 3;
  if (code == errc::kInvariant) return 4;
  if (code == errc::kInvalidArgument) return 5;
  if (code == errc::kIo) return 6;
  if (code == errc::kNumerical) return 7;
  if (code == errc::kUndefined) return 8;
  return 1;
}

inline void report_error(std::ostream& err, std::string_view code, const std::string& message) {
  err << nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
}

// Every option's default can come from --config FILE; flags given on the
// command line win.
struct RunConfig {
  std::uint64_t seed = 0;
  bool json = false;
  bool quiet = false;

  // synth
  std::size_t n = 100;
  SynthConfig synth;
  // filter
  double max_step = kDefaultMaxStep;
  // cluster
  AnchorConfig anchors;
  // model / train
  ModelConfig model;
  TrainConfig train;
  std::size_t log_every = 50;
  // eval / sensitivity
  MapConfig map;
  double alpha = 0.1;

  // paths
  std::string in, out, anchors_dir, checkpoint, init, curve, pred, gt, map_config, rerasterize;
  std::vector<std::string> preds;
  std::size_t scenario = 0;
  int agent = 0;
  bool independent = false;
  std::string representation = "rerasterized";
};

inline void apply_config(const nlohmann::json& j, RunConfig& c) {
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      c.n = s.value("n", c.n);
      c.synth.go_prob = s.value("go_prob", c.synth.go_prob);
      c.synth.mixed_prob = s.value("mixed_prob", c.synth.mixed_prob);
      c.synth.sdc_prob = s.value("sdc_prob", c.synth.sdc_prob);
      c.synth.dropout_prob = s.value("dropout_prob", c.synth.dropout_prob);
      c.synth.corrupt_prob = s.value("corrupt_prob", c.synth.corrupt_prob);
      c.synth.max_context_agents = s.value("max_context_agents", c.synth.max_context_agents);
      if (s.contains("type_weights")) c.synth.type_weights = s.at("type_weights").get<std::array<double, 3>>();
    }
    c.max_step = j.value("max_step", c.max_step);
    if (j.contains("cluster")) {
      const auto& s = j.at("cluster");
      c.anchors.k[0] = s.value("k_vehicle", c.anchors.k[0]);
      c.anchors.k[1] = s.value("k_pedestrian", c.anchors.k[1]);
      c.anchors.k[2] = s.value("k_cyclist", c.anchors.k[2]);
      c.anchors.iters = s.value("iters", c.anchors.iters);
      c.anchors.restarts = s.value("restarts", c.anchors.restarts);
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    if (j.contains("loss")) {
      const auto& s = j.at("loss");
      c.train.weights.w_cls = s.value("w_cls", c.train.weights.w_cls);
      c.train.weights.w_reg = s.value("w_reg", c.train.weights.w_reg);
      c.train.weights.w_m = s.value("w_m", c.train.weights.w_m);
    }
    if (j.contains("train")) {
      const auto& s = j.at("train");
      c.train.optimizer.lr = s.value("lr", c.train.optimizer.lr);
      c.train.optimizer.batch_size = s.value("batch_size", c.train.optimizer.batch_size);
      c.train.marginal_steps = s.value("marginal_steps", c.train.marginal_steps);
      c.train.joint_steps = s.value("joint_steps", c.train.joint_steps);
      c.train.freeze_marginal = s.value("freeze_marginal", c.train.freeze_marginal);
      c.train.balanced = s.value("balanced", c.train.balanced);
      c.representation = s.value("representation", c.representation);
      c.log_every = s.value("log_every", c.log_every);
    }
    if (j.contains("map")) c.map = map_config_from_json(j.at("map"));
    c.alpha = j.value("alpha", c.alpha);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, std::string("config: ") + e.what());
  }
}

namespace detail {

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw Error(errc::kInvalidArgument, what + " path is required");
  if (!fs::exists(path)) throw Error(errc::kIo, "missing " + what + ": " + path);
}

inline std::optional<std::string> find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

inline nlohmann::json parse_json_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::kParse, what + " " + path + ": " + e.what());
  }
}

inline std::vector<GroundTruth> truths_for(std::span<const Scenario> scenarios, const std::optional<AnchorLibrary>& lib) {
  std::vector<GroundTruth> out;
  for (const Scenario& s : scenarios) {
    GroundTruth g{s.pair_agent(0).future, s.pair_agent(1).future, {}};
    if (lib) g.assignment = assign_pair(s, *lib);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace detail

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args) {
    std::string active;
    try {
      if (auto path = detail::find_config(args)) apply_config(detail::parse_json_file(*path, "config"), c_);
      CLI::App app{"airsq: anchored joint interaction prediction"};
      build(app);
      std::vector<std::string> rev(args.rbegin(), args.rend());
      try {
        app.parse(rev);
      } catch (const CLI::CallForHelp&) {
        out_ << app.help();
        return 0;
      } catch (const CLI::CallForAllHelp&) {
        out_ << app.help("", CLI::AppFormatMode::All);
        return 0;
      } catch (const CLI::ParseError& e) {
        err_ << app.help();
        report_error(err_, "usage_error", e.what());
        return exit_code("usage_error");
      }
      for (CLI::App* sub : app.get_subcommands()) active = sub->get_name();
      dispatch(active);
      return 0;
    } catch (const Error& e) {
      report_error(err_, e.code(), active.empty() ? e.what() : active + ": " + e.what());
      return exit_code(e.code());
    } catch (const std::exception& e) {
      report_error(err_, "internal_error", e.what());
      return 1;
    }
  }

 private:
  void build(CLI::App& app) {
    app.require_subcommand(1);
    app.add_option("--config", config_path_, "JSON config; command-line flags override it");
    app.add_option("--seed", c_.seed, "root seed");
    app.add_flag("--json", c_.json, "print reports as JSON on stdout");
    app.add_flag("--quiet", c_.quiet, "no progress on stderr");
    app.fallthrough();

    auto* synth = app.add_subcommand("synth", "generate synthetic crossing-path scenarios");
    synth->add_option("--n", c_.n, "scenario count");
    synth->add_option("--out", c_.out, "output JSONL")->required();
    synth->add_option("--go-prob", c_.synth.go_prob);
    synth->add_option("--mixed-prob", c_.synth.mixed_prob);
    synth->add_option("--sdc-prob", c_.synth.sdc_prob);
    synth->add_option("--dropout-prob", c_.synth.dropout_prob);
    synth->add_option("--corrupt-prob", c_.synth.corrupt_prob);

    auto* filter = app.add_subcommand("filter", "drop scenarios whose pair futures contain impossible jumps");
    filter->add_option("--max-step", c_.max_step, "meters per step");
    filter->add_option("--in", c_.in)->required();
    filter->add_option("--out", c_.out)->required();

    auto* cluster = app.add_subcommand("cluster", "fit per-type anchor sets");
    cluster->add_option("--in", c_.in)->required();
    cluster->add_option("--out", c_.out, "output directory")->required();
    cluster->add_option("--k-vehicle", c_.anchors.k[0]);
    cluster->add_option("--k-ped", c_.anchors.k[1]);
    cluster->add_option("--k-cyc", c_.anchors.k[2]);
    cluster->add_option("--iters", c_.anchors.iters);
    cluster->add_option("--restarts", c_.anchors.restarts);
    cluster->add_option("--max-step", c_.max_step);

    auto* train = app.add_subcommand("train", "train the marginal and joint model");
    train->add_option("--in", c_.in)->required();
    train->add_option("--anchors", c_.anchors_dir)->required();
    train->add_option("--out", c_.out, "checkpoint path")->required();
    train->add_option("--init", c_.init, "start from this checkpoint");
    train->add_option("--curve", c_.curve, "loss curve CSV");
    train->add_option("--marginal-steps", c_.train.marginal_steps);
    train->add_option("--joint-steps", c_.train.joint_steps);
    train->add_option("--batch-size", c_.train.optimizer.batch_size);
    train->add_option("--lr", c_.train.optimizer.lr);
    train->add_option("--downscale", c_.model.downscale);
    add_loss_flags(*train);
    train->add_flag("--freeze-marginal", c_.train.freeze_marginal);
    train->add_flag("--balanced", c_.train.balanced, "type-balanced batches");
    train->add_option("--representation", c_.representation)->check(CLI::IsMember({"plain", "rerasterized"}));
    train->add_option("--log-every", c_.log_every);

    auto* predict = app.add_subcommand("predict", "run a checkpoint over scenarios");
    predict->add_option("--in", c_.in)->required();
    predict->add_option("--anchors", c_.anchors_dir)->required();
    predict->add_option("--checkpoint", c_.checkpoint)->required();
    predict->add_option("--out", c_.out)->required();
    predict->add_option("--representation", c_.representation)->check(CLI::IsMember({"plain", "rerasterized"}));
    predict->add_flag("--independent", c_.independent, "replace the joint grid by the product of marginals");

    auto* eval = app.add_subcommand("eval", "joint mAP, minADE, minFDE and loss");
    eval->add_option("--pred", c_.pred)->required();
    eval->add_option("--gt", c_.gt)->required();
    eval->add_option("--anchors", c_.anchors_dir, "needed for the loss columns");
    eval->add_option("--map-config", c_.map_config);
    eval->add_option("--out", c_.out, "report JSON");
    add_loss_flags(*eval);

    auto* sens = app.add_subcommand("sensitivity", "metric-loss sensitivity and weight recommendation");
    sens->add_option("--pred", c_.pred)->required();
    sens->add_option("--gt", c_.gt)->required();
    sens->add_option("--anchors", c_.anchors_dir)->required();
    sens->add_option("--alpha", c_.alpha);
    sens->add_option("--map-config", c_.map_config);
    sens->add_option("--out", c_.out, "report JSON");
    add_loss_flags(*sens);

    auto* ens = app.add_subcommand("ensemble", "average predictions of several models");
    ens->add_option("--pred", c_.preds)->required()->expected(1, -1);
    ens->add_option("--out", c_.out)->required();

    auto* raster = app.add_subcommand("raster", "render one scenario to PPM");
    raster->add_option("--in", c_.in)->required();
    raster->add_option("--scenario", c_.scenario);
    raster->add_option("--agent", c_.agent)->check(CLI::Range(0, 1));
    raster->add_option("--rerasterize", c_.rerasterize, "predictions file; draws the partner's top-1 mode");
    raster->add_option("--downscale", downscale_raster_, "render at reduced size");
    raster->add_option("--out", c_.out)->required();

    auto* spline = app.add_subcommand("spline-check", "dump the 80x8 spline basis as CSV");
    spline->add_option("--out", c_.out, "CSV path (default stdout)");
  }

  void add_loss_flags(CLI::App& sub) {
    sub.add_option("--w-cls", c_.train.weights.w_cls);
    sub.add_option("--w-reg", c_.train.weights.w_reg);
    sub.add_option("--w-m", c_.train.weights.w_m);
  }

  void dispatch(const std::string& cmd) {
    if (cmd == "synth") return synth();
    if (cmd == "filter") return filter();
    if (cmd == "cluster") return cluster();
    if (cmd == "train") return train();
    if (cmd == "predict") return predict();
    if (cmd == "eval") return eval();
    if (cmd == "sensitivity") return sensitivity();
    if (cmd == "ensemble") return ensemble();
    if (cmd == "raster") return raster();
    if (cmd == "spline-check") return spline_check();
  }

  void emit(const nlohmann::json& report, const std::string& text) {
    if (c_.json) {
      out_ << report.dump(2) << "\n";
    } else {
      out_ << text;
    }
  }

  void progress(const std::string& line) {
    if (!c_.quiet) err_ << line << "\n";
  }

  void synth() {
    const auto scenarios = synth_generate(c_.n, derive_seed(c_.seed, "synth"), c_.synth);
    save_scenarios(scenarios, c_.out);
    emit({{"scenarios", scenarios.size()}, {"out", c_.out}},
         "wrote " + std::to_string(scenarios.size()) + " scenarios to " + c_.out + "\n");
  }

  void filter() {
    detail::require_file(c_.in, "scenario file");
    if (!(c_.max_step > 0.0)) throw Error(errc::kInvalidArgument, "--max-step must be > 0");
    const auto in = load_scenarios(c_.in);
    std::vector<Scenario> kept;
    for (const Scenario& s : in) {
      if (!is_corrupt(s.pair_agent(0).future, c_.max_step) && !is_corrupt(s.pair_agent(1).future, c_.max_step)) {
        kept.push_back(s);
      }
    }
    save_scenarios(kept, c_.out);
    const std::size_t dropped = in.size() - kept.size();
    emit({{"kept", kept.size()}, {"dropped", dropped}},
         "kept " + std::to_string(kept.size()) + ", dropped " + std::to_string(dropped) + "\n");
  }

  void cluster() {
    detail::require_file(c_.in, "scenario file");
    const auto scenarios = load_scenarios(c_.in);
    AnchorConfig cfg = c_.anchors;
    cfg.seed = derive_seed(c_.seed, "cluster");
    cfg.max_step = c_.max_step;
    const AnchorLibrary lib = fit_all_types(scenarios, cfg);
    save_anchor_library(lib, c_.out);
    nlohmann::json rep = nlohmann::json::object();
    std::string text;
    for (ObjectType t : kAllObjectTypes) {
      rep[std::string(to_string(t))] = lib[type_index(t)].k();
      text += std::string(to_string(t)) + ": K=" + std::to_string(lib[type_index(t)].k()) + "\n";
    }
    emit(rep, text);
  }

  void train() {
    detail::require_file(c_.in, "scenario file");
    const auto scenarios = load_scenarios(c_.in);
    const AnchorLibrary lib = load_anchor_library(c_.anchors_dir);
    ModelConfig cfg = with_anchor_counts(c_.model, lib);
    ModelParams params;
    if (!c_.init.empty()) {
      detail::require_file(c_.init, "checkpoint");
      Checkpoint ck = load_checkpoint(c_.init);
      cfg = ck.config;
      params = std::move(ck.params);
    } else {
      params = init_params(cfg, derive_seed(c_.seed, "train-init"));
    }
    TrainConfig tc = c_.train;
    tc.seed = derive_seed(c_.seed, "train");
    tc.representation = parse_representation(c_.representation);
    const std::size_t every = c_.log_every;
    TrainResult r = train_model(scenarios, lib, std::move(params), cfg, tc, [&](const LossPoint& p) {
      if (every > 0 && p.step % every == 0) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%s step %zu loss %.6g", p.phase.c_str(), p.step, p.loss);
        progress(buf);
      }
    });
    save_checkpoint({cfg, r.params}, c_.out);
    if (!c_.curve.empty()) write_file_atomic(c_.curve, loss_curve_csv(r.curve));
    const double final_loss = r.curve.empty() ? 0.0 : r.curve.back().loss;
    emit({{"steps", r.curve.size()}, {"final_loss", final_loss}, {"checkpoint", c_.out}},
         "trained " + std::to_string(r.curve.size()) + " steps, checkpoint " + c_.out + "\n");
  }

  void predict() {
    detail::require_file(c_.in, "scenario file");
    detail::require_file(c_.checkpoint, "checkpoint");
    const auto scenarios = load_scenarios(c_.in);
    const AnchorLibrary lib = load_anchor_library(c_.anchors_dir);
    const Checkpoint ck = load_checkpoint(c_.checkpoint);
    const Representation repr = parse_representation(c_.representation);
    std::vector<JointPrediction> preds;
    preds.reserve(scenarios.size());
    for (const Scenario& s : scenarios) {
      JointPrediction p = predict_joint(s, lib, ck.params, ck.config, repr);
      preds.push_back(c_.independent ? with_independent_grid(p) : std::move(p));
    }
    save_predictions(preds, c_.out);
    emit({{"predictions", preds.size()}, {"out", c_.out}},
         "wrote " + std::to_string(preds.size()) + " predictions to " + c_.out + "\n");
  }

  MapConfig map_config() {
    if (c_.map_config.empty()) return c_.map;
    return map_config_from_json(detail::parse_json_file(c_.map_config, "map config"));
  }

  void eval() {
    detail::require_file(c_.pred, "prediction file");
    detail::require_file(c_.gt, "ground-truth file");
    const auto preds = load_predictions(c_.pred);
    const auto scenarios = load_scenarios(c_.gt);
    std::optional<AnchorLibrary> lib;
    if (!c_.anchors_dir.empty()) lib = load_anchor_library(c_.anchors_dir);
    const auto truths = detail::truths_for(scenarios, lib);
    std::optional<LossWeights> w;
    if (lib) w = c_.train.weights;
    const EvalReport r = evaluate(preds, truths, map_config(), w);
    const nlohmann::json j = eval_to_json(r);
    if (!c_.out.empty()) write_file_atomic(c_.out, j.dump(2) + "\n");
    std::ostringstream text;
    text << "mAP " << r.map.map << "\n";
    for (const BucketResult& b : r.map.buckets) text << "  " << b.bucket << " AP " << b.ap << " (" << b.scenarios << ")\n";
    text << "minADE " << r.min_ade << "\nminFDE " << r.min_fde << "\n";
    if (r.loss) text << "loss " << r.loss->total << "\n";
    emit(j, text.str());
  }

  void sensitivity() {
    detail::require_file(c_.pred, "prediction file");
    detail::require_file(c_.gt, "ground-truth file");
    const auto preds = load_predictions(c_.pred);
    const auto scenarios = load_scenarios(c_.gt);
    const AnchorLibrary lib = load_anchor_library(c_.anchors_dir);
    const auto truths = detail::truths_for(scenarios, lib);
    const SensitivityReport r = sensitivity_analysis(preds, truths, c_.alpha, c_.train.weights, map_config());
    const nlohmann::json j = sensitivity_to_json(r);
    if (!c_.out.empty()) write_file_atomic(c_.out, j.dump(2) + "\n");
    std::ostringstream text;
    auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
    text << "ratio_cls " << show(r.ratio_cls) << "\nratio_reg " << show(r.ratio_reg) << "\n";
    if (r.recommended) text << "recommended w_cls " << r.recommended->w_cls << " w_reg " << r.recommended->w_reg << "\n";
    emit(j, text.str());
  }

  void ensemble() {
    std::vector<std::vector<JointPrediction>> runs;
    for (const std::string& p : c_.preds) {
      detail::require_file(p, "prediction file");
      runs.push_back(load_predictions(p));
      if (runs.back().size() != runs.front().size()) {
        throw Error(errc::kInvalidArgument, "ensemble: " + p + " has a different scenario count");
      }
    }
    std::vector<JointPrediction> out;
    for (std::size_t s = 0; s < runs.front().size(); ++s) {
      std::vector<JointPrediction> members;
      for (const auto& r : runs) members.push_back(r[s]);
      out.push_back(ensemble_models(members));
    }
    save_predictions(out, c_.out);
    emit({{"models", runs.size()}, {"predictions", out.size()}},
         "ensembled " + std::to_string(runs.size()) + " models over " + std::to_string(out.size()) + " scenarios\n");
  }

  void raster() {
    detail::require_file(c_.in, "scenario file");
    const auto scenarios = load_scenarios(c_.in);
    if (c_.scenario >= scenarios.size()) {
      throw Error(errc::kInvalidArgument, "--scenario " + std::to_string(c_.scenario) + " out of range (" +
                                              std::to_string(scenarios.size()) + " scenarios)");
    }
    const Scenario& s = scenarios[c_.scenario];
    const RasterConfig rc = RasterConfig{}.scaled(downscale_raster_);
    RasterImage img;
    if (c_.rerasterize.empty()) {
      img = rasterize(s, c_.agent, rc);
    } else {
      detail::require_file(c_.rerasterize, "prediction file");
      const auto preds = load_predictions(c_.rerasterize);
      if (c_.scenario >= preds.size()) throw Error(errc::kInvalidArgument, "prediction file has too few lines");
      const MarginalPrediction& partner = preds[c_.scenario].marginals[c_.agent == 0 ? 1 : 0];
      img = rerasterize(s, c_.agent, partner.trajectories.at(partner.top1()), rc);
    }
    write_ppm(img, c_.out);
    emit({{"height", img.height()}, {"width", img.width()}, {"out", c_.out}}, "wrote " + c_.out + "\n");
  }

  void spline_check() {
    const SplineBasis& b = default_basis();
    std::string csv;
    char buf[40];
    for (std::size_t r = 0; r < b.rows(); ++r) {
      for (std::size_t c = 0; c < b.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", b(r, c));
        csv += (c == 0 ? "" : ",") + std::string(buf);
      }
      csv += "\n";
    }
    if (c_.out.empty()) {
      out_ << csv;
    } else {
      write_file_atomic(c_.out, csv);
    }
  }

  std::ostream& out_;
  std::ostream& err_;
  RunConfig c_;
  std::string config_path_;
  int downscale_raster_ = 1;
};

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return Runner(out, err).run(args);
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace airsq::cli
