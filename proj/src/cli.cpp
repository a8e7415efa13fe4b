#include "emi/cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "emi/fusion.hpp"
#include "emi/train.hpp"

namespace fs = std::filesystem;

namespace emi {

namespace {

Modality parse_modality(const std::string& s) {
  if (s == "visual") return Modality::visual;
  if (s == "audio") return Modality::audio;
  throw ConfigError("modality must be 'visual' or 'audio', got '" + s + "'");
}

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides,
                         uint64_t seed) {
  ConfigFile cf;
  if (!config_path.empty()) cf = load_config_file(config_path);
  for (const auto& o : overrides) apply_override(cf, o);
  RunConfig rc = make_run_config(cf);
  rc.model.seed = seed;
  rc.train.seed = seed;
  return rc;
}

}  // namespace

int cmd_synth(const SynthArgs& args, std::ostream& os) {
  if (args.out_dir.empty()) throw ConfigError("synth: --out is required");
  SynthSpec spec;
  spec.n_train = args.n_train;
  spec.n_val = args.n_val;
  spec.n_test = args.n_test;
  spec.signal = args.signal;
  spec.seed = args.seed;
  const std::string manifest = generate_synthetic_dataset(args.out_dir, spec);
  os << "wrote " << (args.n_train + args.n_val + args.n_test)
     << " samples (train " << args.n_train << ", val " << args.n_val
     << ", test " << args.n_test << ", signal " << args.signal << ")\n"
     << "manifest: " << manifest << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args, std::ostream& os) {
  if (args.manifest.empty()) throw ConfigError("train: --manifest is required");
  const Modality modality = parse_modality(args.modality);
  const RunConfig rc =
      resolve_config(args.config_path, args.overrides, args.seed);
  const Manifest manifest = load_manifest(args.manifest);
  fs::create_directories(args.out_dir);

  Trainer tr;
  if (args.resume.empty()) {
    tr = make_trainer(rc.model, rc.train, modality);
  } else {
    const auto ck = load_checkpoint(args.resume);
    if (ck.modality != modality)
      throw ContractError(std::string("train: resume checkpoint is ") +
                          modality_name(ck.modality) + ", requested " +
                          modality_name(modality));
    tr = trainer_from_checkpoint(ck, rc.train);
  }

  const std::string tag = modality_name(modality);
  const std::string best_path =
      (fs::path(args.out_dir) / ("checkpoint_" + tag + ".emic")).string();
  const std::string state_path =
      (fs::path(args.out_dir) / ("state_" + tag + ".emic")).string();
  const std::string log_path =
      (fs::path(args.out_dir) / ("train_log_" + tag + ".csv")).string();

  os << "branch: " << tag << "\n"
     << "tcn layers: " << tr.model.tcn.layers.size()
     << " (receptive field " << tr.model.tcn.receptive_field() << " steps)\n"
     << "transformer blocks: " << tr.model.blocks.size() << "\n"
     << "d_model: " << tr.model.cfg.d_model
     << ", heads: " << tr.model.cfg.num_heads << "\n"
     << "sequence length: " << tr.model.sequence_len() << "\n"
     << "parameters: " << tr.model.parameter_count() << "\n"
     << "train samples: " << manifest.split_rows(Split::train).size()
     << ", val samples: " << manifest.split_rows(Split::val).size() << "\n"
     << "lr: " << tr.lr << ", batch size: " << tr.tcfg.batch_size << "\n";

  const TrainResult res = run_training(tr, manifest, best_path, &os);
  write_train_log(log_path, res.log);
  {
    auto state = make_checkpoint(tr, true);
    save_checkpoint(state_path, state);
  }
  if (res.aborted) {
    os << "training aborted: " << res.abort_reason << "\n";
    return 1;
  }
  os << "best val mean rho " << res.best_val_rho << " at epoch "
     << res.best_epoch << "\n"
     << "best checkpoint: " << best_path << "\n"
     << "state checkpoint: " << state_path << "\n"
     << "log: " << log_path << "\n";

  // Final report comes from the best checkpoint, not the last state.
  const auto best_model = model_from_checkpoint(load_checkpoint(best_path));
  std::vector<std::array<double, 6>> labels;
  const auto preds =
      predict_split(best_model, manifest, Split::val, nullptr, &labels);
  const auto report = evaluate(preds, labels);
  write_report_text(os, report);
  {
    std::ofstream txt(
        (fs::path(args.out_dir) / ("eval_validation_" + tag + ".txt")).string(),
        std::ios::binary | std::ios::trunc);
    write_report_text(txt, report);
  }
  write_report_csv(
      (fs::path(args.out_dir) / ("eval_validation_" + tag + ".csv")).string(),
      report);
  return 0;
}

int cmd_predict(const PredictArgs& args, std::ostream& os) {
  if (args.manifest.empty() || args.checkpoint.empty() || args.out_path.empty())
    throw ConfigError("predict: --manifest, --checkpoint and --out are required");
  const Split split = split_from_string(args.split);
  const Manifest manifest = load_manifest(args.manifest);
  const auto ck = load_checkpoint(args.checkpoint);
  const auto model = model_from_checkpoint(ck);

  PredictionSet ps;
  ps.source = model.modality == Modality::visual ? PredictionSource::visual
                                                 : PredictionSource::audio;
  std::vector<std::string> ids;
  const auto preds = predict_split(model, manifest, split, &ids);
  for (size_t i = 0; i < preds.size(); ++i)
    ps.records.push_back({ids[i], preds[i]});
  write_predictions(args.out_path, ps);
  os << "wrote " << ps.records.size() << " "
     << prediction_source_name(ps.source) << " predictions for split '"
     << split_name(split) << "' to " << args.out_path << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& args, std::ostream& os) {
  if (args.manifest.empty() || args.predictions.empty())
    throw ConfigError("eval: --manifest and --predictions are required");
  const Split split = split_from_string(args.split);
  const Manifest manifest = load_manifest(args.manifest);
  const auto ps = read_predictions(args.predictions);

  const auto rows = manifest.split_rows(split);
  std::map<std::string, const ManifestRow*> by_id;
  for (const auto* r : rows) by_id[r->sample_id] = r;
  std::vector<std::string> missing, extra;
  std::set<std::string> pred_ids;
  for (const auto& rec : ps.records) {
    pred_ids.insert(rec.sample_id);
    if (!by_id.count(rec.sample_id)) extra.push_back(rec.sample_id);
  }
  for (const auto* r : rows)
    if (!pred_ids.count(r->sample_id)) missing.push_back(r->sample_id);
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "eval: predictions do not cover split '";
    msg += split_name(split);
    msg += "';";
    auto list = [&](const char* label, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + label + ":";
      for (size_t i = 0; i < ids.size() && i < 5; ++i) msg += " " + ids[i];
      if (ids.size() > 5) msg += " (+" + std::to_string(ids.size() - 5) + ")";
    };
    list("missing", missing);
    list("unexpected", extra);
    throw ContractError(msg);
  }

  std::vector<std::array<double, 6>> pred, target;
  for (const auto& rec : ps.records) {
    pred.push_back(rec.values);
    target.push_back(by_id[rec.sample_id]->labels);
  }
  const auto report = evaluate(pred, target);
  os << "source: " << prediction_source_name(ps.source) << ", split: "
     << split_name(split) << "\n";
  write_report_text(os, report);
  if (!args.out_path.empty()) write_report_csv(args.out_path, report);
  return 0;
}

int cmd_fuse(const FuseArgs& args, std::ostream& os) {
  if (args.visual.empty() || args.audio.empty() || args.out_path.empty())
    throw ConfigError("fuse: --visual, --audio and --out are required");
  const auto vp = read_predictions(args.visual);
  const auto ap = read_predictions(args.audio);
  if (vp.source != PredictionSource::visual)
    throw ContractError(std::string("fuse: ") + args.visual + " holds " +
                        prediction_source_name(vp.source) +
                        " predictions, expected visual");
  if (ap.source != PredictionSource::audio)
    throw ContractError(std::string("fuse: ") + args.audio + " holds " +
                        prediction_source_name(ap.source) +
                        " predictions, expected audio");
  const auto fused = late_fuse(vp, ap, args.w_visual, args.w_audio);
  write_predictions(args.out_path, fused);
  os << "fused " << fused.records.size() << " samples (w_visual "
     << args.w_visual << ", w_audio " << args.w_audio << ") to "
     << args.out_path << "\n";
  return 0;
}

}  // namespace emi
