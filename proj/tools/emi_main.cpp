#include <iostream>

#include <CLI11.hpp>

#include "emi/cli.hpp"
#include "emi/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multimodal sequence regression for mimicry intensity"};
  app.require_subcommand(1);

  emi::SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset");
  s->add_option("--out", synth.out_dir, "Output directory")->required();
  s->add_option("--n-train", synth.n_train, "Training samples");
  s->add_option("--n-val", synth.n_val, "Validation samples");
  s->add_option("--n-test", synth.n_test, "Test samples");
  s->add_option("--signal", synth.signal,
                "Label signal strength in [0,1]; 0 gives pure-noise labels")
      ->check(CLI::Range(0.0, 1.0));
  s->add_option("--seed", synth.seed, "RNG seed");

  emi::TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one modality branch");
  t->add_option("--manifest", train.manifest, "Dataset manifest CSV")
      ->required();
  t->add_option("--modality", train.modality, "visual or audio")->required();
  t->add_option("--config", train.config_path, "Config file");
  t->add_option("--set", train.overrides,
                "Config override, section.key=value (repeatable)");
  t->add_option("--seed", train.seed, "RNG seed");
  t->add_option("--out", train.out_dir, "Output directory")->required();
  t->add_option("--resume", train.resume, "State checkpoint to continue from");

  emi::PredictArgs predict;
  auto* p = app.add_subcommand("predict", "Write predictions for a split");
  p->add_option("--manifest", predict.manifest, "Dataset manifest CSV")
      ->required();
  p->add_option("--checkpoint", predict.checkpoint, "Model checkpoint")
      ->required();
  p->add_option("--split", predict.split, "train, val or test");
  p->add_option("--out", predict.out_path, "Predictions CSV path")->required();

  emi::EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score predictions against labels");
  e->add_option("--manifest", eval.manifest, "Dataset manifest CSV")
      ->required();
  e->add_option("--predictions", eval.predictions, "Predictions CSV")
      ->required();
  e->add_option("--split", eval.split, "train, val or test");
  e->add_option("--out", eval.out_path, "Report CSV path");

  emi::FuseArgs fuse;
  auto* f = app.add_subcommand("fuse", "Late-fuse visual and audio predictions");
  f->add_option("--visual", fuse.visual, "Visual predictions CSV")->required();
  f->add_option("--audio", fuse.audio, "Audio predictions CSV")->required();
  f->add_option("--w-visual", fuse.w_visual, "Visual weight");
  f->add_option("--w-audio", fuse.w_audio, "Audio weight");
  f->add_option("--out", fuse.out_path, "Fused predictions CSV path")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) return emi::cmd_synth(synth, std::cout);
    if (t->parsed()) return emi::cmd_train(train, std::cout);
    if (p->parsed()) return emi::cmd_predict(predict, std::cout);
    if (e->parsed()) return emi::cmd_eval(eval, std::cout);
    if (f->parsed()) return emi::cmd_fuse(fuse, std::cout);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
