#include "mpid/cli.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace mpid;

SceneLayerSpec parse_layer(const std::string& text) {
  SceneLayerSpec layer;
  KeyValues kv;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--layer expects key=value;... , got " + text);
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  for (const auto& [key, value] : kv) {
    if (key == "d") layer.defocus = std::stod(value);
    else if (key == "shape") {
      if (value == "full") layer.shape = SceneLayerSpec::Shape::full;
      else if (value == "rect") layer.shape = SceneLayerSpec::Shape::rect;
      else if (value == "disc") layer.shape = SceneLayerSpec::Shape::disc;
      else throw CLI::ValidationError("--layer shape must be full|rect|disc");
    } else if (key == "texture") {
      if (value == "flat") layer.texture = SceneLayerSpec::Texture::flat;
      else if (value == "noise") layer.texture = SceneLayerSpec::Texture::noise;
      else if (value == "checker")
        layer.texture = SceneLayerSpec::Texture::checker;
      else throw CLI::ValidationError("--layer texture must be flat|noise|checker");
    } else if (key == "cx") layer.center_x = std::stod(value);
    else if (key == "cy") layer.center_y = std::stod(value);
    else if (key == "hw") layer.half_width = std::stod(value);
    else if (key == "hh") layer.half_height = std::stod(value);
    else if (key == "radius") layer.radius = std::stod(value);
    else if (key == "alpha") layer.alpha = std::stod(value);
    else if (key == "base") layer.base = std::stod(value);
    else if (key == "amplitude") layer.amplitude = std::stod(value);
    else if (key == "period") layer.checker_period = std::stol(value);
    else throw CLI::ValidationError("--layer: unknown key " + key);
  }
  return layer;
}

void add_optim_flags(CLI::App* app, KeyValues& overrides) {
  auto bind = [app, &overrides](const std::string& flag, const std::string& key,
                                const std::string& help) {
    app->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { overrides[key] = v; },
        help);
  };
  bind("--iterations", "iterations", "optimization iterations");
  bind("--layers", "layers", "MPI layer count");
  bind("--lr-start", "lr_start", "initial learning rate");
  bind("--lr-end", "lr_end", "final learning rate");
  bind("--lambda1", "lambda1", "data loss weight");
  bind("--lambda2", "lambda2", "auxiliary loss weight");
  bind("--lambda3", "lambda3", "intensity smoothness weight");
  bind("--lambda4", "lambda4", "alpha smoothness weight");
  bind("--lambda5", "lambda5", "entropy weight");
  bind("--sigma2", "sigma2", "noise variance");
  bind("--phi2", "phi2", "inverse spectral power");
  bind("--front-scale", "front_scale", "front layer defocus size (px)");
  bind("--back-scale", "back_scale", "back layer defocus size (px)");
  bind("--seed", "seed", "run seed");
  bind("--checkpoint-every", "checkpoint_every", "checkpoint period");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint defocus map estimation and deblurring from dual-pixel "
               "pairs via a multiplane-image fit"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::vector<std::string> layer_specs;
  long synth_rows = 64, synth_cols = 64, synth_seed = 1;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic DP sample");
  synth_cmd->add_option("--rows", synth_rows, "scene height");
  synth_cmd->add_option("--cols", synth_cols, "scene width");
  synth_cmd->add_option("--sigma2", synth.scene.sigma2, "noise variance");
  synth_cmd->add_option("--seed", synth_seed, "scene seed");
  synth_cmd->add_option("--layer", layer_specs,
                        "layer spec key=value;... (repeatable, back first): "
                        "d, shape, texture, cx, cy, hw, hh, radius, alpha, "
                        "base, amplitude, period");
  synth_cmd->add_option("--kernel-radius", synth.kernel_radius,
                        "half-disc kernel radius (px)");
  synth_cmd->add_option("--perturb", synth.perturb,
                        "per-cell kernel radius perturbation fraction");
  synth_cmd->add_option("--out", synth.outdir, "output directory")->required();
  synth_cmd->add_flag("--dry-run", synth.dry_run, "print the plan and exit");

  CalibrateOptions calib;
  auto* calib_cmd = app.add_subcommand(
      "calibrate", "solve per-cell blur kernels from a disc-target capture");
  calib_cmd->add_option("--captured-left", calib.captured_left)->required();
  calib_cmd->add_option("--captured-right", calib.captured_right)->required();
  std::string calib_white, calib_black;
  calib_cmd->add_option("--white", calib_white, "all-white capture (IMG1)");
  calib_cmd->add_option("--black", calib_black, "all-black capture (IMG1)");
  calib_cmd->add_option("--diffuser-left", calib.diffuser_left,
                        "diffuser captures for left vignetting");
  calib_cmd->add_option("--diffuser-right", calib.diffuser_right,
                        "diffuser captures for right vignetting");
  calib_cmd->add_option("--disc-radius", calib.disc_radius);
  calib_cmd->add_option("--discs-per-cell", calib.discs_per_cell,
                        "discs per cell side");
  calib_cmd->add_option("--margin", calib.margin);
  calib_cmd->add_option("--kernel-extent", calib.kernel_extent);
  calib_cmd->add_option("--reg-weight", calib.reg_weight);
  calib_cmd->add_option("--out", calib.outdir)->required();
  calib_cmd->add_flag("--dry-run", calib.dry_run);

  DeblurOptions deblur;
  std::string deblur_config, deblur_resume, deblur_vl, deblur_vr;
  auto* deblur_cmd = app.add_subcommand(
      "deblur", "jointly estimate the all-in-focus image and defocus map");
  deblur_cmd->add_option("--left", deblur.left)->required();
  deblur_cmd->add_option("--right", deblur.right)->required();
  deblur_cmd->add_option("--left-kgrid", deblur.left_grid)->required();
  deblur_cmd->add_option("--right-kgrid", deblur.right_grid)->required();
  deblur_cmd->add_option("--vignette-left", deblur_vl);
  deblur_cmd->add_option("--vignette-right", deblur_vr);
  deblur_cmd->add_option("--config", deblur_config, "key=value config file");
  deblur_cmd->add_option("--resume", deblur_resume, "optimizer state file");
  deblur_cmd->add_option("--out", deblur.outdir)->required();
  add_optim_flags(deblur_cmd, deblur.flag_overrides);

  SweepBiasOptions sweep;
  auto* sweep_cmd = app.add_subcommand(
      "sweep-bias", "tabulate energy argmins with and without correction");
  sweep_cmd->add_option("--d-true", sweep.d_true, "true defocus sizes");
  sweep_cmd->add_option("--sigma2", sweep.sigma2, "noise variances");
  sweep_cmd->add_option("--phi2", sweep.phi2);
  sweep_cmd->add_option("--d-min", sweep.d_min);
  sweep_cmd->add_option("--d-max", sweep.d_max);
  sweep_cmd->add_option("--d-step", sweep.d_step);
  sweep_cmd->add_option("--reference-radius", sweep.reference_radius);
  sweep_cmd->add_option("--spectrum", sweep.spectrum_extent);
  sweep_cmd->add_option("--jobs", sweep.jobs);
  sweep_cmd->add_option("--out", sweep.out_csv, "CSV path (stdout if absent)");

  EvalOptions eval;
  std::vector<std::string> scene_specs;
  auto* eval_cmd =
      app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option(
      "--scene", scene_specs,
      "name:pred_sharp:pred_defocus:gt_sharp:gt_defocus[:conf] (repeatable)");
  eval_cmd->add_flag("--align", eval.align,
                     "affine-align and crop sharps before scoring");
  eval_cmd->add_option("--jobs", eval.jobs);
  eval_cmd->add_option("--out", eval.out_csv, "CSV output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      synth.scene.rows = synth_rows;
      synth.scene.cols = synth_cols;
      synth.scene.seed = static_cast<std::uint64_t>(synth_seed);
      if (layer_specs.empty()) {
        SceneLayerSpec plane;
        plane.defocus = 6.0;
        plane.texture = SceneLayerSpec::Texture::noise;
        synth.scene.layers = {plane};
      } else {
        for (const auto& text : layer_specs)
          synth.scene.layers.push_back(parse_layer(text));
      }
      return cmd_synth(synth);
    }
    if (calib_cmd->parsed()) {
      if (!calib_white.empty()) calib.white = calib_white;
      if (!calib_black.empty()) calib.black = calib_black;
      return cmd_calibrate(calib);
    }
    if (deblur_cmd->parsed()) {
      if (!deblur_config.empty()) deblur.config_file = deblur_config;
      if (!deblur_resume.empty()) deblur.resume_state = deblur_resume;
      if (!deblur_vl.empty()) deblur.vignette_left = deblur_vl;
      if (!deblur_vr.empty()) deblur.vignette_right = deblur_vr;
      return cmd_deblur(deblur);
    }
    if (sweep_cmd->parsed()) return cmd_sweep_bias(sweep);
    if (eval_cmd->parsed()) {
      for (const auto& spec : scene_specs) {
        std::vector<std::string> parts;
        std::istringstream is(spec);
        std::string part;
        while (std::getline(is, part, ':')) parts.push_back(part);
        if (parts.size() != 5 && parts.size() != 6)
          throw std::invalid_argument(
              "--scene expects name:pred_sharp:pred_defocus:gt_sharp:"
              "gt_defocus[:conf]");
        EvalScene scene;
        scene.name = parts[0];
        scene.pred_sharp = parts[1];
        scene.pred_defocus = parts[2];
        scene.gt_sharp = parts[3];
        scene.gt_defocus = parts[4];
        if (parts.size() == 6) scene.conf = parts[5];
        eval.scenes.push_back(std::move(scene));
      }
      return cmd_eval(eval);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
