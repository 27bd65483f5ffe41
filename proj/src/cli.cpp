#include "mpid/cli.hpp"

#include "json.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace mpid {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": " + value);
  }
  require(pos == value.size(), "config: trailing junk for " + key);
  return v;
}

long to_long(const std::string& key, const std::string& value) {
  const double v = to_double(key, value);
  require(v == std::floor(v), "config: " + key + " must be an integer");
  return static_cast<long>(v);
}

}  // namespace

KeyValues parse_config_text(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, "config: expected key=value, got: " + t);
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

OptimConfig config_from_keys(const KeyValues& base,
                             const KeyValues& overrides) {
  KeyValues kv = base;
  for (const auto& [k, v] : overrides) kv[k] = v;
  OptimConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "iterations") cfg.iterations = to_long(key, value);
    else if (key == "layers") cfg.layers = to_long(key, value);
    else if (key == "lr_start") cfg.lr_start = to_double(key, value);
    else if (key == "lr_end") cfg.lr_end = to_double(key, value);
    else if (key == "lambda1") cfg.weights.data = to_double(key, value);
    else if (key == "lambda2") cfg.weights.aux = to_double(key, value);
    else if (key == "lambda3") cfg.weights.intensity = to_double(key, value);
    else if (key == "lambda4") cfg.weights.alpha = to_double(key, value);
    else if (key == "lambda5") cfg.weights.entropy = to_double(key, value);
    else if (key == "sigma2") cfg.prior.sigma2 = to_double(key, value);
    else if (key == "phi2") cfg.prior.phi2 = to_double(key, value);
    else if (key == "front_scale") cfg.front_scale = to_double(key, value);
    else if (key == "back_scale") cfg.back_scale = to_double(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_long(key, value));
    else if (key == "checkpoint_every") cfg.checkpoint_every = to_long(key, value);
    else throw std::invalid_argument("config: unknown key " + key);
  }
  validate(cfg);
  return cfg;
}

std::string config_to_text(const OptimConfig& cfg) {
  std::ostringstream os;
  os << "iterations=" << cfg.iterations << "\n";
  os << "layers=" << cfg.layers << "\n";
  os << "lr_start=" << format_csv_value(cfg.lr_start) << "\n";
  os << "lr_end=" << format_csv_value(cfg.lr_end) << "\n";
  os << "lambda1=" << format_csv_value(cfg.weights.data) << "\n";
  os << "lambda2=" << format_csv_value(cfg.weights.aux) << "\n";
  os << "lambda3=" << format_csv_value(cfg.weights.intensity) << "\n";
  os << "lambda4=" << format_csv_value(cfg.weights.alpha) << "\n";
  os << "lambda5=" << format_csv_value(cfg.weights.entropy) << "\n";
  os << "sigma2=" << format_csv_value(cfg.prior.sigma2) << "\n";
  os << "phi2=" << format_csv_value(cfg.prior.phi2) << "\n";
  os << "front_scale=" << format_csv_value(cfg.front_scale) << "\n";
  os << "back_scale=" << format_csv_value(cfg.back_scale) << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "checkpoint_every=" << cfg.checkpoint_every << "\n";
  return os.str();
}

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("fnv1a_file: cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char buf[65536];
  while (is) {
    is.read(buf, sizeof buf);
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ull;
    }
  }
  return hash;
}

void write_manifest(const std::filesystem::path& path,
                    const RunManifest& manifest) {
  nlohmann::json j;
  j["tool_version"] = manifest.tool_version;
  j["command"] = manifest.command;
  j["seed"] = manifest.seed;
  j["config"] = manifest.config_text;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& [k, v] : manifest.input_hashes) {
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016" PRIx64, v);
    inputs[k] = hex;
  }
  j["inputs"] = inputs;
  j["outputs"] = manifest.outputs;
  j["wall_time_s"] = manifest.wall_time_s;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os)
      throw std::runtime_error("write_manifest: cannot open " + tmp.string());
    os << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

double csv_round(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::stod(buf);
}

std::string format_csv_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

namespace {

struct Stopwatch {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

void log_err(const std::string& msg) { std::cerr << msg << "\n"; }

// Round-trip validation of written artifacts.
void check_image_file(const std::filesystem::path& path, const Image& img) {
  Image back = load_image(path);
  require((back == img).all(), "output validation failed: " + path.string());
}

int fail(const std::string& msg) {
  log_err(std::string("error: ") + msg);
  return 1;
}

}  // namespace

int cmd_synth(const SynthOptions& options) try {
  Stopwatch watch;
  if (options.dry_run) {
    std::cout << "synth plan: " << options.scene.rows << "x"
              << options.scene.cols << ", " << options.scene.layers.size()
              << " layers, sigma2=" << options.scene.sigma2 << ", seed="
              << options.scene.seed << ", outdir=" << options.outdir.string()
              << "\n";
    return 0;
  }
  std::filesystem::create_directories(options.outdir);
  KernelGrid left = make_disc_kernels(options.kernel_radius, View::left,
                                      options.scene.rows, options.scene.cols,
                                      options.perturb, options.scene.seed);
  KernelGrid right = make_disc_kernels(options.kernel_radius, View::right,
                                       options.scene.rows, options.scene.cols,
                                       options.perturb, options.scene.seed);
  SyntheticScene scene = make_scene(options.scene, left, right);
  DpSample sample = observe(scene);

  RunManifest manifest;
  manifest.command = "synth";
  manifest.seed = options.scene.seed;
  manifest.config_text = scene_meta_text(options.scene);
  auto write = [&](const char* name, const Image& img) {
    const auto path = options.outdir / name;
    save_image(path, img);
    check_image_file(path, img);
    manifest.outputs.push_back(path.string());
  };
  write("left.img", sample.left);
  write("right.img", sample.right);
  write("gt_sharp.img", sample.gt_sharp);
  write("gt_defocus.img", sample.gt_defocus);
  save_kernel_grid(options.outdir / "left.kgrid", scene.left);
  save_kernel_grid(options.outdir / "right.kgrid", scene.right);
  manifest.outputs.push_back((options.outdir / "left.kgrid").string());
  manifest.outputs.push_back((options.outdir / "right.kgrid").string());
  {
    std::ofstream os(options.outdir / "meta.txt");
    os << scene_meta_text(options.scene);
    manifest.outputs.push_back((options.outdir / "meta.txt").string());
  }
  manifest.wall_time_s = watch.seconds();
  write_manifest(options.outdir / "manifest.json", manifest);
  std::cout << options.outdir.string() << "\n";
  return 0;
} catch (const std::exception& e) {
  return fail(e.what());
}

int cmd_calibrate(const CalibrateOptions& options) try {
  Stopwatch watch;
  if (options.dry_run) {
    std::cout << "calibrate plan: captured=" << options.captured_left.string()
              << "," << options.captured_right.string()
              << " extent=" << options.kernel_extent
              << " reg=" << options.reg_weight << " outdir="
              << options.outdir.string() << "\n";
    return 0;
  }
  RunManifest manifest;
  manifest.command = "calibrate";
  Image cap_left = load_image(options.captured_left);
  Image cap_right = load_image(options.captured_right);
  manifest.input_hashes[options.captured_left.string()] =
      fnv1a_file(options.captured_left);
  manifest.input_hashes[options.captured_right.string()] =
      fnv1a_file(options.captured_right);
  require(same_extents(cap_left, cap_right),
          "calibrate: captured extents differ");

  CalibTarget target =
      make_calib_target(cap_left.rows(), cap_left.cols(), options.disc_radius,
                        options.margin, options.discs_per_cell);
  Image white = options.white ? load_image(*options.white)
                              : Image::Ones(cap_left.rows(), cap_left.cols());
  Image black = options.black ? load_image(*options.black)
                              : Image::Zero(cap_left.rows(), cap_left.cols());
  if (options.white)
    manifest.input_hashes[options.white->string()] = fnv1a_file(*options.white);
  if (options.black)
    manifest.input_hashes[options.black->string()] = fnv1a_file(*options.black);
  Image latent = render_latent_target(target, white, black);

  std::filesystem::create_directories(options.outdir);
  log_err("calibrating left view...");
  KernelGrid left = calibrate_kernels(cap_left, latent, options.kernel_extent,
                                      options.reg_weight, View::left);
  log_err("calibrating right view...");
  KernelGrid right = calibrate_kernels(cap_right, latent,
                                       options.kernel_extent,
                                       options.reg_weight, View::right);
  save_kernel_grid(options.outdir / "left.kgrid", left);
  save_kernel_grid(options.outdir / "right.kgrid", right);
  manifest.outputs.push_back((options.outdir / "left.kgrid").string());
  manifest.outputs.push_back((options.outdir / "right.kgrid").string());

  auto vignetting = [&](const std::vector<std::filesystem::path>& paths,
                        const char* name) {
    if (paths.empty()) return;
    std::vector<Image> captures;
    for (const auto& p : paths) {
      captures.push_back(load_image(p));
      manifest.input_hashes[p.string()] = fnv1a_file(p);
    }
    Image field = estimate_vignetting(captures);
    const auto out = options.outdir / name;
    save_image(out, field);
    check_image_file(out, field);
    manifest.outputs.push_back(out.string());
  };
  vignetting(options.diffuser_left, "vignetting_left.img");
  vignetting(options.diffuser_right, "vignetting_right.img");

  manifest.wall_time_s = watch.seconds();
  write_manifest(options.outdir / "manifest.json", manifest);
  std::cout << options.outdir.string() << "\n";
  return 0;
} catch (const std::exception& e) {
  return fail(e.what());
}

int cmd_deblur(const DeblurOptions& options) try {
  Stopwatch watch;
  KeyValues base;
  if (options.config_file) base = load_config_file(*options.config_file);
  OptimConfig config = config_from_keys(base, options.flag_overrides);

  RunManifest manifest;
  manifest.command = "deblur";
  manifest.seed = config.seed;
  manifest.config_text = config_to_text(config);

  Image left = load_image(options.left);
  Image right = load_image(options.right);
  KernelGrid grid_l = load_kernel_grid(options.left_grid);
  KernelGrid grid_r = load_kernel_grid(options.right_grid);
  for (const auto& p : {options.left, options.right, options.left_grid,
                        options.right_grid})
    manifest.input_hashes[p.string()] = fnv1a_file(p);

  require(same_extents(left, right), "deblur: input extents differ");
  require(grid_l.coverage_rows() >= left.rows() &&
              grid_l.coverage_cols() >= left.cols() &&
              grid_r.coverage_rows() >= left.rows() &&
              grid_r.coverage_cols() >= left.cols(),
          "deblur: kernel grids do not cover the inputs");

  if (options.vignette_left) {
    Image field = load_image(*options.vignette_left);
    manifest.input_hashes[options.vignette_left->string()] =
        fnv1a_file(*options.vignette_left);
    left = correct_vignetting(left, field);
  }
  if (options.vignette_right) {
    Image field = load_image(*options.vignette_right);
    manifest.input_hashes[options.vignette_right->string()] =
        fnv1a_file(*options.vignette_right);
    right = correct_vignetting(right, field);
  }

  NormalizedPair norm = normalize_inputs(left, right);
  std::filesystem::create_directories(options.outdir);

  std::ofstream loss_csv(options.outdir / "loss.csv");
  loss_csv << "iteration,total,data,aux,intensity,alpha,entropy\n";
  OptimizeOptions run;
  run.denorm_scale = norm.scale;
  run.checkpoint_dir = options.outdir;
  run.callback = [&](Index iter, const LossBreakdown& l) {
    loss_csv << iter << ',' << format_csv_value(l.total) << ','
             << format_csv_value(l.data) << ',' << format_csv_value(l.aux)
             << ',' << format_csv_value(l.intensity) << ','
             << format_csv_value(l.alpha) << ',' << format_csv_value(l.entropy)
             << "\n";
    if (iter % 100 == 0)
      log_err("iteration " + std::to_string(iter) + " loss " +
              format_csv_value(l.total));
  };
  if (options.resume_state) {
    run.resume = load_optim_state(*options.resume_state);
    manifest.input_hashes[options.resume_state->string()] =
        fnv1a_file(*options.resume_state);
  }

  OptimizeResult result =
      optimize(norm.left, norm.right, grid_l, grid_r, config, run);
  loss_csv.close();

  save_image(options.outdir / "all_in_focus.img", result.all_in_focus);
  check_image_file(options.outdir / "all_in_focus.img", result.all_in_focus);
  save_image(options.outdir / "defocus.img", result.defocus_map);
  check_image_file(options.outdir / "defocus.img", result.defocus_map);
  save_mpi(options.outdir / "mpi.mpis", result.mpi);
  for (const char* name :
       {"all_in_focus.img", "defocus.img", "mpi.mpis", "loss.csv"})
    manifest.outputs.push_back((options.outdir / name).string());

  manifest.wall_time_s = watch.seconds();
  write_manifest(options.outdir / "manifest.json", manifest);
  std::cout << options.outdir.string() << "\n";
  return 0;
} catch (const std::exception& e) {
  return fail(e.what());
}

namespace {

Kernel half_disc_at(const KernelGrid& grid, double d) {
  return kernel_at(grid, 0.5 * grid.coverage_cols(),
                   0.5 * grid.coverage_rows(), d);
}

}  // namespace

int cmd_sweep_bias(const SweepBiasOptions& options) try {
  require(!options.d_true.empty() && !options.sigma2.empty(),
          "sweep-bias: empty sweep lists");
  require(options.d_step > 0.0 && options.d_max >= options.d_min &&
              options.d_min >= 1.0,
          "sweep-bias: bad hypothesis grid");
  const Index ext = options.spectrum_extent;
  KernelGrid left = make_disc_kernels(options.reference_radius, View::left,
                                      ext, ext);
  KernelGrid right = make_disc_kernels(options.reference_radius, View::right,
                                       ext, ext);

  std::vector<double> hypotheses;
  for (double d = options.d_min; d <= options.d_max + 1e-9; d += options.d_step)
    hypotheses.push_back(d);

  struct Row {
    double d_true, sigma2, uncorrected, corrected;
  };
  std::vector<Row> rows(options.d_true.size() * options.sigma2.size());
  const Index n_rows = static_cast<Index>(rows.size());
  parallel_for(n_rows, [&](Index idx) {
    const double dt =
        options.d_true[static_cast<std::size_t>(idx) / options.sigma2.size()];
    const double s2 =
        options.sigma2[static_cast<std::size_t>(idx) % options.sigma2.size()];
    PriorSpec prior;
    prior.sigma2 = s2;
    prior.phi2 = options.phi2;
    Kernel tl = half_disc_at(left, dt);
    Kernel tr = half_disc_at(right, dt);
    double best_u = std::numeric_limits<double>::infinity();
    double best_c = best_u;
    double arg_u = hypotheses.front(), arg_c = hypotheses.front();
    for (double d : hypotheses) {
      Kernel hl = half_disc_at(left, d);
      Kernel hr = half_disc_at(right, d);
      const double e = expected_energy(hl, hr, tl, tr, prior, ext, ext);
      const double b = s2 > 0.0
                           ? bias_term(hl, hr, prior, ext, ext) *
                                 static_cast<double>(ext * ext)
                           : 0.0;
      if (e < best_u) {
        best_u = e;
        arg_u = d;
      }
      if (e - b < best_c) {
        best_c = e - b;
        arg_c = d;
      }
    }
    rows[static_cast<std::size_t>(idx)] = {dt, s2, arg_u, arg_c};
  });

  std::ostringstream csv;
  csv << "d_true,sigma2,argmin_uncorrected,argmin_corrected\n";
  for (const Row& r : rows) {
    csv << format_csv_value(r.d_true) << ',' << format_csv_value(r.sigma2)
        << ',' << format_csv_value(r.uncorrected) << ','
        << format_csv_value(r.corrected) << "\n";
  }
  if (options.out_csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(options.out_csv);
    if (!os)
      throw std::runtime_error("sweep-bias: cannot open " +
                               options.out_csv.string());
    os << csv.str();
    std::cout << options.out_csv.string() << "\n";
  }
  return 0;
} catch (const std::exception& e) {
  return fail(e.what());
}

int cmd_eval(const EvalOptions& options) try {
  require(!options.scenes.empty(), "eval: no scenes given");
  std::vector<EvalReport> reports(options.scenes.size());
  parallel_for(static_cast<Index>(options.scenes.size()), [&](Index i) {
    const EvalScene& scene = options.scenes[static_cast<std::size_t>(i)];
    Image pred_sharp = load_image(scene.pred_sharp);
    Image gt_sharp = load_image(scene.gt_sharp);
    Image pred_defocus = load_image(scene.pred_defocus);
    Image gt_defocus = load_image(scene.gt_defocus);
    Image conf = scene.conf
                     ? load_image(*scene.conf)
                     : Image::Ones(gt_defocus.rows(), gt_defocus.cols());
    reports[static_cast<std::size_t>(i)] = evaluate(
        pred_sharp, gt_sharp, pred_defocus, gt_defocus, conf, options.align);
  });

  std::ostringstream csv;
  csv << "scene,psnr,ssim,mae,aiwe1,aiwe2,spearman_term\n";
  EvalReport mean;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    csv << options.scenes[i].name << ',' << format_csv_value(r.psnr) << ','
        << format_csv_value(r.ssim) << ',' << format_csv_value(r.mae) << ','
        << format_csv_value(r.aiwe1) << ',' << format_csv_value(r.aiwe2) << ','
        << format_csv_value(r.spearman_term) << "\n";
    mean.psnr += r.psnr;
    mean.ssim += r.ssim;
    mean.mae += r.mae;
    mean.aiwe1 += r.aiwe1;
    mean.aiwe2 += r.aiwe2;
    mean.spearman_term += r.spearman_term;
  }
  const double n = static_cast<double>(reports.size());
  csv << "mean," << format_csv_value(mean.psnr / n) << ','
      << format_csv_value(mean.ssim / n) << ',' << format_csv_value(mean.mae / n)
      << ',' << format_csv_value(mean.aiwe1 / n) << ','
      << format_csv_value(mean.aiwe2 / n) << ','
      << format_csv_value(mean.spearman_term / n) << "\n";

  if (!options.out_csv.empty()) {
    std::ofstream os(options.out_csv);
    if (!os)
      throw std::runtime_error("eval: cannot open " + options.out_csv.string());
    os << csv.str();
  }
  std::cout << csv.str();
  return 0;
} catch (const std::exception& e) {
  return fail(e.what());
}

}  // namespace mpid
