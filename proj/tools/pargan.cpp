// pargan command line: data generation, training, inference, grids and evaluation.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pargan/pipeline.hpp"

namespace {

using namespace pargan;

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::usage, what + ": '" + item + "' is not a number");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::vector<double>> parse_lists(const std::string& text, const std::string& what) {
  std::vector<std::vector<double>> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t semi = text.find(';', start);
    out.push_back(parse_list(text.substr(start, semi == std::string::npos ? std::string::npos : semi - start), what));
    if (semi == std::string::npos) break;
    start = semi + 1;
  }
  return out;
}

std::vector<int> to_ints(const std::vector<double>& v) { return {v.begin(), v.end()}; }

void print_report(const LossReport& r) {
  if (r.iteration % 500 == 0) {
    std::fprintf(stderr, "iter %lld  gan_xy %.4f  gan_yx %.4f  cyc %.4f  total %.4f\n", r.iteration, r.gan_xy,
                 r.gan_yx, r.cyc, r.total);
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Parametric cycle-consistent image translation", "pargan"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  RenderRequest render;
  std::string sweep_values, sweep_base = "0.5,0.5,1";
  auto* c_render = app.add_subcommand("render-synth", "Render the synthetic beam dataset");
  c_render->add_option("--out", render.out, "Output directory")->required();
  c_render->add_option("--count", render.count, "Number of lit images")->capture_default_str();
  c_render->add_option("--size", render.size, "Image side in pixels")->capture_default_str();
  c_render->add_option("--seed", render.seed, "Random seed")->capture_default_str();
  c_render->add_option("--bases", render.bases, "Directory of base PNGs (default: procedural covers)");
  c_render->add_option("--covers", render.covers, "Procedural bases when --bases is not given")->capture_default_str();
  c_render->add_option("--sigma", render.sigma, "Spot std as a fraction of the diagonal")->capture_default_str();
  c_render->add_option("--test-covers", render.test_covers, "Held-out bases for sweep sets")->capture_default_str();
  c_render->add_option("--sweep-axis", render.sweep_axis, "Axis varied in sweep sets")->capture_default_str();
  c_render->add_option("--sweep-values", sweep_values, "Comma-separated sweep values");
  c_render->add_option("--sweep-base", sweep_base, "Comma-separated base p for sweep sets")->capture_default_str();

  std::string domain_spec;
  fs::path domain_out;
  int domain_count = 0, domain_size = 32;
  std::uint64_t domain_seed = 0;
  auto* c_domains = app.add_subcommand("gen-domains", "Render procedural toy domains");
  c_domains->add_option("--spec", domain_spec, "Domain spec file (JSON)")->required();
  c_domains->add_option("--count", domain_count, "Images per domain")->required();
  c_domains->add_option("--out", domain_out, "Output directory")->required();
  c_domains->add_option("--seed", domain_seed, "Random seed")->capture_default_str();
  c_domains->add_option("--size", domain_size, "Image side in pixels")->capture_default_str();

  fs::path soft_source, soft_out;
  std::vector<fs::path> soft_targets;
  auto* c_soft = app.add_subcommand("build-soft", "Assign soft parametrizations to whole domains");
  c_soft->add_option("--source", soft_source, "Source domain manifest")->required();
  c_soft->add_option("--target", soft_targets, "Target domain manifest (repeat for several)")->required();
  c_soft->add_option("--out", soft_out, "Output manifest")->required();

  TrainRequest train;
  auto* c_train = app.add_subcommand("train", "Train G, F, D_X, D_Y");
  c_train->add_option("--config", train.config, "Training config (JSON)")->required();
  c_train->add_option("--source", train.source, "Source manifest")->required();
  c_train->add_option("--target", train.target, "Parametrized target manifest")->required();
  c_train->add_option("--out", train.out, "Run directory")->required();
  c_train->add_flag("--resume", train.resume, "Continue from the latest checkpoint in --out");

  fs::path infer_ckpt, infer_image, infer_out;
  std::string infer_p, infer_which = "G";
  auto* c_infer = app.add_subcommand("infer", "Translate one image");
  c_infer->add_option("--ckpt", infer_ckpt, "Checkpoint or run directory")->required();
  c_infer->add_option("--image", infer_image, "Input PNG")->required();
  c_infer->add_option("--p", infer_p, "Comma-separated parametrization (omit for p_dim 0)");
  c_infer->add_option("--out", infer_out, "Output PNG")->required();
  c_infer->add_option("--generator", infer_which, "G or F")->capture_default_str();

  fs::path grid_ckpt, grid_image, grid_out;
  std::string grid_axes, grid_values, grid_base;
  bool grid_labels = false;
  auto* c_sweep = app.add_subcommand("sweep", "Render a montage over a parametrization grid");
  c_sweep->add_option("--ckpt", grid_ckpt, "Checkpoint or run directory")->required();
  c_sweep->add_option("--image", grid_image, "Input PNG")->required();
  c_sweep->add_option("--axes", grid_axes, "Comma-separated axes to vary")->required();
  c_sweep->add_option("--values", grid_values, "Value lists per axis, ';' between axes")->required();
  c_sweep->add_option("--base", grid_base, "Comma-separated base p (default zeros)");
  c_sweep->add_flag("--labels", grid_labels, "Burn value labels into the montage");
  c_sweep->add_option("--out", grid_out, "Output PNG")->required();

  SweepRequest es;
  std::string es_grid;
  auto* c_es = app.add_subcommand("eval-sweep", "Metric matrix of generated vs real sets over a grid");
  c_es->add_option("--ckpt", es.ckpt, "Checkpoint or run directory")->required();
  c_es->add_option("--inputs", es.inputs, "Source image manifest")->required();
  c_es->add_option("--reals", es.reals, "Parametrized real image manifest")->required();
  c_es->add_option("--grid", es_grid, "Comma-separated values on --axis")->required();
  c_es->add_option("--axis", es.axis, "Axis swept by the grid")->capture_default_str();
  c_es->add_option("--metric", es.metric, "pixel_l1, frechet or perceptual")->capture_default_str();
  c_es->add_option("--samples", es.samples, "Images per cell")->capture_default_str();
  c_es->add_option("--out", es.out, "Output CSV")->required();

  MonoRequest em;
  std::string em_p = "0,0.25,0.5,0.75,1";
  auto* c_em = app.add_subcommand("eval-mono", "Distance to source and target sets as p grows");
  c_em->add_option("--ckpt", em.ckpt, "Checkpoint or run directory")->required();
  c_em->add_option("--inputs", em.inputs, "Source image manifest to translate")->required();
  c_em->add_option("--source", em.source, "Reference source-domain manifest")->required();
  c_em->add_option("--target", em.target, "Reference target-domain manifest")->required();
  c_em->add_option("--p", em_p, "Comma-separated ascending p values")->capture_default_str();
  c_em->add_option("--metric", em.metric, "pixel_l1, frechet or perceptual")->capture_default_str();
  c_em->add_option("--samples", em.samples, "Images per set")->capture_default_str();
  c_em->add_option("--out", em.out, "Output CSV")->required();

  LatentRequest lat;
  std::string lat_grid;
  auto* c_lat = app.add_subcommand("latent", "PCA of bottleneck activations over a p grid");
  c_lat->add_option("--ckpt", lat.ckpt, "Checkpoint or run directory")->required();
  c_lat->add_option("--inputs", lat.inputs, "Source image manifest")->required();
  c_lat->add_option("--grid", lat_grid, "Parametrizations, ';' between vectors")->required();
  c_lat->add_option("--samples", lat.samples, "Images to use")->capture_default_str();
  c_lat->add_option("--out", lat.out, "Output CSV of projections")->required();

  fs::path run_config, run_out;
  auto* c_run = app.add_subcommand("run", "Run a full recipe: data, labels, training, evaluation, grids");
  c_run->add_option("--config", run_config, "Pipeline config")->required();
  c_run->add_option("--out", run_out, "Artifacts directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::fprintf(stderr, "E_USAGE: %s\n", msg.c_str());
    return 2;
  }

  if (*c_render) {
    render.sweep_values = parse_list(sweep_values, "--sweep-values");
    render.sweep_base = parse_list(sweep_base, "--sweep-base");
    DirectoryLock lock(render.out);
    const auto sets = render_synth(render);
    for (const auto& [name, m] : sets) std::printf("%s: %zu records\n", name.c_str(), m.records.size());
  } else if (*c_domains) {
    DirectoryLock lock(domain_out);
    const auto sets = generate_toy_domains(load_domain_specs(domain_spec), domain_count, domain_size, domain_seed, domain_out);
    for (const auto& [name, m] : sets) std::printf("%s: %zu records\n", name.c_str(), m.records.size());
  } else if (*c_soft) {
    const Manifest m = build_soft_command(soft_source, soft_targets, soft_out);
    std::printf("%zu records, %zu axes\n", m.records.size(), m.axes.size());
  } else if (*c_train) {
    train.on_step = print_report;
    const fs::path last = train_command(train);
    std::printf("%s\n", last.c_str());
  } else if (*c_infer) {
    infer(infer_ckpt, infer_image, parse_list(infer_p, "--p"), infer_out, infer_which);
  } else if (*c_sweep) {
    const LoadedGenerator g = open_generator(grid_ckpt);
    std::vector<double> base = parse_list(grid_base, "--base");
    if (grid_base.empty()) base.assign(g.generator.config().p_dim, 0.0);
    const GridSpec grid = make_grid(to_ints(parse_list(grid_axes, "--axes")), parse_lists(grid_values, "--values"), base,
                                    grid_labels);
    const Image x = load_training_image(grid_image, g.generator.config().image_size);
    write_png(grid_out, sweep_grid_image(g, x, grid));
  } else if (*c_es) {
    es.grid = parse_list(es_grid, "--grid");
    const SweepMatrix m = eval_sweep(es);
    std::printf("diagonal-minimum columns: %d of %zu\n", m.diagonal_minimum_columns(), m.size());
    if (m.size() >= 2) std::printf("distance spearman: %.4f\n", sweep_distance_correlation(m, es.grid));
  } else if (*c_em) {
    em.p_values = parse_list(em_p, "--p");
    const MonotonicityReport r = eval_mono(em);
    std::printf("rho_source %.4f\nrho_target %.4f\n", r.rho_source, r.rho_target);
  } else if (*c_lat) {
    lat.grid = parse_lists(lat_grid, "--grid");
    const LatentPca r = latent_command(lat);
    std::printf("explained variance: %.4f %.4f %.4f\n", r.pca.explained_variance[0], r.pca.explained_variance[1],
                r.pca.explained_variance[2]);
  } else if (*c_run) {
    PipelineOptions opt;
    opt.on_step = print_report;
    opt.on_stage = [](const std::string& s) { std::fprintf(stderr, "stage %s\n", s.c_str()); };
    const PipelineResult r = run_pipeline(run_config, run_out, opt);
    std::printf("%s\n", (r.out / "run.json").c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pargan::Error& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::fprintf(stderr, "%s: %s\n", std::string(pargan::error_code_name(e.code())).c_str(), msg.c_str());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "E_IO: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "E_INTERNAL: %s\n", e.what());
    return 3;
  }
}
