// dtsep: two-speaker separation with a dense network over complex
// spectrogram windows.
//
//   dtsep mix      <source1.wav> <source2.wav> -o <dir>
//   dtsep train    <source1.wav> <source2.wav> -m <model.bin>
//   dtsep separate <model.bin> <mixture.wav> -o <dir> [--no-adapt]
//   dtsep eval     <est1.wav> <est2.wav> <ref1.wav> <ref2.wav>
//   dtsep ibm      <ref1.wav> <ref2.wav> <mixture.wav> -o <dir>
//   dtsep curve    <source1.wav> <source2.wav> -o <curve.csv>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dtsep/audio_io.hpp"
#include "dtsep/bss_eval.hpp"
#include "dtsep/config.hpp"
#include "dtsep/oracle.hpp"
#include "dtsep/pipeline.hpp"
#include "dtsep/resynth.hpp"

namespace fs = std::filesystem;
using namespace dtsep;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::string dump_config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> eval_every;
  bool no_adapt = false;
};

void log(const std::string& msg) { std::clog << "[dtsep] " << msg << '\n'; }

RunConfig effective_config(const GlobalOptions& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) c.train.seed = *g.seed;
  if (g.epochs) c.train.epochs = *g.epochs;
  if (g.learning_rate) c.train.learning_rate = *g.learning_rate;
  if (g.eval_every) c.eval_every = *g.eval_every;
  if (g.no_adapt) c.gain_adaptation = false;
  c.validate();
  if (!g.dump_config.empty()) save_config(c, g.dump_config);
  return c;
}

void write_clip(const AudioClip& clip, const fs::path& path) {
  const auto report = write_wav(clip, path);
  if (report.clipped > 0) {
    log("warning: " + std::to_string(report.clipped) + " samples clipped writing " + path.string());
  }
}

AudioClip read_at_rate(const fs::path& path, int rate) {
  auto clip = read_wav(path);
  return clip.sample_rate == rate ? clip : decimate(clip, rate);
}

void cmd_mix(const GlobalOptions& g, const std::string& s1, const std::string& s2, const fs::path& out_dir) {
  const auto c = effective_config(g);
  const auto prepared = prepare_sources(read_wav(s1), read_wav(s2), c.sample_rate);
  fs::create_directories(out_dir);
  write_clip(prepared.mixture, out_dir / "mixture.wav");
  write_clip(prepared.references[0], out_dir / "reference1.wav");
  write_clip(prepared.references[1], out_dir / "reference2.wav");
  log("mixed " + std::to_string(prepared.mixture.size()) + " samples at " + std::to_string(c.sample_rate) + " Hz");
}

void cmd_train(const GlobalOptions& g, const std::string& s1, const std::string& s2, const fs::path& model_path,
               fs::path loss_csv) {
  const auto c = effective_config(g);
  log("seed " + std::to_string(c.train.seed));
  const auto prepared = prepare_sources(read_wav(s1), read_wav(s2), c.sample_rate);
  const auto train = training_span(prepared, c);
  std::ofstream loss(loss_csv.empty() ? fs::path(model_path.string() + ".loss.csv") : loss_csv);
  if (!loss) throw Error(ErrorKind::Io, "cannot open loss CSV for writing");
  loss.precision(17);
  loss << "epoch,mean_loss\n";
  auto hook = [&](const EpochReport& r, const Mlp&) {
    loss << r.epoch << ',' << r.mean_loss << '\n';
    log("epoch " + std::to_string(r.epoch) + " loss " + std::to_string(r.mean_loss));
  };
  const auto set = build_training_set(train, c);
  log("training pairs: " + std::to_string(set.pairs.size()));
  auto sep = make_separator(c, set.scales);
  train_sgd(sep.model, set.pairs, c.train, hook);
  save_separator(sep, model_path);
  log("wrote " + model_path.string() + " (" + std::to_string(sep.model.parameter_count()) + " parameters)");
}

void cmd_separate(const GlobalOptions& g, const fs::path& model_path, const fs::path& mixture,
                  const fs::path& out_dir, bool dump_csv) {
  const auto c = effective_config(g);
  const auto sep = load_separator(model_path);
  const auto clip = read_at_rate(mixture, sep.sample_rate);
  const auto result = separate(sep, clip, c.gain_adaptation);
  log("sliding windows: " + std::to_string(result.windows));
  fs::create_directories(out_dir);
  write_clip(result.sources[0], out_dir / "source1.wav");
  write_clip(result.sources[1], out_dir / "source2.wav");
  nlohmann::json diag{{"windows", result.windows},
                      {"degenerate_cells", result.degenerate_cells},
                      {"gain_adaptation", result.gain_adapted}};
  std::ofstream(out_dir / "diagnostics.json") << diag.dump(2) << '\n';
  if (dump_csv) {
    write_spectra_csv(result.spectra[0], out_dir / "source1_spectra.csv");
    write_spectra_csv(result.spectra[1], out_dir / "source2_spectra.csv");
  }
}

void report_metrics(const SeparationMetrics& m, const std::string& json_path) {
  std::cout << format_table(m);
  const auto j = to_json(m).dump(2);
  if (json_path.empty()) {
    std::cout << j << '\n';
  } else {
    std::ofstream out(json_path);
    if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + json_path);
    out << j << '\n';
  }
}

void cmd_eval(const std::array<std::string, 4>& paths, const std::string& json_path) {
  std::array<AudioClip, 4> clips;
  for (std::size_t i = 0; i < 4; ++i) clips[i] = read_wav(paths[i]);
  std::size_t lo = clips[0].size(), hi = clips[0].size();
  for (const auto& c : clips) {
    if (c.sample_rate != clips[0].sample_rate) {
      throw Error(ErrorKind::RateMismatch, "inputs have different sample rates");
    }
    lo = std::min(lo, c.size());
    hi = std::max(hi, c.size());
  }
  if (hi - lo > 1) {
    throw Error(ErrorKind::ShapeMismatch, "input lengths differ by " + std::to_string(hi - lo) +
                                              " samples (tolerance 1)");
  }
  report_metrics(evaluate({clips[0], clips[1]}, {clips[2], clips[3]}), json_path);
}

void cmd_ibm(const GlobalOptions& g, const std::array<std::string, 3>& paths, const fs::path& out_dir) {
  const auto c = effective_config(g);
  auto r1 = read_at_rate(paths[0], c.sample_rate);
  auto r2 = read_at_rate(paths[1], c.sample_rate);
  auto mix = read_at_rate(paths[2], c.sample_rate);
  const std::size_t n = std::min({r1.size(), r2.size(), mix.size()});
  if (std::max({r1.size(), r2.size(), mix.size()}) - n > 1) {
    throw Error(ErrorKind::ShapeMismatch, "references and mixture are not aligned");
  }
  for (auto* clip : {&r1, &r2, &mix}) clip->samples.resize(n);
  const auto est = ibm_separate(mix, {r1, r2}, c.stft);
  fs::create_directories(out_dir);
  write_clip(est[0], out_dir / "ibm1.wav");
  write_clip(est[1], out_dir / "ibm2.wav");
  report_metrics(evaluate(est, {r1, r2}), (out_dir / "metrics.json").string());
}

void cmd_curve(const GlobalOptions& g, const std::string& s1, const std::string& s2, const fs::path& out_csv) {
  const auto c = effective_config(g);
  log("seed " + std::to_string(c.train.seed));
  const auto prepared = prepare_sources(read_wav(s1), read_wav(s2), c.sample_rate);
  std::ofstream out(out_csv);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + out_csv.string());
  out.precision(10);
  out << "epoch,loss,sdr,sir,sar\n";
  const int every = c.eval_every;
  run_curve(training_span(prepared, c), test_span(prepared, c), c,
            [every](int epoch) { return epoch % every == 0; },
            [&](const CurvePoint& p) {
              out << p.epoch << ',' << p.loss << ',' << p.metrics.mean.sdr << ',' << p.metrics.mean.sir << ','
                  << p.metrics.mean.sar << '\n'
                  << std::flush;
              log("epoch " + std::to_string(p.epoch) + " SDR " + std::to_string(p.metrics.mean.sdr));
            });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dtsep: monaural two-speaker separation via complex spectrogram deep transform"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--dump-config", g.dump_config, "write the effective configuration to this path");
  app.add_option("--seed", g.seed, "override train.seed");
  app.add_option("--epochs", g.epochs, "override train.epochs");
  app.add_option("--learning-rate", g.learning_rate, "override train.learning_rate");
  app.add_option("--eval-every", g.eval_every, "curve: evaluate every N epochs");
  app.add_flag("--no-adapt", g.no_adapt, "disable output gain adaptation");

  std::string a, b, model;
  fs::path out;
  std::string loss_csv, json_path;
  bool dump_csv = false;
  std::array<std::string, 4> eval_paths;
  std::array<std::string, 3> ibm_paths;

  auto* mix = app.add_subcommand("mix", "decimate, equalize and sum two sources");
  mix->add_option("source1", a)->required();
  mix->add_option("source2", b)->required();
  mix->add_option("-o,--out-dir", out)->required();

  auto* train = app.add_subcommand("train", "train a separator on the training span");
  train->add_option("source1", a)->required();
  train->add_option("source2", b)->required();
  train->add_option("-m,--model", model)->required();
  train->add_option("--loss-csv", loss_csv, "per-epoch loss trace (default <model>.loss.csv)");

  auto* sep = app.add_subcommand("separate", "separate a mixture with a trained model");
  sep->add_option("model", model)->required();
  sep->add_option("mixture", a)->required();
  sep->add_option("-o,--out-dir", out)->required();
  sep->add_flag("--dump-csv", dump_csv, "write aggregated spectra as CSV");

  auto* ev = app.add_subcommand("eval", "SDR/SIR/SAR of two estimates against two references");
  ev->add_option("est1", eval_paths[0])->required();
  ev->add_option("est2", eval_paths[1])->required();
  ev->add_option("ref1", eval_paths[2])->required();
  ev->add_option("ref2", eval_paths[3])->required();
  ev->add_option("--json", json_path, "write the JSON report here instead of stdout");

  auto* ibm = app.add_subcommand("ibm", "ideal-binary-mask oracle separation");
  ibm->add_option("ref1", ibm_paths[0])->required();
  ibm->add_option("ref2", ibm_paths[1])->required();
  ibm->add_option("mixture", ibm_paths[2])->required();
  ibm->add_option("-o,--out-dir", out)->required();

  auto* curve = app.add_subcommand("curve", "train while tracking held-out separation quality");
  curve->add_option("source1", a)->required();
  curve->add_option("source2", b)->required();
  curve->add_option("-o,--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*mix) cmd_mix(g, a, b, out);
    else if (*train) cmd_train(g, a, b, model, loss_csv);
    else if (*sep) cmd_separate(g, model, a, out, dump_csv);
    else if (*ev) cmd_eval(eval_paths, json_path);
    else if (*ibm) cmd_ibm(g, ibm_paths, out);
    else if (*curve) cmd_curve(g, a, b, out);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
