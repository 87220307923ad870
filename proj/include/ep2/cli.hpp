#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ep2/archcalc.hpp"
#include "ep2/descriptor.hpp"
#include "ep2/detection.hpp"
#include "ep2/distill.hpp"
#include "ep2/error.hpp"
#include "ep2/harness.hpp"
#include "ep2/io.hpp"

// Command-line front end. Results go to `out`, diagnostics to `err`.
//
// Exit codes:
//   0  success
//   1  usage error (bad flags)
//   2  malformed or unreadable input file
//   3  dimension / configuration error
//   4  shape mismatch
//   5  training diverged
//   6  keypoint out of bounds
//   7  numeric overflow in the two-convolution loss

namespace ep2::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kMalformed = 2,
  kDimension = 3,
  kShape = 4,
  kDivergence = 5,
  kOutOfBounds = 6,
  kOverflow = 7,
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedFile:
    case ErrorCode::NotUnitNorm:
      return kMalformed;
    case ErrorCode::BadDimension:
    case ErrorCode::InvalidConfig:
    case ErrorCode::KernelTooLarge:
    case ErrorCode::BadInputSize:
    case ErrorCode::ZeroRow:
      return kDimension;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DimMismatch:
    case ErrorCode::RowCountMismatch:
      return kShape;
    case ErrorCode::DivergenceDetected:
      return kDivergence;
    case ErrorCode::OutOfBounds:
      return kOutOfBounds;
    case ErrorCode::NumericOverflow:
      return kOverflow;
    default:
      return kUsage;
  }
}

/// Seed precedence: explicit flag, then EP2_SEED, then 0.
inline std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("EP2_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidConfig, std::string("EP2_SEED is not an integer: ") + env);
  }
  return 0;
}

namespace detail {

inline int cmd_compress(const std::string& input, std::size_t dim, const std::string& method,
                        const std::string& output, std::ostream& out) {
  const DescriptorSet teacher = DescriptorSet::validated(io::read_matrix_file(input));
  if (dim < 2 || dim > teacher.dim()) {
    throw Error(ErrorCode::BadDimension, "--dim " + std::to_string(dim) + " outside [2, " +
                                             std::to_string(teacher.dim()) + "]");
  }
  const Matrix compressed = method == "lra" ? lra_compress(teacher, dim).compressed
                                            : pca_compress(teacher, dim);
  io::write_matrix_file(output, compressed);
  out << "gram_gap=" << io::format_number(gram_gap(compressed, teacher.matrix())) << '\n';
  return kOk;
}

inline int cmd_procrustes(const std::string& target_path, const std::string& source_path,
                          const std::string& output, std::ostream& out) {
  const Matrix target = io::read_matrix_file(target_path);
  const DescriptorSet source = DescriptorSet::validated(io::read_matrix_file(source_path));
  const OrthogonalMap q = procrustes_solve(target, source);
  const Matrix aligned = target * q.matrix();
  io::write_matrix_file(output, aligned);
  out << "op_residual=" << io::format_number((aligned - source.matrix()).squaredNorm()) << '\n';
  return kOk;
}

inline int cmd_cache(const std::string& kps_path, const std::string& flipped_path,
                     std::size_t width, std::size_t height, double radius,
                     const std::string& heatmap_path, std::ostream& out) {
  const KeypointList primary = io::read_keypoint_file(kps_path);
  const KeypointList flipped = io::read_keypoint_file(flipped_path);
  const KeypointCache cache = merge_flip_cache(primary, flipped, width, height, radius);
  io::write_heatmap_file(heatmap_path, cache.heatmap);
  out << "keypoints=" << cache.keypoints.size() << '\n';
  return kOk;
}

inline int cmd_detect_loss(const std::string& logits_path, const std::string& target_path,
                           std::size_t kernel, const std::string& impl, std::ostream& out) {
  const Raster logits = io::read_raster_file(logits_path);
  const BinaryHeatmap target = io::read_heatmap_file(target_path);
  if (impl == "naive") {
    out << "loss=" << io::format_number(unfold_softmax_naive(logits, target, kernel)) << '\n';
  } else if (impl == "fast") {
    out << "loss=" << io::format_number(unfold_softmax_fast(logits, target, kernel)) << '\n';
  } else {
    const double naive = unfold_softmax_naive(logits, target, kernel);
    const double fast = unfold_softmax_fast(logits, target, kernel);
    out << "loss_naive=" << io::format_number(naive) << '\n'
        << "loss_fast=" << io::format_number(fast) << '\n'
        << "abs_diff=" << io::format_number(std::abs(naive - fast)) << '\n';
  }
  return kOk;
}

inline int cmd_match(const std::string& a_path, const std::string& b_path,
                     const std::string& out_path, std::ostream& out) {
  const DescriptorSet a = DescriptorSet::validated(io::read_matrix_file(a_path));
  const DescriptorSet b = DescriptorSet::validated(io::read_matrix_file(b_path));
  MatchList matches = mnn_match(a, b);
  std::stable_sort(matches.begin(), matches.end(), [](const Match& x, const Match& y) {
    return x.similarity > y.similarity;
  });
  io::write_file(out_path, io::format_matches(matches));
  out << "matches=" << matches.size() << '\n';
  return kOk;
}

inline void print_layer_table(const arch::LayerGraph& g, std::int64_t height, std::int64_t width,
                              bool csv, std::ostream& out) {
  if (csv) {
    out << "name,kind,shape,params,flops\n";
  } else {
    out << std::left << std::setw(14) << "name" << std::setw(15) << "kind" << std::setw(16)
        << "shape" << std::right << std::setw(10) << "params" << std::setw(14) << "flops"
        << '\n';
  }
  for (const auto& l : g.layers) {
    const std::string shape = std::to_string(l.out_channels) + "x" +
                              std::to_string(height / l.out_div) + "x" +
                              std::to_string(width / l.out_div);
    const auto params = arch::layer_params(l);
    const auto flops = arch::layer_flops(l, height, width);
    if (csv) {
      out << l.name << ',' << arch::to_string(l.kind) << ',' << shape << ',' << params << ','
          << flops << '\n';
    } else {
      out << std::left << std::setw(14) << l.name << std::setw(15) << arch::to_string(l.kind)
          << std::setw(16) << shape << std::right << std::setw(10) << params << std::setw(14)
          << flops << '\n';
    }
  }
}

inline int cmd_arch(const std::string& size, int dim, std::int64_t height, std::int64_t width,
                    bool csv, std::ostream& out) {
  if (size.size() != 1) throw Error(ErrorCode::InvalidConfig, "unknown model size '" + size + "'");
  const arch::ModelConfig cfg = arch::named_config(size[0], dim);
  const arch::LayerGraph g = arch::build_graph(cfg);
  const std::int64_t flops = arch::estimate_flops(g, height, width);
  print_layer_table(g, height, width, csv, out);
  out << "params=" << arch::count_params(g) << " flops=" << flops
      << " rf=" << arch::receptive_field(g) << '\n';
  out << "macs=" << flops / 2 << '\n';
  return kOk;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compact descriptor distillation toolkit", "ep2"};
  app.require_subcommand(1);

  std::string input, output, method = "lra";
  std::size_t dim = 0;
  auto* compress = app.add_subcommand("compress", "Compress descriptors to fewer dimensions");
  compress->add_option("--input", input, "EPD1 descriptor file")->required();
  compress->add_option("--dim", dim, "Target dimension")->required();
  compress->add_option("--method", method, "lra or pca")
      ->check(CLI::IsMember({"lra", "pca"}));
  compress->add_option("--output", output, "EPD1 output file")->required();

  std::string target, source, aligned;
  auto* procrustes = app.add_subcommand("procrustes", "Align a target matrix onto a source set");
  procrustes->add_option("--target", target, "EPD1 target matrix (e.g. compressed teacher)")
      ->required();
  procrustes->add_option("--source", source, "EPD1 unit-row descriptor set")->required();
  procrustes->add_option("--output-aligned", aligned, "EPD1 output: target * Omega")->required();

  DistillConfig cfg;
  std::string compression = "lra", report_path;
  std::uint64_t seed_flag = 0;
  bool no_sim = false, fixed_batch = false;
  auto* demo = app.add_subcommand("distill-demo", "Train the toy linear student");
  demo->add_option("--c-desc", cfg.c_desc, "Student descriptor dimension")->capture_default_str();
  demo->add_option("--teacher-dim", cfg.teacher_dim, "Teacher dimension")->capture_default_str();
  demo->add_option("--teacher-rank", cfg.teacher_rank,
                   "Intrinsic dimension of synthetic teachers (0 = c-desc)")
      ->capture_default_str();
  demo->add_option("--views", cfg.views, "Views per mini-set (N)")->capture_default_str();
  demo->add_option("--sigma", cfg.noise_sigma, "Per-view input noise")->capture_default_str();
  demo->add_option("--steps", cfg.steps, "Gradient steps")->capture_default_str();
  demo->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
  demo->add_option("--w-op", cfg.weights.op, "Procrustes loss weight")->capture_default_str();
  demo->add_option("--w-sim", cfg.weights.sim, "Similarity loss weight")->capture_default_str();
  demo->add_option("--compression", compression, "lra or pca")
      ->check(CLI::IsMember({"lra", "pca"}));
  demo->add_flag("--no-sim-loss", no_sim, "Disable the similarity loss");
  demo->add_flag("--fixed-batch", fixed_batch, "Reuse the step-0 mini-set every step");
  auto* seed_opt = demo->add_option("--seed", seed_flag, "RNG seed (overrides EP2_SEED)");
  demo->add_option("--report", report_path, "CSV report path")->required();

  std::string kps_path, flipped_path, heatmap_path;
  std::size_t width = 0, height = 0;
  double radius = 2.0;
  auto* cache = app.add_subcommand("cache", "Merge direct and mirrored detections into a heatmap");
  cache->add_option("--kps", kps_path, "Keypoint CSV for the image")->required();
  cache->add_option("--kps-flipped", flipped_path, "Keypoint CSV for the mirrored image")
      ->required();
  cache->add_option("--width", width, "Image width")->required();
  cache->add_option("--height", height, "Image height")->required();
  cache->add_option("--radius", radius, "NMS radius")->capture_default_str();
  cache->add_option("--out-heatmap", heatmap_path, "EPB1 output heatmap")->required();

  std::string logits_path, heat_target, impl = "fast";
  std::size_t kernel = 5;
  auto* loss = app.add_subcommand("detect-loss", "Evaluate the patch softmax detection loss");
  loss->add_option("--logits", logits_path, "EPF1 logits")->required();
  loss->add_option("--target", heat_target, "EPB1 binary heatmap")->required();
  loss->add_option("--kernel", kernel, "Odd patch size")->capture_default_str();
  loss->add_option("--impl", impl, "naive, fast or both")
      ->check(CLI::IsMember({"naive", "fast", "both"}))
      ->capture_default_str();

  std::string a_path, b_path, match_out;
  auto* match = app.add_subcommand("match", "Mutual nearest neighbour matching");
  match->add_option("--a", a_path, "EPD1 descriptor set A")->required();
  match->add_option("--b", b_path, "EPD1 descriptor set B")->required();
  match->add_option("--out", match_out, "CSV output i,j,similarity")->required();

  std::string model = "T";
  int model_dim = 32;
  std::int64_t in_h = 480, in_w = 640;
  bool csv = false;
  auto* archc = app.add_subcommand("arch", "Layer table, parameters, FLOPs, receptive field");
  archc->add_option("--config", model, "T, S, M, L or E")->capture_default_str();
  archc->add_option("--dim", model_dim, "32, 48 or 64")->capture_default_str();
  archc->add_option("--height", in_h, "Input height")->capture_default_str();
  archc->add_option("--width", in_w, "Input width")->capture_default_str();
  archc->add_flag("--csv", csv, "Emit the layer table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (compress->parsed()) return detail::cmd_compress(input, dim, method, output, out);
    if (procrustes->parsed()) return detail::cmd_procrustes(target, source, aligned, out);
    if (demo->parsed()) {
      cfg.compression = compression == "pca" ? Compression::Pca : Compression::Lra;
      cfg.use_sim_loss = !no_sim;
      cfg.fresh_batches = !fixed_batch;
      cfg.seed = resolve_seed(seed_opt->count() > 0, seed_flag);
      const TrainReport report = train(cfg);
      io::write_file(report_path, io::format_report(report));
      out << "final_gram_gap=" << io::format_number(report.final().gram_gap) << '\n';
      return kOk;
    }
    if (cache->parsed()) {
      return detail::cmd_cache(kps_path, flipped_path, width, height, radius, heatmap_path, out);
    }
    if (loss->parsed()) return detail::cmd_detect_loss(logits_path, heat_target, kernel, impl, out);
    if (match->parsed()) return detail::cmd_match(a_path, b_path, match_out, out);
    if (archc->parsed()) return detail::cmd_arch(model, model_dim, in_h, in_w, csv, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("ep2");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ep2::cli
