// mtfn: command-line driver for synthetic data, training, scoring,
// re-ranking, evaluation, gradient checks and ensembling.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 usage, 3 io, 4 shape mismatch,
// 5 invalid argument/hyperparameter, 6 corrupt file, 7 numeric failure,
// 8 gradient check failed. Errors are reported as one line on stderr:
//   error: code=<n> kind=<kind> message="<text>"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtfn/error.hpp"
#include "mtfn/evaluation.hpp"
#include "mtfn/fusion.hpp"
#include "mtfn/io.hpp"
#include "mtfn/reranking.hpp"
#include "mtfn/synthetic.hpp"
#include "mtfn/training.hpp"

namespace {

using json = nlohmann::json;
using namespace mtfn;

constexpr int kExitUnexpected = 1;
constexpr int kExitUsage = 2;
constexpr int kExitGradcheck = 8;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return 3;
    case ErrorKind::shape: return 4;
    case ErrorKind::invalid_argument: return 5;
    case ErrorKind::format: return 6;
    case ErrorKind::numeric: return 7;
  }
  return kExitUnexpected;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

int report(int code, std::string_view kind, const std::string& message) {
  std::cerr << "error: code=" << code << " kind=" << kind << " message=\"" << one_line(message)
            << "\"\n";
  return code;
}

void log_config(const std::string& command, const json& cfg) {
  std::cerr << "config: " << json{{"command", command}, {"options", cfg}}.dump() << "\n";
}

std::vector<std::size_t> parse_dims(const std::string& text, const char* flag) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    require(pos == tok.size() && !tok.empty() && v > 0, ErrorKind::invalid_argument,
            std::string(flag) + ": expected positive integers, got '" + text + "'");
    dims.push_back(static_cast<std::size_t>(v));
  }
  require(!dims.empty(), ErrorKind::invalid_argument, std::string(flag) + ": empty value");
  return dims;
}

struct Options {
  // shared
  std::string manifest;
  std::string checkpoint;
  std::string simmat_it;
  std::string simmat_tt;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string split;

  // synth
  std::string out_dir;
  std::size_t images = 32;
  std::size_t captions = 5;
  std::string synth_dims = "32";
  std::size_t clusters = 0;
  double noise = 0.05;

  // train / gradcheck
  std::string branch = "both";
  std::string init_checkpoint;
  std::string dims = "16";
  std::size_t rank = 4;
  std::size_t epochs = 50;
  std::size_t batch = 128;
  double lr = 1e-4;
  double decay_factor = 2.0;
  std::size_t decay_every = 10;
  double margin = 0.2;
  bool output_bias = false;
  bool no_recall_log = false;
  std::string log_path;
  std::size_t trials = 1;
  double h = 1e-5;
  double tolerance = 1e-4;

  // rerank / eval
  std::size_t k = 15;
  std::size_t k_prime = 5;
  std::optional<std::size_t> fallback;
  std::string out_i2t;
  std::string out_t2i;
  std::string ranks_i2t;
  std::string ranks_t2i;
  std::string groups;
  std::size_t folds = 1;
  bool rerank = false;
  std::string recalls;
  std::string format = "table";
  std::string out;

  // ensemble
  std::vector<std::string> inputs;
};

TrainConfig train_config(const Options& o) {
  TrainConfig cfg;
  cfg.batch_size = o.batch;
  cfg.epochs = o.epochs;
  cfg.lr0 = o.lr;
  cfg.decay_factor = o.decay_factor;
  cfg.decay_every = o.decay_every;
  cfg.margin = o.margin;
  cfg.seed = o.seed;
  cfg.workers = o.workers;
  cfg.log_recall = !o.no_recall_log;
  cfg.validate();
  return cfg;
}

ModelDims model_dims(const Options& o, std::size_t d_raw_img, std::size_t d_raw_txt) {
  const auto d = parse_dims(o.dims, "--dims");
  require(d.size() == 1 || d.size() == 4, ErrorKind::invalid_argument,
          "--dims: expected D or dv,dt,df,df_tt");
  ModelDims dims;
  dims.d_raw_img = d_raw_img;
  dims.d_raw_txt = d_raw_txt;
  dims.d_v = d[0];
  dims.d_t = d.size() == 4 ? d[1] : d[0];
  dims.d_f = d.size() == 4 ? d[2] : d[0];
  dims.d_f_tt = d.size() == 4 ? d[3] : d[0];
  dims.rank = o.rank;
  dims.output_bias = o.output_bias;
  dims.validate();
  return dims;
}

std::optional<std::string> split_of(const Options& o) {
  if (o.split.empty()) return std::nullopt;
  return o.split;
}

int cmd_synth(const Options& o) {
  const auto d = parse_dims(o.synth_dims, "--dims");
  require(d.size() <= 2, ErrorKind::invalid_argument, "--dims: expected D or d_img,d_txt");
  SyntheticSpec spec;
  spec.n_images = o.images;
  spec.captions_per_image = o.captions;
  spec.d_img = d[0];
  spec.d_txt = d.size() == 2 ? d[1] : d[0];
  spec.n_clusters = o.clusters == 0 ? o.images : o.clusters;
  spec.noise_sigma = o.noise;
  log_config("synth", {{"out_dir", o.out_dir}, {"images", spec.n_images},
                       {"captions", spec.captions_per_image}, {"d_img", spec.d_img},
                       {"d_txt", spec.d_txt}, {"clusters", spec.n_clusters},
                       {"noise", spec.noise_sigma}, {"seed", o.seed}});
  SeededRng rng(o.seed);
  const PairedDataset data = gen_synthetic(spec, rng);
  const fs::path dir(o.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  write_mat(dir / "images.cmf", data.images);
  write_mat(dir / "texts.cmf", data.texts);
  write_group_map(dir / "groups.txt", data.text_to_image);
  write_manifest(dir / "manifest.json", {"images.cmf", "texts.cmf", "groups.txt", std::nullopt});
  std::cout << "wrote " << data.n_images() << " images and " << data.n_texts() << " texts to "
            << dir.string() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const TrainConfig cfg = train_config(o);
  require(o.branch == "it" || o.branch == "tt" || o.branch == "both", ErrorKind::invalid_argument,
          "--branch must be it, tt or both");
  const PairedDataset data = load_dataset(read_manifest(o.manifest), split_of(o));
  const ModelDims dims = model_dims(o, data.images.cols(), data.texts.cols());
  log_config("train", {{"manifest", o.manifest}, {"checkpoint", o.checkpoint},
                       {"init_checkpoint", o.init_checkpoint}, {"branch", o.branch},
                       {"split", o.split}, {"d_v", dims.d_v}, {"d_t", dims.d_t},
                       {"d_f", dims.d_f}, {"d_f_tt", dims.d_f_tt}, {"rank", dims.rank},
                       {"output_bias", dims.output_bias}, {"epochs", cfg.epochs},
                       {"batch", cfg.batch_size}, {"lr", cfg.lr0},
                       {"decay_factor", cfg.decay_factor}, {"decay_every", cfg.decay_every},
                       {"margin", cfg.margin}, {"seed", cfg.seed}, {"workers", cfg.workers}});

  std::string log_text;
  auto sink = [&](const EpochLog& e) {
    json rec{{"branch", std::string(to_string(e.branch))}, {"epoch", e.epoch}, {"lr", e.lr},
             {"loss", e.loss}};
    if (e.i2t_r1 >= 0) {
      rec["i2t_r1"] = e.i2t_r1;
      rec["t2i_r1"] = e.t2i_r1;
    }
    const std::string line = rec.dump() + "\n";
    log_text += line;
    if (o.log_path.empty()) std::cout << line;
  };

  SeededRng rng(o.seed);
  MtfnParams params;
  if (o.branch == "tt") {
    require(!o.init_checkpoint.empty(), ErrorKind::invalid_argument,
            "--branch tt needs --init-checkpoint with a trained image-text branch");
    params = read_checkpoint(o.init_checkpoint);
    params = init_tt_from_it(params, rng);
    train_branch(params, data, cfg, BranchKind::text_text, rng, sink);
  } else if (o.branch == "it") {
    params = o.init_checkpoint.empty() ? init_params(dims, rng) : read_checkpoint(o.init_checkpoint);
    train_branch(params, data, cfg, BranchKind::image_text, rng, sink);
  } else {
    params = train(data, dims, cfg, rng, sink).params;
  }
  write_checkpoint(o.checkpoint, params);
  if (!o.log_path.empty()) write_file_atomic(o.log_path, log_text);
  return 0;
}

int cmd_score(const Options& o) {
  require(!o.simmat_it.empty() || !o.simmat_tt.empty(), ErrorKind::invalid_argument,
          "score: give --simmat-it and/or --simmat-tt output paths");
  log_config("score", {{"manifest", o.manifest}, {"checkpoint", o.checkpoint},
                       {"simmat_it", o.simmat_it}, {"simmat_tt", o.simmat_tt},
                       {"split", o.split}, {"workers", o.workers}});
  const PairedDataset data = load_dataset(read_manifest(o.manifest), split_of(o));
  const MtfnParams params = read_checkpoint(o.checkpoint);
  if (!o.simmat_it.empty())
    write_similarity(o.simmat_it, score_matrix(params.it_branch, data.images, data.texts, o.workers));
  if (!o.simmat_tt.empty())
    write_similarity(o.simmat_tt, score_matrix(params.tt_branch, data.texts, data.texts, o.workers));
  return 0;
}

RerankConfig rerank_config(const Options& o) {
  RerankConfig cfg;
  cfg.k = o.k;
  cfg.k_prime = o.k_prime;
  cfg.fallback_position = o.fallback;
  cfg.workers = o.workers;
  return cfg;
}

int cmd_rerank(const Options& o) {
  require(!o.out_i2t.empty() || !o.out_t2i.empty(), ErrorKind::invalid_argument,
          "rerank: give --out-i2t and/or --out-t2i");
  log_config("rerank", {{"simmat_it", o.simmat_it}, {"simmat_tt", o.simmat_tt}, {"K", o.k},
                        {"Kprime", o.k_prime},
                        {"fallback", o.fallback ? json(*o.fallback) : json(nullptr)},
                        {"out_i2t", o.out_i2t}, {"out_t2i", o.out_t2i}, {"workers", o.workers}});
  const SimilarityMatrix s_it = read_similarity(o.simmat_it);
  std::optional<SimilarityMatrix> s_tt;
  if (!o.simmat_tt.empty()) s_tt = read_similarity(o.simmat_tt);
  const RerankResult r = rerank_all(s_it, s_tt ? &*s_tt : nullptr, rerank_config(o));
  if (!o.out_i2t.empty()) write_rank_lists(o.out_i2t, r.i2t);
  if (!o.out_t2i.empty()) write_rank_lists(o.out_t2i, r.t2i);
  return 0;
}

GroundTruth ground_truth(const Options& o, std::size_t n_images_hint) {
  if (!o.manifest.empty()) {
    const PairedDataset data = load_dataset(read_manifest(o.manifest), split_of(o));
    return GroundTruth::from_group_map(data.text_to_image, data.n_images());
  }
  require(!o.groups.empty(), ErrorKind::invalid_argument, "eval: give --manifest or --groups");
  auto map = read_group_map(o.groups);
  std::size_t n_images = n_images_hint;
  for (std::size_t img : map) n_images = std::max(n_images, img + 1);
  return GroundTruth::from_group_map(std::move(map), n_images);
}

void print_metrics(const Options& o, const RetrievalMetrics& m) {
  if (!o.out.empty()) write_file_atomic(o.out, to_record(m));
  std::cout << (o.format == "record" ? to_record(m) : to_table(m));
}

int cmd_eval(const Options& o) {
  require(o.format == "table" || o.format == "record", ErrorKind::invalid_argument,
          "--format must be table or record");
  log_config("eval", {{"manifest", o.manifest}, {"groups", o.groups}, {"simmat_it", o.simmat_it},
                      {"simmat_tt", o.simmat_tt}, {"ranks_i2t", o.ranks_i2t},
                      {"ranks_t2i", o.ranks_t2i}, {"folds", o.folds}, {"rerank", o.rerank},
                      {"K", o.k}, {"Kprime", o.k_prime}, {"recalls", o.recalls},
                      {"format", o.format}, {"out", o.out}, {"workers", o.workers}});
  if (!o.recalls.empty()) {
    std::vector<double> v;
    std::stringstream ss(o.recalls);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::size_t pos = 0;
      double x = std::nan("");
      try {
        x = std::stod(tok, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      require(pos == tok.size() && std::isfinite(x) && x >= 0 && x <= 100,
              ErrorKind::invalid_argument, "--recalls: bad percentage '" + tok + "'");
      v.push_back(x / 100.0);
    }
    require(v.size() == 6, ErrorKind::invalid_argument,
            "--recalls: expected six values (I2T R@1,5,10 then T2I R@1,5,10)");
    RetrievalMetrics m{v[0], v[1], v[2], v[3], v[4], v[5], 0.0};
    m.mr = mean_recall(m);
    print_metrics(o, m);
    return 0;
  }

  if (!o.ranks_i2t.empty() || !o.ranks_t2i.empty()) {
    require(!o.ranks_i2t.empty() && !o.ranks_t2i.empty(), ErrorKind::invalid_argument,
            "eval: rank lists need both --ranks-i2t and --ranks-t2i");
    const auto i2t = read_rank_lists(o.ranks_i2t);
    const auto t2i = read_rank_lists(o.ranks_t2i);
    print_metrics(o, evaluate(i2t, t2i, ground_truth(o, i2t.size())));
    return 0;
  }

  require(!o.simmat_it.empty(), ErrorKind::invalid_argument,
          "eval: give --simmat-it, rank lists, or --recalls");
  const SimilarityMatrix s_it = read_similarity(o.simmat_it);
  std::optional<SimilarityMatrix> s_tt;
  if (!o.simmat_tt.empty()) s_tt = read_similarity(o.simmat_tt);
  const GroundTruth gt = ground_truth(o, s_it.n_query());
  require(s_it.n_query() == gt.n_images() && s_it.n_gallery() == gt.n_texts(), ErrorKind::shape,
          "eval: S_IT " + s_it.scores().shape_str() + " vs ground truth " +
              std::to_string(gt.n_images()) + " images, " + std::to_string(gt.n_texts()) +
              " texts");
  std::vector<RetrievalMetrics> per_fold;
  for (const auto& [lo, hi] : fold_ranges(gt.n_images(), o.folds)) {
    const GroundTruth fold_gt = gt.slice(lo, hi);
    const SimilarityMatrix fold_it = o.folds == 1 ? s_it : slice_it(s_it, gt, lo, hi);
    if (!o.rerank) {
      per_fold.push_back(evaluate(fold_it, fold_gt, o.workers));
      continue;
    }
    std::optional<SimilarityMatrix> fold_tt;
    if (s_tt) fold_tt = o.folds == 1 ? *s_tt : slice_tt(*s_tt, gt, lo, hi);
    const auto r = rerank_all(fold_it, fold_tt ? &*fold_tt : nullptr, rerank_config(o));
    per_fold.push_back(evaluate(r.i2t, r.t2i, fold_gt));
  }
  print_metrics(o, fold_average(per_fold));
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto d = parse_dims(o.dims, "--dims");
  require(d.size() == 1, ErrorKind::invalid_argument, "gradcheck: --dims takes a single size");
  require(o.trials >= 1, ErrorKind::invalid_argument, "gradcheck: --trials must be >= 1");
  log_config("gradcheck", {{"dims", d[0]}, {"rank", o.rank}, {"seed", o.seed},
                           {"trials", o.trials}, {"h", o.h}, {"tolerance", o.tolerance},
                           {"output_bias", o.output_bias}});
  SeededRng rng(o.seed);
  double worst = 0.0;
  std::string worst_tensor;
  for (std::size_t trial = 0; trial < o.trials; ++trial) {
    ModelDims dims{d[0], d[0], d[0], d[0], d[0], d[0], o.rank, o.output_bias};
    const MtfnParams params = init_params(dims, rng);
    const Mat x = rand_uniform(rng, 1, d[0], 1.0);
    const Mat y = rand_uniform(rng, 1, d[0], 1.0);
    const auto rep = grad_check(params.it_branch, x.row(0), y.row(0), o.h);
    if (rep.max_rel_error >= worst) {
      worst = rep.max_rel_error;
      worst_tensor = rep.worst_tensor;
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", worst);
  const bool ok = worst < o.tolerance;
  std::cout << "max_rel_error=" << buf << "\nworst_tensor=" << worst_tensor
            << "\nstatus=" << (ok ? "pass" : "fail") << "\n";
  if (!ok) return report(kExitGradcheck, "gradcheck", "max relative error " + std::string(buf));
  return 0;
}

int cmd_ensemble(const Options& o) {
  require(!o.inputs.empty(), ErrorKind::invalid_argument, "ensemble: no input matrices");
  require(!o.out.empty(), ErrorKind::invalid_argument, "ensemble: --out is required");
  log_config("ensemble", {{"inputs", o.inputs}, {"out", o.out}});
  std::vector<SimilarityMatrix> mats;
  for (const auto& p : o.inputs) mats.push_back(read_similarity(p));
  write_similarity(o.out, ensemble_average(mats));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal tensor fusion retrieval with cross-modal re-ranking"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Seed for every random draw"); };
  auto add_workers = [&](CLI::App* c) {
    c->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired dataset");
  synth->add_option("--out-dir", o.out_dir, "Output directory")->required();
  synth->add_option("--images", o.images, "Number of images");
  synth->add_option("--captions", o.captions, "Captions per image");
  synth->add_option("--dims", o.synth_dims, "D or d_img,d_txt");
  synth->add_option("--clusters", o.clusters, "Latent clusters (default: one per image)");
  synth->add_option("--noise", o.noise, "Gaussian noise sigma");
  add_seed(synth);

  auto* train_cmd = app.add_subcommand("train", "Train the fusion branches");
  train_cmd->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  train_cmd->add_option("--checkpoint", o.checkpoint, "Output checkpoint")->required();
  train_cmd->add_option("--init-checkpoint", o.init_checkpoint, "Start from this checkpoint");
  train_cmd->add_option("--branch", o.branch, "it, tt or both");
  train_cmd->add_option("--split", o.split, "Restrict to a split label");
  train_cmd->add_option("--dims", o.dims, "D or dv,dt,df,df_tt");
  train_cmd->add_option("--rank", o.rank, "Rank constraint R");
  train_cmd->add_option("--epochs", o.epochs);
  train_cmd->add_option("--batch", o.batch);
  train_cmd->add_option("--lr", o.lr, "Initial learning rate");
  train_cmd->add_option("--decay-factor", o.decay_factor);
  train_cmd->add_option("--decay-every", o.decay_every);
  train_cmd->add_option("--margin", o.margin);
  train_cmd->add_flag("--output-bias", o.output_bias, "Add a bias to the output layer");
  train_cmd->add_flag("--no-recall-log", o.no_recall_log, "Skip per-epoch train recall");
  train_cmd->add_option("--log", o.log_path, "Write the JSONL training log here");
  add_seed(train_cmd);
  add_workers(train_cmd);

  auto* score = app.add_subcommand("score", "Write S_IT / S_TT similarity matrices");
  score->add_option("--manifest", o.manifest)->required();
  score->add_option("--checkpoint", o.checkpoint)->required();
  score->add_option("--simmat-it", o.simmat_it, "Output S_IT path");
  score->add_option("--simmat-tt", o.simmat_tt, "Output S_TT path");
  score->add_option("--split", o.split);
  add_workers(score);

  auto* rerank = app.add_subcommand("rerank", "Apply cross-modal re-ranking");
  rerank->add_option("--simmat-it", o.simmat_it)->required();
  rerank->add_option("--simmat-tt", o.simmat_tt, "Optional S_TT; derived from S_IT when absent");
  rerank->add_option("--K", o.k);
  rerank->add_option("--Kprime", o.k_prime);
  rerank->add_option("--fallback", o.fallback);
  rerank->add_option("--out-i2t", o.out_i2t);
  rerank->add_option("--out-t2i", o.out_t2i);
  add_workers(rerank);

  auto* eval = app.add_subcommand("eval", "Compute R@1/5/10 and mR");
  eval->add_option("--manifest", o.manifest);
  eval->add_option("--groups", o.groups, "Group map file (alternative to --manifest)");
  eval->add_option("--split", o.split);
  eval->add_option("--simmat-it", o.simmat_it);
  eval->add_option("--simmat-tt", o.simmat_tt);
  eval->add_option("--ranks-i2t", o.ranks_i2t);
  eval->add_option("--ranks-t2i", o.ranks_t2i);
  eval->add_option("--folds", o.folds)->check(CLI::PositiveNumber);
  eval->add_flag("--rerank", o.rerank, "Re-rank each fold before scoring");
  eval->add_option("--K", o.k);
  eval->add_option("--Kprime", o.k_prime);
  eval->add_option("--fallback", o.fallback);
  eval->add_option("--recalls", o.recalls, "Six percentages: I2T R@1,5,10,T2I R@1,5,10");
  eval->add_option("--format", o.format, "table or record");
  eval->add_option("--out", o.out, "Also write the metrics record here");
  add_workers(eval);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gradcheck->add_option("--dims", o.dims, "Size of every dimension");
  gradcheck->add_option("--rank", o.rank);
  gradcheck->add_option("--trials", o.trials);
  gradcheck->add_option("--step", o.h, "Finite-difference step");
  gradcheck->add_option("--tolerance", o.tolerance);
  gradcheck->add_flag("--output-bias", o.output_bias);
  add_seed(gradcheck);

  auto* ensemble = app.add_subcommand("ensemble", "Average similarity matrices");
  ensemble->add_option("inputs", o.inputs, "Input matrices")->required();
  ensemble->add_option("--out", o.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(kExitUsage, "usage", e.what());
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*train_cmd) return cmd_train(o);
    if (*score) return cmd_score(o);
    if (*rerank) return cmd_rerank(o);
    if (*eval) return cmd_eval(o);
    if (*gradcheck) return cmd_gradcheck(o);
    if (*ensemble) return cmd_ensemble(o);
  } catch (const Error& e) {
    return report(exit_code(e.kind()), to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return report(kExitUnexpected, "unexpected", e.what());
  }
  return kExitUsage;
}
